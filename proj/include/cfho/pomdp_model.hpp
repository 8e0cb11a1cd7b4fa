#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "channel.hpp"

namespace cfho {

/// Bit b set means candidate link b is Good (state / observation) or connected (action).
using BitVector = std::uint32_t;

inline bool bit(BitVector v, std::size_t b) { return ((v >> b) & 1u) != 0u; }

struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

struct PomdpSpaces {
    std::vector<BitVector> states;
    std::vector<BitVector> actions;
    std::vector<BitVector> observations;
};

/// Two-level states and observations over `num_links` links; actions connect exactly `b_con` of them.
/// All three lists are in increasing bit-vector order.
inline PomdpSpaces enumerate_spaces(std::size_t num_links, int b_con) {
    if (b_con < 1 || static_cast<std::size_t>(b_con) >= num_links)
        throw std::invalid_argument("enumerate_spaces: need 1 <= b_con < number of candidate links");
    if (num_links > 20) throw std::invalid_argument("enumerate_spaces: too many candidate links");
    PomdpSpaces sp;
    const BitVector n = BitVector{1} << num_links;
    for (BitVector v = 0; v < n; ++v) {
        sp.states.push_back(v);
        sp.observations.push_back(v);
        if (std::popcount(v) == b_con) sp.actions.push_back(v);
    }
    return sp;
}

struct PomdpModel {
    std::vector<int> candidate_dus;
    int b_con = 0;
    std::vector<BitVector> states;
    std::vector<BitVector> actions;
    std::vector<BitVector> observations;
    DenseMatrix transition;               ///< |S| x |S|, row = current state
    std::vector<DenseMatrix> observation; ///< per action: |S| x |Omega|, row = current state
    DenseMatrix reward;                   ///< |S| x |A|
    double discount = 0.95;
    int horizon = 10;

    std::size_t num_states() const { return states.size(); }
    std::size_t num_actions() const { return actions.size(); }
    std::size_t num_observations() const { return observations.size(); }

    void validate() const {
        const std::size_t ns = num_states();
        const std::size_t na = num_actions();
        const std::size_t no = num_observations();
        if (ns == 0 || na == 0 || no == 0) throw std::invalid_argument("PomdpModel: empty space");
        for (BitVector a : actions)
            if (std::popcount(a) != b_con) throw std::invalid_argument("PomdpModel: action with wrong connection count");
        if (transition.rows != ns || transition.cols != ns) throw std::invalid_argument("PomdpModel: transition shape");
        if (observation.size() != na) throw std::invalid_argument("PomdpModel: observation table count");
        if (reward.rows != ns || reward.cols != na) throw std::invalid_argument("PomdpModel: reward shape");
        if (!(discount >= 0.0 && discount < 1.0)) throw std::invalid_argument("PomdpModel: discount must lie in [0, 1)");
        check_stochastic(transition, "transition");
        for (const auto& o : observation) {
            if (o.rows != ns || o.cols != no) throw std::invalid_argument("PomdpModel: observation shape");
            check_stochastic(o, "observation");
        }
        for (double r : reward.data)
            if (!std::isfinite(r) || r < 0.0) throw std::invalid_argument("PomdpModel: reward must be finite and >= 0");
    }

private:
    static void check_stochastic(const DenseMatrix& m, const char* what) {
        for (std::size_t r = 0; r < m.rows; ++r) {
            double s = 0.0;
            for (double v : m.row(r)) {
                if (!(v >= 0.0)) throw std::invalid_argument(std::string("PomdpModel: negative entry in ") + what);
                s += v;
            }
            if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument(std::string("PomdpModel: row does not sum to 1 in ") + what);
        }
    }
};

/// Product of independent per-link two-state chains.
inline DenseMatrix build_transition(std::span<const TransitionPair> links) {
    for (const auto& l : links)
        if (!(l.p11 >= 0.0 && l.p11 <= 1.0 && l.p01 >= 0.0 && l.p01 <= 1.0))
            throw std::invalid_argument("build_transition: probability outside [0, 1]");
    // Grow one link at a time; link b is the most significant bit at step b.
    DenseMatrix t(1, 1, 1.0);
    for (std::size_t b = 0; b < links.size(); ++b) {
        const double k[2][2] = {{links[b].p00(), links[b].p01}, {links[b].p10(), links[b].p11}};
        const std::size_t h = t.rows;
        DenseMatrix next(2 * h, 2 * h);
        for (std::size_t fi = 0; fi < 2; ++fi)
            for (std::size_t fj = 0; fj < 2; ++fj)
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < h; ++j) next(fi * h + i, fj * h + j) = k[fi][fj] * t(i, j);
        t = std::move(next);
    }
    return t;
}

/// Connected links are observed exactly; an unconnected link yields Good with
/// probability `p_good[b]` regardless of its true state.
inline std::vector<DenseMatrix> build_observation(std::span<const double> p_good, std::span<const BitVector> actions) {
    for (double p : p_good)
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("build_observation: probability outside [0, 1]");
    const std::size_t links = p_good.size();
    const std::size_t n = std::size_t{1} << links;
    std::vector<DenseMatrix> out;
    out.reserve(actions.size());
    for (BitVector a : actions) {
        DenseMatrix o(n, n);
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t l = 0; l < n; ++l) {
                double p = 1.0;
                for (std::size_t b = 0; b < links && p > 0.0; ++b) {
                    const bool obs_good = bit(static_cast<BitVector>(l), b);
                    if (bit(a, b)) {
                        p *= obs_good == bit(static_cast<BitVector>(s), b) ? 1.0 : 0.0;
                    } else {
                        p *= obs_good ? p_good[b] : 1.0 - p_good[b];
                    }
                }
                o(s, l) = p;
            }
        }
        out.push_back(std::move(o));
    }
    return out;
}

/// Rate reward R(s, a): connected links contribute their representative
/// Good/Bad gain, each DU scaled by its user load.
inline DenseMatrix build_reward(std::span<const BitVector> states, std::span<const BitVector> actions,
                                std::span<const double> du_loads, const ChannelParams& channel,
                                const RateModel& rates) {
    for (double l : du_loads)
        if (!(l >= 1.0)) throw std::invalid_argument("build_reward: DU load must be >= 1");
    DenseMatrix r(states.size(), actions.size());
    std::map<std::pair<BitVector, BitVector>, double> memo;
    std::vector<double> betas;
    std::vector<double> loads;
    for (std::size_t i = 0; i < states.size(); ++i) {
        for (std::size_t j = 0; j < actions.size(); ++j) {
            const BitVector a = actions[j];
            const BitVector key_state = states[i] & a;
            auto [it, inserted] = memo.try_emplace({key_state, a}, 0.0);
            if (inserted) {
                betas.clear();
                loads.clear();
                for (std::size_t b = 0; b < du_loads.size(); ++b) {
                    if (!bit(a, b)) continue;
                    betas.push_back(bit(states[i], b) ? channel.beta_good : channel.beta_bad);
                    loads.push_back(du_loads[b]);
                }
                it->second = rates.rate(betas, loads);
            }
            r(i, j) = it->second;
        }
    }
    return r;
}

/// Belief over enumerated states. `per_link_good` holds the Good marginal of
/// each candidate link; it is empty for beliefs that are not built per link.
struct Belief {
    std::vector<double> probs;
    std::vector<double> per_link_good;
};

inline std::vector<double> product_belief(std::span<const double> per_link_good) {
    const std::size_t n = std::size_t{1} << per_link_good.size();
    std::vector<double> probs(n);
    for (std::size_t s = 0; s < n; ++s) {
        double p = 1.0;
        for (std::size_t b = 0; b < per_link_good.size(); ++b)
            p *= bit(static_cast<BitVector>(s), b) ? per_link_good[b] : 1.0 - per_link_good[b];
        probs[s] = p;
    }
    return probs;
}

inline Belief initial_belief(std::span<const double> per_link_good) {
    for (double p : per_link_good)
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("initial_belief: probability outside [0, 1]");
    Belief b;
    b.per_link_good.assign(per_link_good.begin(), per_link_good.end());
    b.probs = product_belief(per_link_good);
    return b;
}

/// One-cycle per-link belief propagation: a link connected under `action`
/// restarts from its observed state, an unconnected link mixes its prior.
inline Belief belief_update(const Belief& belief, BitVector action, BitVector observed_states,
                            std::span<const TransitionPair> links) {
    if (belief.per_link_good.size() != links.size())
        throw std::invalid_argument("belief_update: per-link belief size mismatch");
    Belief next;
    next.per_link_good.resize(links.size());
    for (std::size_t b = 0; b < links.size(); ++b) {
        const auto& l = links[b];
        if (bit(action, b)) {
            next.per_link_good[b] = bit(observed_states, b) ? l.p11 : l.p01;
        } else {
            const double u = belief.per_link_good[b];
            next.per_link_good[b] = u * l.p11 + (1.0 - u) * l.p01;
        }
    }
    next.probs = product_belief(next.per_link_good);
    return next;
}

/// Assemble a complete model for one candidate set.
inline PomdpModel make_model(std::vector<int> candidate_dus, int b_con, std::span<const TransitionPair> links,
                             std::span<const double> p_good_observation, std::span<const double> du_loads,
                             const ChannelParams& channel, const RateModel& rates, double discount, int horizon) {
    if (links.size() != candidate_dus.size() || p_good_observation.size() != candidate_dus.size() ||
        du_loads.size() != candidate_dus.size())
        throw std::invalid_argument("make_model: per-link input size mismatch");
    auto sp = enumerate_spaces(candidate_dus.size(), b_con);
    PomdpModel m;
    m.candidate_dus = std::move(candidate_dus);
    m.b_con = b_con;
    m.transition = build_transition(links);
    m.observation = build_observation(p_good_observation, sp.actions);
    m.reward = build_reward(sp.states, sp.actions, du_loads, channel, rates);
    m.states = std::move(sp.states);
    m.actions = std::move(sp.actions);
    m.observations = std::move(sp.observations);
    m.discount = discount;
    m.horizon = horizon;
    return m;
}

inline nlohmann::json to_json(const DenseMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < m.rows; ++r) {
        auto row = m.row(r);
        rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    return rows;
}

/// Debug dump of the full model.
inline nlohmann::json to_json(const PomdpModel& m) {
    nlohmann::json j;
    j["candidate_dus"] = m.candidate_dus;
    j["b_con"] = m.b_con;
    j["states"] = m.states;
    j["actions"] = m.actions;
    j["observations"] = m.observations;
    j["transition"] = to_json(m.transition);
    nlohmann::json obs = nlohmann::json::array();
    for (const auto& o : m.observation) obs.push_back(to_json(o));
    j["observation"] = std::move(obs);
    j["reward"] = to_json(m.reward);
    j["discount"] = m.discount;
    j["horizon"] = m.horizon;
    return j;
}

} // namespace cfho
