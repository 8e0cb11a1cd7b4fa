#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "channel.hpp"
#include "geometry.hpp"
#include "pomdp_model.hpp"
#include "solver.hpp"

namespace cfho {

struct HoSettings {
    int b_con = 5;
    int horizon = 10;
    double discount = 0.95;
    std::size_t grid_size = 256;
    /// Re-run the sub-problem search every this many cycles; in between the
    /// last policy is applied with its remaining horizon.
    int resolve_every = 1;
    /// Skip sub-problems whose QMDP bound cannot beat the best solved value.
    bool prune_subproblems = true;
};

/// Everything the procedure needs to know about one DU for the coming cycle.
struct LinkForecast {
    double a_prev_db = 0.0;
    double a_next_db = 0.0;
    TransitionPair transition;
    double p_good_next = 0.0;  ///< marginal Good probability, used for unobserved links
    double initial_good = 0.0; ///< Good probability of the initial belief
    bool known = false;
};

/// Per-DU forecasts for a move from `prev` to `next`. DUs listed in
/// `known_dus` have their previous shadowing measured, which sharpens the
/// initial belief; the transition model always uses the event form.
inline std::vector<LinkForecast> forecast_links(const NetworkTopology& topo, const ChannelParams& ch, Vec2 prev,
                                                Vec2 next, double delta_d, std::span<const double> prev_shadowing_db,
                                                std::span<const int> known_dus) {
    const std::size_t n = topo.du_positions.size();
    if (prev_shadowing_db.size() != n) throw std::invalid_argument("forecast_links: shadowing size mismatch");
    std::vector<LinkForecast> out(n);
    std::vector<char> known(n, 0);
    for (int id : known_dus) {
        if (id < 0 || static_cast<std::size_t>(id) >= n) throw std::out_of_range("forecast_links: DU id out of range");
        known[static_cast<std::size_t>(id)] = 1;
    }
    for (std::size_t b = 0; b < n; ++b) {
        auto& f = out[b];
        const Vec2 du = topo.du_positions[b];
        f.a_prev_db = threshold_margin_db(path_loss(planar_distance(prev, du), ch), ch);
        f.a_next_db = threshold_margin_db(path_loss(planar_distance(next, du), ch), ch);
        f.transition = transition_probs_event(f.a_prev_db, f.a_next_db, delta_d, ch);
        f.p_good_next = marginal_good_prob(f.a_next_db, ch);
        f.known = known[b] != 0;
        f.initial_good =
            f.known ? transition_probs_known(prev_shadowing_db[b], f.a_next_db, delta_d, ch) : f.p_good_next;
    }
    return out;
}

struct HoContext {
    NetworkTopology topology;
    ChannelParams channel;
    RateModel rates;
    HoSettings settings;
    std::vector<double> du_loads; ///< per DU; empty means one user per DU

    double load(int du) const { return du_loads.empty() ? 1.0 : du_loads.at(static_cast<std::size_t>(du)); }
};

struct HoProcedureResult {
    Policy policy;
    std::vector<int> candidate;
    Belief belief;
    std::vector<TransitionPair> links;
    double expected_reward = 0.0;
    std::size_t subproblems = 0;
    std::size_t solved = 0;
    std::size_t selected = 0; ///< 0-based position of the winner in the DU-id ordered pool
};

/// Sub-problem built from `base` plus one extra DU.
struct Subproblem {
    std::vector<int> candidate;
    std::vector<TransitionPair> links;
    std::vector<double> p_good;
    std::vector<double> initial_good;
    std::vector<double> loads;
};

inline Subproblem make_subproblem(std::span<const int> base, int extra, std::span<const LinkForecast> forecasts,
                                  const HoContext& ctx) {
    Subproblem sp;
    sp.candidate.assign(base.begin(), base.end());
    sp.candidate.push_back(extra);
    std::sort(sp.candidate.begin(), sp.candidate.end());
    for (int du : sp.candidate) {
        const auto& f = forecasts[static_cast<std::size_t>(du)];
        sp.links.push_back(f.transition);
        sp.p_good.push_back(f.p_good_next);
        sp.initial_good.push_back(f.initial_good);
        sp.loads.push_back(ctx.load(du));
    }
    return sp;
}

/// Divide-and-conquer search: one sub-problem per DU outside `base`, each
/// solved with PBVI; the policy with the largest expected total reward wins
/// (lowest DU id on ties).
inline HoProcedureResult pomdp_ho_procedure(std::span<const LinkForecast> forecasts, std::span<const int> base,
                                            const HoContext& ctx) {
    const auto& st = ctx.settings;
    const std::size_t n = forecasts.size();
    if (n <= static_cast<std::size_t>(st.b_con)) throw std::invalid_argument("pomdp_ho_procedure: need more DUs than b_con");
    if (base.size() != static_cast<std::size_t>(st.b_con))
        throw std::invalid_argument("pomdp_ho_procedure: base set must contain b_con DUs");
    std::vector<char> in_base(n, 0);
    for (int id : base) {
        if (id < 0 || static_cast<std::size_t>(id) >= n) throw std::out_of_range("pomdp_ho_procedure: DU id out of range");
        if (in_base[static_cast<std::size_t>(id)]) throw std::invalid_argument("pomdp_ho_procedure: duplicate DU in base");
        in_base[static_cast<std::size_t>(id)] = 1;
    }
    std::vector<int> others;
    for (std::size_t b = 0; b < n; ++b)
        if (!in_base[b]) others.push_back(static_cast<int>(b));

    const auto spaces = enumerate_spaces(static_cast<std::size_t>(st.b_con) + 1, st.b_con);
    std::map<std::vector<double>, DenseMatrix> reward_cache;

    struct Entry {
        Subproblem sp;
        DenseMatrix transition;
        std::vector<double> belief;
        double bound = 0.0;
    };
    std::vector<Entry> entries;
    entries.reserve(others.size());
    for (int extra : others) {
        Entry e;
        e.sp = make_subproblem(base, extra, forecasts, ctx);
        e.transition = build_transition(e.sp.links);
        e.belief = product_belief(e.sp.initial_good);
        auto it = reward_cache.find(e.sp.loads);
        if (it == reward_cache.end())
            it = reward_cache
                     .emplace(e.sp.loads,
                              build_reward(spaces.states, spaces.actions, e.sp.loads, ctx.channel, ctx.rates))
                     .first;
        e.bound = st.prune_subproblems
                      ? qmdp_upper_bound(e.transition, it->second, st.discount, st.horizon, e.belief)
                      : std::numeric_limits<double>::infinity();
        entries.push_back(std::move(e));
    }

    std::vector<std::size_t> order(entries.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (st.prune_subproblems)
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t x, std::size_t y) { return entries[x].bound > entries[y].bound; });

    HoProcedureResult result;
    result.subproblems = entries.size();
    std::optional<std::size_t> best;
    double best_value = -std::numeric_limits<double>::infinity();
    SolverOptions opts;
    opts.grid_size = st.grid_size;
    for (std::size_t idx : order) {
        auto& e = entries[idx];
        if (best) {
            const double margin = 1e-9 * std::max(1.0, std::abs(best_value));
            if (e.bound < best_value - margin) continue;
        }
        PomdpModel m;
        m.candidate_dus = e.sp.candidate;
        m.b_con = st.b_con;
        m.states = spaces.states;
        m.actions = spaces.actions;
        m.observations = spaces.observations;
        m.transition = std::move(e.transition);
        m.observation = build_observation(e.sp.p_good, m.actions);
        m.reward = reward_cache.at(e.sp.loads);
        m.discount = st.discount;
        m.horizon = st.horizon;
        Belief b0;
        b0.probs = e.belief;
        b0.per_link_good = e.sp.initial_good;
        Policy pol = solve(m, b0, opts);
        ++result.solved;

        const double v = pol.expected_reward;
        const double tol = 1e-12 * std::max(1.0, std::abs(best_value));
        const bool wins = !best || v > best_value + tol || (v >= best_value - tol && idx < *best);
        if (wins) {
            if (!best || v > best_value + tol) best_value = v;
            best = idx;
            result.policy = std::move(pol);
            result.candidate = e.sp.candidate;
            result.belief = std::move(b0);
            result.links = e.sp.links;
            result.expected_reward = v;
        }
    }
    result.selected = *best;
    return result;
}

/// Number of DUs in `next` that were not in `prev`.
inline int count_switched(std::span<const int> prev, std::span<const int> next) {
    if (prev.size() != next.size()) throw std::invalid_argument("count_switched: cluster size mismatch");
    int added = 0;
    for (int du : next)
        if (std::find(prev.begin(), prev.end(), du) == prev.end()) ++added;
    return added;
}

/// Rate of `serving` with the actual continuous LSF of each link.
inline double realized_rate(std::span<const int> serving, std::span<const double> beta_all, const HoContext& ctx) {
    if (serving.empty()) throw std::invalid_argument("realized_rate: empty cluster");
    std::vector<double> betas;
    std::vector<double> loads;
    for (int du : serving) {
        betas.push_back(beta_all[static_cast<std::size_t>(du)]);
        loads.push_back(ctx.load(du));
    }
    return ctx.rates.rate(betas, loads);
}

/// The `b_con` DUs with the largest LSF (lower id first on ties), sorted by id.
inline std::vector<int> top_cluster(std::span<const double> beta, int b_con) {
    if (b_con < 1 || beta.size() < static_cast<std::size_t>(b_con))
        throw std::invalid_argument("top_cluster: fewer DUs than b_con");
    std::vector<int> ids(beta.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::partial_sort(ids.begin(), ids.begin() + b_con, ids.end(), [&](int x, int y) {
        const double bx = beta[static_cast<std::size_t>(x)];
        const double by = beta[static_cast<std::size_t>(y)];
        return bx != by ? bx > by : x < y;
    });
    ids.resize(static_cast<std::size_t>(b_con));
    std::sort(ids.begin(), ids.end());
    return ids;
}

/// Best-LSF cluster at every step.
inline std::vector<std::vector<int>> lsf_time_triggered(const std::vector<std::vector<double>>& beta_trace, int b_con) {
    std::vector<std::vector<int>> out;
    out.reserve(beta_trace.size());
    for (const auto& beta : beta_trace) out.push_back(top_cluster(beta, b_con));
    return out;
}

/// Best-LSF cluster, re-selected only after a step whose realized rate fell
/// below `rate_threshold` (same timing as the POMDP control loop).
inline std::vector<std::vector<int>> lsf_threshold_triggered(const std::vector<std::vector<double>>& beta_trace,
                                                             int b_con, double rate_threshold, const HoContext& ctx) {
    std::vector<std::vector<int>> out;
    if (beta_trace.empty()) return out;
    out.push_back(top_cluster(beta_trace.front(), b_con));
    double last_rate = realized_rate(out.back(), beta_trace.front(), ctx);
    for (std::size_t t = 1; t < beta_trace.size(); ++t) {
        if (last_rate < rate_threshold)
            out.push_back(top_cluster(beta_trace[t], b_con));
        else
            out.push_back(out.back());
        last_rate = realized_rate(out.back(), beta_trace[t], ctx);
    }
    return out;
}

/// Environment seen by the control loop at one decision cycle.
struct CycleInputs {
    Vec2 prev_position;
    Vec2 position;
    double step_distance = 0.0;
    std::span<const double> prev_shadowing_db; ///< all DUs, previous cycle
    std::span<const double> beta;              ///< all DUs, this cycle
};

struct CachedProcedure {
    HoProcedureResult result;
    int age = 0;
};

struct HoDecisionState {
    std::vector<int> serving;
    std::vector<int> potential;
    double last_rate = 0.0;
    double rate_threshold = 1.0;
    int cycle = 0;
    int last_switched = 0;
    std::optional<CachedProcedure> cache;
};

inline HoDecisionState initial_decision_state(std::vector<int> serving, double rate, double rate_threshold) {
    HoDecisionState s;
    std::sort(serving.begin(), serving.end());
    s.potential = serving;
    s.serving = std::move(serving);
    s.last_rate = rate;
    s.rate_threshold = rate_threshold;
    return s;
}

/// One cycle of the HO-controlled policy application.
inline HoDecisionState apply_ho_control(const HoDecisionState& state, const CycleInputs& env, const HoContext& ctx) {
    const auto& st = ctx.settings;
    if (state.serving.size() != static_cast<std::size_t>(st.b_con) ||
        state.potential.size() != static_cast<std::size_t>(st.b_con))
        throw std::invalid_argument("apply_ho_control: clusters must contain b_con DUs");
    HoDecisionState next = state;

    const auto forecasts = forecast_links(ctx.topology, ctx.channel, env.prev_position, env.position,
                                          env.step_distance, env.prev_shadowing_db, state.potential);
    const int reuse = std::max(1, std::min(st.resolve_every, st.horizon));
    if (!next.cache || next.cache->age + 1 >= reuse) {
        next.cache = CachedProcedure{pomdp_ho_procedure(forecasts, state.potential, ctx), 0};
    } else {
        ++next.cache->age;
        auto& res = next.cache->result;
        std::vector<double> init;
        for (int du : res.candidate) init.push_back(forecasts[static_cast<std::size_t>(du)].initial_good);
        res.belief = initial_belief(init);
    }
    const auto& res = next.cache->result;
    const std::size_t steps_to_go = static_cast<std::size_t>(std::max(1, st.horizon - next.cache->age));
    const std::size_t action = policy_action(res.policy, res.belief.probs, steps_to_go);
    const BitVector mask = res.policy.action_masks.at(action);
    next.potential.clear();
    for (std::size_t b = 0; b < res.candidate.size(); ++b)
        if (bit(mask, b)) next.potential.push_back(res.candidate[b]);

    if (state.last_rate < state.rate_threshold) next.serving = next.potential;
    next.last_switched = count_switched(state.serving, next.serving);
    next.last_rate = realized_rate(next.serving, env.beta, ctx);
    ++next.cycle;
    return next;
}

} // namespace cfho
