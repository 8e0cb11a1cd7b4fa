#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "json.hpp"

#include "pomdp_model.hpp"

namespace cfho {

struct AlphaVector {
    std::vector<double> values;
    std::size_t action = 0;
};

/// Point-based finite-horizon policy.
///
/// `stages[k - 1]` is the alpha set for k remaining decision cycles; the last
/// stage is the full-horizon set consulted at the current cycle. Alpha values
/// count the first reward undiscounted, so the objective (which discounts from
/// the first cycle on) is `discount * max_alpha <alpha, b>`.
struct Policy {
    std::vector<std::vector<AlphaVector>> stages;
    std::vector<BitVector> action_masks;
    int horizon = 0;
    double discount = 0.0;
    bool infinite_horizon = false;
    double expected_reward = 0.0;
    std::size_t belief_points = 0;

    const std::vector<AlphaVector>& alpha_vectors() const { return stages.back(); }
};

struct SolverOptions {
    std::size_t grid_size = 256;
    bool infinite_horizon = false;
    double convergence_tol = 1e-4;
    std::size_t max_sweeps = 100000;
};

namespace detail {

// Observations whose likelihood columns are proportional lead to the same
// posterior, so the solver works on lumped groups: per action, each group
// lists (state, summed likelihood) pairs.
struct ObservationGroup {
    std::vector<std::uint32_t> states;
    std::vector<double> lik;
};

inline std::vector<std::vector<ObservationGroup>> lump_observations(const PomdpModel& m) {
    std::vector<std::vector<ObservationGroup>> out(m.num_actions());
    const std::size_t ns = m.num_states();
    for (std::size_t a = 0; a < m.num_actions(); ++a) {
        const auto& o = m.observation[a];
        std::map<std::vector<std::int64_t>, std::size_t> index;
        for (std::size_t l = 0; l < m.num_observations(); ++l) {
            double peak = 0.0;
            for (std::size_t s = 0; s < ns; ++s) peak = std::max(peak, o(s, l));
            if (peak <= 0.0) continue;
            std::vector<std::int64_t> key;
            for (std::size_t s = 0; s < ns; ++s) {
                if (o(s, l) <= 0.0) continue;
                key.push_back(static_cast<std::int64_t>(s));
                key.push_back(std::llround(o(s, l) / peak * 1e12));
            }
            auto [it, inserted] = index.try_emplace(std::move(key), out[a].size());
            if (inserted) {
                ObservationGroup g;
                for (std::size_t s = 0; s < ns; ++s) {
                    if (o(s, l) <= 0.0) continue;
                    g.states.push_back(static_cast<std::uint32_t>(s));
                    g.lik.push_back(o(s, l));
                }
                out[a].push_back(std::move(g));
            } else {
                auto& g = out[a][it->second];
                for (std::size_t k = 0; k < g.states.size(); ++k) g.lik[k] += o(g.states[k], l);
            }
        }
    }
    return out;
}

inline std::vector<std::int64_t> belief_key(std::span<const double> b) {
    std::vector<std::int64_t> k(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) k[i] = std::llround(b[i] * 1e10);
    return k;
}

inline double group_prob(std::span<const double> b, const ObservationGroup& g) {
    double p = 0.0;
    for (std::size_t k = 0; k < g.states.size(); ++k) p += b[g.states[k]] * g.lik[k];
    return p;
}

// Posterior on the current state given the group, pushed one cycle forward.
inline std::vector<double> successor(const PomdpModel& m, std::span<const double> b, const ObservationGroup& g,
                                     double prob) {
    const std::size_t ns = m.num_states();
    std::vector<double> next(ns, 0.0);
    for (std::size_t k = 0; k < g.states.size(); ++k) {
        const double w = b[g.states[k]] * g.lik[k] / prob;
        if (w == 0.0) continue;
        auto row = m.transition.row(g.states[k]);
        for (std::size_t s = 0; s < ns; ++s) next[s] += w * row[s];
    }
    return next;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline bool better(double value, double best) {
    if (best == -std::numeric_limits<double>::infinity()) return true;
    return value > best + 1e-12 * std::max(1.0, std::abs(best));
}

} // namespace detail

/// Belief points for the backups: the initial belief, every corner belief
/// (for at most 64 states), then reachable beliefs breadth first, each depth
/// ordered by reach probability, until `grid_size` points are collected.
inline std::vector<std::vector<double>> build_belief_set(const PomdpModel& m, std::span<const double> initial,
                                                         std::size_t grid_size) {
    const auto groups = detail::lump_observations(m);
    const std::size_t ns = m.num_states();
    std::vector<std::vector<double>> points;
    std::set<std::vector<std::int64_t>> seen;
    auto add = [&](std::vector<double> b) {
        if (!seen.insert(detail::belief_key(b)).second) return false;
        points.push_back(std::move(b));
        return true;
    };
    add(std::vector<double>(initial.begin(), initial.end()));
    if (ns <= 64) {
        for (std::size_t s = 0; s < ns; ++s) {
            std::vector<double> corner(ns, 0.0);
            corner[s] = 1.0;
            add(std::move(corner));
        }
    }

    struct Node {
        std::vector<double> belief;
        double weight;
    };
    std::vector<Node> frontier{{points.front(), 1.0}};
    std::set<std::vector<std::int64_t>> expanded{detail::belief_key(points.front())};
    const double per_action = 1.0 / static_cast<double>(m.num_actions());
    while (points.size() < grid_size && !frontier.empty()) {
        std::vector<Node> candidates;
        std::map<std::vector<std::int64_t>, std::size_t> where;
        for (const auto& node : frontier) {
            for (std::size_t a = 0; a < m.num_actions(); ++a) {
                for (const auto& g : groups[a]) {
                    const double p = detail::group_prob(node.belief, g);
                    if (p <= 1e-12) continue;
                    auto next = detail::successor(m, node.belief, g, p);
                    auto key = detail::belief_key(next);
                    const double w = node.weight * p * per_action;
                    auto [it, inserted] = where.try_emplace(std::move(key), candidates.size());
                    if (inserted)
                        candidates.push_back({std::move(next), w});
                    else
                        candidates[it->second].weight += w;
                }
            }
        }
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const Node& x, const Node& y) { return x.weight > y.weight; });
        std::vector<Node> next_frontier;
        for (auto& c : candidates) {
            if (points.size() >= grid_size) break;
            add(c.belief);
            if (expanded.insert(detail::belief_key(c.belief)).second) next_frontier.push_back(std::move(c));
        }
        frontier = std::move(next_frontier);
    }
    return points;
}

namespace detail {

// One point-based backup of `prev` at every belief point.
inline std::vector<AlphaVector> backup(const PomdpModel& m, const std::vector<std::vector<ObservationGroup>>& groups,
                                       const std::vector<std::vector<double>>& points,
                                       const std::vector<AlphaVector>& prev) {
    const std::size_t ns = m.num_states();
    const std::size_t na = m.num_actions();
    const std::size_t ng = prev.size();
    const double gamma = m.discount;

    // Projected values: projected[s * ng + j] = sum_s' T(s, s') alpha_j(s').
    std::vector<double> projected(ns * ng, 0.0);
    for (std::size_t s = 0; s < ns; ++s) {
        auto row = m.transition.row(s);
        for (std::size_t j = 0; j < ng; ++j) projected[s * ng + j] = dot(row, prev[j].values);
    }

    auto best_for = [&](const ObservationGroup& g, std::span<const double> weights, std::vector<double>& acc) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t k = 0; k < g.states.size(); ++k) {
            const double w = weights.empty() ? g.lik[k] : weights[g.states[k]] * g.lik[k];
            if (w == 0.0) continue;
            const double* col = projected.data() + static_cast<std::size_t>(g.states[k]) * ng;
            for (std::size_t j = 0; j < ng; ++j) acc[j] += w * col[j];
        }
        const auto it = std::max_element(acc.begin(), acc.end());
        return std::pair<std::size_t, double>{static_cast<std::size_t>(it - acc.begin()), *it};
    };

    // Fallback choice for groups the belief cannot produce.
    std::vector<std::vector<std::size_t>> fallback(na);
    std::vector<double> acc(ng);
    for (std::size_t a = 0; a < na; ++a)
        for (const auto& g : groups[a]) fallback[a].push_back(best_for(g, {}, acc).first);

    std::vector<AlphaVector> out;
    std::map<std::vector<std::size_t>, std::size_t> signatures;
    std::vector<std::size_t> choice;
    std::vector<std::size_t> best_choice;
    for (const auto& b : points) {
        double best_value = -std::numeric_limits<double>::infinity();
        std::size_t best_action = 0;
        for (std::size_t a = 0; a < na; ++a) {
            double value = 0.0;
            for (std::size_t s = 0; s < ns; ++s) value += b[s] * m.reward(s, a);
            choice.assign(1, a);
            for (std::size_t gi = 0; gi < groups[a].size(); ++gi) {
                const auto& g = groups[a][gi];
                if (group_prob(b, g) <= 0.0) {
                    choice.push_back(fallback[a][gi]);
                    continue;
                }
                const auto [j, v] = best_for(g, b, acc);
                choice.push_back(j);
                value += gamma * v;
            }
            if (better(value, best_value)) {
                best_value = value;
                best_action = a;
                best_choice = choice;
            }
        }
        if (signatures.contains(best_choice)) continue;
        signatures.emplace(best_choice, out.size());
        AlphaVector alpha;
        alpha.action = best_action;
        alpha.values.assign(ns, 0.0);
        for (std::size_t s = 0; s < ns; ++s) alpha.values[s] = m.reward(s, best_action);
        const auto& gs = groups[best_action];
        for (std::size_t gi = 0; gi < gs.size(); ++gi) {
            const std::size_t j = best_choice[gi + 1];
            for (std::size_t k = 0; k < gs[gi].states.size(); ++k) {
                const std::size_t s = gs[gi].states[k];
                alpha.values[s] += gamma * gs[gi].lik[k] * projected[s * ng + j];
            }
        }
        for (double v : alpha.values)
            if (!std::isfinite(v)) throw std::runtime_error("solve: non-finite value in backup");
        out.push_back(std::move(alpha));
    }
    return out;
}

inline std::pair<std::size_t, double> best_alpha(const std::vector<AlphaVector>& set, std::span<const double> b) {
    std::size_t best = 0;
    double best_value = dot(set[0].values, b);
    for (std::size_t i = 1; i < set.size(); ++i) {
        const double v = dot(set[i].values, b);
        const double tol = 1e-12 * std::max(1.0, std::abs(best_value));
        if (v > best_value + tol) {
            best_value = v;
            best = i;
        } else if (v >= best_value - tol && set[i].action < set[best].action) {
            best = i;
        }
    }
    return {best, best_value};
}

} // namespace detail

/// Point-based value iteration over a fixed belief set.
inline Policy solve(const PomdpModel& model, const Belief& initial, const SolverOptions& opts = {}) {
    model.validate();
    if (!opts.infinite_horizon && model.horizon <= 0) throw std::invalid_argument("solve: horizon must be positive");
    if (opts.grid_size < 1) throw std::invalid_argument("solve: grid_size must be >= 1");
    if (initial.probs.size() != model.num_states()) throw std::invalid_argument("solve: belief dimension mismatch");

    const auto groups = detail::lump_observations(model);
    const auto points = build_belief_set(model, initial.probs, opts.grid_size);

    Policy policy;
    policy.action_masks = model.actions;
    policy.horizon = model.horizon;
    policy.discount = model.discount;
    policy.infinite_horizon = opts.infinite_horizon;
    policy.belief_points = points.size();

    std::vector<AlphaVector> current{AlphaVector{std::vector<double>(model.num_states(), 0.0), 0}};
    if (!opts.infinite_horizon) {
        for (int k = 0; k < model.horizon; ++k) {
            current = detail::backup(model, groups, points, current);
            policy.stages.push_back(current);
        }
    } else {
        std::vector<double> last(points.size(), 0.0);
        for (std::size_t sweep = 0; sweep < opts.max_sweeps; ++sweep) {
            current = detail::backup(model, groups, points, current);
            double span = 0.0;
            for (std::size_t i = 0; i < points.size(); ++i) {
                const double v = detail::best_alpha(current, points[i]).second;
                span = std::max(span, std::abs(v - last[i]));
                last[i] = v;
            }
            if (span < opts.convergence_tol) break;
        }
        policy.stages.push_back(current);
    }
    policy.expected_reward = model.discount * detail::best_alpha(policy.alpha_vectors(), initial.probs).second;
    if (!std::isfinite(policy.expected_reward)) throw std::runtime_error("solve: non-finite expected reward");
    return policy;
}

/// Action index chosen with `steps_to_go` cycles remaining (0 means the full horizon).
inline std::size_t policy_action(const Policy& policy, std::span<const double> belief, std::size_t steps_to_go = 0) {
    if (policy.stages.empty()) throw std::invalid_argument("policy_action: empty policy");
    const std::size_t stage = steps_to_go == 0 ? policy.stages.size() : std::min(steps_to_go, policy.stages.size());
    const auto& set = policy.stages[stage - 1];
    if (set.empty() || belief.size() != set.front().values.size())
        throw std::invalid_argument("policy_action: belief dimension mismatch");
    return set[detail::best_alpha(set, belief).first].action;
}

inline double expected_total_reward(const Policy& policy, std::span<const double> belief) {
    const auto& set = policy.alpha_vectors();
    if (set.empty() || belief.size() != set.front().values.size())
        throw std::invalid_argument("expected_total_reward: belief dimension mismatch");
    return policy.discount * detail::best_alpha(set, belief).second;
}

/// Upper bound on the objective from assuming the state becomes fully
/// observed after the first decision (QMDP), same discounting as the policy.
inline double qmdp_upper_bound(const DenseMatrix& transition, const DenseMatrix& reward, double discount, int horizon,
                               std::span<const double> belief) {
    const std::size_t ns = transition.rows;
    const std::size_t na = reward.cols;
    std::vector<double> value(ns, 0.0);
    std::vector<double> next(ns);
    DenseMatrix q(ns, na);
    for (int k = 0; k < horizon; ++k) {
        for (std::size_t s = 0; s < ns; ++s) {
            const double future = discount * detail::dot(transition.row(s), value);
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < na; ++a) {
                q(s, a) = reward(s, a) + future;
                best = std::max(best, q(s, a));
            }
            next[s] = best;
        }
        std::swap(value, next);
    }
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < na; ++a) {
        double v = 0.0;
        for (std::size_t s = 0; s < ns; ++s) v += belief[s] * q(s, a);
        best = std::max(best, v);
    }
    return discount * best;
}

inline nlohmann::json to_json(const Policy& p) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& set : p.stages) {
        nlohmann::json alphas = nlohmann::json::array();
        for (const auto& a : set) alphas.push_back({{"action", a.action}, {"values", a.values}});
        stages.push_back(std::move(alphas));
    }
    return {{"horizon", p.horizon},
            {"discount", p.discount},
            {"infinite_horizon", p.infinite_horizon},
            {"expected_reward", p.expected_reward},
            {"belief_points", p.belief_points},
            {"action_masks", p.action_masks},
            {"stages", std::move(stages)}};
}

inline Policy policy_from_json(const nlohmann::json& j) {
    Policy p;
    p.horizon = j.at("horizon").get<int>();
    p.discount = j.at("discount").get<double>();
    p.infinite_horizon = j.at("infinite_horizon").get<bool>();
    p.expected_reward = j.at("expected_reward").get<double>();
    p.belief_points = j.at("belief_points").get<std::size_t>();
    p.action_masks = j.at("action_masks").get<std::vector<BitVector>>();
    for (const auto& set : j.at("stages")) {
        std::vector<AlphaVector> alphas;
        for (const auto& a : set)
            alphas.push_back({a.at("values").get<std::vector<double>>(), a.at("action").get<std::size_t>()});
        p.stages.push_back(std::move(alphas));
    }
    return p;
}

} // namespace cfho
