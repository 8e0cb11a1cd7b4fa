#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <vector>

#include "cfho/harness.hpp"
#include "cfho/policies.hpp"

using namespace cfho;

namespace {

SimConfig small_config() {
    SimConfig c;
    c.num_dus = 30;
    c.trip_length = 50.0;
    c.n_trials = 2;
    c.grid_size = 96;
    return c;
}

HoContext table_context(std::size_t num_dus, int b_con = 5) {
    NetworkTopology topo;
    topo.du_positions.assign(num_dus, Vec2{500.0, 500.0});
    HoSettings st;
    st.b_con = b_con;
    st.grid_size = 96;
    return HoContext{topo, with_reference_gains(ChannelParams{}, 150.0, 50.0, 200.0), RateModel(AgingParams{}, 8), st,
                     {}};
}

LinkForecast forecast(double p11, double p01, double pg) {
    LinkForecast f;
    f.transition = {p11, p01};
    f.p_good_next = pg;
    f.initial_good = pg;
    return f;
}

std::vector<int> iota_ids(int n) {
    std::vector<int> v(static_cast<std::size_t>(n));
    std::iota(v.begin(), v.end(), 0);
    return v;
}

} // namespace

TEST(Procedure, FullPoolBuildsOneSubproblemPerOutsideDu) {
    const auto cfg = SimConfig{};
    const auto env = make_environment(cfg, trial_seed(cfg.seed, 0));
    auto ctx = make_context(cfg, env.topology);
    const auto base = top_cluster(env.beta[0], 5);
    const auto f = forecast_links(ctx.topology, ctx.channel, env.positions[0], env.positions[1], 10.0,
                                  env.shadowing_db[0], base);
    ctx.settings.prune_subproblems = false;
    ctx.settings.grid_size = 80;
    const auto res = pomdp_ho_procedure(f, base, ctx);
    EXPECT_EQ(res.subproblems, 120u);
    EXPECT_EQ(res.solved, 120u);
    EXPECT_EQ(res.candidate.size(), 6u);
    EXPECT_EQ(res.policy.action_masks.size(), 6u);
    EXPECT_EQ(res.policy.alpha_vectors().front().values.size(), 64u);
    EXPECT_EQ(res.belief.probs.size(), 64u);
    for (int b : base) EXPECT_NE(std::find(res.candidate.begin(), res.candidate.end(), b), res.candidate.end());
}

TEST(Procedure, MinimalAndInvalidPools) {
    auto ctx = table_context(6);
    std::vector<LinkForecast> f(6, forecast(0.9, 0.1, 0.5));
    const auto base = iota_ids(5);
    const auto res = pomdp_ho_procedure(f, base, ctx);
    EXPECT_EQ(res.subproblems, 1u);
    EXPECT_EQ(res.candidate, iota_ids(6));

    std::vector<LinkForecast> few(5, forecast(0.9, 0.1, 0.5));
    EXPECT_THROW(pomdp_ho_procedure(few, base, ctx), std::invalid_argument);
    const std::vector<int> short_base{0, 1, 2};
    EXPECT_THROW(pomdp_ho_procedure(f, short_base, ctx), std::invalid_argument);
    const std::vector<int> dup{0, 0, 1, 2, 3};
    EXPECT_THROW(pomdp_ho_procedure(f, dup, ctx), std::invalid_argument);
}

TEST(Procedure, LargerGoodProbabilityWins) {
    for (bool prune : {false, true}) {
        auto ctx = table_context(7);
        ctx.settings.prune_subproblems = prune;
        std::vector<LinkForecast> f{forecast(0.95, 0.05, 0.8), forecast(0.9, 0.1, 0.6), forecast(0.7, 0.2, 0.3),
                                    forecast(0.6, 0.3, 0.4),   forecast(0.8, 0.1, 0.5), forecast(0.85, 0.2, 0.4),
                                    forecast(0.85, 0.2, 0.7)};
        const auto res = pomdp_ho_procedure(f, iota_ids(5), ctx);
        EXPECT_EQ(res.selected, 1u);
        EXPECT_NE(std::find(res.candidate.begin(), res.candidate.end(), 6), res.candidate.end());

        // Identical extras: lowest id wins.
        f[6] = f[5];
        const auto tie = pomdp_ho_procedure(f, iota_ids(5), ctx);
        EXPECT_EQ(tie.selected, 0u);
        EXPECT_NE(std::find(tie.candidate.begin(), tie.candidate.end(), 5), tie.candidate.end());
    }
}

TEST(Procedure, PruningPreservesTheResult) {
    auto cfg = SimConfig{};
    cfg.grid_size = 64;
    const auto env = make_environment(cfg, trial_seed(cfg.seed, 3));
    auto ctx = make_context(cfg, env.topology);
    for (int t : {1, 40, 77}) {
        const auto base = top_cluster(env.beta[t - 1], 5);
        const auto f = forecast_links(ctx.topology, ctx.channel, env.positions[t - 1], env.positions[t], 10.0,
                                      env.shadowing_db[t - 1], base);
        ctx.settings.prune_subproblems = true;
        const auto pruned = pomdp_ho_procedure(f, base, ctx);
        ctx.settings.prune_subproblems = false;
        const auto full = pomdp_ho_procedure(f, base, ctx);
        EXPECT_LT(pruned.solved, full.solved);
        EXPECT_EQ(pruned.candidate, full.candidate);
        EXPECT_EQ(pruned.selected, full.selected);
        EXPECT_EQ(pruned.expected_reward, full.expected_reward);
        EXPECT_EQ(to_json(pruned.policy), to_json(full.policy));
    }
}

TEST(Procedure, Deterministic) {
    const auto cfg = small_config();
    const auto env = make_environment(cfg, 77);
    const auto ctx = make_context(cfg, env.topology);
    const auto base = top_cluster(env.beta[0], 5);
    const auto f = forecast_links(ctx.topology, ctx.channel, env.positions[0], env.positions[1], 10.0,
                                  env.shadowing_db[0], base);
    const auto a = pomdp_ho_procedure(f, base, ctx);
    const auto b = pomdp_ho_procedure(f, base, ctx);
    EXPECT_EQ(a.candidate, b.candidate);
    EXPECT_EQ(to_json(a.policy).dump(), to_json(b.policy).dump());
}

TEST(Forecast, KnownLinksUseMeasuredShadowing) {
    const auto cfg = small_config();
    const auto env = make_environment(cfg, 5);
    const auto ch = cfg.channel();
    const std::vector<int> known{2, 7};
    const auto f =
        forecast_links(env.topology, ch, env.positions[0], env.positions[1], 10.0, env.shadowing_db[0], known);
    ASSERT_EQ(f.size(), 30u);
    for (std::size_t b = 0; b < f.size(); ++b) {
        const bool is_known = b == 2 || b == 7;
        EXPECT_EQ(f[b].known, is_known);
        const double expect =
            is_known ? transition_probs_known(env.shadowing_db[0][b], f[b].a_next_db, 10.0, ch) : f[b].p_good_next;
        EXPECT_DOUBLE_EQ(f[b].initial_good, expect);
        EXPECT_DOUBLE_EQ(f[b].p_good_next, marginal_good_prob(f[b].a_next_db, ch));
    }
    const std::vector<int> bad{30};
    EXPECT_THROW(forecast_links(env.topology, ch, env.positions[0], env.positions[1], 10.0, env.shadowing_db[0], bad),
                 std::out_of_range);
}

TEST(HoControl, HighRateKeepsServingCluster) {
    const auto cfg = small_config();
    const auto env = make_environment(cfg, 11);
    const auto ctx = make_context(cfg, env.topology);
    const auto first = top_cluster(env.beta[0], 5);
    auto st = initial_decision_state(first, 100.0, 1.0);
    for (int t = 1; t <= cfg.num_cycles(); ++t) {
        const auto prev = st;
        st = apply_ho_control(st, {env.positions[t - 1], env.positions[t], 10.0, env.shadowing_db[t - 1], env.beta[t]},
                              ctx);
        ASSERT_EQ(st.serving.size(), 5u);
        if (prev.last_rate >= prev.rate_threshold) {
            EXPECT_EQ(st.serving, prev.serving);
            EXPECT_EQ(st.last_switched, 0);
        }
        const auto& cand = st.cache->result.candidate;
        for (int du : st.potential) EXPECT_NE(std::find(cand.begin(), cand.end(), du), cand.end());
        EXPECT_EQ(st.cycle, t);
    }
}

TEST(HoControl, LowRateSwitchesToPotential) {
    const auto cfg = small_config();
    const auto env = make_environment(cfg, 12);
    const auto ctx = make_context(cfg, env.topology);
    const auto first = top_cluster(env.beta[0], 5);
    auto st = initial_decision_state(first, 0.0, std::numeric_limits<double>::infinity());
    for (int t = 1; t <= cfg.num_cycles(); ++t) {
        const auto prev = st;
        st = apply_ho_control(st, {env.positions[t - 1], env.positions[t], 10.0, env.shadowing_db[t - 1], env.beta[t]},
                              ctx);
        EXPECT_EQ(st.serving, st.potential);
        EXPECT_EQ(st.last_switched, count_switched(prev.serving, st.serving));
        if (st.potential == prev.serving) {
            EXPECT_EQ(st.last_switched, 0);
        }
        EXPECT_DOUBLE_EQ(st.last_rate, realized_rate(st.serving, env.beta[t], ctx));
    }
}

TEST(HoControl, ReuseModeSolvesLessOften) {
    auto cfg = small_config();
    cfg.resolve_every = 3;
    const auto env = make_environment(cfg, 13);
    const auto ctx = make_context(cfg, env.topology);
    const auto first = top_cluster(env.beta[0], 5);
    auto st = initial_decision_state(first, 0.0, 1e9);
    std::vector<int> ages;
    for (int t = 1; t <= cfg.num_cycles(); ++t) {
        st = apply_ho_control(st, {env.positions[t - 1], env.positions[t], 10.0, env.shadowing_db[t - 1], env.beta[t]},
                              ctx);
        ages.push_back(st.cache->age);
    }
    EXPECT_EQ(ages, (std::vector<int>{0, 1, 2, 0, 1}));
}

TEST(HoControl, RejectsWrongClusterSize) {
    const auto cfg = small_config();
    const auto env = make_environment(cfg, 14);
    const auto ctx = make_context(cfg, env.topology);
    auto st = initial_decision_state({1, 2, 3}, 0.0, 1.0);
    EXPECT_THROW(apply_ho_control(st, {env.positions[0], env.positions[1], 10.0, env.shadowing_db[0], env.beta[1]}, ctx),
                 std::invalid_argument);
}

TEST(RealizedRate, Examples) {
    auto ctx = table_context(4, 1);
    const std::vector<int> one{0};
    std::vector<double> beta{1e-300, 1e-300, 1e-300, 1e-300};
    EXPECT_LT(realized_rate(iota_ids(3), beta, ctx), 1e-12);
    beta[0] = ctx.channel.beta_good;
    const auto sp = enumerate_spaces(2, 1);
    std::vector<double> loads{1.0, 1.0};
    const auto r = build_reward(sp.states, sp.actions, loads, ctx.channel, ctx.rates);
    EXPECT_DOUBLE_EQ(realized_rate(one, beta, ctx), r(0b01, 0));
    EXPECT_THROW(realized_rate(std::vector<int>{}, beta, ctx), std::invalid_argument);
}

TEST(LsfTime, SortedInputAndTies) {
    std::vector<double> beta{9, 8, 7, 6, 5, 4, 3, 2};
    EXPECT_EQ(top_cluster(beta, 5), iota_ids(5));
    std::vector<double> ties{1, 2, 2, 2, 0};
    EXPECT_EQ(top_cluster(ties, 2), (std::vector<int>{1, 2}));
    EXPECT_THROW(top_cluster(ties, 6), std::invalid_argument);
}

TEST(LsfTime, FrozenTraceNeverSwitches) {
    const std::vector<std::vector<double>> trace(20, {3e-8, 1e-7, 5e-9, 8e-8, 2e-8, 1e-9, 4e-8});
    const auto c = lsf_time_triggered(trace, 5);
    for (std::size_t t = 1; t < c.size(); ++t) EXPECT_EQ(count_switched(c[t - 1], c[t]), 0);
}

TEST(LsfTime, HandTrace) {
    // Four DUs, two connections.
    const std::vector<std::vector<double>> trace{
        {4, 3, 2, 1}, // {0,1}
        {4, 1, 3, 2}, // {0,2}: 1 switch
        {1, 2, 3, 4}, // {2,3}: 1 switch
        {3, 4, 1, 2}, // {0,1}: 2 switches
        {3, 4, 2, 1}, // {0,1}: 0 switches
    };
    const auto c = lsf_time_triggered(trace, 2);
    std::vector<int> sw;
    for (std::size_t t = 1; t < c.size(); ++t) sw.push_back(count_switched(c[t - 1], c[t]));
    EXPECT_EQ(sw, (std::vector<int>{1, 1, 2, 0}));
}

TEST(LsfThreshold, ZeroAndInfiniteThresholds) {
    auto ctx = table_context(6);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> lb(-10.0, -7.0);
    std::vector<std::vector<double>> trace(15, std::vector<double>(6));
    for (auto& row : trace)
        for (double& b : row) b = std::pow(10.0, lb(rng));
    const auto never = lsf_threshold_triggered(trace, 3, 0.0, ctx);
    for (const auto& c : never) EXPECT_EQ(c, never.front());
    EXPECT_EQ(lsf_threshold_triggered(trace, 3, std::numeric_limits<double>::infinity(), ctx),
              lsf_time_triggered(trace, 3));
}

TEST(LsfThreshold, SingleDipGivesOneReselection) {
    auto ctx = table_context(3, 1);
    const std::vector<std::vector<double>> trace{
        {1e-7, 5e-8, 1e-9}, {1e-7, 6e-8, 1e-9}, {1e-12, 6e-8, 1e-9}, {1e-12, 6e-8, 1e-9}, {1e-12, 6e-8, 1e-9}};
    const double low = ctx.rates.rate_uniform(std::vector<double>{1e-12});
    const double high = ctx.rates.rate_uniform(std::vector<double>{6e-8});
    ASSERT_LT(low, high);
    const auto c = lsf_threshold_triggered(trace, 1, 0.5 * (low + high), ctx);
    int events = 0;
    for (std::size_t t = 1; t < c.size(); ++t) events += c[t] != c[t - 1];
    EXPECT_EQ(events, 1);
    EXPECT_EQ(c[2], std::vector<int>{0});
    EXPECT_EQ(c[3], std::vector<int>{1});
}

TEST(CountSwitched, Examples) {
    const std::vector<int> a{1, 2, 3, 4, 5};
    EXPECT_EQ(count_switched(a, a), 0);
    EXPECT_EQ(count_switched(a, std::vector<int>{6, 7, 8, 9, 10}), 5);
    EXPECT_EQ(count_switched(std::vector<int>{1, 2, 3}, std::vector<int>{2, 3, 4}), 1);
    EXPECT_THROW(count_switched(a, std::vector<int>{1, 2}), std::invalid_argument);
}

TEST(Schemes, TimeTriggeredRateDominatesPerCycle) {
    const auto cfg = small_config();
    for (int trial = 0; trial < 2; ++trial) {
        const auto env = make_environment(cfg, trial_seed(cfg.seed, trial));
        const auto lsf = run_trial(cfg, env, "lsf-time");
        const auto pomdp = run_trial(cfg, env, "pomdp");
        for (std::size_t k = 0; k < lsf.rate.size(); ++k) EXPECT_GE(lsf.rate[k], pomdp.rate[k] - 1e-12);
    }
}
