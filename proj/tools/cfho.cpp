#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "cfho/cfho.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::string> scheme;
    std::optional<int> trials;
    std::optional<std::uint64_t> seed;
    std::optional<int> t_h;
    std::optional<double> r_threshold;
    std::optional<int> resolve_every;
    std::optional<int> grid_size;
    std::string out;
    std::string format = "csv";
};

void add_common(CLI::App* app, CommonFlags& f, bool with_scheme) {
    app->add_option("--config", f.config_path, "JSON configuration file")->check(CLI::ExistingFile);
    if (with_scheme) app->add_option("--scheme", f.scheme, "pomdp | lsf-time | lsf-threshold");
    app->add_option("--trials", f.trials, "number of Monte Carlo trials");
    app->add_option("--seed", f.seed, "base random seed");
    app->add_option("--t-h", f.t_h, "planning horizon in cycles");
    app->add_option("--r-threshold", f.r_threshold, "rate threshold (bits/s/Hz)");
    app->add_option("--resolve-every", f.resolve_every, "re-plan every N cycles");
    app->add_option("--grid-size", f.grid_size, "belief points per sub-problem");
    app->add_option("--out", f.out, "output file");
    app->add_option("--format", f.format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
}

cfho::SimConfig resolve_config(const CommonFlags& f) {
    auto j = f.config_path.empty() ? cfho::to_json(cfho::SimConfig{}) : cfho::to_json(cfho::load_config(f.config_path));
    if (f.scheme) j["scheme"] = *f.scheme;
    if (f.trials) j["n_trials"] = *f.trials;
    if (f.seed) j["seed"] = *f.seed;
    if (f.t_h) j["t_h"] = *f.t_h;
    if (f.r_threshold) j["r_threshold"] = *f.r_threshold;
    if (f.resolve_every) j["resolve_every"] = *f.resolve_every;
    if (f.grid_size) j["grid_size"] = *f.grid_size;
    return cfho::config_from_json(j);
}

void print_scheme(const cfho::SchemeReport& s) {
    std::printf("%-14s switched %8.3f  p10 %7.3f  p50 %7.3f  p90 %7.3f  below-threshold %.4f\n", s.scheme.c_str(),
                s.mean_total_switched, s.p10, s.p50, s.p90, s.fraction_below_threshold);
}

void print_header(const cfho::SimConfig& cfg) {
    std::printf("trials %d  seed %llu  r_threshold %s  t_h %d  grid_size %d  resolve_every %d\n", cfg.n_trials,
                static_cast<unsigned long long>(cfg.seed), cfho::format_double(cfg.r_threshold).c_str(), cfg.t_h,
                cfg.grid_size, cfg.resolve_every);
}

void maybe_export(const cfho::Report& r, const CommonFlags& f) {
    if (f.out.empty()) return;
    cfho::export_report(r, f.out, f.format);
    std::printf("wrote %s\n", f.out.c_str());
}

int strictly_fewer(const cfho::SchemeReport& ours, const cfho::SchemeReport& base) {
    int n = 0;
    for (std::size_t i = 0; i < ours.trial_total_switched.size(); ++i)
        if (ours.trial_total_switched[i] < base.trial_total_switched[i]) ++n;
    return n;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Handoff control for cell-free massive MIMO: POMDP planner and LSF baselines"};
    app.require_subcommand(1);

    CommonFlags sim_flags;
    auto* simulate = app.add_subcommand("simulate", "run one scheme");
    add_common(simulate, sim_flags, true);

    CommonFlags cmp_flags;
    auto* compare = app.add_subcommand("compare", "run all schemes on shared trials");
    add_common(compare, cmp_flags, false);

    CommonFlags solve_flags;
    int solve_trial = 0;
    int solve_cycle = 1;
    auto* solve = app.add_subcommand("solve", "dump the policy chosen at one decision cycle as JSON");
    add_common(solve, solve_flags, false);
    solve->add_option("--trial", solve_trial, "trial index")->check(CLI::NonNegativeNumber);
    solve->add_option("--cycle", solve_cycle, "decision cycle (1-based)")->check(CLI::PositiveNumber);

    std::string cdf_in;
    std::string cdf_out;
    auto* export_cdf = app.add_subcommand("export-cdf", "convert a JSON report to CSV");
    export_cdf->add_option("--in", cdf_in, "JSON report")->required()->check(CLI::ExistingFile);
    export_cdf->add_option("--out", cdf_out, "CSV output")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (simulate->parsed()) {
            const auto cfg = resolve_config(sim_flags);
            const auto report = cfho::run_monte_carlo(cfg, {cfg.scheme});
            print_header(cfg);
            print_scheme(report.schemes.front());
            maybe_export(report, sim_flags);
        } else if (compare->parsed()) {
            const auto cfg = resolve_config(cmp_flags);
            const auto report = cfho::run_monte_carlo(cfg, cfho::scheme_names());
            print_header(cfg);
            for (const auto& s : report.schemes) print_scheme(s);
            const auto& ours = report.scheme("pomdp");
            for (const char* base : {"lsf-time", "lsf-threshold"}) {
                const auto& b = report.scheme(base);
                std::printf("reduction vs %-13s %6.2f%%  (fewer switches in %d/%d trials)\n", base,
                            cfho::reduction_percent(ours.mean_total_switched, b.mean_total_switched),
                            strictly_fewer(ours, b), cfg.n_trials);
            }
            maybe_export(report, cmp_flags);
        } else if (solve->parsed()) {
            const auto cfg = resolve_config(solve_flags);
            if (solve_cycle > cfg.num_cycles()) throw std::invalid_argument("--cycle exceeds the trip length");
            const auto env = cfho::make_environment(cfg, cfho::trial_seed(cfg.seed, solve_trial));
            const auto ctx = cfho::make_context(cfg, env.topology);
            auto first = cfho::top_cluster(env.beta.front(), cfg.b_con);
            auto state = cfho::initial_decision_state(first, cfho::realized_rate(first, env.beta.front(), ctx),
                                                      cfg.r_threshold);
            for (int t = 1; t < solve_cycle; ++t)
                state = cfho::apply_ho_control(
                    state, {env.positions[t - 1], env.positions[t], cfg.step_distance(), env.shadowing_db[t - 1], env.beta[t]},
                    ctx);
            const int t = solve_cycle;
            const auto forecasts = cfho::forecast_links(ctx.topology, ctx.channel, env.positions[t - 1],
                                                        env.positions[t], cfg.step_distance(),
                                                        env.shadowing_db[t - 1], state.potential);
            const auto res = cfho::pomdp_ho_procedure(forecasts, state.potential, ctx);
            nlohmann::json out{{"trial", solve_trial},
                               {"cycle", solve_cycle},
                               {"base_set", state.potential},
                               {"candidate_dus", res.candidate},
                               {"expected_reward", res.expected_reward},
                               {"initial_belief", res.belief.probs},
                               {"per_link_good", res.belief.per_link_good},
                               {"subproblems", res.subproblems},
                               {"solved", res.solved},
                               {"policy", cfho::to_json(res.policy)}};
            const auto text = out.dump(2) + "\n";
            if (solve_flags.out.empty())
                std::cout << text;
            else
                cfho::write_text(solve_flags.out, text);
        } else if (export_cdf->parsed()) {
            cfho::export_report(cfho::import_report(cdf_in), cdf_out, "csv");
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "cfho: error: %s\n", e.what());
        return 1;
    }
    return 0;
}
