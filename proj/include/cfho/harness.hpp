#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "channel.hpp"
#include "geometry.hpp"
#include "policies.hpp"

namespace cfho {

inline const std::vector<std::string>& scheme_names() {
    static const std::vector<std::string> names{"pomdp", "lsf-time", "lsf-threshold"};
    return names;
}

/// Simulation parameters; JSON keys match the field names.
struct SimConfig {
    // topology and mobility
    int num_dus = 125;
    double area_side = 1000.0;
    int num_antennas = 8;
    double speed = 10.0;
    double step_duration = 1.0;
    double trip_length = 1000.0;
    double wrap_margin = 200.0;
    double start_box = 100.0;
    // decision process
    double gamma = 0.95;
    int b_con = 5;
    int b_p = 6;
    int t_h = 10;
    double r_threshold = 1.0;
    int resolve_every = 1;
    int grid_size = 256;
    bool prune = true;
    double du_load = 1.0;
    // radio
    double p_downlink_dbm = 30.0;
    double p_uplink_dbm = 20.0;
    int tau_c = 200;
    int tau_p = 16;
    int n_est = 16;
    int pilot_instant = 1;
    double carrier_hz = 1.8e9;
    double sample_period = 66.7e-6;
    double noise_psd_dbm_hz = -174.0;
    double noise_figure_db = 8.0;
    double bandwidth_hz = 20e6;
    // large-scale fading
    double d0 = 1.1;
    double alpha_pl = 3.8;
    double d_h = 13.5;
    double sigma_sh_db = 6.0;
    double d_decorr = 100.0;
    double iota = 0.5;
    double d_threshold = 150.0;
    double d_good = 50.0;
    double d_bad = 200.0;
    // Monte Carlo
    int n_trials = 100;
    std::uint64_t seed = 1;
    std::string scheme = "pomdp";

    double step_distance() const { return speed * step_duration; }

    int num_cycles() const { return static_cast<int>(std::llround(trip_length / step_distance())); }

    ChannelParams channel() const {
        ChannelParams p;
        p.d0 = d0;
        p.alpha_pl = alpha_pl;
        p.d_h = d_h;
        p.sigma_sh_db = sigma_sh_db;
        p.d_decorr = d_decorr;
        p.iota = iota;
        return with_reference_gains(p, d_threshold, d_good, d_bad);
    }

    AgingParams aging() const {
        AgingParams a;
        a.carrier_hz = carrier_hz;
        a.sample_period = sample_period;
        a.user_speed = speed;
        a.tau_c = tau_c;
        a.tau_p = tau_p;
        a.n_est = n_est;
        a.pilot_instant = pilot_instant;
        a.p_uplink = dbm_to_watts(p_uplink_dbm);
        a.p_downlink = dbm_to_watts(p_downlink_dbm);
        a.noise_power = noise_power_watts(noise_psd_dbm_hz, noise_figure_db, bandwidth_hz);
        return a;
    }

    HoSettings settings() const {
        HoSettings s;
        s.b_con = b_con;
        s.horizon = t_h;
        s.discount = gamma;
        s.grid_size = static_cast<std::size_t>(grid_size);
        s.resolve_every = resolve_every;
        s.prune_subproblems = prune;
        return s;
    }

    void validate() const {
        auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
        if (num_dus < 1) fail("num_dus must be >= 1");
        if (!(area_side > 0.0)) fail("area_side must be positive");
        if (num_antennas < 1) fail("num_antennas must be >= 1");
        if (!(speed > 0.0) || !(step_duration > 0.0)) fail("speed and step_duration must be positive");
        if (!(trip_length > 0.0)) fail("trip_length must be positive");
        if (std::abs(trip_length / step_distance() - num_cycles()) > 1e-9 || num_cycles() < 1)
            fail("trip_length must be a positive multiple of speed * step_duration");
        if (!(wrap_margin >= 0.0 && 2.0 * wrap_margin < area_side)) fail("wrap_margin must lie in [0, area_side / 2)");
        if (!(start_box >= 0.0 && start_box <= area_side)) fail("start_box must lie in [0, area_side]");
        if (!(gamma >= 0.0 && gamma < 1.0)) fail("gamma must lie in [0, 1)");
        if (b_con < 1) fail("b_con must be >= 1");
        if (b_p != b_con + 1) fail("b_p must equal b_con + 1");
        if (num_dus <= b_con) fail("num_dus must exceed b_con");
        if (t_h < 1) fail("t_h must be >= 1");
        if (!(r_threshold >= 0.0)) fail("r_threshold must be >= 0");
        if (resolve_every < 1) fail("resolve_every must be >= 1");
        if (grid_size < 1) fail("grid_size must be >= 1");
        if (!(du_load >= 1.0)) fail("du_load must be >= 1");
        if (!(bandwidth_hz > 0.0)) fail("bandwidth_hz must be positive");
        if (!(d_good < d_threshold && d_threshold < d_bad)) fail("need d_good < d_threshold < d_bad");
        if (n_trials < 1) fail("n_trials must be >= 1");
        if (std::find(scheme_names().begin(), scheme_names().end(), scheme) == scheme_names().end())
            fail("unknown scheme '" + scheme + "'");
        channel().validate();
        aging().validate();
    }
};

#define CFHO_CONFIG_FIELDS(X)                                                                                         \
    X(num_dus) X(area_side) X(num_antennas) X(speed) X(step_duration) X(trip_length) X(wrap_margin) X(start_box)     \
    X(gamma) X(b_con) X(b_p) X(t_h) X(r_threshold) X(resolve_every) X(grid_size) X(prune) X(du_load)                \
    X(p_downlink_dbm) X(p_uplink_dbm) X(tau_c) X(tau_p) X(n_est) X(pilot_instant) X(carrier_hz) X(sample_period)     \
    X(noise_psd_dbm_hz) X(noise_figure_db) X(bandwidth_hz) X(d0) X(alpha_pl) X(d_h) X(sigma_sh_db) X(d_decorr)       \
    X(iota) X(d_threshold) X(d_good) X(d_bad) X(n_trials) X(seed) X(scheme)

inline nlohmann::json to_json(const SimConfig& c) {
    nlohmann::json j;
#define CFHO_PUT(name) j[#name] = c.name;
    CFHO_CONFIG_FIELDS(CFHO_PUT)
#undef CFHO_PUT
    return j;
}

/// Unknown keys are rejected; missing keys keep their defaults. `b_p`
/// follows `b_con` unless given explicitly.
inline SimConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
    SimConfig c;
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        try {
#define CFHO_GET(name)                                                                                                \
    if (key == #name) {                                                                                               \
        c.name = value.get<decltype(c.name)>();                                                                       \
        known = true;                                                                                                 \
    }
            CFHO_CONFIG_FIELDS(CFHO_GET)
#undef CFHO_GET
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("config: bad value for '" + key + "': " + e.what());
        }
        if (!known) throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    if (!j.contains("b_p")) c.b_p = c.b_con + 1;
    c.validate();
    return c;
}

inline SimConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("cannot parse config file '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

/// Per-trial seed: the base seed and trial index mixed through seed_seq.
inline std::uint64_t trial_seed(std::uint64_t base, int trial) {
    std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                      static_cast<std::uint32_t>(trial)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// Geometry and large-scale fading of one trip, shared by every scheme.
/// Index t = 0 is the starting position; cycles are t = 1..num_cycles.
struct TrialEnvironment {
    NetworkTopology topology;
    std::vector<Vec2> positions;
    std::vector<std::vector<double>> shadowing_db;
    std::vector<std::vector<double>> beta;
    std::uint64_t seed = 0;

    /// FNV-1a over the bit patterns of every shadowing value.
    std::uint64_t checksum() const {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& row : shadowing_db)
            for (double v : row) {
                std::uint64_t bits = 0;
                std::memcpy(&bits, &v, sizeof bits);
                for (int k = 0; k < 8; ++k) {
                    h ^= (bits >> (8 * k)) & 0xffu;
                    h *= 1099511628211ull;
                }
            }
        return h;
    }
};

inline TrialEnvironment make_environment(const SimConfig& cfg, std::uint64_t seed) {
    const auto ch = cfg.channel();
    std::mt19937_64 rng(seed);
    TrialEnvironment env;
    env.seed = seed;
    env.topology.area_side = cfg.area_side;
    env.topology.num_antennas = cfg.num_antennas;
    env.topology.height_sep = cfg.d_h;
    env.topology.du_positions = place_dus(static_cast<std::size_t>(cfg.num_dus), cfg.area_side, rng());
    env.topology.validate();

    auto traj = random_trajectory(cfg.area_side, cfg.start_box, cfg.speed, cfg.step_duration, cfg.wrap_margin, rng);
    std::normal_distribution<double> initial(0.0, cfg.sigma_sh_db);
    std::vector<LinkRecord> links;
    for (int b = 0; b < cfg.num_dus; ++b) {
        const double pl = path_loss(planar_distance(traj.position(), env.topology.du_positions[b]), ch);
        links.push_back(make_link(b, initial(rng), pl, ch));
    }
    auto record = [&] {
        env.positions.push_back(traj.position());
        std::vector<double> sh;
        std::vector<double> beta;
        for (const auto& l : links) {
            sh.push_back(l.shadowing_db);
            beta.push_back(l.beta_linear);
        }
        env.shadowing_db.push_back(std::move(sh));
        env.beta.push_back(std::move(beta));
    };
    record();
    for (int t = 1; t <= cfg.num_cycles(); ++t) {
        traj = step_user(traj, cfg.area_side);
        for (auto& l : links) {
            const double pl = path_loss(planar_distance(traj.position(), env.topology.du_positions[l.du_id]), ch);
            l = advance_shadowing(l, traj.step_length(), pl, ch, rng);
        }
        record();
    }
    return env;
}

inline HoContext make_context(const SimConfig& cfg, const NetworkTopology& topo) {
    HoContext ctx{topo, cfg.channel(), RateModel(cfg.aging(), cfg.num_antennas), cfg.settings(), {}};
    if (cfg.du_load != 1.0) ctx.du_loads.assign(static_cast<std::size_t>(cfg.num_dus), cfg.du_load);
    return ctx;
}

/// Per-cycle outcome of one scheme on one trip; index k is cycle k + 1.
struct TrialMetrics {
    std::string scheme;
    std::uint64_t seed = 0;
    std::uint64_t checksum = 0;
    std::vector<double> rate;
    std::vector<std::vector<int>> serving;
    std::vector<int> switched;
    std::vector<int> accumulated;
    std::size_t subproblems_solved = 0;

    int total_switched() const { return accumulated.empty() ? 0 : accumulated.back(); }
};

namespace detail {

inline void record_cycle(TrialMetrics& m, std::vector<int> serving, int switched, double rate) {
    m.rate.push_back(rate);
    m.switched.push_back(switched);
    m.accumulated.push_back((m.accumulated.empty() ? 0 : m.accumulated.back()) + switched);
    m.serving.push_back(std::move(serving));
}

} // namespace detail

/// One trip of `scheme` on a prepared environment.
inline TrialMetrics run_trial(const SimConfig& cfg, const TrialEnvironment& env, const std::string& scheme) {
    const auto ctx = make_context(cfg, env.topology);
    TrialMetrics m;
    m.scheme = scheme;
    m.seed = env.seed;
    m.checksum = env.checksum();
    const int cycles = static_cast<int>(env.beta.size()) - 1;

    if (scheme == "lsf-time" || scheme == "lsf-threshold") {
        const auto clusters = scheme == "lsf-time"
                                  ? lsf_time_triggered(env.beta, cfg.b_con)
                                  : lsf_threshold_triggered(env.beta, cfg.b_con, cfg.r_threshold, ctx);
        for (int t = 1; t <= cycles; ++t)
            detail::record_cycle(m, clusters[t], count_switched(clusters[t - 1], clusters[t]),
                                 realized_rate(clusters[t], env.beta[t], ctx));
        return m;
    }
    if (scheme != "pomdp") throw std::invalid_argument("run_trial: unknown scheme '" + scheme + "'");

    auto first = top_cluster(env.beta.front(), cfg.b_con);
    auto state = initial_decision_state(first, realized_rate(first, env.beta.front(), ctx), cfg.r_threshold);
    for (int t = 1; t <= cycles; ++t) {
        CycleInputs in{env.positions[t - 1], env.positions[t], cfg.step_distance(), env.shadowing_db[t - 1],
                       env.beta[t]};
        try {
            state = apply_ho_control(state, in, ctx);
        } catch (const std::exception& e) {
            throw std::runtime_error("cycle " + std::to_string(t) + ": " + e.what());
        }
        if (state.cache && state.cache->age == 0) m.subproblems_solved += state.cache->result.solved;
        detail::record_cycle(m, state.serving, state.last_switched, state.last_rate);
    }
    return m;
}

inline TrialMetrics run_trial(const SimConfig& cfg, int trial, const std::string& scheme) {
    return run_trial(cfg, make_environment(cfg, trial_seed(cfg.seed, trial)), scheme);
}

/// Linear-interpolation sample quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw std::invalid_argument("quantile: empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q outside [0, 1]");
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct SchemeReport {
    std::string scheme;
    std::vector<double> rate_samples; ///< pooled over trials and cycles, ascending
    double p10 = 0.0;
    double p50 = 0.0;
    double p90 = 0.0;
    std::vector<double> mean_accumulated; ///< per cycle, averaged over trials
    double mean_total_switched = 0.0;
    double fraction_below_threshold = 0.0; ///< cycles 2.. only
    std::vector<int> trial_total_switched;
    std::vector<double> trial_p10;
    std::vector<std::uint64_t> trial_checksums;

    friend bool operator==(const SchemeReport&, const SchemeReport&) = default;
};

struct Report {
    nlohmann::json config;
    std::vector<std::uint64_t> seeds;
    std::vector<SchemeReport> schemes;

    const SchemeReport& scheme(const std::string& name) const {
        for (const auto& s : schemes)
            if (s.scheme == name) return s;
        throw std::out_of_range("report has no scheme '" + name + "'");
    }

    friend bool operator==(const Report&, const Report&) = default;
};

inline SchemeReport aggregate(const std::string& scheme, const std::vector<TrialMetrics>& trials, double r_threshold) {
    SchemeReport r;
    r.scheme = scheme;
    if (trials.empty()) return r;
    const std::size_t cycles = trials.front().rate.size();
    r.mean_accumulated.assign(cycles, 0.0);
    std::size_t below = 0;
    std::size_t counted = 0;
    for (const auto& t : trials) {
        if (t.rate.size() != cycles) throw std::logic_error("aggregate: trials differ in length");
        r.rate_samples.insert(r.rate_samples.end(), t.rate.begin(), t.rate.end());
        for (std::size_t k = 0; k < cycles; ++k) r.mean_accumulated[k] += t.accumulated[k];
        for (std::size_t k = 1; k < cycles; ++k, ++counted)
            if (t.rate[k] < r_threshold) ++below;
        r.trial_total_switched.push_back(t.total_switched());
        auto sorted = t.rate;
        std::sort(sorted.begin(), sorted.end());
        r.trial_p10.push_back(quantile_sorted(sorted, 0.1));
        r.trial_checksums.push_back(t.checksum);
    }
    for (double& v : r.mean_accumulated) v /= static_cast<double>(trials.size());
    r.mean_total_switched = cycles ? r.mean_accumulated.back() : 0.0;
    r.fraction_below_threshold = counted ? static_cast<double>(below) / static_cast<double>(counted) : 0.0;
    std::sort(r.rate_samples.begin(), r.rate_samples.end());
    r.p10 = quantile_sorted(r.rate_samples, 0.1);
    r.p50 = quantile_sorted(r.rate_samples, 0.5);
    r.p90 = quantile_sorted(r.rate_samples, 0.9);
    return r;
}

/// Worker count: CFHO_THREADS if set, otherwise the hardware concurrency.
inline unsigned worker_count(std::size_t jobs) {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("CFHO_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) n = static_cast<unsigned>(v);
    }
    return static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(n, jobs)));
}

/// Every listed scheme on the same `n_trials` environments.
inline Report run_monte_carlo(const SimConfig& cfg, const std::vector<std::string>& schemes) {
    cfg.validate();
    const std::size_t n = static_cast<std::size_t>(cfg.n_trials);
    std::vector<std::vector<TrialMetrics>> results(schemes.size(), std::vector<TrialMetrics>(n));
    Report report;
    report.config = to_json(cfg);
    for (std::size_t i = 0; i < n; ++i) report.seeds.push_back(trial_seed(cfg.seed, static_cast<int>(i)));

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::size_t failed_trial = n;
    std::mutex mu;
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                const auto env = make_environment(cfg, report.seeds[i]);
                for (std::size_t s = 0; s < schemes.size(); ++s) results[s][i] = run_trial(cfg, env, schemes[s]);
            } catch (...) {
                std::lock_guard lock(mu);
                if (i < failed_trial) {
                    failed_trial = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    const unsigned workers = worker_count(n);
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (failure) {
        try {
            std::rethrow_exception(failure);
        } catch (const std::exception& e) {
            throw std::runtime_error("trial " + std::to_string(failed_trial) + ": " + e.what());
        }
    }
    for (std::size_t s = 0; s < schemes.size(); ++s)
        report.schemes.push_back(aggregate(schemes[s], results[s], cfg.r_threshold));
    return report;
}

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline const char* csv_header = "scheme,rate,cycle,mean_accumulated_switches";

inline std::string to_csv(const Report& r) {
    std::string out = std::string(csv_header) + "\n";
    for (const auto& s : r.schemes) {
        for (double v : s.rate_samples) out += s.scheme + "," + format_double(v) + ",,\n";
        for (std::size_t k = 0; k < s.mean_accumulated.size(); ++k)
            out += s.scheme + ",," + std::to_string(k + 1) + "," + format_double(s.mean_accumulated[k]) + "\n";
    }
    return out;
}

inline nlohmann::json to_json(const SchemeReport& s) {
    return {{"scheme", s.scheme},
            {"rate_samples", s.rate_samples},
            {"p10", s.p10},
            {"p50", s.p50},
            {"p90", s.p90},
            {"mean_accumulated", s.mean_accumulated},
            {"mean_total_switched", s.mean_total_switched},
            {"fraction_below_threshold", s.fraction_below_threshold},
            {"trial_total_switched", s.trial_total_switched},
            {"trial_p10", s.trial_p10},
            {"trial_checksums", s.trial_checksums}};
}

inline nlohmann::json to_json(const Report& r) {
    nlohmann::json schemes = nlohmann::json::array();
    for (const auto& s : r.schemes) schemes.push_back(to_json(s));
    return {{"config", r.config}, {"seeds", r.seeds}, {"schemes", std::move(schemes)}};
}

inline Report report_from_json(const nlohmann::json& j) {
    Report r;
    try {
        r.config = j.at("config");
        r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        for (const auto& s : j.at("schemes")) {
            SchemeReport x;
            x.scheme = s.at("scheme").get<std::string>();
            x.rate_samples = s.at("rate_samples").get<std::vector<double>>();
            x.p10 = s.at("p10").get<double>();
            x.p50 = s.at("p50").get<double>();
            x.p90 = s.at("p90").get<double>();
            x.mean_accumulated = s.at("mean_accumulated").get<std::vector<double>>();
            x.mean_total_switched = s.at("mean_total_switched").get<double>();
            x.fraction_below_threshold = s.at("fraction_below_threshold").get<double>();
            x.trial_total_switched = s.at("trial_total_switched").get<std::vector<int>>();
            x.trial_p10 = s.at("trial_p10").get<std::vector<double>>();
            x.trial_checksums = s.at("trial_checksums").get<std::vector<std::uint64_t>>();
            r.schemes.push_back(std::move(x));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("report: malformed JSON: ") + e.what());
    }
    return r;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes the report as "csv" or "json".
inline void export_report(const Report& r, const std::string& path, const std::string& format) {
    if (format == "csv")
        write_text(path, to_csv(r));
    else if (format == "json")
        write_text(path, to_json(r).dump(2) + "\n");
    else
        throw std::invalid_argument("export: unknown format '" + format + "'");
}

inline Report import_report(const std::string& path) {
    const auto text = read_text(path);
    try {
        return report_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("cannot parse report '" + path + "': " + e.what());
    }
}

/// Relative reduction of `ours` against `baseline`, in percent.
inline double reduction_percent(double ours, double baseline) {
    if (!(baseline > 0.0)) return 0.0;
    return 100.0 * (1.0 - ours / baseline);
}

} // namespace cfho
