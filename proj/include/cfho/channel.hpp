#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace cfho {

inline constexpr double speed_of_light = 299'792'458.0;

inline double to_db(double linear) { return 10.0 * std::log10(linear); }
inline double from_db(double db) { return std::pow(10.0, db / 10.0); }
inline double dbm_to_watts(double dbm) { return from_db(dbm - 30.0); }

/// Thermal noise over `bandwidth_hz` with a receiver noise figure, in watts.
inline double noise_power_watts(double psd_dbm_per_hz, double noise_figure_db, double bandwidth_hz) {
    return dbm_to_watts(psd_dbm_per_hz + 10.0 * std::log10(bandwidth_hz) + noise_figure_db);
}

/// Standard Gaussian tail P(Z > x).
inline double gaussian_tail(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

inline double gaussian_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

enum class ChannelState : int { Bad = 0, Good = 1 };

/// Large-scale fading parameters. The three representative gains are linear.
struct ChannelParams {
    double d0 = 1.1;
    double alpha_pl = 3.8;
    double d_h = 13.5;
    double sigma_sh_db = 6.0;
    double d_decorr = 100.0;
    double iota = 0.5;
    double beta_threshold = 0.0;
    double beta_good = 0.0;
    double beta_bad = 0.0;

    void validate() const {
        if (!(iota > 0.0 && iota < 1.0)) throw std::invalid_argument("channel: iota must lie in (0, 1)");
        if (!(sigma_sh_db > 0.0)) throw std::invalid_argument("channel: sigma_sh_db must be positive");
        if (!(d_decorr > 0.0)) throw std::invalid_argument("channel: d_decorr must be positive");
        if (!(d0 > 0.0) || !(d_h > 0.0)) throw std::invalid_argument("channel: d0 and d_h must be positive");
        if (!(beta_bad < beta_threshold && beta_threshold < beta_good))
            throw std::invalid_argument("channel: need beta_bad < beta_threshold < beta_good");
    }
};

/// (sqrt(d^2 + d_h^2) / d0)^(-alpha), with d the planar distance.
inline double path_loss(double planar_distance, const ChannelParams& p) {
    if (planar_distance < 0.0) throw std::invalid_argument("path_loss: negative distance");
    const double d = std::sqrt(planar_distance * planar_distance + p.d_h * p.d_h);
    return std::pow(d / p.d0, -p.alpha_pl);
}

/// Fill the threshold and representative gains from planar reference distances.
inline ChannelParams with_reference_gains(ChannelParams p, double d_threshold, double d_good, double d_bad) {
    p.beta_threshold = path_loss(d_threshold, p);
    p.beta_good = path_loss(d_good, p);
    p.beta_bad = path_loss(d_bad, p);
    p.validate();
    return p;
}

inline double shadowing_correlation(double delta_d, const ChannelParams& p) {
    if (delta_d < 0.0) throw std::invalid_argument("shadowing_correlation: negative displacement");
    return std::pow(p.iota, delta_d / p.d_decorr);
}

/// dB margin the shadowing must exceed for the link to be Good.
inline double threshold_margin_db(double path_loss_linear, const ChannelParams& p) {
    return to_db(p.beta_threshold) - to_db(path_loss_linear);
}

struct LinkRecord {
    int du_id = 0;
    double shadowing_db = 0.0;
    double path_loss_linear = 0.0;
    double beta_linear = 0.0;
    ChannelState state = ChannelState::Bad;
};

inline LinkRecord make_link(int du_id, double shadowing_db, double path_loss_linear, const ChannelParams& p) {
    LinkRecord r;
    r.du_id = du_id;
    r.shadowing_db = shadowing_db;
    r.path_loss_linear = path_loss_linear;
    r.beta_linear = path_loss_linear * from_db(shadowing_db);
    r.state = r.beta_linear > p.beta_threshold ? ChannelState::Good : ChannelState::Bad;
    return r;
}

/// One Gauss-Markov step of the dB shadowing over a displacement `delta_d`.
template <typename Rng>
LinkRecord advance_shadowing(const LinkRecord& link, double delta_d, double new_path_loss, const ChannelParams& p,
                             Rng& rng) {
    const double rho = shadowing_correlation(delta_d, p);
    std::normal_distribution<double> innovation(0.0, p.sigma_sh_db);
    const double next = rho * link.shadowing_db + std::sqrt(std::max(0.0, 1.0 - rho * rho)) * innovation(rng);
    return make_link(link.du_id, next, new_path_loss, p);
}

/// P(next shadowing > a_next | current shadowing known exactly).
inline double transition_probs_known(double shadowing_db_prev, double a_next_db, double delta_d,
                                     const ChannelParams& p) {
    const double rho = shadowing_correlation(delta_d, p);
    const double resid = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    if (resid == 0.0) return shadowing_db_prev > a_next_db ? 1.0 : 0.0;
    return gaussian_tail((a_next_db - rho * shadowing_db_prev) / (p.sigma_sh_db * resid));
}

struct TransitionPair {
    double p11 = 1.0; ///< P(Good -> Good)
    double p01 = 0.0; ///< P(Bad -> Good)

    double p10() const { return 1.0 - p11; }
    double p00() const { return 1.0 - p01; }
};

class QuadratureError : public std::runtime_error {
public:
    QuadratureError(const std::string& what, double residual) : std::runtime_error(what), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

namespace detail {

inline constexpr double quadrature_abs_tol = 1e-6;
// Beyond this many standard deviations the Gaussian mass is below 1e-32.
inline constexpr double tail_cut = 12.0;

// E[ Q((a_next - rho*sigma*z) / (sigma*resid)) | z in [lo, hi] ] for a standard normal z.
inline double conditional_good_prob(double lo, double hi, double log_mass, double a_next_db, double rho,
                                    double resid, double sigma) {
    const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi) - log_mass;
    auto integrand = [&](double z) {
        return std::exp(-0.5 * z * z + log_norm) * gaussian_tail((a_next_db - rho * sigma * z) / (sigma * resid));
    };
    double error = 0.0;
    const double value =
        boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, lo, hi, 20, 1e-10, &error);
    if (!(error <= quadrature_abs_tol) || !std::isfinite(value))
        throw QuadratureError("transition quadrature did not converge (residual " + std::to_string(error) + ")",
                              error);
    return std::clamp(value, 0.0, 1.0);
}

} // namespace detail

/// Good-state transition probabilities conditioned on the state events at
/// two consecutive positions, under the stationary N(0, sigma^2) prior.
inline TransitionPair transition_probs_event(double a_prev_db, double a_next_db, double delta_d,
                                             const ChannelParams& p) {
    const double sigma = p.sigma_sh_db;
    const double rho = shadowing_correlation(delta_d, p);
    const double resid = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    if (a_next_db == -std::numeric_limits<double>::infinity()) return {1.0, 1.0};
    if (a_next_db == std::numeric_limits<double>::infinity()) return {0.0, 0.0};
    if (rho == 0.0) {
        const double q = gaussian_tail(a_next_db / sigma);
        return {q, q};
    }

    const double z0 = a_prev_db / sigma;
    const double good_mass = gaussian_tail(z0);
    const double bad_mass = gaussian_tail(-z0);
    // Conditioning on a (numerically) null event: use the limit at the boundary.
    constexpr double null_mass = 1e-250;
    const double clipped = std::clamp(a_prev_db, -40.0 * sigma, 40.0 * sigma);

    TransitionPair out;
    if (resid == 0.0) {
        const double zn = a_next_db / sigma;
        out.p11 = good_mass > null_mass ? gaussian_tail(std::max(z0, zn)) / good_mass : (clipped > a_next_db ? 1.0 : 0.0);
        out.p01 = bad_mass > null_mass ? std::max(0.0, gaussian_tail(zn) - good_mass) / bad_mass : (clipped > a_next_db ? 1.0 : 0.0);
        out.p11 = std::clamp(out.p11, 0.0, 1.0);
        out.p01 = std::clamp(out.p01, 0.0, 1.0);
        return out;
    }

    if (good_mass > null_mass) {
        const double lo = std::max(z0, -detail::tail_cut);
        const double hi = std::max(lo, 0.0) + detail::tail_cut;
        out.p11 = detail::conditional_good_prob(lo, hi, std::log(good_mass), a_next_db, rho, resid, sigma);
    } else {
        out.p11 = transition_probs_known(clipped, a_next_db, delta_d, p);
    }
    if (bad_mass > null_mass) {
        const double hi = std::min(z0, detail::tail_cut);
        const double lo = std::min(hi, 0.0) - detail::tail_cut;
        out.p01 = detail::conditional_good_prob(lo, hi, std::log(bad_mass), a_next_db, rho, resid, sigma);
    } else {
        out.p01 = transition_probs_known(clipped, a_next_db, delta_d, p);
    }
    return out;
}

/// P(next shadowing > a_next | previous shadowing in [lo_db, hi_db]) under the
/// stationary prior. A degenerate interval gives the known-shadowing value.
inline double good_prob_given_interval(double lo_db, double hi_db, double a_next_db, double delta_d,
                                       const ChannelParams& p) {
    if (!(lo_db <= hi_db)) throw std::invalid_argument("good_prob_given_interval: empty interval");
    if (lo_db == hi_db) return transition_probs_known(lo_db, a_next_db, delta_d, p);
    const double sigma = p.sigma_sh_db;
    const double rho = shadowing_correlation(delta_d, p);
    const double resid = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    const double zl = std::max(lo_db / sigma, -detail::tail_cut - 30.0);
    const double zh = std::min(hi_db / sigma, detail::tail_cut + 30.0);
    const double mass = zl >= 0.0 ? gaussian_tail(zl) - gaussian_tail(zh) : gaussian_tail(-zh) - gaussian_tail(-zl);
    if (!(mass > 1e-250) || resid == 0.0) {
        const double mid = std::isfinite(lo_db) && std::isfinite(hi_db) ? 0.5 * (lo_db + hi_db)
                                                                          : std::clamp(lo_db, -40.0 * sigma, 40.0 * sigma);
        if (resid == 0.0 && mass > 1e-250) {
            const double zn = a_next_db / sigma;
            const double lo = std::max(zl, zn);
            if (lo >= zh) return 0.0;
            const double good = lo >= 0.0 ? gaussian_tail(lo) - gaussian_tail(zh) : gaussian_tail(-zh) - gaussian_tail(-lo);
            return std::clamp(good / mass, 0.0, 1.0);
        }
        return transition_probs_known(mid, a_next_db, delta_d, p);
    }
    const double lo = std::max(zl, std::min(zh, 0.0) - detail::tail_cut);
    const double hi = std::min(zh, std::max(zl, 0.0) + detail::tail_cut);
    return detail::conditional_good_prob(lo, hi, std::log(mass), a_next_db, rho, resid, sigma);
}

/// Stationary probability that the link is Good: Q(a / sigma).
inline double marginal_good_prob(double a_db, const ChannelParams& p) { return gaussian_tail(a_db / p.sigma_sh_db); }

/// Pilot, power and mobility constants that drive channel aging within one frame.
struct AgingParams {
    double carrier_hz = 1.8e9;
    double sample_period = 66.7e-6;
    double user_speed = 10.0;
    int tau_c = 200;
    int tau_p = 16;
    int n_est = 16;
    int pilot_instant = 1;
    double p_uplink = 0.1;
    double p_downlink = 1.0;
    double noise_power = noise_power_watts(-174.0, 8.0, 20e6);

    double doppler_hz() const { return user_speed * carrier_hz / speed_of_light; }

    void validate() const {
        if (!(0 < n_est && n_est <= tau_p && tau_p < tau_c))
            throw std::invalid_argument("aging: need 0 < n_est <= tau_p < tau_c");
        if (pilot_instant < 1 || pilot_instant > n_est)
            throw std::invalid_argument("aging: pilot_instant must lie in [1, n_est]");
        if (!(sample_period > 0.0) || !(carrier_hz > 0.0) || user_speed < 0.0)
            throw std::invalid_argument("aging: invalid carrier, sample period or speed");
        if (!(p_uplink > 0.0) || !(p_downlink > 0.0) || !(noise_power > 0.0))
            throw std::invalid_argument("aging: powers must be positive");
    }
};

/// Temporal correlation J0(2 pi lag f_D T_s).
inline double jakes_rho(int lag, const AgingParams& a) {
    const double x = 2.0 * std::numbers::pi * std::abs(lag) * a.doppler_hz() * a.sample_period;
    return std::cyl_bessel_j(0.0, x);
}

/// LMMSE estimate variance with co-pilot users; `copilot_betas` excludes `beta` itself.
inline double estimation_variance(double beta, std::span<const double> copilot_betas, int lag_est,
                                  const AgingParams& a) {
    if (!(beta > 0.0)) throw std::invalid_argument("estimation_variance: beta must be positive");
    const double rho = jakes_rho(lag_est, a);
    double denom = a.p_uplink * beta + a.noise_power;
    for (double b : copilot_betas) denom += a.p_uplink * b;
    return rho * rho * a.p_uplink * beta * beta / denom;
}

/// Single-user estimate variance used by the reward: noise-only denominator.
inline double estimation_variance_single_user(double beta, int lag_est, const AgingParams& a) {
    const double rho = jakes_rho(lag_est, a);
    return rho * rho * a.p_uplink * beta * beta / a.noise_power;
}

/// SNR-based downlink rate lower bound with conjugate beamforming and channel
/// aging, averaged over the data part of a frame (bits/s/Hz).
class RateModel {
public:
    RateModel(const AgingParams& aging, int num_antennas) : aging_(aging), antennas_(num_antennas) {
        aging_.validate();
        if (num_antennas < 1) throw std::invalid_argument("RateModel: num_antennas must be >= 1");
        for (int n = aging_.n_est; n <= aging_.tau_c; ++n) {
            const double r = jakes_rho(n - aging_.n_est, aging_);
            rho2_.push_back(r * r);
        }
    }

    const AgingParams& aging() const { return aging_; }
    int num_antennas() const { return antennas_; }

    /// Desired-signal power before the aging factor, and the uncertainty term.
    struct Terms {
        double desired = 0.0;
        double uncertainty = 0.0;
    };

    /// `betas[k]` is the LSF of the k-th connected DU and `loads[k]` its user count.
    Terms terms(std::span<const double> betas, std::span<const double> loads) const {
        if (betas.size() != loads.size()) throw std::invalid_argument("RateModel: size mismatch");
        double coherent = 0.0;
        double uncertainty = 0.0;
        const int lag_est = aging_.n_est - aging_.pilot_instant;
        for (std::size_t k = 0; k < betas.size(); ++k) {
            if (!(loads[k] >= 1.0)) throw std::invalid_argument("RateModel: load must be >= 1");
            if (!(betas[k] >= 0.0)) throw std::invalid_argument("RateModel: negative LSF");
            const double psi = betas[k] > 0.0 ? estimation_variance_single_user(betas[k], lag_est, aging_) : 0.0;
            coherent += std::sqrt(psi / loads[k]);
            uncertainty += betas[k] / loads[k];
        }
        const double mp = antennas_ * aging_.p_downlink;
        return {mp * coherent * coherent, mp * uncertainty};
    }

    double rate(std::span<const double> betas, std::span<const double> loads) const {
        const auto t = terms(betas, loads);
        const double denom = t.uncertainty + aging_.noise_power;
        double sum = 0.0;
        for (double r2 : rho2_) sum += std::log2(1.0 + t.desired * r2 / denom);
        return sum / aging_.tau_c;
    }

    double rate_uniform(std::span<const double> betas) const {
        std::vector<double> loads(betas.size(), 1.0);
        return rate(betas, loads);
    }

private:
    AgingParams aging_;
    int antennas_;
    std::vector<double> rho2_;
};

} // namespace cfho
