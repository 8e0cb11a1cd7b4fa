#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace cfho {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double planar_distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// DU layout plus the per-DU radio constants shared by every link.
struct NetworkTopology {
    std::vector<Vec2> du_positions;
    double area_side = 1000.0;
    int num_antennas = 8;
    double height_sep = 13.5;

    void validate() const {
        if (!(area_side > 0.0)) throw std::invalid_argument("topology: area_side must be positive");
        if (num_antennas < 1) throw std::invalid_argument("topology: num_antennas must be >= 1");
        if (!(height_sep > 0.0)) throw std::invalid_argument("topology: height_sep must be positive");
        for (const auto& p : du_positions) {
            if (p.x < 0.0 || p.x > area_side || p.y < 0.0 || p.y > area_side)
                throw std::invalid_argument("topology: DU outside the deployment area");
        }
    }
};

/// I.i.d. uniform DU positions in [0, area_side]^2, reproducible for a fixed seed.
inline std::vector<Vec2> place_dus(std::size_t count, double area_side, std::uint64_t seed) {
    if (!(area_side > 0.0)) throw std::invalid_argument("place_dus: area_side must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coord(0.0, area_side);
    std::vector<Vec2> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double x = coord(rng);
        const double y = coord(rng);
        out.push_back({x, y});
    }
    return out;
}

/// Straight-line user movement inside a square area with wrap-around.
///
/// When a step carries the user past the line `wrap_margin` away from a
/// boundary it re-enters at `wrap_margin` from the opposite boundary,
/// carrying the overshoot. The check runs independently on each axis, so
/// diagonal headings stay inside the area as well. Heading and speed are
/// never changed.
class UserTrajectory {
public:
    UserTrajectory(Vec2 position, Vec2 heading, double speed, double step_duration, double wrap_margin)
        : position_(position), speed_(speed), step_duration_(step_duration), wrap_margin_(wrap_margin) {
        const double norm = std::hypot(heading.x, heading.y);
        if (!(norm > 0.0) || !std::isfinite(norm)) throw std::invalid_argument("UserTrajectory: heading must be non-zero");
        if (speed < 0.0) throw std::invalid_argument("UserTrajectory: negative speed");
        if (!(step_duration > 0.0)) throw std::invalid_argument("UserTrajectory: step_duration must be positive");
        if (wrap_margin < 0.0) throw std::invalid_argument("UserTrajectory: negative wrap margin");
        heading_ = {heading.x / norm, heading.y / norm};
    }

    Vec2 position() const { return position_; }
    Vec2 heading() const { return heading_; }
    double speed() const { return speed_; }
    double step_duration() const { return step_duration_; }
    double wrap_margin() const { return wrap_margin_; }
    double step_length() const { return speed_ * step_duration_; }
    double travelled() const { return travelled_; }
    int wraps() const { return wraps_; }

    UserTrajectory advanced(double area_side) const {
        if (!(2.0 * wrap_margin_ < area_side))
            throw std::invalid_argument("UserTrajectory: wrap margin leaves no room inside the area");
        UserTrajectory next = *this;
        const double len = step_length();
        next.position_.x = wrap_axis(position_.x + heading_.x * len, heading_.x, area_side, next.wraps_);
        next.position_.y = wrap_axis(position_.y + heading_.y * len, heading_.y, area_side, next.wraps_);
        next.travelled_ += len;
        return next;
    }

private:
    double wrap_axis(double coord, double direction, double area_side, int& wraps) const {
        const double lower = wrap_margin_;
        const double upper = area_side - wrap_margin_;
        const double span = upper - lower;
        if (direction > 0.0 && coord > upper) {
            coord = lower + std::fmod(coord - upper, span);
            ++wraps;
        } else if (direction < 0.0 && coord < lower) {
            coord = upper - std::fmod(lower - coord, span);
            ++wraps;
        }
        return coord;
    }

    Vec2 position_;
    Vec2 heading_;
    double speed_;
    double step_duration_;
    double wrap_margin_;
    double travelled_ = 0.0;
    int wraps_ = 0;
};

inline UserTrajectory step_user(const UserTrajectory& traj, double area_side) { return traj.advanced(area_side); }

/// 3-D link distance with a fixed antenna height separation.
inline double effective_distance(Vec2 user, Vec2 du, double height_sep) {
    const double d = planar_distance(user, du);
    return std::sqrt(d * d + height_sep * height_sep);
}

/// Uniform start inside a `box_side` square centred in the area, uniform heading.
template <typename Rng>
UserTrajectory random_trajectory(double area_side, double box_side, double speed, double step_duration,
                                 double wrap_margin, Rng& rng) {
    std::uniform_real_distribution<double> offset(-0.5 * box_side, 0.5 * box_side);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    const double cx = 0.5 * area_side + offset(rng);
    const double cy = 0.5 * area_side + offset(rng);
    const double th = angle(rng);
    return UserTrajectory({cx, cy}, {std::cos(th), std::sin(th)}, speed, step_duration, wrap_margin);
}

} // namespace cfho
