#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <optional>

#include "detail/roots.hpp"
#include "dynamics.hpp"
#include "error.hpp"
#include "redmap.hpp"

namespace netdyn {

enum class Actuator { p_max, q_max };

inline const char* to_string(Actuator a) { return a == Actuator::p_max ? "p_max" : "q_max"; }

struct WashoutParams {
    double d = 0.2;
    double k_l = 0.0;
    double k_c = 0.0;
    Actuator actuator = Actuator::p_max;
    // Actuator limits. Defaults: p_max in [p0 + 1e-6, 0.5], q_max in [q_min + 1e-6 (q_max - q_min), B].
    std::optional<double> clamp_lo;
    std::optional<double> clamp_hi;
};

struct ControlledState {
    double q = 0.0; // averaged queue, packets
    double z = 0.0; // filter state
};

struct FilterOutput {
    double z_next = 0.0;
    double y = 0.0;
};

inline void check_filter(double d)
{
    if (!(d > 0.0 && d < 2.0))
        throw Error(ErrorKind::domain, "washout constant d must lie in (0, 2)");
}

/// z' = x + (1-d) z, y = x - d z
inline FilterOutput washout_step(const ControlledState& s, double d)
{
    check_filter(d);
    return {s.q + (1.0 - d) * s.z, s.q - d * s.z};
}

inline double control_signal(double y, double k_l, double k_c) { return k_l * y + k_c * y * y * y; }

struct ClampRange {
    double lo = 0.0;
    double hi = 0.0;
};

inline ClampRange clamp_range(const MapModel& m, const WashoutParams& c)
{
    ClampRange r;
    if (c.actuator == Actuator::p_max) {
        r = {m.borders().p0 + 1e-6, 0.5};
    } else {
        const auto& red = m.red();
        r = {red.q_min + 1e-6 * (red.q_max - red.q_min), m.system().B};
    }
    if (c.clamp_lo)
        r.lo = *c.clamp_lo;
    if (c.clamp_hi)
        r.hi = *c.clamp_hi;
    if (!(r.lo < r.hi))
        throw Error(ErrorKind::domain, "clamp lower bound must be below the upper bound");
    return r;
}

struct ControlledStep {
    ControlledState next;
    double actuated = 0.0;
    bool saturated = false;
};

/// One closed-loop step. y and u come from (q_k, z_k); the map then runs with the actuated parameter.
inline ControlledStep controlled_map_step(const ControlledState& s, const MapModel& m, const WashoutParams& c)
{
    const FilterOutput f = washout_step(s, c.d);
    const double u = control_signal(f.y, c.k_l, c.k_c);
    ControlledStep out;
    if (u == 0.0) {
        out.actuated = c.actuator == Actuator::p_max ? m.red().p_max : m.red().q_max;
        out.next = {map_step(s.q, m), f.z_next};
        return out;
    }
    const ClampRange cr = clamp_range(m, c);
    RedParams red = m.red();
    double& target = c.actuator == Actuator::p_max ? red.p_max : red.q_max;
    const double raw = target + u;
    target = std::clamp(raw, cr.lo, cr.hi);
    out.actuated = target;
    out.saturated = target != raw;
    out.next = {map_step(s.q, m.with_red(red)), f.z_next};
    return out;
}

/// df/d(actuated parameter) at the fixed point.
inline double actuation_gain_b(const MapModel& m, Actuator a)
{
    const double q = fixed_point(m);
    if (branch_of(q, m) != Branch::middle)
        throw Error(ErrorKind::not_applicable, "fixed point on an outer branch has zero control gain");
    const auto& r = m.red();
    const double H = red_law(q, r, m.system().B);
    const double wg = r.w * queue_law_slope(H, m);
    return a == Actuator::p_max ? wg * H / r.p_max : -wg * H / (r.q_max - r.q_min);
}

struct JuryVerdict {
    bool stable = false;
    std::array<double, 3> margins{}; // each > 0 when its inequality holds
    double spectral_radius = 0.0;
};

/// Closed-loop Jacobian [[1-d, 1], [-d b k_l, lambda0 + b k_l]].
inline JuryVerdict jury_stability(double lambda0, double b, double d, double k_l)
{
    const double bk = b * k_l;
    JuryVerdict v;
    v.margins[0] = d * (1.0 - lambda0);
    v.margins[1] = 2.0 + 2.0 * bk + 2.0 * lambda0 - d * (1.0 + lambda0);
    v.margins[2] = 1.0 - std::fabs(lambda0 * (1.0 - d) + bk);
    v.stable = v.margins[0] > 0.0 && v.margins[1] > 0.0 && v.margins[2] > 0.0;
    const double tr = 1.0 - d + lambda0 + bk;
    const double det = lambda0 * (1.0 - d) + bk;
    const std::complex<double> disc = std::sqrt(std::complex<double>(tr * tr - 4.0 * det, 0.0));
    v.spectral_radius = std::max(std::abs(0.5 * (tr + disc)), std::abs(0.5 * (tr - disc)));
    return v;
}

inline double min_margin(const JuryVerdict& v) { return std::min({v.margins[0], v.margins[1], v.margins[2]}); }

/// Stable (d, k_l) region for b > 0 and lambda0 < -1, bounded by d = 0,
/// k = (d - 2)(1 + lambda0) / 2b and k = (1 - lambda0 (1 - d)) / b.
struct StabilityTriangle {
    double lambda0 = 0.0;
    double b = 0.0;
    std::array<std::array<double, 2>, 3> vertices{}; // (d, k_l)

    bool contains(double d, double k) const
    {
        return d > 0.0 && k > (d - 2.0) * (1.0 + lambda0) / (2.0 * b) && k < (1.0 - lambda0 * (1.0 - d)) / b;
    }

    std::array<double, 2> centroid() const
    {
        return {(vertices[0][0] + vertices[1][0] + vertices[2][0]) / 3.0,
                (vertices[0][1] + vertices[1][1] + vertices[2][1]) / 3.0};
    }
};

inline StabilityTriangle stability_triangle(double lambda0, double b)
{
    if (!(lambda0 < -1.0) || !(b > 0.0))
        throw Error(ErrorKind::not_applicable, "triangle needs lambda0 < -1 and b > 0");
    StabilityTriangle t;
    t.lambda0 = lambda0;
    t.b = b;
    t.vertices[0] = {0.0, -(1.0 + lambda0) / b};
    t.vertices[1] = {0.0, (1.0 - lambda0) / b};
    t.vertices[2] = {4.0 / (1.0 - lambda0), (1.0 + lambda0) * (1.0 + lambda0) / ((1.0 - lambda0) * b)};
    return t;
}

/// Triangle for q_max actuation with lambda0 and b taken at the limit w = 1.
inline StabilityTriangle worst_case_triangle_w(const MapModel& m)
{
    const double q = fixed_point(m);
    if (branch_of(q, m) != Branch::middle)
        throw Error(ErrorKind::not_applicable, "fixed point on an outer branch");
    // lambda0 and b are affine in w through the middle-branch slope, so w = 1 is a direct evaluation.
    const auto& r = m.red();
    const double H = red_law(q, r, m.system().B);
    const double g = queue_law_slope(H, m);
    const double lambda1 = g * r.p_max / (r.q_max - r.q_min);
    const double b1 = -g * H / (r.q_max - r.q_min);
    return stability_triangle(lambda1, b1);
}

inline double open_loop_lambda(const MapModel& m) { return eigenvalue(fixed_point(m), m); }

/// Smallest Jury margin of the closed loop at the fixed point of `m`.
inline double closed_loop_margin(const MapModel& m, const WashoutParams& c)
{
    check_filter(c.d);
    return min_margin(jury_stability(open_loop_lambda(m), actuation_gain_b(m, c.actuator), c.d, c.k_l));
}

/// Axis value where the binding Jury inequality becomes an equality.
/// Along R0 the loop is stable below it; along N it is stable above it.
inline double critical_parameter(const MapModel& base, Axis axis, const WashoutParams& c, double lo, double hi)
{
    if (axis != Axis::R0 && axis != Axis::N)
        throw Error(ErrorKind::domain, "critical parameter axis must be R0 or N");
    auto g = [&](double v) { return closed_loop_margin(with_axis(base, axis, v), c); };
    return detail::bisect(g, lo, hi, {0.0, 1e-6}, 400, ErrorKind::no_threshold,
                          "Jury margin does not change sign over the bracket");
}

struct Beta2Delta {
    double beta2 = 0.0;
    double delta = 0.0;
    double sum = 0.0;
    bool supercritical = false;
};

/// beta2 = -2 S from the normalized derivatives at q*; delta = -4 k_c b with b in packets per unit
/// of the actuated parameter.
inline Beta2Delta beta2_delta(const MapModel& m, double k_c, Actuator a = Actuator::p_max)
{
    Beta2Delta r;
    r.beta2 = -2.0 * stability_S(m);
    r.delta = -4.0 * k_c * actuation_gain_b(m, a);
    r.sum = r.beta2 + r.delta;
    r.supercritical = r.sum < 0.0;
    return r;
}

} // namespace netdyn
