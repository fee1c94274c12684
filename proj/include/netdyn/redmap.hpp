#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "detail/roots.hpp"
#include "error.hpp"
#include "throughput.hpp"

namespace netdyn {

struct RedParams {
    double q_min = 0.0; // packets
    double q_max = 0.0; // packets
    double p_max = 0.0;
    double w = 0.0;     // EWMA weight
};

struct Borders {
    double b1 = 0.0;
    double b2 = 0.0;
    double p0 = 0.0;
    double p1 = 0.0;               // NaN when the full-buffer regime does not exist
    bool pmax_above_p0 = false;
    bool b2_degenerate = false;    // p1 missing, b2 pinned to q_min

    /// No middle branch: the fixed point theorem does not apply.
    bool degenerate() const { return !(b2 < b1); }
};

struct NormalizedParams {
    double gamma = 0.0;
    double q_min_n = 0.0;
    double b1_n = 0.0;
    double b2_n = 0.0;
};

enum class Branch { upper, lower, middle };

class MapModel {
public:
    MapModel(SystemParams sys, RedParams red) : sys_(std::move(sys)), red_(red)
    {
        validate(sys_.model);
        check_red(red_, sys_.B);
        p0_ = solve_p0(sys_);
        try {
            p1_ = solve_p1(sys_);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::degenerate_border)
                throw;
            p1_ = std::numeric_limits<double>::quiet_NaN();
        }
        borders_ = make_borders();
    }

    const SystemParams& system() const { return sys_; }
    const RedParams& red() const { return red_; }
    const Borders& borders() const { return borders_; }

    /// Same system, new RED settings. p0 and p1 do not depend on RED, so they are reused.
    MapModel with_red(const RedParams& red) const
    {
        MapModel m = *this;
        check_red(red, sys_.B);
        m.red_ = red;
        m.borders_ = m.make_borders();
        return m;
    }

    MapModel with_w(double w) const
    {
        RedParams r = red_;
        r.w = w;
        return with_red(r);
    }

    NormalizedParams normalized() const
    {
        const double B = sys_.B;
        return {(red_.q_max - red_.q_min) / (red_.p_max * B), red_.q_min / B, borders_.b1 / B, borders_.b2 / B};
    }

private:
    static void check_red(const RedParams& r, double B)
    {
        if (!(r.q_min >= 0.0 && r.q_min < r.q_max && r.q_max <= B))
            throw Error(ErrorKind::domain, "RED needs 0 <= q_min < q_max <= B");
        if (!(r.p_max > 0.0 && r.p_max <= 1.0))
            throw Error(ErrorKind::domain, "p_max must lie in (0, 1]");
        if (!(r.w > 0.0 && r.w < 1.0))
            throw Error(ErrorKind::domain, "w must lie in (0, 1)");
    }

    Borders make_borders() const
    {
        Borders b;
        b.p0 = p0_;
        b.p1 = p1_;
        b.pmax_above_p0 = red_.p_max > p0_;
        const double span = red_.q_max - red_.q_min;
        b.b1 = red_.p_max >= p0_ ? p0_ * span / red_.p_max + red_.q_min : red_.q_max;
        if (std::isnan(p1_)) {
            b.b2 = red_.q_min;
            b.b2_degenerate = true;
        } else {
            b.b2 = std::min(p1_ * span / red_.p_max + red_.q_min, red_.q_max);
        }
        return b;
    }

    SystemParams sys_;
    RedParams red_;
    double p0_ = 0.0;
    double p1_ = 0.0;
    Borders borders_;
};

/// RED drop law H.
inline double red_law(double q, const RedParams& red, double B)
{
    if (!(q >= 0.0 && q <= B))
        throw Error(ErrorKind::domain, "averaged queue outside [0, B]");
    if (q < red.q_min)
        return 0.0;
    if (q >= red.q_max)
        return 1.0;
    return (q - red.q_min) / (red.q_max - red.q_min) * red.p_max;
}

/// Inverse of the linear ramp of H.
inline double red_law_inverse(double p, const RedParams& red)
{
    return p * (red.q_max - red.q_min) / red.p_max + red.q_min;
}

/// Queue law G(p): steady-state queue that makes N flows fill the link at drop rate p.
inline double queue_law(double p, const MapModel& m)
{
    if (!(p > 0.0) || p > 1.0)
        throw Error(ErrorKind::domain, "drop probability must lie in (0, 1]");
    const auto& s = m.system();
    if (p > m.borders().p0)
        return 0.0;
    const double R = inverse_in_R(s.model, p, s.C / s.N, s.M);
    return std::clamp(s.C / s.M * (R - s.R0), 0.0, s.B);
}

/// dG/dp on the unsaturated part of the queue law, via implicit differentiation of T(p, R) = C/N.
inline double queue_law_slope(double p, const MapModel& m)
{
    const auto& s = m.system();
    const double R = inverse_in_R(s.model, p, s.C / s.N, s.M);
    const Partials d = throughput_partials(s.model, p, R, s.M);
    return s.C / s.M * (-d.dT_dp / d.dT_dR);
}

inline Branch branch_of(double q, const MapModel& m)
{
    if (q > m.borders().b1)
        return Branch::upper;
    if (q < m.borders().b2)
        return Branch::lower;
    return Branch::middle;
}

namespace detail {

inline void check_queue(double q, double B)
{
    if (!(q >= 0.0 && q <= B))
        throw Error(ErrorKind::domain, "averaged queue outside [0, B]");
}

// G(H(q)) on the middle branch.
inline double middle_target(double q, const MapModel& m)
{
    const auto& r = m.red();
    const auto& s = m.system();
    if (std::holds_alternative<SimpleModel>(s.model)) {
        const double K = std::get<SimpleModel>(s.model).K;
        const double p = r.p_max * (q - r.q_min) / (r.q_max - r.q_min);
        return s.N * K / std::sqrt(p) - s.R0 * s.C / s.M;
    }
    return queue_law(red_law(q, r, s.B), m);
}

// d/dq G(H(q)) on the middle branch.
inline double middle_target_slope(double q, const MapModel& m)
{
    const auto& r = m.red();
    const double dH = r.p_max / (r.q_max - r.q_min);
    return queue_law_slope(dH * (q - r.q_min), m) * dH;
}

} // namespace detail

inline double map_step(double q, const MapModel& m, Branch br)
{
    const double w = m.red().w;
    switch (br) {
    case Branch::upper: return (1.0 - w) * q;
    case Branch::lower: return (1.0 - w) * q + w * m.system().B;
    case Branch::middle: break;
    }
    return (1.0 - w) * q + w * detail::middle_target(q, m);
}

/// One step of the averaged-queue map f.
inline double map_step(double q, const MapModel& m)
{
    detail::check_queue(q, m.system().B);
    return map_step(q, m, branch_of(q, m));
}

/// Branch slope of f. The middle branch is evaluated even outside (b2, b1) when asked explicitly.
inline double map_slope(double q, const MapModel& m, Branch br)
{
    const double w = m.red().w;
    if (br != Branch::middle)
        return 1.0 - w;
    if (!(q > m.red().q_min))
        throw Error(ErrorKind::singularity, "slope is singular at q <= q_min");
    return 1.0 - w + w * detail::middle_target_slope(q, m);
}

inline double map_slope(double q, const MapModel& m) { return map_slope(q, m, branch_of(q, m)); }

/// Eigenvalue (one-sided slope) of f at q.
inline double eigenvalue(double q, const MapModel& m)
{
    if (!(q > m.red().q_min))
        throw Error(ErrorKind::singularity, "eigenvalue is singular at q <= q_min");
    return map_slope(q, m);
}

inline double instantaneous_queue(double q_k, double q_k1, double w)
{
    if (w == 0.0)
        throw Error(ErrorKind::domain, "instantaneous queue needs w != 0");
    return (q_k1 - (1.0 - w) * q_k) / w;
}

/// Residual of the cubic whose root is the Simple-model fixed point.
inline double fixed_point_cubic(double q, const MapModel& m)
{
    const auto& s = m.system();
    const auto& r = m.red();
    const double K = std::get<SimpleModel>(s.model).K;
    const double c = s.R0 * s.C / s.M;
    return (q - r.q_min) * (q + c) * (q + c) - (s.N * K) * (s.N * K) * (r.q_max - r.q_min) / r.p_max;
}

/// Fixed point in [b2, b1]: bisection of f(q) - q, then one Newton polish.
inline double fixed_point(const MapModel& m)
{
    const auto& b = m.borders();
    if (b.degenerate())
        throw Error(ErrorKind::degenerate_border, "b2 >= b1, no middle branch");
    const double B = m.system().B;
    auto g = [&](double q) { return map_step(q, m, Branch::middle) - q; };
    // At b2 and b1 the middle branch equals the outer branches, so the sign change is exact.
    double q = detail::bisect(g, b.b2, b.b1, {1e-13 * B, 0.0}, 200, ErrorKind::no_solution,
                              "f(q) - q has no sign change on [b2, b1]");
    if (q > m.red().q_min) {
        const double slope = map_slope(q, m, Branch::middle) - 1.0;
        const double qn = q - g(q) / slope;
        if (qn >= b.b2 && qn <= b.b1 && std::fabs(g(qn)) <= std::fabs(g(q)))
            q = qn;
    }
    return q;
}

/// w at which the eigenvalue at q* reaches -1. q* and the middle slope do not depend on w.
inline double w_crit(const MapModel& m)
{
    const double q = fixed_point(m);
    return 2.0 / (1.0 - detail::middle_target_slope(q, m));
}

struct MapDerivatives {
    double d1 = 0.0;
    double d2 = 0.0;
    double d3 = 0.0;
};

/// First three derivatives of the middle branch in normalized coordinates q/B.
inline MapDerivatives normalized_derivatives(double q, const MapModel& m)
{
    const auto& r = m.red();
    const auto& s = m.system();
    if (!(q > r.q_min))
        throw Error(ErrorKind::singularity, "derivatives are singular at q <= q_min");
    const double w = r.w;
    const double B = s.B;
    if (std::holds_alternative<SimpleModel>(s.model)) {
        const double K = std::get<SimpleModel>(s.model).K;
        const NormalizedParams n = m.normalized();
        const double x = q / B - n.q_min_n;
        const double c = w * s.N * K * std::sqrt(n.gamma) / B;
        return {1.0 - w - c / (2.0 * std::pow(x, 1.5)), 3.0 * c / (4.0 * std::pow(x, 2.5)),
                -15.0 * c / (8.0 * std::pow(x, 3.5))};
    }
    // Other models: analytic first derivative, differences of it for the rest.
    const double h = 1e-3 * (q - r.q_min);
    const double sm = detail::middle_target_slope(q - h, m);
    const double s0 = detail::middle_target_slope(q, m);
    const double sp = detail::middle_target_slope(q + h, m);
    return {1.0 - w + w * s0, w * B * (sp - sm) / (2.0 * h), w * B * B * (sp - 2.0 * s0 + sm) / (h * h)};
}

/// Flip stability coefficient S = f''^2 / 2 + f''' / 3 at the fixed point (normalized).
inline double stability_S(const MapModel& m)
{
    const double q = fixed_point(m);
    if (branch_of(q, m) != Branch::middle)
        throw Error(ErrorKind::not_applicable, "fixed point is not on the middle branch");
    const MapDerivatives d = normalized_derivatives(q, m);
    return 0.5 * d.d2 * d.d2 + d.d3 / 3.0;
}

struct Minimizer {
    double q_m = 0.0;         // packets
    bool piecewise_monotone = false; // b1 < q_m
};

/// Point where the middle branch has zero slope.
inline Minimizer map_minimizer(const MapModel& m)
{
    const auto& r = m.red();
    const auto& s = m.system();
    const double w = r.w;
    double qm = 0.0;
    if (std::holds_alternative<SimpleModel>(s.model)) {
        const double K = std::get<SimpleModel>(s.model).K;
        const NormalizedParams n = m.normalized();
        const double qmn = n.q_min_n + std::pow(w * s.N * K * std::sqrt(n.gamma) / (2.0 * s.B * (1.0 - w)), 2.0 / 3.0);
        qm = qmn * s.B;
    } else {
        // The queue law has no extension past p0, so the search stops at b1. A branch still
        // falling at b1 is reported as q_m = b1, which is piecewise monotone.
        auto g = [&](double q) { return map_slope(q, m, Branch::middle); };
        const double lo = r.q_min + 1e-9 * (r.q_max - r.q_min);
        const double hi = m.borders().b1;
        if (g(hi) <= 0.0)
            return {hi, true};
        qm = detail::bisect(g, lo, hi, {1e-12 * s.B, 0.0}, 300, ErrorKind::no_solution,
                            "middle branch slope has no zero");
    }
    return {qm, m.borders().b1 < qm};
}

/// Partial derivative of f with respect to w on a given branch.
inline double df_dw(double q, const MapModel& m, Branch br)
{
    switch (br) {
    case Branch::upper: return -q;
    case Branch::lower: return m.system().B - q;
    case Branch::middle: break;
    }
    return -q + detail::middle_target(q, m);
}

inline double df_dw(double q, const MapModel& m) { return df_dw(q, m, branch_of(q, m)); }

} // namespace netdyn
