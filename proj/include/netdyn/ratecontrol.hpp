#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "detail/roots.hpp"
#include "error.hpp"

namespace netdyn {

/// Delayed primal rate control of N users sharing one resource.
/// One exponent in `a` means N identical users; otherwise one exponent per user.
struct KellyParams {
    std::vector<double> a{3.0};
    double b = 5.0;    // price exponent
    double C = 5.0;    // capacity
    double N = 2.0;    // users
    double T = 1.0;    // feedback delay
    double gain = 1.0; // k
    double p_ur = 0.0; // non-responsive rate

    double cap() const { return C / N; }
    bool homogeneous() const { return a.size() == 1; }
    std::size_t dim() const { return a.size(); }
};

inline void validate(const KellyParams& p)
{
    if (p.a.empty())
        throw Error(ErrorKind::domain, "need at least one utility exponent");
    for (double ai : p.a)
        if (!(ai > 0.0))
            throw Error(ErrorKind::domain, "utility exponents must be positive");
    if (!(p.b > 0.0 && p.C > 0.0 && p.N > 0.0 && p.gain > 0.0))
        throw Error(ErrorKind::domain, "b, C, N and gain must be positive");
    if (!(p.T >= 0.0))
        throw Error(ErrorKind::domain, "delay must be non-negative");
    if (!(p.p_ur >= 0.0 && p.p_ur < p.C))
        throw Error(ErrorKind::domain, "non-responsive rate must lie in [0, C)");
    if (!p.homogeneous() && static_cast<double>(p.a.size()) != p.N)
        throw Error(ErrorKind::domain, "heterogeneous exponents need one entry per user");
}

namespace detail {

inline double total_rate(const std::vector<double>& x, const KellyParams& p)
{
    const double s = p.homogeneous() ? p.N * x[0] : std::accumulate(x.begin(), x.end(), 0.0);
    return s + p.p_ur;
}

inline void check_rates(const std::vector<double>& x, const KellyParams& p)
{
    if (x.size() != p.dim())
        throw Error(ErrorKind::domain, "rate vector has the wrong dimension");
    for (double xi : x)
        if (!(xi > 0.0))
            throw Error(ErrorKind::domain, "rates must be positive");
}

} // namespace detail

/// x_i' = (x_i ((sum x + p_ur) / C)^b)^(-1/a_i), optionally clamped to the per-user cap.
inline std::vector<double> kelly_map(const std::vector<double>& x, const KellyParams& p, bool capped = false)
{
    detail::check_rates(x, p);
    const double price = std::pow(detail::total_rate(x, p) / p.C, p.b);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::pow(x[i] * price, -1.0 / p.a[i]);
        if (capped)
            out[i] = std::min(out[i], p.cap());
    }
    return out;
}

inline double kelly_map(double x, const KellyParams& p, bool capped = false)
{
    if (!p.homogeneous())
        throw Error(ErrorKind::domain, "scalar map needs homogeneous parameters");
    return kelly_map(std::vector<double>{x}, p, capped)[0];
}

/// dF/dx of the homogeneous (uncapped) map.
inline double kelly_map_derivative(double x, const KellyParams& p)
{
    const double F = kelly_map(x, p);
    return -F / p.a[0] * (1.0 / x + p.b * p.N / (p.N * x + p.p_ur));
}

struct KellyFixedPoint {
    double x_star = 0.0;
    double lambda = 0.0;
    bool stable = false;
};

inline KellyFixedPoint kelly_fixed_point_eig(const KellyParams& p)
{
    validate(p);
    if (!p.homogeneous() || p.p_ur != 0.0)
        throw Error(ErrorKind::domain, "closed form needs homogeneous users and p_ur = 0");
    const double a = p.a[0];
    const double lam = -(p.b + 1.0) / a;
    return {std::pow(p.cap(), p.b / (a + p.b + 1.0)), lam, std::fabs(lam) < 1.0};
}

/// Fixed point and slope of the homogeneous map with non-responsive traffic.
inline KellyFixedPoint nonresponsive_analysis(const KellyParams& p)
{
    validate(p);
    if (!p.homogeneous())
        throw Error(ErrorKind::domain, "non-responsive analysis needs homogeneous users");
    const double a = p.a[0];
    // x^(a+1) ((N x + p_ur) / C)^b = 1, in logs.
    auto g = [&](double x) { return (a + 1.0) * std::log(x) + p.b * std::log((p.N * x + p.p_ur) / p.C); };
    const double hi = std::pow(p.cap(), p.b / (a + p.b + 1.0));
    double lo = hi;
    while (g(lo) > 0.0)
        lo *= 0.5;
    const double x = detail::bisect(g, lo, hi, {0.0, 1e-15}, 400, ErrorKind::no_solution,
                                    "non-responsive fixed point not bracketed");
    const double lam = kelly_map_derivative(x, p);
    return {x, lam, std::fabs(lam) < 1.0};
}

struct DelayStability {
    double A = 0.0;
    double B = 0.0;
    double T_star = std::numeric_limits<double>::infinity();
    bool delay_independent = false;
};

/// Linearization y' = A y(t) + B y(t - T) around the fixed point.
/// `literal` divides by B^2 - A^2 instead of its square root.
inline DelayStability delay_stability(const KellyParams& p, bool literal = false)
{
    const KellyFixedPoint fp = kelly_fixed_point_eig(p);
    const double a = p.a[0];
    const double kappa = p.gain * a * std::pow(fp.x_star, -a - 1.0);
    DelayStability d;
    d.A = -kappa;
    d.B = kappa * fp.lambda;
    if (-d.A >= std::fabs(d.B)) {
        d.delay_independent = true;
        return d;
    }
    const double den = d.B * d.B - d.A * d.A;
    d.T_star = std::acos(-d.A / d.B) / (literal ? den : std::sqrt(den));
    return d;
}

/// Initial function on [-T, 0]: either one constant per user or m+1 samples per user.
struct History {
    std::vector<double> constant;
    std::vector<std::vector<double>> table;
};

struct DdeTrajectory {
    double h = 0.0;
    int steps_per_delay = 0;
    std::vector<std::vector<double>> x; // per user, samples at t = i h, i >= 0
    std::vector<std::vector<double>> history; // per user, samples at t = -T .. 0
    int floor_events = 0;
    int cap_events = 0;

    double time(std::size_t i) const { return static_cast<double>(i) * h; }
};

/// x_i' = k (x_i^-a_i - x_i(t-T) ((sum x(t-T) + p_ur) / C)^b), RK4 with step T/m.
/// Delayed values come from the stored grid; the half-step delayed value uses the cubic Hermite
/// interpolant of the stored samples and derivatives. Each step is clamped to [1e-9 cap, cap].
inline DdeTrajectory dde_integrate(const KellyParams& p, const History& phi, double horizon, int m = 200)
{
    validate(p);
    if (!(p.T > 0.0))
        throw Error(ErrorKind::domain, "DDE integration needs T > 0");
    if (m < 1 || !(horizon >= 0.0))
        throw Error(ErrorKind::domain, "need m >= 1 and horizon >= 0");
    const std::size_t n = p.dim();
    const double cap = p.cap();
    const double floor = 1e-9 * cap;
    const double h = p.T / m;
    const auto steps = static_cast<std::size_t>(std::llround(horizon / h));

    std::vector<std::vector<double>> xs(n), ds(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!phi.table.empty()) {
            if (phi.table.size() != n || phi.table[i].size() != static_cast<std::size_t>(m) + 1)
                throw Error(ErrorKind::domain, "tabulated history needs m+1 samples per user");
            xs[i] = phi.table[i];
        } else {
            if (phi.constant.size() != n)
                throw Error(ErrorKind::domain, "constant history needs one value per user");
            xs[i].assign(m + 1, phi.constant[i]);
        }
        for (double v : xs[i])
            if (!(v > 0.0 && v <= cap * (1.0 + 1e-12)))
                throw Error(ErrorKind::domain, "history values must lie in (0, cap]");
        ds[i].assign(m + 1, 0.0);
        if (!phi.table.empty() && m >= 2) {
            const auto& t = xs[i];
            ds[i][0] = (t[1] - t[0]) / h;
            ds[i][m] = (t[m] - t[m - 1]) / h;
            for (int j = 1; j < m; ++j)
                ds[i][j] = (t[j + 1] - t[j - 1]) / (2.0 * h);
        }
        xs[i].reserve(m + 1 + steps);
        ds[i].reserve(m + 1 + steps);
    }

    auto rhs = [&](const std::vector<double>& x, const std::vector<double>& xd, std::vector<double>& out) {
        const double price = std::pow(detail::total_rate(xd, p) / p.C, p.b);
        for (std::size_t i = 0; i < n; ++i)
            out[i] = p.gain * (std::pow(x[i], -p.a[i]) - xd[i] * price);
    };

    DdeTrajectory tr;
    tr.h = h;
    tr.steps_per_delay = m;
    std::vector<double> x(n), x0(n), xm(n), x1(n), y(n), k1(n), k2(n), k3(n), k4(n), dn(n);

    // The slope usually jumps at t = 0: keep the history's left slope apart and store the
    // solution's right slope on the grid.
    std::vector<double> left_end(n);
    for (std::size_t i = 0; i < n; ++i) {
        left_end[i] = ds[i][m];
        x[i] = xs[i][m];
        x0[i] = xs[i][0];
    }
    rhs(x, x0, dn);
    for (std::size_t i = 0; i < n; ++i)
        ds[i][m] = dn[i];

    for (std::size_t s = 0; s < steps; ++s) {
        const std::size_t cur = m + s; // index of x(t)
        const std::size_t lag = cur - m;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = xs[i][cur];
            x0[i] = xs[i][lag];
            x1[i] = xs[i][lag + 1];
            const double d1 = lag + 1 == static_cast<std::size_t>(m) ? left_end[i] : ds[i][lag + 1];
            xm[i] = 0.5 * (x0[i] + x1[i]) + h / 8.0 * (ds[i][lag] - d1);
        }
        rhs(x, x0, k1);
        for (std::size_t i = 0; i < n; ++i)
            y[i] = x[i] + 0.5 * h * k1[i];
        rhs(y, xm, k2);
        for (std::size_t i = 0; i < n; ++i)
            y[i] = x[i] + 0.5 * h * k2[i];
        rhs(y, xm, k3);
        for (std::size_t i = 0; i < n; ++i)
            y[i] = x[i] + h * k3[i];
        rhs(y, x1, k4);
        for (std::size_t i = 0; i < n; ++i) {
            double v = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if (!(v > floor)) {
                v = floor;
                ++tr.floor_events;
            } else if (v > cap) {
                v = cap;
                ++tr.cap_events;
            }
            y[i] = v;
            xs[i].push_back(v);
        }
        rhs(y, x1, dn);
        for (std::size_t i = 0; i < n; ++i) {
            double d = dn[i];
            if ((y[i] >= cap && d > 0.0) || (y[i] <= floor && d < 0.0))
                d = 0.0;
            ds[i].push_back(d);
        }
    }
    tr.x.resize(n);
    tr.history.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        tr.history[i].assign(xs[i].begin(), xs[i].begin() + m + 1);
        tr.x[i].assign(xs[i].begin() + m, xs[i].end());
    }
    return tr;
}

inline DdeTrajectory dde_integrate(const KellyParams& p, double phi_const, double horizon, int m = 200)
{
    return dde_integrate(p, History{std::vector<double>(p.dim(), phi_const), {}}, horizon, m);
}

struct OscillationMetrics {
    double min = 0.0;
    double max = 0.0;
    std::optional<double> period; // mean interval between upward crossings of x*
    bool sop = false;             // every pair of consecutive crossings is more than T apart
    std::size_t crossings = 0;
};

/// Metrics of one user's rate over the trajectory after the first `discard` fraction.
inline OscillationMetrics oscillation_metrics(const DdeTrajectory& tr, double x_star, double T,
                                              double discard = 0.5, std::size_t user = 0)
{
    if (user >= tr.x.size())
        throw Error(ErrorKind::domain, "no such user in trajectory");
    if (!(discard >= 0.0 && discard < 1.0))
        throw Error(ErrorKind::domain, "discard fraction must lie in [0, 1)");
    const auto& x = tr.x[user];
    const std::size_t start = static_cast<std::size_t>(discard * static_cast<double>(x.size()));
    OscillationMetrics om;
    if (start >= x.size())
        return om;
    om.min = *std::min_element(x.begin() + start, x.end());
    om.max = *std::max_element(x.begin() + start, x.end());
    std::vector<double> times;
    std::vector<bool> up;
    for (std::size_t i = start + 1; i < x.size(); ++i) {
        const double u = x[i - 1] - x_star;
        const double v = x[i] - x_star;
        if ((u < 0.0 && v >= 0.0) || (u >= 0.0 && v < 0.0)) {
            const double frac = u / (u - v);
            times.push_back(tr.time(i - 1) + frac * tr.h);
            up.push_back(u < 0.0);
        }
    }
    om.crossings = times.size();
    if (times.size() < 4)
        return om;
    double sum = 0.0;
    std::size_t cnt = 0;
    double last = -1.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (!up[i])
            continue;
        if (last >= 0.0) {
            sum += times[i] - last;
            ++cnt;
        }
        last = times[i];
    }
    if (cnt > 0)
        om.period = sum / static_cast<double>(cnt);
    om.sop = true;
    for (std::size_t i = 1; i < times.size(); ++i)
        if (!(times[i] - times[i - 1] > T))
            om.sop = false;
    return om;
}

struct Box {
    std::vector<double> lo;
    std::vector<double> hi;

    double diameter() const
    {
        double d = 0.0;
        for (std::size_t i = 0; i < lo.size(); ++i)
            d = std::max(d, hi[i] - lo[i]);
        return d;
    }
};

struct BoxSequence {
    std::vector<Box> boxes;
    bool converged = false;
    double diameter = 0.0;
};

/// D0 = [F(u), u] with u = cap; D(i+1) = [F(hi_i), F(lo_i)] using the capped map.
inline BoxSequence nested_boxes(const KellyParams& p, int max_depth, double tol = 1e-9)
{
    validate(p);
    if (max_depth < 0)
        throw Error(ErrorKind::domain, "max_depth must be >= 0");
    const std::vector<double> u(p.dim(), p.cap());
    BoxSequence bs;
    bs.boxes.push_back({kelly_map(u, p, true), u});
    const double slack = 1e-12 * p.cap();
    for (int depth = 1; depth <= max_depth && bs.boxes.back().diameter() >= tol; ++depth) {
        const Box& prev = bs.boxes.back();
        Box next{kelly_map(prev.hi, p, true), kelly_map(prev.lo, p, true)};
        for (std::size_t i = 0; i < u.size(); ++i)
            if (next.lo[i] < prev.lo[i] - slack || next.hi[i] > prev.hi[i] + slack)
                throw Error(ErrorKind::non_invariant, "box nesting fails at depth " + std::to_string(depth));
        bs.boxes.push_back(std::move(next));
    }
    bs.diameter = bs.boxes.back().diameter();
    bs.converged = bs.diameter < tol;
    return bs;
}

} // namespace netdyn
