#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "detail/roots.hpp"
#include "error.hpp"
#include "redmap.hpp"
#include "rng.hpp"

namespace netdyn {

enum class Axis { w, q_min, q_max, p_max, N, R0 };

inline const char* to_string(Axis a)
{
    switch (a) {
    case Axis::w: return "w";
    case Axis::q_min: return "q_min";
    case Axis::q_max: return "q_max";
    case Axis::p_max: return "p_max";
    case Axis::N: return "N";
    case Axis::R0: return "R0";
    }
    return "?";
}

inline Axis parse_axis(std::string_view s)
{
    for (Axis a : {Axis::w, Axis::q_min, Axis::q_max, Axis::p_max, Axis::N, Axis::R0})
        if (s == to_string(a))
            return a;
    throw Error(ErrorKind::domain, "unknown axis '" + std::string(s) + "'");
}

inline double axis_value(const MapModel& m, Axis a)
{
    switch (a) {
    case Axis::w: return m.red().w;
    case Axis::q_min: return m.red().q_min;
    case Axis::q_max: return m.red().q_max;
    case Axis::p_max: return m.red().p_max;
    case Axis::N: return m.system().N;
    case Axis::R0: return m.system().R0;
    }
    return 0.0;
}

/// Copy of `m` with one parameter replaced. N and R0 re-solve p0 and p1.
inline MapModel with_axis(const MapModel& m, Axis a, double v)
{
    RedParams r = m.red();
    const SystemParams& s = m.system();
    switch (a) {
    case Axis::w: r.w = v; return m.with_red(r);
    case Axis::q_min: r.q_min = v; return m.with_red(r);
    case Axis::q_max: r.q_max = v; return m.with_red(r);
    case Axis::p_max: r.p_max = v; return m.with_red(r);
    case Axis::N: return MapModel(make_system(v, s.C, s.M, s.R0, s.B, s.model), r);
    case Axis::R0: return MapModel(make_system(s.N, s.C, s.M, v, s.B, s.model), r);
    }
    return m;
}

struct OrbitResult {
    std::vector<double> kept;
    std::optional<int> period; // empty: aperiodic
    double lyapunov = 0.0;     // over the kept iterates
    int border_hits = 0;
};

namespace detail {

inline double border_eps(const MapModel& m) { return 1e-12 * m.system().B; }

// Branch used for the derivative at q. An iterate sitting on a border takes the
// branch on the side it arrived from.
inline Branch slope_branch(double q, double prev, const MapModel& m, bool& on_border)
{
    const auto& b = m.borders();
    const double eps = border_eps(m);
    on_border = false;
    if (std::fabs(q - b.b1) <= eps) {
        on_border = true;
        return prev > q ? Branch::upper : Branch::middle;
    }
    if (std::fabs(q - b.b2) <= eps) {
        on_border = true;
        return prev < q ? Branch::lower : Branch::middle;
    }
    return branch_of(q, m);
}

inline double log_abs(double x) { return std::log(std::max(std::fabs(x), std::numeric_limits<double>::min())); }

} // namespace detail

/// Smallest p <= max_period with max_k |q[k+p] - q[k]| < tol. Empty when none.
inline std::optional<int> detect_period(const std::vector<double>& orbit, double tol, int max_period = 64)
{
    const int limit = std::min<int>(max_period, static_cast<int>(orbit.size()) / 2);
    for (int p = 1; p <= limit; ++p) {
        bool ok = true;
        for (std::size_t k = 0; ok && k + p < orbit.size(); ++k)
            ok = std::fabs(orbit[k + p] - orbit[k]) < tol;
        if (ok)
            return p;
    }
    return std::nullopt;
}

/// Iterates f, drops n_transient iterates and keeps the next n_keep.
inline OrbitResult iterate_orbit(const MapModel& m, double q0, int n_transient, int n_keep)
{
    const double B = m.system().B;
    if (!(q0 >= 0.0 && q0 <= B))
        throw Error(ErrorKind::domain, "initial queue outside [0, B]");
    if (n_transient < 0 || n_keep < 1)
        throw Error(ErrorKind::domain, "need n_transient >= 0 and n_keep >= 1");
    double q = q0;
    double prev = q0;
    for (int i = 0; i < n_transient; ++i) {
        prev = q;
        q = map_step(q, m);
    }
    OrbitResult r;
    r.kept.reserve(n_keep);
    double sum = 0.0;
    for (int i = 0; i < n_keep; ++i) {
        bool hit = false;
        const Branch br = detail::slope_branch(q, prev, m, hit);
        r.border_hits += hit;
        r.kept.push_back(q);
        sum += detail::log_abs(map_slope(q, m, br));
        prev = q;
        q = map_step(q, m);
    }
    r.lyapunov = sum / n_keep;
    r.period = detect_period(r.kept, 1e-6 * B, std::min(64, n_keep / 2));
    return r;
}

struct LyapunovResult {
    double value = 0.0;
    int border_events = 0;
};

/// Mean of ln|f'(q_k)| over n iterates after a transient.
inline LyapunovResult lyapunov_exponent(const MapModel& m, double q0, int n, int n_transient)
{
    if (n < 1000)
        throw Error(ErrorKind::domain, "Lyapunov estimate needs n >= 1000");
    const OrbitResult o = iterate_orbit(m, q0, n_transient, n);
    return {o.lyapunov, o.border_hits};
}

enum class Regime { fixed, periodic, chaotic, unsettled };

inline const char* to_string(Regime r)
{
    switch (r) {
    case Regime::fixed: return "fixed";
    case Regime::periodic: return "period";
    case Regime::chaotic: return "chaotic";
    case Regime::unsettled: return "unsettled";
    }
    return "?";
}

struct ScanOptions {
    int n_init = 4;
    int n_iter = 1000;
    int n_keep = 10;
    std::uint64_t seed = default_seed;
    int lyapunov_n = 2000;
    int lyapunov_transient = 1000;
    double chaos_threshold = 1e-3;
};

struct BifurcationPoint {
    double value = 0.0;
    std::vector<std::vector<double>> averaged;      // per initial condition, last n_keep iterates
    std::vector<std::vector<double>> instantaneous; // recovered instantaneous queue for the same steps
    double lyapunov = 0.0;
    Regime regime = Regime::unsettled;
    int period = 0; // 0 unless fixed or periodic
    bool degenerate = false;
};

inline BifurcationPoint scan_point(const MapModel& base, Axis axis, double value, std::size_t grid_index,
                                   const ScanOptions& opt)
{
    const MapModel m = with_axis(base, axis, value);
    const double B = m.system().B;
    const double w = m.red().w;
    BifurcationPoint pt;
    pt.value = value;
    pt.degenerate = m.borders().degenerate();
    double q_first = 0.0;
    std::optional<int> period;
    bool all_periodic = true;
    for (int i = 0; i < opt.n_init; ++i) {
        Stream rng(opt.seed, grid_index, static_cast<std::uint64_t>(i));
        const double q0 = rng.open_unit() * B;
        if (i == 0)
            q_first = q0;
        const OrbitResult o = iterate_orbit(m, q0, opt.n_iter - opt.n_keep, opt.n_keep);
        std::vector<double> inst;
        inst.reserve(o.kept.size());
        for (std::size_t k = 0; k < o.kept.size(); ++k) {
            const double next = k + 1 < o.kept.size() ? o.kept[k + 1] : map_step(o.kept[k], m);
            inst.push_back(instantaneous_queue(o.kept[k], next, w));
        }
        if (o.period)
            period = std::max(period.value_or(0), *o.period);
        else
            all_periodic = false;
        pt.averaged.push_back(o.kept);
        pt.instantaneous.push_back(std::move(inst));
    }
    pt.lyapunov = lyapunov_exponent(m, q_first, opt.lyapunov_n, opt.lyapunov_transient).value;
    if (all_periodic && period) {
        pt.period = *period;
        pt.regime = *period == 1 ? Regime::fixed : Regime::periodic;
    } else {
        pt.regime = pt.lyapunov > opt.chaos_threshold ? Regime::chaotic : Regime::unsettled;
    }
    return pt;
}

/// Bifurcation diagram along one axis. Each grid point uses its own random streams, so results do not
/// depend on the order points are evaluated in.
inline std::vector<BifurcationPoint> bifurcation_scan(const MapModel& base, Axis axis,
                                                      const std::vector<double>& grid, const ScanOptions& opt = {})
{
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1]))
            throw Error(ErrorKind::domain, "scan grid must be strictly increasing");
    if (opt.n_init < 1 || opt.n_keep < 1 || opt.n_iter < opt.n_keep)
        throw Error(ErrorKind::domain, "need n_init >= 1 and n_iter >= n_keep >= 1");
    std::vector<BifurcationPoint> out;
    out.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        out.push_back(scan_point(base, axis, grid[i], i, opt));
    return out;
}

/// Axis value where the eigenvalue at the fixed point crosses -1.
inline double find_pdb(const MapModel& base, Axis axis, double lo, double hi, double tol = 1e-8)
{
    auto g = [&](double v) {
        const MapModel m = with_axis(base, axis, v);
        return eigenvalue(fixed_point(m), m) + 1.0;
    };
    return detail::bisect(g, lo, hi, {tol, 0.0}, 400, ErrorKind::no_pdb,
                          "eigenvalue + 1 does not change sign over the bracket");
}

/// Same transition located from orbits alone: bisection on whether scan_point settles on a fixed point.
/// Slow convergence next to the flip counts as "not fixed", so keep n_iter large.
inline double simulated_pdb(const MapModel& base, Axis axis, double lo, double hi, double tol = 1e-5,
                            ScanOptions opt = {4, 20000, 16})
{
    auto fixed = [&](double v) { return scan_point(base, axis, v, 0, opt).regime == Regime::fixed; };
    if (fixed(lo) == fixed(hi))
        throw Error(ErrorKind::no_pdb, "orbit regime does not change over the bracket");
    const bool rising = fixed(lo);
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        (fixed(mid) == rising ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct PdbCurve {
    std::vector<std::pair<double, double>> points; // (outer value, critical w)
    bool monotone = true; // increasing in N, decreasing in R0
};

inline PdbCurve pdb_curve(const MapModel& base, Axis outer, const std::vector<double>& grid,
                          double w_lo = 1e-6, double w_hi = 1.0 - 1e-6)
{
    if (outer != Axis::N && outer != Axis::R0)
        throw Error(ErrorKind::domain, "PDB curve outer axis must be N or R0");
    PdbCurve c;
    for (double v : grid) {
        const MapModel m = with_axis(base, outer, v);
        c.points.emplace_back(v, find_pdb(m, Axis::w, w_lo, w_hi));
    }
    for (std::size_t i = 1; i < c.points.size(); ++i) {
        const double d = c.points[i].second - c.points[i - 1].second;
        if (outer == Axis::N ? !(d > 0.0) : !(d < 0.0))
            c.monotone = false;
    }
    return c;
}

enum class BorderSel { b1, b2 };

enum class BcbOutcome { none, period_m, chaotic };

inline const char* to_string(BcbOutcome o)
{
    switch (o) {
    case BcbOutcome::none: return "none";
    case BcbOutcome::period_m: return "period-m";
    case BcbOutcome::chaotic: return "chaotic";
    }
    return "?";
}

/// Period-m region of the piecewise-linear normal form with slopes a in (0,1) and b < -1.
inline bool normal_form_in_Pm(double a, double b, int m)
{
    if (!(a > 0.0 && a < 1.0) || m < 2)
        return false;
    const double am = std::pow(a, 1 - m);
    return -am < b && b < a / (1.0 - a) * (1.0 - am);
}

struct BcbOptions {
    double window_rel = 1e-3; // border proximity window, fraction of B
    int n_transient = 10000;
    int n_samples = 200000;
    std::uint64_t seed = default_seed;
};

struct BcbReport {
    double a = 0.0;                                       // composite slope, no point past the border
    double b = std::numeric_limits<double>::quiet_NaN(); // composite slope ending on the crossing iterate
    bool straddle = false;
    bool case8 = false; // 0 < a < 1 and b < -1
    bool in_Pm = false;
    BcbOutcome outcome = BcbOutcome::none;
    double border = 0.0;
    double min_distance = 0.0;
    std::size_t windows = 0;
};

/// One-sided composite eigenvalues of the m-th iterate around a border, averaged over the attractor.
/// b averages the m-step slope products that end on an iterate past the border; a averages the m-step
/// products that immediately follow, with no iterate past the border.
inline BcbReport bcb_classify(const MapModel& base, Axis axis, double value, BorderSel border, int m_order,
                              const BcbOptions& opt = {})
{
    if (m_order < 1)
        throw Error(ErrorKind::domain, "iterate order must be >= 1");
    const MapModel m = with_axis(base, axis, value);
    const double B = m.system().B;
    BcbReport r;
    r.border = border == BorderSel::b1 ? m.borders().b1 : m.borders().b2;
    auto beyond = [&](double q) { return border == BorderSel::b1 ? q > r.border : q < r.border; };

    Stream rng(opt.seed, 0, 0);
    double q = rng.open_unit() * B;
    for (int i = 0; i < opt.n_transient; ++i)
        q = map_step(q, m);
    std::vector<double> s(opt.n_samples);
    std::vector<double> lam(opt.n_samples);
    r.min_distance = std::numeric_limits<double>::infinity();
    for (int i = 0; i < opt.n_samples; ++i) {
        s[i] = q;
        lam[i] = map_slope(q, m);
        r.min_distance = std::min(r.min_distance, std::fabs(q - r.border));
        q = map_step(q, m);
    }
    if (r.min_distance > opt.window_rel * B)
        throw Error(ErrorKind::no_bcb, "attractor never comes within the window of the border");

    const int mo = m_order;
    double sa = 0.0, sb = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 2 * mo - 1; k < s.size(); ++k) {
        const std::size_t first = k + 1 - 2 * mo;
        const std::size_t cross = k - mo;
        if (!beyond(s[cross]))
            continue;
        bool single = true;
        for (std::size_t j = first; single && j <= k; ++j)
            single = j == cross || !beyond(s[j]);
        if (!single)
            continue;
        double pa = 1.0, pb = 1.0;
        for (std::size_t j = first; j <= cross; ++j)
            pb *= lam[j];
        for (std::size_t j = cross + 1; j <= k; ++j)
            pa *= lam[j];
        sa += pa;
        sb += pb;
        ++n;
    }
    r.windows = n;
    if (n > 0) {
        r.straddle = true;
        r.a = sa / n;
        r.b = sb / n;
        r.case8 = r.a > 0.0 && r.a < 1.0 && r.b < -1.0;
        r.in_Pm = normal_form_in_Pm(r.a, r.b, mo);
        r.outcome = r.in_Pm ? BcbOutcome::period_m : BcbOutcome::chaotic;
    } else {
        // No crossing: report the m-step composite slope of the attractor itself.
        double acc = 0.0;
        std::size_t cnt = 0;
        for (std::size_t k = mo - 1; k < s.size(); ++k, ++cnt) {
            double p = 1.0;
            for (std::size_t j = k + 1 - mo; j <= k; ++j)
                p *= lam[j];
            acc += p;
        }
        r.a = acc / cnt;
    }
    return r;
}

enum class LiYorkeCase { none, case_I, case_II };

inline const char* to_string(LiYorkeCase c)
{
    switch (c) {
    case LiYorkeCase::none: return "none";
    case LiYorkeCase::case_I: return "I";
    case LiYorkeCase::case_II: return "II";
    }
    return "?";
}

struct ChaosVerdict {
    LiYorkeCase verdict = LiYorkeCase::none;
    double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
    double margin = 0.0; // d - a in case I, bound - b1 in case II; >= 0 means the condition holds
};

/// Period-three test: a = b1/(1-w), b = f(a) = b1, c = f(b), d = f(c).
inline ChaosVerdict li_yorke_check(const MapModel& m)
{
    const auto& bd = m.borders();
    if (!bd.pmax_above_p0)
        throw Error(ErrorKind::assumption_violated, "li_yorke_check needs p_max > p0");
    if (bd.degenerate())
        throw Error(ErrorKind::degenerate_border, "b2 >= b1, no middle branch");
    const double w = m.red().w;
    const double B = m.system().B;
    ChaosVerdict v;
    v.a = bd.b1 / (1.0 - w);
    v.b = bd.b1;
    v.c = (1.0 - w) * bd.b1;
    if (v.a > B) {
        v.margin = std::numeric_limits<double>::quiet_NaN();
        return v;
    }
    v.d = map_step(map_step(map_step(v.a, m), m), m);
    if (bd.b2 < v.c) {
        v.margin = v.d - v.a;
        if (v.margin >= 0.0)
            v.verdict = LiYorkeCase::case_I;
    } else {
        v.margin = (1.0 - w) * B / (3.0 - 3.0 * w + w * w) - bd.b1;
        if (v.margin >= 0.0)
            v.verdict = LiYorkeCase::case_II;
    }
    return v;
}

} // namespace netdyn
