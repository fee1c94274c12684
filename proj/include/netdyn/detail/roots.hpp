#pragma once

#include <cmath>
#include <cstdint>

#include <boost/math/tools/roots.hpp>

#include "../error.hpp"

namespace netdyn::detail {

struct Tolerance {
    double abs = 0.0;
    double rel = 0.0;
};

// Bisection on a sign change in [lo, hi]. Stops once the bracket is below
// both tolerances (a zero tolerance is ignored) or max_iter is spent.
template <class F>
double bisect(F&& f, double lo, double hi, Tolerance tol, unsigned max_iter, ErrorKind on_fail,
              const char* what)
{
    const double flo = f(lo);
    const double fhi = f(hi);
    if (flo == 0.0)
        return lo;
    if (fhi == 0.0)
        return hi;
    if (!(std::isfinite(flo) && std::isfinite(fhi)) || (flo < 0.0) == (fhi < 0.0))
        throw Error(on_fail, what);

    auto done = [tol](double a, double b) {
        const double width = std::fabs(b - a);
        const double scale = std::fmax(std::fabs(a), std::fabs(b));
        const bool abs_ok = tol.abs <= 0.0 || width <= tol.abs;
        const bool rel_ok = tol.rel <= 0.0 || width <= tol.rel * scale;
        return abs_ok && rel_ok;
    };
    std::uintmax_t iters = max_iter;
    const auto r = boost::math::tools::bisect(f, lo, hi, done, iters);
    return 0.5 * (r.first + r.second);
}

} // namespace netdyn::detail
