#pragma once

#include <cmath>
#include <type_traits>
#include <variant>

#include "detail/roots.hpp"
#include "error.hpp"

namespace netdyn {

inline constexpr double k_min = 1.0;
inline const double k_max = std::sqrt(8.0 / 3.0);

/// T = M K / (R sqrt(p))
struct SimpleModel {
    double K = std::sqrt(1.5);
};

/// T = M / (R sqrt(s p) + T0 min(1, 3 sqrt(s p)) p (1 + 32 p^2)), s = b_ack beta / alpha
struct DetailedModel {
    double alpha = 1.0;
    double beta = 0.5;
    double b_ack = 1.0;
    double T0 = 0.5;
};

/// T = M K / (R p^e), e = 1/(k+l+1)
struct BinomialModel {
    double alpha = 1.0;
    double beta = 0.5;
    double k = 0.0;
    double l = 1.0;
    // false: K = alpha / beta^e, true: K = (alpha / beta)^e
    bool joint_root = false;
};

/// T = (N M K / (R sqrt(p)) + lambda C (1 - p)) / N
struct MixedUdpModel {
    double K = std::sqrt(1.5);
    double lambda_udp = 0.0;
    double C = 0.0; // bound from SystemParams
    double N = 0.0;
};

using ThroughputModel = std::variant<SimpleModel, DetailedModel, BinomialModel, MixedUdpModel>;

struct Partials {
    double dT_dp = 0.0;
    double dT_dR = 0.0;
    bool one_sided = false;
};

namespace detail {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

inline void check_pR(double p, double R)
{
    if (!(p > 0.0) || p > 1.0)
        throw Error(ErrorKind::domain, "drop probability must lie in (0, 1]");
    if (!(R > 0.0))
        throw Error(ErrorKind::domain, "round-trip time must be positive");
}

inline double binomial_exponent(const BinomialModel& m) { return 1.0 / (m.k + m.l + 1.0); }

inline double detailed_ratio(const DetailedModel& m) { return m.b_ack * m.beta / m.alpha; }

} // namespace detail

inline double binomial_constant(const BinomialModel& m)
{
    const double e = detail::binomial_exponent(m);
    return m.joint_root ? std::pow(m.alpha / m.beta, e) : m.alpha / std::pow(m.beta, e);
}

/// Drop probability where the detailed model's min(1, 3 sqrt(s p)) switches branch.
inline double detailed_switch_point(const DetailedModel& m) { return 1.0 / (9.0 * detail::detailed_ratio(m)); }

inline void validate(const ThroughputModel& model)
{
    const double eps = 1e-12;
    std::visit(detail::overloaded{
                   [&](const SimpleModel& m) {
                       if (!(m.K >= k_min - eps && m.K <= k_max + eps))
                           throw Error(ErrorKind::domain, "K must lie in [1, sqrt(8/3)]");
                   },
                   [&](const DetailedModel& m) {
                       if (!(m.T0 > 0.0))
                           throw Error(ErrorKind::domain, "T0 must be positive");
                       if (m.b_ack != 1.0 && m.b_ack != 2.0)
                           throw Error(ErrorKind::domain, "b_ack must be 1 or 2");
                       if (!(m.alpha > 0.0 && m.beta > 0.0))
                           throw Error(ErrorKind::domain, "alpha and beta must be positive");
                   },
                   [&](const BinomialModel& m) {
                       if (!(m.alpha > 0.0) || !(m.beta > 0.0 && m.beta < 1.0))
                           throw Error(ErrorKind::domain, "binomial needs alpha > 0 and 0 < beta < 1");
                       if (!(m.k + m.l + 1.0 > 0.0))
                           throw Error(ErrorKind::domain, "binomial needs k + l + 1 > 0");
                   },
                   [&](const MixedUdpModel& m) {
                       if (!(m.K >= k_min - eps && m.K <= k_max + eps))
                           throw Error(ErrorKind::domain, "K must lie in [1, sqrt(8/3)]");
                       if (!(m.lambda_udp >= 0.0 && m.lambda_udp < 1.0))
                           throw Error(ErrorKind::domain, "lambda_udp must lie in [0, 1)");
                       if (!(m.C > 0.0 && m.N > 0.0))
                           throw Error(ErrorKind::domain, "mixed model needs C and N bound");
                   },
               },
               model);
}

inline double throughput(const ThroughputModel& model, double p, double R, double M)
{
    detail::check_pR(p, R);
    return std::visit(
        detail::overloaded{
            [&](const SimpleModel& m) { return M * m.K / (R * std::sqrt(p)); },
            [&](const DetailedModel& m) {
                const double sp = std::sqrt(detail::detailed_ratio(m) * p);
                return M / (R * sp + m.T0 * std::fmin(1.0, 3.0 * sp) * p * (1.0 + 32.0 * p * p));
            },
            [&](const BinomialModel& m) {
                return M * binomial_constant(m) / (R * std::pow(p, detail::binomial_exponent(m)));
            },
            [&](const MixedUdpModel& m) {
                return (m.N * M * m.K / (R * std::sqrt(p)) + m.lambda_udp * m.C * (1.0 - p)) / m.N;
            },
        },
        model);
}

/// Analytic partials. At the detailed switch point the left branch is used and one_sided is set.
inline Partials throughput_partials(const ThroughputModel& model, double p, double R, double M)
{
    detail::check_pR(p, R);
    return std::visit(
        detail::overloaded{
            [&](const SimpleModel& m) {
                const double T = M * m.K / (R * std::sqrt(p));
                return Partials{-T / (2.0 * p), -T / R, false};
            },
            [&](const DetailedModel& m) {
                const double s = detail::detailed_ratio(m);
                const double sp = std::sqrt(s * p);
                const double ps = detailed_switch_point(m);
                const bool at_switch = std::fabs(p - ps) <= 1e-12 * ps;
                const bool left = at_switch || p < ps;
                const double mn = left ? 3.0 * sp : 1.0;
                const double dmn = left ? 1.5 * std::sqrt(s / p) : 0.0;
                const double poly = p * (1.0 + 32.0 * p * p);
                const double D = R * sp + m.T0 * mn * poly;
                const double dD_dp = 0.5 * R * std::sqrt(s / p) + m.T0 * (dmn * poly + mn * (1.0 + 96.0 * p * p));
                return Partials{-M * dD_dp / (D * D), -M * sp / (D * D), at_switch};
            },
            [&](const BinomialModel& m) {
                const double e = detail::binomial_exponent(m);
                const double T = M * binomial_constant(m) / (R * std::pow(p, e));
                return Partials{-e * T / p, -T / R, false};
            },
            [&](const MixedUdpModel& m) {
                const double tcp = M * m.K / (R * std::sqrt(p));
                return Partials{-tcp / (2.0 * p) - m.lambda_udp * m.C / m.N, -tcp / R, false};
            },
        },
        model);
}

/// Solve T(p, R) = target for R. Closed form for Simple, bisection over [1e-6, 1e4] s otherwise.
inline double inverse_in_R(const ThroughputModel& model, double p, double target, double M)
{
    if (!(target > 0.0))
        throw Error(ErrorKind::domain, "target rate must be positive");
    detail::check_pR(p, 1.0);
    if (const auto* s = std::get_if<SimpleModel>(&model))
        return M * s->K / (target * std::sqrt(p));
    auto g = [&](double R) { return throughput(model, p, R, M) - target; };
    return detail::bisect(g, 1e-6, 1e4, {0.0, 1e-15}, 400, ErrorKind::no_solution,
                          "no round-trip time in [1e-6, 1e4] s reaches the target rate");
}

namespace detail {

inline double solve_rate_balance(const ThroughputModel& model, double R, double target, double M)
{
    if (const auto* s = std::get_if<SimpleModel>(&model)) {
        const double p = std::pow(M * s->K / (R * target), 2);
        if (!(p > 0.0 && p <= 1.0))
            throw Error(ErrorKind::no_solution, "rate balance has no root in (0, 1]");
        return p;
    }
    auto g = [&](double p) { return throughput(model, p, R, M) - target; };
    return bisect(g, 1e-12, 1.0, {1e-12, 1e-13}, 200, ErrorKind::no_solution,
                  "rate balance has no root in (0, 1]");
}

} // namespace detail

/// Largest drop probability keeping the link fully used: T(p0, R0) = C/N.
inline double solve_p0(const ThroughputModel& model, double C, double N, double R0, double M)
{
    return detail::solve_rate_balance(model, R0, C / N, M);
}

/// Probability at which the queue law reaches B, i.e. T(p1, R0 + B M / C) = C/N.
inline double solve_p1(const ThroughputModel& model, double C, double N, double R0, double M, double B)
{
    const double p0 = solve_p0(model, C, N, R0, M);
    double p1 = 0.0;
    try {
        p1 = detail::solve_rate_balance(model, R0 + B * M / C, C / N, M);
    } catch (const Error&) {
        throw Error(ErrorKind::degenerate_border, "queue law never reaches B in (0, p0)");
    }
    if (!(p1 > 0.0 && p1 < p0))
        throw Error(ErrorKind::degenerate_border, "queue law never reaches B in (0, p0)");
    return p1;
}

struct SystemParams {
    double N = 0.0;  // active connections
    double C = 0.0;  // bottleneck capacity, bits/s
    double M = 0.0;  // packet size, bits
    double R0 = 0.0; // round-trip propagation delay, s
    double B = 0.0;  // buffer, packets
    ThroughputModel model = SimpleModel{};
};

/// Validates the parameters and binds C and N into a MixedUdp model.
inline SystemParams make_system(double N, double C, double M, double R0, double B, ThroughputModel model)
{
    if (!(N > 0.0 && C > 0.0 && M > 0.0 && R0 > 0.0 && B > 0.0))
        throw Error(ErrorKind::domain, "N, C, M, R0 and B must be strictly positive");
    if (auto* u = std::get_if<MixedUdpModel>(&model)) {
        u->C = C;
        u->N = N;
    }
    validate(model);
    return SystemParams{N, C, M, R0, B, model};
}

inline double solve_p0(const SystemParams& s) { return solve_p0(s.model, s.C, s.N, s.R0, s.M); }

inline double solve_p1(const SystemParams& s) { return solve_p1(s.model, s.C, s.N, s.R0, s.M, s.B); }

} // namespace netdyn
