#include <random>

#include <catch_amalgamated.hpp>

#include <netdyn/washout.hpp>

#include "common.hpp"

using namespace netdyn;
using Catch::Approx;

namespace {

// Spectral radius of [[1-d, 1], [-d b k, lambda0 + b k]] from its characteristic polynomial.
double spectral_oracle(double lambda0, double b, double d, double k)
{
    const double a11 = 1 - d, a12 = 1, a21 = -d * b * k, a22 = lambda0 + b * k;
    const double tr = a11 + a22, det = a11 * a22 - a12 * a21;
    const double disc = tr * tr - 4 * det;
    if (disc >= 0)
        return std::max(std::fabs(0.5 * (tr + std::sqrt(disc))), std::fabs(0.5 * (tr - std::sqrt(disc))));
    return std::sqrt(det);
}

} // namespace

TEST_CASE("filter output decays at a constant input")
{
    ControlledState s{345.10, -1234.0};
    for (int i = 0; i < 500; ++i)
        s.z = washout_step(s, 0.2).z_next;
    CHECK(std::fabs(washout_step(s, 0.2).y) < 1e-6);
    CHECK_THROWS_AS(washout_step(s, 2.0), Error);
    CHECK_THROWS_AS(washout_step(s, 0.0), Error);
}

TEST_CASE("control signal")
{
    CHECK(control_signal(100, 1e-3, 2.0e-8) == Approx(0.12).epsilon(1e-14));
    CHECK(control_signal(0, 5, 5) == 0);
}

TEST_CASE("equilibrium is preserved")
{
    const MapModel m = fixtures::p1(0.18);
    const double q = fixed_point(m);
    WashoutParams c;
    c.k_l = 0.7;
    c.k_c = 1e-4;
    const ControlledStep st = controlled_map_step({q, q / c.d}, m, c);
    CHECK(st.next.q == Approx(q).margin(1e-9 * 3750));
    CHECK(st.next.z == Approx(q / c.d).margin(1e-9 * 3750));
    CHECK_FALSE(st.saturated);
}

TEST_CASE("zero gains reproduce the open-loop orbit bit for bit")
{
    const MapModel m = fixtures::p1(0.17);
    WashoutParams c;
    ControlledState s{1000, 0};
    double q = 1000;
    for (int i = 0; i < 2000; ++i) {
        s = controlled_map_step(s, m, c).next;
        q = map_step(q, m);
        REQUIRE(s.q == q);
    }
}

TEST_CASE("actuation gain against finite differences")
{
    for (const MapModel& m : {fixtures::p1(0.18), fixtures::washout_set(0.25), fixtures::detailed_set(0.1)}) {
        const double q = fixed_point(m);
        for (Actuator a : {Actuator::p_max, Actuator::q_max}) {
            RedParams up = m.red(), dn = m.red();
            double& pu = a == Actuator::p_max ? up.p_max : up.q_max;
            double& pd = a == Actuator::p_max ? dn.p_max : dn.q_max;
            const double h = 1e-6 * pu;
            pu += h;
            pd -= h;
            const double fd = (map_step(q, m.with_red(up)) - map_step(q, m.with_red(dn))) / (2 * h);
            CHECK(fixtures::rel(actuation_gain_b(m, a), fd) < 1e-6);
        }
    }
}

TEST_CASE("Jury example")
{
    const JuryVerdict v = jury_stability(-1.2, 1, 0.5, 0.3);
    CHECK(v.stable);
    CHECK(v.margins[0] == Approx(1.1));
    CHECK(v.margins[1] == Approx(2 * (0.3 - 0.15))); // b k against (d - 2)(1 + lambda0) / 2
    CHECK(v.spectral_radius < 1);
}

TEST_CASE("Jury test agrees with the spectral radius")
{
    std::mt19937_64 gen(13);
    std::uniform_real_distribution<double> L(-3, 1), Bd(-2, 2), D(0.01, 1.99), K(-5, 5);
    int checked = 0;
    for (int i = 0; i < 1000; ++i) {
        const double l = L(gen), b = Bd(gen), d = D(gen), k = K(gen);
        const JuryVerdict v = jury_stability(l, b, d, k);
        const double rho = spectral_oracle(l, b, d, k);
        CHECK(v.spectral_radius == Approx(rho).epsilon(1e-9));
        if (std::fabs(rho - 1) < 1e-9)
            continue;
        CHECK(v.stable == (rho < 1));
        ++checked;
    }
    CHECK(checked > 990);
}

TEST_CASE("stability triangle")
{
    const StabilityTriangle t = stability_triangle(-1.5, 1);
    CHECK(t.vertices[0][1] == Approx(0.5));
    CHECK(t.vertices[1][1] == Approx(2.5));
    CHECK(t.vertices[2][0] == Approx(1.6));
    CHECK(t.vertices[2][1] == Approx(0.1));
    const auto c = t.centroid();
    CHECK(jury_stability(-1.5, 1, c[0], c[1]).stable);
    // each vertex sits on the unit-circle boundary
    for (const auto& v : t.vertices)
        CHECK(jury_stability(-1.5, 1, std::max(v[0], 1e-12), v[1]).spectral_radius == Approx(1).margin(1e-9));

    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> D(0, 2), K(-1, 3);
    int inside = 0, outside = 0;
    while (inside < 100 || outside < 100) {
        const double d = D(gen), k = K(gen);
        const double rho = spectral_oracle(-1.5, 1, d, k);
        if (t.contains(d, k) && inside < 100) {
            CHECK(rho < 1);
            ++inside;
        } else if (!t.contains(d, k) && outside < 100) {
            CHECK(rho >= 1 - 1e-12);
            ++outside;
        }
    }
    CHECK_THROWS_AS(stability_triangle(-0.5, 1), Error);
}

TEST_CASE("worst-case triangle over w")
{
    const MapModel m3 = fixtures::p1(0.3);
    const double v3 = stability_triangle(open_loop_lambda(m3), actuation_gain_b(m3, Actuator::q_max)).vertices[1][1];
    const StabilityTriangle wc = worst_case_triangle_w(m3);
    CHECK(wc.vertices[1][1] == Approx(v3).margin(1e-9));
    CHECK(wc.vertices[1][1] == Approx(5.707878118).margin(1e-8));
    const auto c = wc.centroid();
    for (double w = 0.2; w < 1.0; w += 0.2) {
        const MapModel m = fixtures::p1(std::min(w, 0.99));
        CHECK(jury_stability(open_loop_lambda(m), actuation_gain_b(m, Actuator::q_max), c[0], c[1]).stable);
    }
    const MapModel m = fixtures::p1(0.99);
    CHECK(jury_stability(open_loop_lambda(m), actuation_gain_b(m, Actuator::q_max), c[0], c[1]).stable);
}

TEST_CASE("washout control stabilizes a chaotic RED queue")
{
    const MapModel m = fixtures::p1(0.18);
    const double q = fixed_point(m);
    const double l0 = open_loop_lambda(m), b = actuation_gain_b(m, Actuator::q_max);
    CHECK(l0 == Approx(-1.2810).margin(1e-4));
    CHECK(b == Approx(0.3996).margin(1e-4));
    WashoutParams c;
    c.actuator = Actuator::q_max;
    c.d = 0.2;
    const double klo = (c.d - 2) * (1 + l0) / (2 * b), khi = (1 - l0 * (1 - c.d)) / b;
    c.k_l = 0.5 * (klo + khi);
    REQUIRE(jury_stability(l0, b, c.d, c.k_l).stable);
    for (ControlledState s : {ControlledState{q + 5, q / c.d}, ControlledState{1000, 0}}) {
        for (int i = 0; i < 20000; ++i)
            s = controlled_map_step(s, m, c).next;
        CHECK(s.q == Approx(q).margin(0.1));
    }
}

TEST_CASE("controlled thresholds at the washout parameter block")
{
    const MapModel m = fixtures::washout_set();
    WashoutParams c;
    c.d = 0.2;
    c.k_l = -15.0 / 3735;
    const double open_R = find_pdb(m, Axis::R0, 0.1, 0.5);
    CHECK(open_R == Approx(0.22331593).margin(1e-7));
    WashoutParams zero = c;
    zero.k_l = 0;
    CHECK(critical_parameter(m, Axis::R0, zero, 0.1, 0.5) == Approx(open_R).epsilon(1e-5));
    const double ctrl_R = critical_parameter(m, Axis::R0, c, open_R, 0.5);
    CHECK(ctrl_R > open_R);
    CHECK(ctrl_R == Approx(0.29644376).margin(1e-6));

    const double open_N = find_pdb(m, Axis::N, 20, 400);
    const double ctrl_N = critical_parameter(m, Axis::N, c, 20, open_N);
    CHECK(ctrl_N < open_N);
    CHECK(closed_loop_margin(with_axis(m, Axis::N, ctrl_N + 1), c) > 0);
    CHECK_THROWS_AS(critical_parameter(m, Axis::w, c, 0.1, 0.2), Error);
}

TEST_CASE("cubic gain shifts the criticality coefficient")
{
    const MapModel m = fixtures::washout_set(0.3);
    const double b = actuation_gain_b(m, Actuator::p_max);
    const Beta2Delta r = beta2_delta(m, -1e-3);
    CHECK(r.beta2 == Approx(-2 * stability_S(m)).epsilon(1e-15));
    CHECK(r.delta == Approx(4e-3 * b).epsilon(1e-15));
    CHECK(r.supercritical == (r.sum < 0));
}

TEST_CASE("clamping")
{
    const MapModel m = fixtures::p1(0.18);
    WashoutParams c;
    c.k_l = 1.0;
    const ControlledStep st = controlled_map_step({1000, 0}, m, c);
    CHECK(st.saturated);
    CHECK(st.actuated == Approx(0.5));
    c.clamp_lo = 0.3;
    c.clamp_hi = 0.2;
    CHECK_THROWS_AS(controlled_map_step({1000, 0}, m, c), Error);
}

TEST_CASE("cubic gain reduces the post-onset amplitude")
{
    const MapModel base = fixtures::washout_set();
    WashoutParams c;
    c.d = 0.2;
    c.k_l = -15.0 / 3735;
    const double crit = critical_parameter(base, Axis::R0, c, find_pdb(base, Axis::R0, 0.1, 0.5), 0.5);
    const MapModel m = with_axis(base, Axis::R0, crit * 1.05);
    const double q = fixed_point(m);
    const ClampRange cr = clamp_range(m, c);
    auto amplitude = [&](double k_c) {
        WashoutParams cc = c;
        cc.k_c = k_c;
        ControlledState s{q + 0.5, q / cc.d};
        double lo = 1e300, hi = -1e300;
        for (int i = 0; i < 100000; ++i) {
            const ControlledStep st = controlled_map_step(s, m, cc);
            REQUIRE(st.actuated >= cr.lo);
            REQUIRE(st.actuated <= cr.hi);
            s = st.next;
            if (i >= 80000) {
                lo = std::min(lo, s.q);
                hi = std::max(hi, s.q);
            }
        }
        return hi - lo;
    };
    const double linear = amplitude(0.0);
    const double mixed = amplitude(-1e-3);
    CHECK(mixed < linear);
    CHECK(mixed > 0);
    CHECK(beta2_delta(m, 0.0).delta == 0.0);
}
