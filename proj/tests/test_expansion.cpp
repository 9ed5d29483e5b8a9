#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "singliq/expansion.hpp"
#include "singliq/grids.hpp"
#include "singliq/model.hpp"
#include "singliq/oracles.hpp"
#include "singliq/truncated.hpp"

using namespace singliq;

namespace {

ModelSpec constant_spec(double q = 2.0) {
    ModelSpec m;
    m.q = q;
    m.p = holder_conjugate(q);
    m.T = 1.0;
    m.eta = [](double, double) { return 1.0; };
    m.ito_drift_eta = [](double, double) { return 0.0; };
    m.eta_lower = m.eta_upper = 1.0;
    return m;
}

// deterministic impact with relative drift g: eta(t) = exp(g t)
ModelSpec drift_spec(double g, double q = 2.0) {
    ModelSpec m = constant_spec(q);
    m.eta = [g](double t, double) { return std::exp(g * t); };
    m.ito_drift_eta = [g, &m](double, double) { return 0.0; }; // set below
    m.ito_drift_eta = [g, eta = m.eta](double t, double x) { return g * eta(t, x); };
    m.eta_lower = 1.0;
    m.eta_upper = std::exp(g * m.T);
    m.b_eta_sup = g * m.eta_upper;
    return m;
}

SolveGrid ode_grid(double T, int nt = 1500, double ratio = 0.985) {
    SolveGrid g;
    g.t = refined_time_grid(T, nt, ratio, 1e-9);
    g.x = uniform_grid(-1.0, 1.0, 5);
    return g;
}

} // namespace

TEST_CASE("one operator application") {
    SolveGrid g;
    g.t = uniform_grid(0.0, 1.0, 20001); // trapezoid error in the step scales with dt^2
    g.x = uniform_grid(-1.0, 1.0, 5);

    SECTION("zero stays zero without drift or penalty") {
        ModelSpec m = constant_spec();
        TimeSpaceField zero(g.t, g.x);
        const TimeSpaceField out = picard_step(m, zero, g);
        for (std::size_t it = 0; it < out.nt(); ++it)
            for (std::size_t ix = 0; ix < out.nx(); ++ix) CHECK(out.at(it, ix) == 0.0);
    }

    SECTION("pure penalty integrates to the explicit power") {
        ModelSpec m = constant_spec();
        const double g0 = 0.7;
        m.gamma_fn = [g0](double, double) { return g0; };
        m.gamma_upper = g0;
        TimeSpaceField zero(g.t, g.x);
        const TimeSpaceField out = picard_step(m, zero, g);
        double worst = 0.0;
        for (std::size_t it = 0; it < out.nt(); ++it) {
            const double tau = m.T - g.t[it];
            const double exact = std::pow(tau, m.p + 1.0) * g0 / (m.p + 1.0);
            worst = std::max(worst, std::abs(out.at(it, 2) - exact));
        }
        CHECK(worst <= 1e-9);
    }

    SECTION("pure drift integrates to the quadratic ramp") {
        ModelSpec m = constant_spec();
        const double b0 = 0.4;
        m.ito_drift_eta = [b0](double, double) { return b0; };
        m.b_eta_sup = b0;
        TimeSpaceField zero(g.t, g.x);
        const TimeSpaceField out = picard_step(m, zero, g);
        double worst = 0.0;
        for (std::size_t it = 0; it < out.nt(); ++it) {
            const double tau = m.T - g.t[it];
            worst = std::max(worst, std::abs(out.at(it, 2) - tau * tau * b0 / 2.0));
        }
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("degenerate fixed point stops immediately") {
    ModelSpec m = constant_spec();
    const SolveGrid g = ode_grid(1.0, 400);
    const ExpansionSolution sol = solve_H(m, g);
    CHECK(sol.report.converged);
    CHECK(sol.report.iterations == 1);
    for (std::size_t it = 0; it < sol.h.nt(); ++it) CHECK(sol.h.at(it, 2) == 0.0);
    CHECK(sol.constants.R == 0.0);
    CHECK(sol.constants.delta == 1.0);
}

TEST_CASE("fixed point against the drift-family profile") {
    ModelSpec m = drift_spec(0.5);
    const SolveGrid g = ode_grid(1.0, 1500);
    const ExpansionSolution sol = solve_H(m, g, 1e-10, 200);
    CHECK(sol.report.converged);
    CHECK(sol.report.ball_violation_max <= 1e-9);
    CHECK(sol.report.guard_ratio_max <= 0.5 + 1e-9);
    CHECK(sol.report.residual_weighted <= 2e-10);
    for (double r : sol.report.contraction_ratios) CHECK(r <= 0.6);

    const UmiSpec u{[](double) { return 0.5; }, m.q, m.p, m.T};
    double worst = 0.0;
    for (std::size_t it = 0; it < sol.h.nt(); ++it) {
        const double t = g.t[it];
        const double tau = m.T - t;
        if (tau < 1e-3) continue;
        const double oracle = umi_h(t, u);
        const double num = sol.h.at(it, 2) / (m.eta(t, 0.0) * tau);
        worst = std::max(worst, std::abs(num - oracle) / std::abs(oracle));
    }
    CHECK(worst <= 1e-3);

    SECTION("assembled field matches the closed-form minimal solution") {
        const TimeSpaceField y = assemble_Y(m, sol.h, 1e-3);
        double worst_y = 0.0;
        for (std::size_t it = 0; it < y.nt(); ++it) {
            const double t = y.time_grid()[it];
            const double oracle = umi_Y(t, m.eta(t, 0.0), u);
            worst_y = std::max(worst_y, std::abs(y.at(it, 2) - oracle) / oracle);
        }
        CHECK(worst_y <= 1e-3);
        CHECK_THROWS_AS(y.interpolate(m.T - 1e-5, 0.0), std::domain_error);
    }
}

TEST_CASE("assembly with a null correction") {
    ModelSpec m = constant_spec();
    const SolveGrid g = ode_grid(1.0, 400);
    TimeSpaceField zero(g.t, g.x);
    const TimeSpaceField y = assemble_Y(m, zero, 0.01);
    for (std::size_t it = 0; it < y.nt(); ++it) {
        const double tau = m.T - y.time_grid()[it];
        CHECK(y.at(it, 1) == Catch::Approx(1.0 / tau).epsilon(1e-14));
    }
}

TEST_CASE("envelope constants") {
    SECTION("quadratic case has a closed-form inverse") {
        for (double y : {0.0, 0.3, 2.0, 50.0}) {
            const double closed = (-1.0 + std::sqrt(1.0 + 4.0 * y)) / 2.0;
            CHECK(detail::psi_inverse(y, 2.0) == Catch::Approx(closed).margin(1e-12));
        }
    }
    SECTION("bisection inverts psi") {
        for (double q : {1.5, 2.67, 3.0})
            for (double y : {0.1, 1.0, 7.0}) {
                const double x = detail::psi_inverse(y, q);
                CHECK(std::pow(1.0 + x, q) - 1.0 - x == Catch::Approx(y).epsilon(1e-10));
            }
    }
    SECTION("degenerate data gives the upper bound eta_upper") {
        ModelSpec m = constant_spec();
        const HnBounds b = hn_bounds(m);
        CHECK(b.K2 == 0.0);
        CHECK(b.c2 == Catch::Approx(m.eta_upper));
        CHECK(b.c1 == 0.0);
        CHECK(b.delta > 0.0);
    }
    SECTION("nondegenerate search satisfies the proof conditions") {
        ModelSpec m = drift_spec(0.5);
        const HnBounds b = hn_bounds(m);
        const double nu0 = std::pow(m.eta_upper / b.n0, m.q - 1.0);
        CHECK(b.c1 > 0.0);
        CHECK(b.c1 * (b.delta + nu0) <= 0.5 * m.eta_lower + 1e-12);
        CHECK(b.delta + nu0 <= m.eta_lower / (b.K * b.zeta_star) + 1e-12);
    }
}

TEST_CASE("shifted level process") {
    SECTION("terminal vanishes when eta touches its upper bound") {
        ModelSpec m = constant_spec();
        const SolveGrid g = ode_grid(1.0, 700);
        const ShiftedSolution s = solve_Hn(m, 16.0, g);
        // constant coefficients: the shifted process is identically zero
        for (std::size_t it = 0; it < s.hn.nt(); ++it)
            for (std::size_t ix = 0; ix < s.hn.nx(); ++ix) CHECK(s.hn.at(it, ix) == 0.0);
    }

    SECTION("level assembly reproduces the direct truncated solve") {
        ModelSpec m = drift_spec(0.5);
        const SolveGrid g = ode_grid(1.0, 2500, 0.99);
        const ShiftedSolution s = solve_Hn(m, 64.0, g);
        const TruncatedSolution direct = solve_Yn(m, 64.0, g);
        const TimeSpaceField assembled = assemble_un_from_Hn(m, s);
        double worst = 0.0;
        for (std::size_t it = 0; it < assembled.nt(); ++it)
            worst = std::max(worst, std::abs(assembled.at(it, 2) - direct.u.at(it, 2)) /
                                        direct.u.at(it, 2));
        CHECK(worst <= 1e-4);
    }

    SECTION("sandwich envelope holds at the certified levels") {
        ModelSpec m = drift_spec(0.5);
        const SolveGrid g = ode_grid(1.0, 2000, 0.99);
        const HnBounds b = hn_bounds(m);
        for (double mult : {1.0, 4.0}) {
            const ShiftedSolution s = solve_Hn(m, mult * b.n0, g, &b);
            const SandwichCheck chk = check_hn_sandwich(m, s, b);
            CHECK(chk.lower_violation <= 1e-8);
            CHECK(chk.upper_violation <= 1e-8);
        }
        CHECK_THROWS_AS(solve_Hn(m, 0.5 * b.n0, g, &b), std::domain_error);
    }

    SECTION("weighted distance to the correction decreases with the level") {
        ModelSpec m = drift_spec(0.5);
        const SolveGrid g = ode_grid(1.0, 2000, 0.99);
        const ExpansionSolution sol = solve_H(m, g);
        const HnBounds b = hn_bounds(m);
        double prev = std::numeric_limits<double>::infinity();
        double last = prev;
        for (int k = 0; k < 5; ++k) {
            const ShiftedSolution s = solve_Hn(m, b.n0 * std::pow(4.0, k), g);
            last = weighted_hn_distance(m, sol.h, s);
            CHECK(last <= prev * 1.0000001);
            prev = last;
        }
        CHECK(last <= 1e-2);
    }
}
