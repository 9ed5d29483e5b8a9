#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "singliq/grids.hpp"
#include "singliq/model.hpp"
#include "singliq/oracles.hpp"
#include "singliq/truncated.hpp"

using namespace singliq;

namespace {

ModelSpec constant_spec(double q, double gamma_const = 0.0) {
    ModelSpec m;
    m.q = q;
    m.p = holder_conjugate(q);
    m.T = 1.0;
    m.eta = [](double, double) { return 1.0; };
    m.ito_drift_eta = [](double, double) { return 0.0; };
    m.eta_lower = m.eta_upper = 1.0;
    if (gamma_const > 0.0) {
        m.gamma_fn = [gamma_const](double, double) { return gamma_const; };
        m.gamma_upper = gamma_const;
    }
    return m;
}

SolveGrid ode_grid(double T, int nt = 4000, double tau_min = 1e-8, double ratio = 0.9) {
    SolveGrid g;
    g.t = refined_time_grid(T, nt, ratio, tau_min);
    g.x = uniform_grid(-1.0, 1.0, 5);
    return g;
}

} // namespace

TEST_CASE("level solve against the closed form") {
    ModelSpec m = constant_spec(2.0);
    const SolveGrid g = ode_grid(1.0);
    const TruncatedSolution sol = solve_Yn(m, 10.0, g);
    double worst = 0.0;
    for (std::size_t it = 0; it < sol.u.nt(); ++it) {
        const double exact = 1.0 / (m.T - g.t[it] + 0.1);
        worst = std::max(worst, std::abs(sol.u.at(it, 2) - exact) / exact);
    }
    CHECK(worst <= 1e-6);
    CHECK(sol.u.at(0, 2) == Catch::Approx(1.0 / 1.1).epsilon(1e-6));
    CHECK(sol.u.at(sol.u.nt() - 1, 2) == 10.0); // terminal row is exact
    CHECK(bound_violation_max(sol.u, sol.bound) <= 1e-6);
}

TEST_CASE("zero level") {
    ModelSpec m = constant_spec(2.0);
    const SolveGrid g = ode_grid(1.0, 600);
    const TruncatedSolution sol = solve_Yn(m, 0.0, g);
    for (std::size_t it = 0; it < sol.u.nt(); ++it) CHECK(sol.u.at(it, 1) == 0.0);
    CHECK_THROWS_AS(solve_Yn(m, -1.0, g), std::domain_error);
}

TEST_CASE("zero level with penalty follows the tanh profile") {
    ModelSpec m = constant_spec(2.0, 1.0);
    const SolveGrid g = ode_grid(1.0, 6000);
    const TruncatedSolution sol = solve_Yn(m, 0.0, g);
    double worst = 0.0;
    for (std::size_t it = 0; it < sol.u.nt(); ++it)
        worst = std::max(worst, std::abs(sol.u.at(it, 2) - std::tanh(m.T - g.t[it])));
    CHECK(worst <= 1e-6);
    // nonnegativity of every level
    for (std::size_t it = 0; it < sol.u.nt(); ++it)
        for (std::size_t ix = 0; ix < sol.u.nx(); ++ix) CHECK(sol.u.at(it, ix) >= -1e-14);
}

TEST_CASE("a-priori envelope") {
    ModelSpec m = constant_spec(2.0);
    const SolveGrid g = ode_grid(1.0, 800);
    const AprioriBound ab(m, g);

    SECTION("tight at the terminal time") {
        for (double n : {4.0, 64.0, 1024.0}) {
            const TimeSpaceField b = ab.field_for(n);
            CHECK(b.at(b.nt() - 1, 2) == Catch::Approx(n).epsilon(1e-12));
        }
    }
    SECTION("penalty-free constant case is exact") {
        const double n = 16.0;
        const TimeSpaceField b = ab.field_for(n);
        for (std::size_t it = 0; it < b.nt(); ++it) {
            const double tau = m.T - g.t[it];
            const double exact = (1.0 / n + tau) / std::pow(tau + 1.0 / n, 2.0);
            CHECK(b.at(it, 2) == Catch::Approx(exact).epsilon(1e-12));
        }
    }
    SECTION("large levels recover the limit envelope") {
        const TimeSpaceField b = ab.field_for(1e9);
        for (std::size_t it = 0; it + 1 < b.nt(); ++it) {
            const double tau = m.T - g.t[it];
            if (tau < 0.01) continue;
            CHECK(b.at(it, 2) == Catch::Approx(1.0 / tau).epsilon(1e-6));
        }
    }
    SECTION("proof-variant envelope is also produced") {
        const TruncatedSolution sol = solve_Yn(m, 8.0, g);
        REQUIRE(sol.bound_alt.nt() == sol.bound.nt());
        // for eta == 1, q == 2 the two variants coincide
        CHECK(sol.bound_alt.at(0, 2) == Catch::Approx(sol.bound.at(0, 2)).epsilon(1e-12));
    }
}

TEST_CASE("monotone limit in the constant case") {
    ModelSpec m = constant_spec(2.0);
    const SolveGrid g = ode_grid(1.0, 4000, 1e-9, 0.99);
    std::vector<double> levels;
    for (int k = 1; k <= 11; ++k) levels.push_back(std::pow(4.0, k));
    const double eps = 0.01;
    const MonotoneLimit ml = monotone_limit(m, levels, g, eps);

    double worst = 0.0;
    for (std::size_t it = 0; it < ml.y.nt(); ++it) {
        const double tau = m.T - g.t[it];
        if (tau < eps) continue;
        worst = std::max(worst, std::abs(ml.y.at(it, 2) - 1.0 / tau) * tau);
    }
    CHECK(worst <= 1e-4);

    // increments decrease with the level
    for (std::size_t k = 2; k < ml.table.size(); ++k)
        CHECK(ml.table[k].sup_increment <= ml.table[k - 1].sup_increment);
    for (const LevelRow& r : ml.table) {
        CHECK(r.monotonicity_violation <= 1e-6);
        CHECK(r.bound_violation <= 1e-6);
    }

    // blow-up exponent of the largest level
    CHECK(std::abs(ml.table.back().blowup_slope + (m.p - 1.0)) / (m.p - 1.0) <= 0.02);

    // lower envelope of the limit
    const TimeSpaceField low = minimal_solution_lower_bound(m, g);
    double shortfall = 0.0;
    for (std::size_t it = 0; it < ml.y.nt(); ++it) {
        const double tau = m.T - g.t[it];
        if (tau < eps) continue;
        shortfall = std::max(shortfall, (low.at(it, 2) - ml.y.at(it, 2)) / low.at(it, 2));
    }
    CHECK(shortfall <= 1e-3);
}

TEST_CASE("monotone limit matches the closed-form drift family") {
    // deterministic eta with relative drift g: eta(t) = exp(g t), gamma = 0
    ModelSpec m = constant_spec(2.0);
    const double gdrift = 0.5;
    m.eta = [gdrift](double t, double) { return std::exp(gdrift * t); };
    m.ito_drift_eta = [gdrift, &m](double t, double x) { return gdrift * m.eta(t, x); };
    m.eta_lower = 1.0;
    m.eta_upper = std::exp(gdrift);
    m.b_eta_sup = gdrift * m.eta_upper;

    const SolveGrid g = ode_grid(1.0, 4000, 1e-9, 0.99);
    std::vector<double> levels;
    for (int k = 1; k <= 10; ++k) levels.push_back(std::pow(4.0, k));
    const MonotoneLimit ml = monotone_limit(m, levels, g, 0.02);

    const UmiSpec u{[gdrift](double) { return gdrift; }, m.q, m.p, m.T};
    double worst = 0.0;
    for (std::size_t it = 0; it < ml.y.nt(); ++it) {
        const double t = g.t[it];
        if (m.T - t < 0.02) continue;
        const double oracle = umi_Y(t, m.eta(t, 0.0), u);
        worst = std::max(worst, std::abs(ml.y.at(it, 2) - oracle) / oracle);
    }
    CHECK(worst <= 1e-3);
}

TEST_CASE("level schedule validation") {
    ModelSpec m = constant_spec(2.0);
    const SolveGrid g = ode_grid(1.0, 300);
    CHECK_THROWS_AS(monotone_limit(m, {}, g, 0.01), config_error);
    CHECK_THROWS_AS(monotone_limit(m, {16.0, 4.0}, g, 0.01), config_error);
}
