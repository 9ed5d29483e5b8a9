#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "singliq/model.hpp"
#include "singliq/rng.hpp"

using namespace singliq;

namespace {

ModelSpec kernel_spec(double q, double T = 1.0, double eta_lo = 0.5, double eta_hi = 2.0) {
    ModelSpec m;
    m.q = q;
    m.p = holder_conjugate(q);
    m.T = T;
    m.eta = [](double, double) { return 1.0; };
    m.ito_drift_eta = [](double, double) { return 0.0; };
    m.eta_lower = eta_lo;
    m.eta_upper = eta_hi;
    return m;
}

} // namespace

TEST_CASE("holder conjugate") {
    CHECK(holder_conjugate(2.0) == Catch::Approx(2.0).epsilon(1e-15));
    CHECK(holder_conjugate(1.6) == Catch::Approx(8.0 / 3.0).epsilon(1e-12));
    CHECK(holder_conjugate(4.0 / 3.0) == Catch::Approx(4.0).epsilon(1e-12));
    CHECK_THROWS_AS(holder_conjugate(1.0), std::domain_error);
    CHECK_THROWS_AS(holder_conjugate(0.3), std::domain_error);
}

TEST_CASE("conjugacy sweep") {
    double worst = 0.0;
    for (int i = 0; i <= 2000; ++i) {
        const double p = 1.01 + (10.0 - 1.01) * i / 2000.0;
        worst = std::max(worst, std::abs((p - 1.0) * (holder_conjugate(p) - 1.0) - 1.0));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("kernel values in the quadratic case") {
    ModelSpec m = kernel_spec(2.0);
    CHECK(eval_G(0.0, 0.0, 1.0, m) == 0.0);
    CHECK(eval_dG_dh(0.0, 0.0, 1.0, m) == 0.0);
    CHECK(eval_dG_deta(0.0, 0.0, 1.0, m) == 0.0);
    // closed forms h^2/(eta tau^2), 2h/(eta tau^2), -h^2/(eta^2 tau^2)
    CHECK(eval_G(0.0, 0.5, 1.0, m) == Catch::Approx(0.25).epsilon(1e-13));
    CHECK(eval_dG_dh(0.0, 0.5, 1.0, m) == Catch::Approx(1.0).epsilon(1e-13));
    CHECK(eval_dG_deta(0.0, 0.5, 1.0, m) == Catch::Approx(-0.25).epsilon(1e-13));
}

TEST_CASE("direct kernel matches averaged representation") {
    ModelSpec m = kernel_spec(3.0);
    const double g_direct = eval_G(0.0, 0.25, 1.0, m);
    const double g_integral = eval_G_integral(0.0, 0.25, 1.0, m);
    CHECK(std::abs(g_direct - g_integral) <= 1e-10);

    for (double q : {1.5, 2.0, 2.67, 3.0}) {
        ModelSpec k = kernel_spec(q);
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            const auto b1 = Philox2x64::generate(7, static_cast<std::uint64_t>(q * 100), i);
            const auto b2 = Philox2x64::generate(9, static_cast<std::uint64_t>(q * 100), i);
            const double tau = 0.05 + 0.9 * uniform_open(b1.a);
            const double eta_v = 0.5 + 1.5 * uniform_open(b1.b);
            const double w = (uniform_open(b2.a) - 0.5) * 0.98;
            const double h = w * eta_v * tau;
            const double t = k.T - tau;
            auto rel = [](double a, double b) {
                return std::abs(a - b) / std::max(1e-12, std::abs(b));
            };
            worst = std::max(worst, rel(eval_G(t, h, eta_v, k), eval_G_integral(t, h, eta_v, k)));
            worst = std::max(worst, rel(eval_dG_dh(t, h, eta_v, k),
                                        eval_dG_dh_integral(t, h, eta_v, k)));
            worst = std::max(worst, rel(eval_dG_deta(t, h, eta_v, k),
                                        eval_dG_deta_integral(t, h, eta_v, k)));
        }
        INFO("q = " << q);
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("kernel nonnegative above the tangent") {
    for (double q : {1.5, 2.0, 2.67, 3.0}) {
        ModelSpec k = kernel_spec(q);
        double lowest = 0.0;
        for (int i = 0; i < 500; ++i) {
            const auto b = Philox2x64::generate(21, static_cast<std::uint64_t>(q * 10), i);
            const double tau = 0.05 + 0.9 * uniform_open(b.a);
            const double w = (uniform_open(b.b) - 0.5) * 0.99; // 1 + w >= 0 inside the guard
            lowest = std::min(lowest, eval_G(k.T - tau, w * tau, 1.0, k));
        }
        CHECK(lowest >= -1e-14);
    }
}

TEST_CASE("kernel derivatives match centered differences") {
    for (double q : {1.5, 2.0, 2.67, 3.0}) {
        ModelSpec k = kernel_spec(q);
        double worst = 0.0;
        for (int i = 0; i < 500; ++i) {
            const auto b1 = Philox2x64::generate(31, static_cast<std::uint64_t>(q * 100), i);
            const auto b2 = Philox2x64::generate(33, static_cast<std::uint64_t>(q * 100), i);
            const double tau = 0.1 + 0.85 * uniform_open(b1.a);
            const double eta_v = 0.6 + 1.2 * uniform_open(b1.b);
            const double w =
                (uniform_open(b2.a) < 0.5 ? -1.0 : 1.0) * (0.02 + 0.4 * uniform_open(b2.b));
            const double h = w * eta_v * tau;
            const double t = k.T - tau;
            const double d = 1e-6;
            const double fd_h =
                (eval_G(t, h + d, eta_v, k) - eval_G(t, h - d, eta_v, k)) / (2.0 * d);
            const double fd_e =
                (eval_G(t, h, eta_v + d, k) - eval_G(t, h, eta_v - d, k)) / (2.0 * d);
            worst = std::max(worst, std::abs(fd_h - eval_dG_dh(t, h, eta_v, k)) /
                                        std::max(1e-8, std::abs(fd_h)));
            worst = std::max(worst, std::abs(fd_e - eval_dG_deta(t, h, eta_v, k)) /
                                        std::max(1e-8, std::abs(fd_e)));
        }
        INFO("q = " << q);
        CHECK(worst <= 1e-5);
    }
}

TEST_CASE("guard enforcement splits on q") {
    ModelSpec sub = kernel_spec(1.5);
    CHECK_THROWS_AS(eval_G(0.0, 0.8, 1.0, sub), singular_kernel_error);
    ModelSpec sup = kernel_spec(3.0);
    const long before = kernel_guard_warnings().load();
    CHECK_NOTHROW(eval_G(0.0, 0.8, 1.0, sup));
    CHECK(kernel_guard_warnings().load() == before + 1);
    CHECK_THROWS_AS(eval_G(1.0, 0.1, 1.0, sup), std::domain_error); // t == T
}

TEST_CASE("generator F") {
    ModelSpec m = kernel_spec(2.0);
    m.gamma_fn = [](double, double) { return 1.0; };
    m.gamma_upper = 1.0;
    // h = 0 leaves only the linear part
    CHECK(eval_F(0.5, 0.0, 0.0, m) == Catch::Approx(0.25).epsilon(1e-13));
    // tau = 0.5, h = 0.1: 0.25 - 0.04
    CHECK(eval_F(0.5, 0.1, 0.0, m) == Catch::Approx(0.21).epsilon(1e-12));
    ModelSpec z = kernel_spec(2.67);
    for (double h : {-0.2, 0.05, 0.3})
        CHECK(eval_F(0.2, h, 0.0, z) == Catch::Approx(-eval_G(0.2, h, 1.0, z)).margin(1e-15));
}

TEST_CASE("picard constants") {
    ModelSpec degenerate = kernel_spec(2.0, 0.4);
    degenerate.b_eta_sup = 0.0;
    const PicardConstants c0 = picard_constants(degenerate);
    CHECK(c0.R == 0.0);
    CHECK(c0.delta == Catch::Approx(0.4));

    ModelSpec m = kernel_spec(2.0, 1.0, 1.0, 2.0);
    m.b_eta_sup = 0.5;
    m.gamma_upper = 1.0;
    m.eta_lower = 1.0;
    const PicardConstants c = picard_constants(m);
    CHECK(c.R == Catch::Approx(7.0 / 6.0).epsilon(1e-14));
    CHECK(c.L == Catch::Approx(7.0 / 3.0).epsilon(1e-14));
    CHECK(c.delta == Catch::Approx(3.0 / 14.0).epsilon(1e-14));
    CHECK(c.delta > 0.0);
    CHECK(c.delta <= 1.0);
    CHECK(c.delta <= m.T);

    ModelSpec cube = kernel_spec(3.0);
    cube.b_eta_sup = 1.0;
    cube.gamma_upper = 0.0;
    cube.eta_lower = 2.0;
    CHECK(picard_constants(cube).L == Catch::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("tiny-argument branch stays consistent with the representation") {
    for (double q : {1.5, 2.67}) {
        ModelSpec k = kernel_spec(q);
        for (double w : {1e-7, -1e-7, 1e-5, -3e-6}) {
            const double h = w * 0.9; // eta = 1, tau = 0.9
            const double t = k.T - 0.9;
            const double direct = eval_G(t, h, 1.0, k);
            const double integral = eval_G_integral(t, h, 1.0, k);
            CHECK(std::abs(direct - integral) <= 1e-9 * std::max(std::abs(integral), 1e-30));
        }
    }
}

TEST_CASE("model validation") {
    ModelSpec m = kernel_spec(2.0);
    CHECK_NOTHROW(m.validate());
    m.q = 2.5; // breaks conjugacy
    CHECK_THROWS_AS(m.validate(), config_error);
}
