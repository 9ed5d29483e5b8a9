#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "singliq/grids.hpp"
#include "singliq/model.hpp"
#include "singliq/paths.hpp"

using namespace singliq;

namespace {

ModelSpec sde_spec(CoefficientFn b, CoefficientFn sigma, double x0 = 0.0) {
    ModelSpec m;
    m.p = m.q = 2.0;
    m.T = 1.0;
    m.eta = [](double, double) { return 1.0; };
    m.ito_drift_eta = [](double, double) { return 0.0; };
    m.eta_lower = m.eta_upper = 1.0;
    m.drift_b = std::move(b);
    m.vol_sigma = std::move(sigma);
    m.x0 = x0;
    return m;
}

} // namespace

TEST_CASE("frozen dynamics") {
    ModelSpec m = sde_spec(nullptr, nullptr, 0.7);
    const PathEnsemble ens = simulate(m, 16, uniform_grid(0.0, 1.0, 33), 42);
    for (std::size_t p = 0; p < ens.n_paths; ++p)
        for (std::size_t mm = 0; mm < ens.steps(); ++mm) {
            CHECK(ens.state(p, mm) == 0.7);
            CHECK(ens.flow(p, mm) == 1.0);
        }
}

TEST_CASE("additive noise matches the Gaussian law") {
    ModelSpec m = sde_spec(nullptr, [](double, double) { return 1.0; });
    const std::size_t n = 100000;
    const PathEnsemble ens = simulate(m, n, uniform_grid(0.0, 1.0, 201), 7);
    double s1 = 0.0, s2 = 0.0;
    const std::size_t last = ens.steps() - 1;
    for (std::size_t p = 0; p < n; ++p) {
        const double v = ens.state(p, last);
        s1 += v;
        s2 += v * v;
    }
    const double mean = s1 / n;
    const double var = s2 / n - mean * mean;
    const double se_var = var * std::sqrt(2.0 / (n - 1.0));
    CHECK(std::abs(var - 1.0) <= 3.0 * se_var);
    CHECK(std::abs(mean) <= 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("multiplicative dynamics ties the flow to the state") {
    ModelSpec m = sde_spec(nullptr, [](double, double x) { return x; }, 1.0);
    const PathEnsemble ens = simulate(m, 64, uniform_grid(0.0, 1.0, 501), 11);
    double worst = 0.0;
    for (std::size_t p = 0; p < ens.n_paths; ++p)
        for (std::size_t mm = 0; mm < ens.steps(); ++mm)
            worst = std::max(worst, std::abs(ens.state(p, mm) - ens.flow(p, mm)));
    CHECK(worst <= 1e-10);
}

TEST_CASE("state response to a Brownian kick") {
    ModelSpec m = sde_spec([](double, double x) { return 0.3 * (0.5 - x); },
                           [](double, double x) { return 1.0 + 0.3 * std::tanh(x); });
    const PathEnsemble ens = simulate(m, 32, uniform_grid(0.0, 1.0, 101), 23);
    const double theta = ens.time[40];
    const auto d = malliavin_X(ens, theta, m);
    const std::size_t M = ens.steps();
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        for (std::size_t mm = 0; mm < 40; ++mm) CHECK(d[p * M + mm] == 0.0);
        CHECK(d[p * M + 40] ==
              Catch::Approx(m.sigma_at(theta, ens.state(p, 40))).epsilon(1e-14));
    }
    CHECK_THROWS_AS(malliavin_X(ens, 0.40000001, m), std::domain_error);

    SECTION("constant loading propagates unchanged under additive noise") {
        ModelSpec a = sde_spec(nullptr, [](double, double) { return 0.8; });
        const PathEnsemble e2 = simulate(a, 8, uniform_grid(0.0, 1.0, 51), 5);
        const auto d2 = malliavin_X(e2, e2.time[10], a);
        for (std::size_t p = 0; p < e2.n_paths; ++p)
            for (std::size_t mm = 10; mm < e2.steps(); ++mm)
                CHECK(d2[p * e2.steps() + mm] == Catch::Approx(0.8).epsilon(1e-14));
    }

    SECTION("flow-ratio route equals the direct linear recursion") {
        CHECK(flow_identity_max_error(m, ens, ens.time[25]) <= 1e-9);
    }
}

TEST_CASE("bump consistency under common random numbers") {
    auto make = [](double x0) {
        return sde_spec([](double, double x) { return 0.5 * (1.0 - x); },
                        [](double, double x) { return 1.0 + 0.4 * std::tanh(x); }, x0);
    };
    const ModelSpec base = make(0.2);
    const PathEnsemble ens = simulate(base, 64, uniform_grid(0.0, 1.0, 201), 99);
    std::vector<double> errs;
    for (double eps : {1e-2, 1e-3, 1e-4}) {
        const PathEnsemble bumped = simulate(make(0.2 + eps), 64, uniform_grid(0.0, 1.0, 201), 99);
        double err = 0.0;
        for (std::size_t p = 0; p < ens.n_paths; ++p)
            for (std::size_t mm = 0; mm < ens.steps(); ++mm) {
                const double fd =
                    (bumped.state(p, mm) - ens.state(p, mm)) / eps;
                err = std::max(err, std::abs(fd - ens.flow(p, mm)));
            }
        errs.push_back(err);
    }
    // log-log slope of the bump error in eps
    const double slope1 = std::log(errs[0] / errs[1]) / std::log(10.0);
    const double slope2 = std::log(errs[1] / errs[2]) / std::log(10.0);
    CHECK(slope1 >= 0.9);
    CHECK(slope2 >= 0.9);
}

TEST_CASE("kick-response moments stay stable under path doubling") {
    ModelSpec m = sde_spec([](double, double x) { return 0.3 * (0.5 - x); },
                           [](double, double x) { return 1.0 + 0.3 * std::tanh(x); });
    auto sup_moment = [&m](std::size_t n_paths) {
        const PathEnsemble ens = simulate(m, n_paths, uniform_grid(0.0, 1.0, 101), 314);
        double worst_theta = 0.0;
        for (std::size_t k = 0; k < ens.steps(); k += 20) {
            const auto d = malliavin_X(ens, ens.time[k], m);
            double acc = 0.0;
            for (std::size_t p = 0; p < ens.n_paths; ++p) {
                double sup = 0.0;
                for (std::size_t mm = 0; mm < ens.steps(); ++mm)
                    sup = std::max(sup, std::abs(d[p * ens.steps() + mm]));
                acc += sup * sup;
            }
            worst_theta = std::max(worst_theta, acc / static_cast<double>(ens.n_paths));
        }
        return worst_theta;
    };
    const double m1 = sup_moment(2000), m2 = sup_moment(4000);
    CHECK(std::isfinite(m1));
    const double ratio = m2 / m1;
    CHECK(ratio >= 0.8);
    CHECK(ratio <= 1.25);
}

TEST_CASE("input validation and persistence") {
    ModelSpec m = sde_spec(nullptr, [](double, double) { return 1.0; });
    std::vector<double> bad{0.0, 0.5, 0.5, 1.0};
    CHECK_THROWS_AS(simulate(m, 4, bad, 1), config_error);

    const PathEnsemble ens = simulate(m, 6, uniform_grid(0.0, 1.0, 17), 2024);
    const std::string path = "/tmp/singliq_ens_test.bin";
    save_ensemble(ens, path);
    const PathEnsemble back = load_ensemble(path);
    REQUIRE(back.n_paths == ens.n_paths);
    REQUIRE(back.time == ens.time);
    CHECK(back.seed == ens.seed);
    CHECK(back.x == ens.x);
    CHECK(back.nabla == ens.nabla);
    CHECK(back.dw == ens.dw);
    std::remove(path.c_str());

    SECTION("same seed, same paths") {
        const PathEnsemble again = simulate(m, 6, uniform_grid(0.0, 1.0, 17), 2024);
        CHECK(again.x == ens.x);
    }
    SECTION("different seed, different paths") {
        const PathEnsemble other = simulate(m, 6, uniform_grid(0.0, 1.0, 17), 2025);
        CHECK(other.x != ens.x);
    }
}
