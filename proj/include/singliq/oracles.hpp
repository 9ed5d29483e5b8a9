#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "singliq/errors.hpp"
#include "singliq/grids.hpp"
#include "singliq/model.hpp"
#include "singliq/pde.hpp"

namespace singliq {

/// Deterministic relative-drift family: the impact coefficient has
/// uncorrelated multiplicative increments (drift g(t) times itself) and the
/// penalty vanishes. Everything downstream then has a closed form.
struct UmiSpec {
    std::function<double(double)> g;
    double q = 2.0;
    double p = 2.0;
    double T = 1.0;

    static UmiSpec from_model(const ModelSpec& spec, std::function<double(double)> g_fn) {
        if (spec.gamma_upper != 0.0)
            throw config_error("UmiSpec: the closed-form family requires gamma == 0");
        return UmiSpec{std::move(g_fn), spec.q, spec.p, spec.T};
    }
};

namespace detail {

/// Adaptive Gauss-Kronrod with an *absolute* tolerance budget split across
/// bisections. (The library routine's tolerance is relative to the L1 mass,
/// which is useless for the near-horizon integrals whose value tends to 0.)
template <typename F>
inline double gk_adaptive(const F& f, double a, double b, double tol = 1e-12, int depth = 12) {
    if (!(b > a)) return 0.0;
    double err = 0.0;
    const double I =
        boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, b, 0, 0.0, &err);
    if (err <= tol || depth == 0 || b - a <= 1e-15 * (std::abs(a) + std::abs(b)))
        return I;
    const double mid = 0.5 * (a + b);
    return gk_adaptive(f, a, mid, 0.5 * tol, depth - 1) +
           gk_adaptive(f, mid, b, 0.5 * tol, depth - 1);
}

inline double g_integral(const UmiSpec& u, double a, double b, double tol = 1e-12) {
    if (a == b) return 0.0;
    if (b < a) return -g_integral(u, b, a, tol);
    return gk_adaptive([&u](double s) { return u.g(s); }, a, b, tol);
}

/// Centered inner average avg1(t) = (1/(T-t)) int_t^T [e^{-(q-1) int_t^s g} - 1] ds.
/// Integrating the centered integrand keeps relative accuracy when the value
/// is small; very close to the horizon a second-order expansion takes over.
inline double umi_avg1(double t, const UmiSpec& u, double tol = 1e-12) {
    const double tau = u.T - t;
    if (tau <= 1e-8 * u.T) {
        const double g0 = u.g(t);
        const double h = 1e-6 * std::max(1.0, u.T);
        const double gp = (u.g(t + h) - u.g(t - h)) / (2.0 * h);
        const double qm1 = u.q - 1.0;
        const double c2 = (qm1 * qm1 * g0 * g0 - qm1 * gp) / 2.0;
        return -qm1 * g0 * tau / 2.0 + c2 * tau * tau / 3.0;
    }
    const double integral = gk_adaptive(
        [&](double s) { return std::expm1(-(u.q - 1.0) * g_integral(u, t, s, tol)); }, t, u.T,
        tol);
    return integral / tau;
}

} // namespace detail

/// Closed-form correction profile h(t); the correction process itself is
/// eta_t (T-t) h(t). Self-validating: the growth-factor identity the formula
/// rests on is re-derived through independent quadratures and asserted.
inline double umi_h(double t, const UmiSpec& u, double tol = 1e-12) {
    if (!(t < u.T)) throw std::domain_error("umi_h: requires t < T");
    const double avg1 = detail::umi_avg1(t, u, tol);
    const double h = std::expm1((1.0 - u.p) * std::log1p(avg1));

    const double tau = u.T - t;
    if (tau > 1e-6 * u.T) {
        // Identity check: (1 + h(t)) * G(t) == ((1/tau) int_t^T G(s)^{1-q} ds)^{1-p}
        // with G the growth factor G' = g G, G(0) = 1. Both sides are computed
        // from integrals of g anchored at 0, independent of umi_avg1's anchor at t.
        const double Gt = std::exp(detail::g_integral(u, 0.0, t, tol));
        const double lhs = (1.0 + h) * Gt;
        const double integral = detail::gk_adaptive(
            [&](double s) { return std::exp((1.0 - u.q) * detail::g_integral(u, 0.0, s, tol)); },
            t, u.T, tol);
        const double rhs = std::pow(integral / tau, 1.0 - u.p);
        if (std::abs(lhs - rhs) > 1e-9 * std::max(1.0, std::abs(lhs)))
            throw numerical_error("umi_h: growth-factor identity check failed");
    }
    return h;
}

/// Closed-form minimal solution Y_t = eta_t (int_t^T e^{-(q-1) int_t^s g} ds)^{1-p}.
inline double umi_Y(double t, double eta_t, const UmiSpec& u, double tol = 1e-12) {
    if (!(t < u.T)) throw std::domain_error("umi_Y: requires t < T");
    const double tau = u.T - t;
    const double avg1 = detail::umi_avg1(t, u, tol);
    return eta_t * std::pow(tau * (1.0 + avg1), 1.0 - u.p);
}

/// Test whether the model's relative drift b^eta / eta is a deterministic
/// function of time on the grid; returns the fitted g when it is.
struct UmiCheck {
    bool is_umi = false;
    double max_x_variation = 0.0;
    std::vector<double> t;
    std::vector<double> g;
};

inline UmiCheck umi_check(const ModelSpec& spec, const SolveGrid& grid) {
    UmiCheck out;
    out.t = grid.t;
    out.g.resize(grid.t.size());
    for (std::size_t it = 0; it < grid.t.size(); ++it) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
        for (double x : grid.x) {
            const double r = spec.b_eta_at(grid.t[it], x) / spec.eta_at(grid.t[it], x);
            lo = std::min(lo, r);
            hi = std::max(hi, r);
            sum += r;
        }
        out.g[it] = sum / static_cast<double>(grid.x.size());
        out.max_x_variation = std::max(out.max_x_variation, hi - lo);
    }
    out.is_umi = out.max_x_variation <= 1e-8;
    return out;
}

/// Deterministic-impact sensitivity envelope: when eta carries no noise the
/// correction's perturbation response is bounded by (T-t)^p times the
/// conditional penalty-gradient mass. Returned as a field for comparison
/// against the computed response; refuses models with stochastic eta.
inline TimeSpaceField deterministic_eta_sensitivity_bound(const ModelSpec& spec,
                                                          const SolveGrid& grid) {
    for (double t : {0.0, 0.5 * spec.T, spec.T})
        for (double x : {grid.x.front(), 0.5 * (grid.x.front() + grid.x.back()), grid.x.back()})
            if (std::abs(spec.deta_dx(t, x)) > 1e-12)
                throw std::domain_error(
                    "deterministic_eta_sensitivity_bound: eta is not deterministic");
    TimeSpaceField mass = solve_variational_linear(
        spec, nullptr,
        [&spec](double t, double x) { return std::abs(spec.dgamma_dx(t, x)); }, nullptr, grid,
        "gamma_gradient_mass");
    TimeSpaceField curve(grid.t, grid.x, "det_eta_sensitivity_bound");
    for (std::size_t it = 0; it < curve.nt(); ++it) {
        const double w = std::pow(spec.T - grid.t[it], spec.p);
        for (std::size_t ix = 0; ix < curve.nx(); ++ix)
            curve.at(it, ix) = w * mass.at(it, ix);
    }
    return curve;
}

} // namespace singliq
