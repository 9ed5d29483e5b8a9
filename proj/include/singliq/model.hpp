#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "singliq/errors.hpp"

namespace singliq {

using CoefficientFn = std::function<double(double, double)>; // (t, x) -> value

inline double sgn(double y) { return (y > 0.0) - (y < 0.0); }

/// sgn(y)·|y|^e; the odd power that keeps Newton smooth through 0.
inline double pow_signed(double y, double e) {
    return sgn(y) * std::pow(std::abs(y), e);
}

/// q = p/(p-1), so that 1/p + 1/q = 1.
inline double holder_conjugate(double p) {
    if (!(p > 1.0))
        throw std::domain_error("holder_conjugate: requires p > 1, got " + std::to_string(p));
    return p / (p - 1.0);
}

/// Ball radius, Lipschitz bound and window length of the near-horizon
/// fixed-point construction.
struct PicardConstants {
    double R = 0.0;
    double L = 0.0;
    double delta = 0.0;
};

/// Full problem instance. Coefficients are plain callables of (t, x); they must
/// be evaluable in a small neighborhood of [0,T] x [x_lo, x_hi] (finite
/// differences probe slightly outside).
struct ModelSpec {
    double p = 2.0;
    double q = 2.0;
    double T = 1.0;

    CoefficientFn eta;       // impact coefficient, bounded in [eta_lower, eta_upper]
    CoefficientFn gamma_fn;  // penalty coefficient, in [0, gamma_upper]
    CoefficientFn drift_b;   // forward SDE drift b(t,x)
    CoefficientFn vol_sigma; // forward SDE volatility sigma(t,x)
    CoefficientFn ito_drift_eta; // optional closed form of the Ito drift of eta(t,X_t)

    double eta_lower = 1.0;
    double eta_upper = 1.0;
    double gamma_upper = 0.0;
    double b_eta_sup = 0.0;

    double x0 = 0.0; // forward initial state

    double eta_at(double t, double x) const { return eta(t, x); }
    double gamma_at(double t, double x) const { return gamma_fn ? gamma_fn(t, x) : 0.0; }
    double b_at(double t, double x) const { return drift_b ? drift_b(t, x) : 0.0; }
    double sigma_at(double t, double x) const { return vol_sigma ? vol_sigma(t, x) : 0.0; }

    /// Ito drift of t -> eta(t, X_t): d_t eta + b d_x eta + (1/2) sigma^2 d_xx eta.
    /// Uses the closed form when supplied, a finite-difference generator otherwise.
    double b_eta_at(double t, double x) const {
        if (ito_drift_eta) return ito_drift_eta(t, x);
        const double ht = fd_step_t(), hx = fd_step_x(x);
        const double dt_eta = (eta(t + ht, x) - eta(t - ht, x)) / (2.0 * ht);
        const double dx_eta = (eta(t, x + hx) - eta(t, x - hx)) / (2.0 * hx);
        const double dxx_eta = (eta(t, x + hx) - 2.0 * eta(t, x) + eta(t, x - hx)) / (hx * hx);
        const double s = sigma_at(t, x);
        return dt_eta + b_at(t, x) * dx_eta + 0.5 * s * s * dxx_eta;
    }

    double deta_dx(double t, double x) const { return fd_dx(eta, t, x); }
    double dgamma_dx(double t, double x) const { return gamma_fn ? fd_dx(gamma_fn, t, x) : 0.0; }
    double db_dx(double t, double x) const { return drift_b ? fd_dx(drift_b, t, x) : 0.0; }
    double dsigma_dx(double t, double x) const { return vol_sigma ? fd_dx(vol_sigma, t, x) : 0.0; }
    double db_eta_dx(double t, double x) const {
        const double hx = fd_step_x(x);
        return (b_eta_at(t, x + hx) - b_eta_at(t, x - hx)) / (2.0 * hx);
    }

    void validate() const {
        if (!(p > 1.0) || !(q > 1.0))
            throw config_error("ModelSpec: p and q must exceed 1");
        if (std::abs(1.0 / p + 1.0 / q - 1.0) > 1e-12)
            throw config_error("ModelSpec: p and q are not conjugate exponents");
        if (!(T > 0.0)) throw config_error("ModelSpec: horizon T must be positive");
        if (!(eta_lower > 0.0)) throw config_error("ModelSpec: eta_lower must be positive");
        if (eta_upper < eta_lower) throw config_error("ModelSpec: eta_upper < eta_lower");
        if (gamma_upper < 0.0) throw config_error("ModelSpec: gamma_upper must be nonnegative");
        if (!eta) throw config_error("ModelSpec: eta coefficient missing");
    }

    /// Check the coefficient bounds on a (t,x) lattice covering the active domain.
    void check_bounds_on(double x_lo, double x_hi, int nt = 101, int nx = 101) const {
        const double tol = 1e-12 * std::max(1.0, eta_upper);
        for (int i = 0; i < nt; ++i) {
            const double t = T * i / (nt - 1);
            for (int j = 0; j < nx; ++j) {
                const double x = x_lo + (x_hi - x_lo) * j / (nx - 1);
                const double e = eta(t, x);
                if (!(e >= eta_lower - tol) || !(e <= eta_upper + tol))
                    throw config_error("ModelSpec: eta(" + std::to_string(t) + "," +
                                       std::to_string(x) + ") = " + std::to_string(e) +
                                       " violates [eta_lower, eta_upper]");
                const double g = gamma_at(t, x);
                if (!(g >= -tol) || !(g <= gamma_upper + tol))
                    throw config_error("ModelSpec: gamma out of [0, gamma_upper] at t=" +
                                       std::to_string(t) + " x=" + std::to_string(x));
            }
        }
    }

    /// sup of |b^eta| over the lattice; used when no explicit bound is supplied.
    double estimate_b_eta_sup(double x_lo, double x_hi, int nt = 101, int nx = 101) const {
        double m = 0.0;
        for (int i = 0; i < nt; ++i) {
            const double t = T * i / (nt - 1);
            for (int j = 0; j < nx; ++j) {
                const double x = x_lo + (x_hi - x_lo) * j / (nx - 1);
                m = std::max(m, std::abs(b_eta_at(t, x)));
            }
        }
        return m;
    }

private:
    // near the cube-root-of-eps sweet spot for centered differences
    double fd_step_t() const { return 1e-5 * std::max(1.0, T); }
    static double fd_step_x(double x) { return 1e-5 * std::max(1.0, std::abs(x)); }
    static double fd_dx(const CoefficientFn& f, double t, double x) {
        const double h = fd_step_x(x);
        return (f(t, x + h) - f(t, x - h)) / (2.0 * h);
    }
};

/// Count of kernel evaluations past the |w| <= 1/2 region with q >= 2, where
/// the formulas stay well defined and only a warning is recorded.
inline std::atomic<long>& kernel_guard_warnings() {
    static std::atomic<long> count{0};
    return count;
}

namespace detail {

// Stable evaluation of the three brackets behind G and its partials, as
// functions of w = h / (eta * tau):
//   B0 = (1+w)|1+w|^{q-1} - 1 - q w
//   B1 = |1+w|^{q-1} - 1
//   B2 = -(1+w)|1+w|^{q-1} + 1 + p (|1+w|^{q-1} - 1)
// Near w = 0 all three cancel to O(w^2) (O(w) for B1), so a short Taylor
// branch avoids the loss of significance of the direct forms.
inline double bracket_B0(double w, double q) {
    if (std::abs(w) < 1e-5) {
        const double c2 = q * (q - 1.0) / 2.0;
        const double c3 = c2 * (q - 2.0) / 3.0;
        const double c4 = c3 * (q - 3.0) / 4.0;
        return w * w * (c2 + w * (c3 + w * c4));
    }
    if (1.0 + w > 0.0) return std::expm1(q * std::log1p(w)) - q * w;
    const double a = std::pow(std::abs(1.0 + w), q - 1.0);
    return (1.0 + w) * a - 1.0 - q * w;
}

inline double bracket_B1(double w, double q) {
    if (std::abs(w) < 1e-5) {
        const double c1 = q - 1.0;
        const double c2 = c1 * (q - 2.0) / 2.0;
        const double c3 = c2 * (q - 3.0) / 3.0;
        return w * (c1 + w * (c2 + w * c3));
    }
    if (1.0 + w > 0.0) return std::expm1((q - 1.0) * std::log1p(w));
    return std::pow(std::abs(1.0 + w), q - 1.0) - 1.0;
}

inline double bracket_B2(double w, double q, double p) {
    if (std::abs(w) < 1e-5) {
        const double c2 = q / 2.0;
        const double c3 = q * (q - 2.0) / 3.0;
        const double c4 = q * (q - 2.0) * (q - 3.0) / 8.0;
        return -w * w * (c2 + w * (c3 + w * c4));
    }
    if (1.0 + w > 0.0)
        return -std::expm1(q * std::log1p(w)) + p * std::expm1((q - 1.0) * std::log1p(w));
    const double a = std::pow(std::abs(1.0 + w), q - 1.0);
    return -(1.0 + w) * a + 1.0 + p * (a - 1.0);
}

inline void enforce_guard(double w, double q, const char* where) {
    if (std::abs(w) <= 0.5 + 1e-9) return;
    if (q < 2.0)
        throw singular_kernel_error(std::string(where) + ": |h|/(eta*(T-t)) = " +
                                    std::to_string(std::abs(w)) +
                                    " exceeds 1/2 with q < 2");
    kernel_guard_warnings().fetch_add(1, std::memory_order_relaxed);
}

} // namespace detail

/// G expressed in time-to-horizon form; tau may carry the level shift of the
/// truncated expansion, which is why it is a parameter rather than T - t.
inline double G_kernel(double tau, double h, double eta_val, const ModelSpec& spec) {
    if (!(tau > 0.0)) throw std::domain_error("G_kernel: requires T - t > 0");
    const double w = h / (eta_val * tau);
    detail::enforce_guard(w, spec.q, "eval_G");
    return (spec.p - 1.0) * eta_val * detail::bracket_B0(w, spec.q);
}

inline double dG_dh_kernel(double tau, double h, double eta_val, const ModelSpec& spec) {
    if (!(tau > 0.0)) throw std::domain_error("dG_dh_kernel: requires T - t > 0");
    const double w = h / (eta_val * tau);
    detail::enforce_guard(w, spec.q, "eval_dG_dh");
    return spec.p / tau * detail::bracket_B1(w, spec.q);
}

inline double dG_deta_kernel(double tau, double h, double eta_val, const ModelSpec& spec) {
    if (!(tau > 0.0)) throw std::domain_error("dG_deta_kernel: requires T - t > 0");
    const double w = h / (eta_val * tau);
    detail::enforce_guard(w, spec.q, "eval_dG_deta");
    return detail::bracket_B2(w, spec.q, spec.p);
}

inline double eval_G(double t, double h, double eta_val, const ModelSpec& spec) {
    return G_kernel(spec.T - t, h, eta_val, spec);
}
inline double eval_dG_dh(double t, double h, double eta_val, const ModelSpec& spec) {
    return dG_dh_kernel(spec.T - t, h, eta_val, spec);
}
inline double eval_dG_deta(double t, double h, double eta_val, const ModelSpec& spec) {
    return dG_deta_kernel(spec.T - t, h, eta_val, spec);
}

// Second algebraic route: the representations of G and its partials as
// weighted averages of |1 + a w|^{q-2} over a in [0,1]. Used as the
// cross-check of the closed forms; requires 1 + a w != 0 on the segment.
namespace detail {
template <typename F>
inline double gk_unit_interval(F&& f) {
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        std::forward<F>(f), 0.0, 1.0, 12, 1e-13);
}
} // namespace detail

inline double eval_G_integral(double t, double h, double eta_val, const ModelSpec& spec) {
    const double tau = spec.T - t;
    if (!(tau > 0.0)) throw std::domain_error("eval_G_integral: requires T - t > 0");
    const double w = h / (eta_val * tau);
    detail::enforce_guard(w, spec.q, "eval_G_integral");
    const double q = spec.q;
    const double integral = detail::gk_unit_interval([&](double a) {
        const double y = 1.0 + a * w;
        return std::pow(std::abs(y), q - 2.0) * sgn(y) * (1.0 - a);
    });
    return q * h * h / (eta_val * tau * tau) * integral;
}

inline double eval_dG_dh_integral(double t, double h, double eta_val, const ModelSpec& spec) {
    const double tau = spec.T - t;
    if (!(tau > 0.0)) throw std::domain_error("eval_dG_dh_integral: requires T - t > 0");
    const double w = h / (eta_val * tau);
    detail::enforce_guard(w, spec.q, "eval_dG_dh_integral");
    const double q = spec.q;
    const double integral = detail::gk_unit_interval([&](double a) {
        const double y = 1.0 + a * w;
        return std::pow(std::abs(y), q - 2.0) * sgn(y);
    });
    return q * h / (eta_val * tau * tau) * integral;
}

inline double eval_dG_deta_integral(double t, double h, double eta_val, const ModelSpec& spec) {
    const double tau = spec.T - t;
    if (!(tau > 0.0)) throw std::domain_error("eval_dG_deta_integral: requires T - t > 0");
    const double w = h / (eta_val * tau);
    detail::enforce_guard(w, spec.q, "eval_dG_deta_integral");
    const double q = spec.q;
    const double integral = detail::gk_unit_interval([&](double a) {
        const double y = 1.0 + a * w;
        return std::pow(std::abs(y), q - 2.0) * sgn(y) * a;
    });
    return -q * h * h / (eta_val * eta_val * tau * tau) * integral;
}

/// Generator of the near-horizon correction equation, in shifted form:
/// F_nu(t, h) = (T-t+nu) b^eta + (T-t+nu)^p gamma - G(tau = T-t+nu, h, eta).
/// nu = 0 recovers the original generator.
inline double eval_F_shifted(double t, double h, double x, double nu, const ModelSpec& spec) {
    const double tau = spec.T - t + nu;
    const double lin = tau * spec.b_eta_at(t, x) + std::pow(tau, spec.p) * spec.gamma_at(t, x);
    return lin - G_kernel(tau, h, spec.eta_at(t, x), spec);
}

inline double eval_F(double t, double h, double x, const ModelSpec& spec) {
    if (!(t < spec.T)) throw std::domain_error("eval_F: requires t < T");
    return eval_F_shifted(t, h, x, 0.0, spec);
}

/// Constants of the contraction window. The degenerate R = 0 case (no drift,
/// no penalty) makes the correction vanish identically, so the 1/(2L) and
/// eta_lower/(2R) caps are dropped there.
inline PicardConstants picard_constants(const ModelSpec& spec) {
    PicardConstants c;
    c.R = spec.b_eta_sup + 2.0 * spec.gamma_upper / (spec.p + 1.0);
    if (c.R == 0.0) {
        c.L = 0.0;
        c.delta = std::min(1.0, spec.T);
        return c;
    }
    c.L = spec.q * c.R * std::pow(2.0, std::abs(spec.q - 2.0)) / spec.eta_lower;
    c.delta = std::min(std::min(1.0, spec.T),
                       std::min(1.0 / (2.0 * c.L), spec.eta_lower / (2.0 * c.R)));
    return c;
}

} // namespace singliq
