#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "singliq/errors.hpp"
#include "singliq/grids.hpp"
#include "singliq/model.hpp"
#include "singliq/pde.hpp"

namespace singliq {

/// Per-iteration record of the fixed-point solve for the correction process.
struct PicardReport {
    std::size_t iterations = 0;
    std::vector<double> weighted_norms;   // ||H^k - H^{k-1}|| in the (T-t)^{-2} sup norm on the window
    std::vector<double> sup_norms;        // plain sup of the increment on [0, T - delta]
    std::vector<double> contraction_ratios;
    double delta_used = 0.0;
    double R_used = 0.0;
    double ball_violation_max = 0.0;      // max over iterates of (|H^k| - R (T-t)^2)+ on the window
    double guard_ratio_max = 0.0;         // max |H|/(eta (T-t)) on the window, final iterate
    double sup_H = 0.0;                   // uniform bound of the final iterate on [0, T]
    double residual_weighted = 0.0;       // ||Gamma(H) - H|| after convergence
    bool converged = false;
};

struct ExpansionSolution {
    TimeSpaceField h;
    PicardConstants constants;
    PicardReport report;
};

namespace detail {

inline double weighted_window_norm(const TimeSpaceField& a, const TimeSpaceField& b, double T,
                                   double delta) {
    double norm = 0.0;
    const auto& tg = a.time_grid();
    for (std::size_t it = 0; it < a.nt(); ++it) {
        const double tau = T - tg[it];
        if (tau <= 0.0 || tau > delta + 1e-12) continue; // terminal node excluded: weight is 0/0
        for (std::size_t ix = 0; ix < a.nx(); ++ix)
            norm = std::max(norm, std::abs(a.at(it, ix) - b.at(it, ix)) / (tau * tau));
    }
    return norm;
}

inline double plain_outside_norm(const TimeSpaceField& a, const TimeSpaceField& b, double T,
                                 double delta) {
    double norm = 0.0;
    const auto& tg = a.time_grid();
    for (std::size_t it = 0; it < a.nt(); ++it) {
        if (T - tg[it] <= delta) continue;
        for (std::size_t ix = 0; ix < a.nx(); ++ix)
            norm = std::max(norm, std::abs(a.at(it, ix) - b.at(it, ix)));
    }
    return norm;
}

inline double ball_violation(const TimeSpaceField& h, double T, double delta, double R) {
    double v = 0.0;
    const auto& tg = h.time_grid();
    for (std::size_t it = 0; it < h.nt(); ++it) {
        const double tau = T - tg[it];
        if (tau > delta + 1e-12) continue;
        for (std::size_t ix = 0; ix < h.nx(); ++ix)
            v = std::max(v, std::abs(h.at(it, ix)) - R * tau * tau);
    }
    return v;
}

} // namespace detail

/// One application of the integral operator behind the correction equation:
/// h_prev must sit inside the near-horizon ball; the returned field is the
/// conditional expectation of the generator evaluated along h_prev.
inline TimeSpaceField picard_step(const ModelSpec& spec, const TimeSpaceField& h_prev,
                                  const SolveGrid& grid) {
    const PicardConstants pc = picard_constants(spec);
    const double viol = detail::ball_violation(h_prev, spec.T, pc.delta, pc.R);
    if (viol > 1e-9) {
        if (spec.q < 2.0)
            throw singular_kernel_error("picard_step: iterate left the contraction ball by " +
                                        std::to_string(viol));
        kernel_guard_warnings().fetch_add(1, std::memory_order_relaxed);
    }
    ParabolicSolver::Problem pb;
    pb.drift = [&spec](double t, double x) { return spec.b_at(t, x); };
    pb.sigma = [&spec](double t, double x) { return spec.sigma_at(t, x); };
    pb.source = [&spec, &h_prev](double t, double x) {
        if (t >= spec.T) return 0.0; // iterates vanish at the horizon, and so does F there
        return eval_F_shifted(t, h_prev.interpolate(t, x), x, 0.0, spec);
    };
    pb.terminal = nullptr;
    return ParabolicSolver::solve(pb, grid, "picard_step");
}

inline ExpansionSolution solve_H(const ModelSpec& spec, const SolveGrid& grid,
                                 double tol = 1e-10, std::size_t max_iter = 200) {
    if (!(tol > 0.0)) throw config_error("solve_H: tolerance must be positive");
    ExpansionSolution sol;
    sol.constants = picard_constants(spec);
    PicardReport& rep = sol.report;
    rep.delta_used = sol.constants.delta;
    rep.R_used = sol.constants.R;

    TimeSpaceField h_prev(grid.t, grid.x, "h");
    for (std::size_t k = 1; k <= max_iter; ++k) {
        TimeSpaceField h_next = picard_step(spec, h_prev, grid);
        const double wn = detail::weighted_window_norm(h_next, h_prev, spec.T, rep.delta_used);
        const double sn = detail::plain_outside_norm(h_next, h_prev, spec.T, rep.delta_used);
        rep.ball_violation_max =
            std::max(rep.ball_violation_max,
                     detail::ball_violation(h_next, spec.T, rep.delta_used, rep.R_used));
        // ratios are meaningful only while increments sit clearly above the
        // convergence floor; below it they are roundoff quotients
        if (k >= 2 && !rep.weighted_norms.empty() && rep.weighted_norms.back() > 100.0 * tol)
            rep.contraction_ratios.push_back(wn / rep.weighted_norms.back());
        rep.weighted_norms.push_back(wn);
        rep.sup_norms.push_back(sn);
        rep.iterations = k;
        h_prev = std::move(h_next);
        if (wn < tol && sn < tol) {
            rep.converged = true;
            break;
        }
    }
    if (!rep.converged)
        throw numerical_error("solve_H: no convergence after " + std::to_string(rep.iterations) +
                              " iterations (last weighted increment " +
                              std::to_string(rep.weighted_norms.back()) + ")");

    // Fixed-point residual, one extra operator application.
    TimeSpaceField gamma_h = picard_step(spec, h_prev, grid);
    rep.residual_weighted =
        detail::weighted_window_norm(gamma_h, h_prev, spec.T, rep.delta_used);

    const auto& tg = h_prev.time_grid();
    for (std::size_t it = 0; it < h_prev.nt(); ++it) {
        const double tau = spec.T - tg[it];
        for (std::size_t ix = 0; ix < h_prev.nx(); ++ix) {
            rep.sup_H = std::max(rep.sup_H, std::abs(h_prev.at(it, ix)));
            if (tau > 1e-12 && tau <= rep.delta_used + 1e-12)
                rep.guard_ratio_max =
                    std::max(rep.guard_ratio_max,
                             std::abs(h_prev.at(it, ix)) /
                                 (spec.eta_at(tg[it], h_prev.space_grid()[ix]) * tau));
        }
    }
    sol.h = std::move(h_prev);
    sol.h.set_label("h");
    return sol;
}

/// Minimal-solution field from its two-term expansion, on t <= T - eps.
inline TimeSpaceField assemble_Y(const ModelSpec& spec, const TimeSpaceField& h_field,
                                 double eps) {
    if (!(eps > 0.0)) throw std::domain_error("assemble_Y: eps must be positive");
    std::vector<double> tsub;
    for (double t : h_field.time_grid())
        if (t <= spec.T - eps + 1e-15) tsub.push_back(t);
    if (tsub.empty()) throw std::domain_error("assemble_Y: no nodes below T - eps");
    TimeSpaceField y(tsub, h_field.space_grid(), "y_expansion");
    for (std::size_t it = 0; it < y.nt(); ++it) {
        const double t = tsub[it];
        const double tau = spec.T - t;
        for (std::size_t ix = 0; ix < y.nx(); ++ix) {
            const double x = y.space_grid()[ix];
            y.at(it, ix) = spec.eta_at(t, x) / std::pow(tau, spec.p - 1.0) +
                           h_field.at(it, ix) / std::pow(tau, spec.p);
        }
    }
    return y;
}

/// Certified constants of the shifted-process envelope: upper slope C2 from
/// the inverse of psi(x) = (1+x)^q - 1 - x, lower curvature C1 with window
/// delta and minimal level n0 found by the sufficient-condition search.
struct HnBounds {
    double c1 = 0.0;
    double c2 = 0.0;
    double n0 = 1.0;
    double delta = 0.0;
    double zeta_star = 0.0; // upper bound of the averaged kernel weight
    double K = 0.0;         // drift/penalty envelope in the lower-bound quadratic
    double K2 = 0.0;        // right-hand side fed to psi^{-1}
};

namespace detail {

inline double psi_inverse(double y, double q) {
    if (y <= 0.0) return 0.0;
    auto psi = [q](double x) { return std::pow(1.0 + x, q) - 1.0 - x; };
    double hi = y + 1.0;
    while (psi(hi) < y) hi *= 2.0;
    double lo = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (psi(mid) < y ? lo : hi) = mid;
        if (hi - lo < 1e-12 * std::max(1.0, hi)) break;
    }
    return 0.5 * (lo + hi);
}

} // namespace detail

inline HnBounds hn_bounds(const ModelSpec& spec) {
    const double q = spec.q, p = spec.p;
    const double eta_lo = spec.eta_lower, eta_hi = spec.eta_upper;
    HnBounds b;
    b.zeta_star = 0.5 * q * std::max(std::pow(2.0, 2.0 - q), 1.0);
    b.K = spec.b_eta_sup + std::pow(spec.T + std::pow(eta_hi, q), p - 1.0) * spec.gamma_upper;
    b.K2 = (q - 1.0) / eta_lo * (spec.T + std::pow(eta_hi, q - 1.0)) *
           (spec.b_eta_sup + std::pow(spec.T + std::pow(eta_hi, q - 1.0), p) * spec.gamma_upper);
    b.c2 = eta_hi * std::max(1.0, detail::psi_inverse(b.K2, q));

    const double delta_H = picard_constants(spec).delta;
    if (b.K == 0.0) {
        b.c1 = 0.0;
        b.n0 = 1.0;
        b.delta = delta_H;
        return b;
    }

    double dp = std::min(delta_H, eta_lo / (2.0 * b.K * b.zeta_star));
    for (int halving = 0; halving < 40; ++halving, dp *= 0.5) {
        for (double n0 = 1.0; n0 <= std::ldexp(1.0, 40); n0 *= 2.0) {
            const double nu0 = std::pow(eta_hi / n0, q - 1.0);
            const double s = dp + nu0;
            const double arg = 1.0 - eta_hi * s / eta_lo;
            if (arg < 0.0) continue;
            if (s > eta_lo / (b.K * b.zeta_star)) continue;
            const double c1 = b.K / (1.0 + std::sqrt(arg));
            if (c1 * s > 0.5 * eta_lo) continue;                       // keeps the kernel argument above 1/2
            const double arg_root = 1.0 - std::min(1.0, b.zeta_star * b.K * s / eta_lo);
            const double c1_min = b.K / (1.0 + std::sqrt(arg_root));   // sup of the lower quadratic root
            const double c1_max = eta_lo / (b.zeta_star * s);          // inf of the upper quadratic root
            if (c1 + 1e-15 < c1_min || c1 > c1_max) continue;
            b.c1 = c1;
            b.n0 = n0;
            b.delta = dp;
            return b;
        }
    }
    throw numerical_error("hn_bounds: feasibility search exhausted");
}

/// Level-n shifted correction: generator is the time-shifted F, terminal value
/// the scaled distance of eta(T, .) from its upper bound.
struct ShiftedSolution {
    double n = 0.0;
    double nu = 0.0;
    TimeSpaceField hn;
};

inline ShiftedSolution solve_Hn(const ModelSpec& spec, double n, const SolveGrid& grid,
                                const HnBounds* bounds = nullptr) {
    if (bounds && n < bounds->n0)
        throw std::domain_error("solve_Hn: level below the certified n0");
    ShiftedSolution sol;
    sol.n = n;
    sol.nu = std::pow(spec.eta_upper / n, spec.q - 1.0);
    const double nu = sol.nu;
    const double terminal_scale = std::pow(spec.eta_upper, spec.q) * std::pow(n, 1.0 - spec.q);
    sol.hn = solve_semilinear(
        spec,
        [&spec, terminal_scale](double x) {
            return terminal_scale * (1.0 - spec.eta(spec.T, x) / spec.eta_upper);
        },
        [&spec, nu](double t, double x, double w) { return eval_F_shifted(t, w, x, nu, spec); },
        grid, "hn" + std::to_string(n),
        [&spec, nu](double t, double x, double w) {
            return -dG_dh_kernel(spec.T - t + nu, w, spec.eta_at(t, x), spec);
        });
    sol.hn.check_finite("solve_Hn");
    return sol;
}

/// Assemble the level-n field from (eta, shifted correction), the identity
/// inverse to the definition of the shifted process.
inline TimeSpaceField assemble_un_from_Hn(const ModelSpec& spec, const ShiftedSolution& s) {
    TimeSpaceField u(s.hn.time_grid(), s.hn.space_grid(), "u_from_hn" + std::to_string(s.n));
    for (std::size_t it = 0; it < u.nt(); ++it) {
        const double tau = spec.T - u.time_grid()[it] + s.nu;
        for (std::size_t ix = 0; ix < u.nx(); ++ix) {
            const double x = u.space_grid()[ix];
            u.at(it, ix) = spec.eta_at(u.time_grid()[it], x) / std::pow(tau, spec.p - 1.0) +
                           s.hn.at(it, ix) / std::pow(tau, spec.p);
        }
    }
    return u;
}

/// Sandwich violations of the shifted process against the certified envelope,
/// max over window nodes; both entries are nonpositive when the bounds hold.
struct SandwichCheck {
    double lower_violation = 0.0;
    double upper_violation = 0.0;
};

inline SandwichCheck check_hn_sandwich(const ModelSpec& spec, const ShiftedSolution& s,
                                       const HnBounds& b) {
    SandwichCheck chk;
    const auto& tg = s.hn.time_grid();
    for (std::size_t it = 0; it < s.hn.nt(); ++it) {
        const double tau = spec.T - tg[it];
        if (tau > b.delta + 1e-12) continue;
        const double env = tau + s.nu;
        for (std::size_t ix = 0; ix < s.hn.nx(); ++ix) {
            const double v = s.hn.at(it, ix);
            chk.lower_violation = std::max(chk.lower_violation, -b.c1 * env * env - v);
            chk.upper_violation = std::max(chk.upper_violation, v - b.c2 * env);
        }
    }
    return chk;
}

/// Weighted distance between the correction and its level-n shift,
/// max over nodes below the horizon.
inline double weighted_hn_distance(const ModelSpec& spec, const TimeSpaceField& h,
                                   const ShiftedSolution& s) {
    double worst = 0.0;
    const auto& tg = h.time_grid();
    for (std::size_t it = 0; it < h.nt(); ++it) {
        const double tau = spec.T - tg[it];
        if (tau <= 1e-14) continue;
        for (std::size_t ix = 0; ix < h.nx(); ++ix)
            worst = std::max(worst, std::abs(h.at(it, ix) / tau -
                                             s.hn.at(it, ix) / (tau + s.nu)));
    }
    return worst;
}

} // namespace singliq
