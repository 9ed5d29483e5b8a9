#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "singliq/errors.hpp"
#include "singliq/expansion.hpp"
#include "singliq/grids.hpp"
#include "singliq/model.hpp"
#include "singliq/paths.hpp"
#include "singliq/pde.hpp"
#include "singliq/rng.hpp"

namespace singliq {

enum class DKind { D_eta, D_H, D_Hn, D_Y, D_Yn, D_X };

/// Perturbation response along an ensemble: values[p][m] is the derivative of
/// the labeled process at time m with respect to a Brownian kick at theta.
/// Identically zero strictly before theta.
struct MalliavinField {
    double theta = 0.0;
    std::size_t theta_idx = 0;
    DKind kind = DKind::D_X;
    std::size_t n_paths = 0, n_times = 0;
    std::size_t valid_until_idx = 0; // inclusive; later nodes are not populated
    std::vector<double> values;

    double at(std::size_t p, std::size_t m) const { return values[p * n_times + m]; }
    double& at(std::size_t p, std::size_t m) { return values[p * n_times + m]; }
};

namespace detail {

/// Kernel partials evaluated along a stored correction field, with the level
/// shift nu and the terminal convention (the correction vanishes at T, so both
/// partials are taken as their zero limits when the unshifted clock hits T).
struct FieldKernel {
    const ModelSpec* spec;
    const TimeSpaceField* h;
    double nu = 0.0;

    double dG_dh(double t, double x) const {
        const double tau = spec->T - t + nu;
        if (tau <= 1e-300) return 0.0;
        if (nu == 0.0 && spec->T - t <= 1e-300) return 0.0;
        return dG_dh_kernel(tau, h->interpolate(t, x), spec->eta_at(t, x), *spec);
    }
    double dG_deta(double t, double x) const {
        const double tau = spec->T - t + nu;
        if (tau <= 1e-300) return 0.0;
        if (nu == 0.0 && spec->T - t <= 1e-300) return 0.0;
        return dG_deta_kernel(tau, h->interpolate(t, x), spec->eta_at(t, x), *spec);
    }
};

} // namespace detail

/// Exponential weight of the linearized correction equation along a fixed
/// state line: Gamma(t, s) = exp(-int_t^s dG/dh(u, H_u, eta_u) du), trapezoidal
/// in u. s_grid must start at t; multiplicativity over subintervals is exact
/// by construction of the cumulative sum.
struct GammaWeight {
    double base_time = 0.0;
    std::vector<double> s;
    std::vector<double> value;
};

inline GammaWeight gamma_weight(const ModelSpec& spec, const TimeSpaceField& h_field, double t,
                                const std::vector<double>& s_grid, double x_line) {
    if (s_grid.empty() || std::abs(s_grid.front() - t) > 1e-12 * std::max(1.0, spec.T))
        throw std::domain_error("gamma_weight: s_grid must start at the base time");
    detail::FieldKernel ker{&spec, &h_field, 0.0};
    GammaWeight gw;
    gw.base_time = t;
    gw.s = s_grid;
    gw.value.resize(s_grid.size());
    double acc = 0.0;
    double prev_s = t, prev_f = ker.dG_dh(t, x_line);
    gw.value[0] = 1.0;
    for (std::size_t i = 1; i < s_grid.size(); ++i) {
        if (!(s_grid[i] > prev_s)) throw std::domain_error("gamma_weight: s_grid not increasing");
        const double f = ker.dG_dh(s_grid[i], x_line);
        acc += 0.5 * (prev_f + f) * (s_grid[i] - prev_s);
        gw.value[i] = std::exp(-acc);
        prev_s = s_grid[i];
        prev_f = f;
    }
    return gw;
}

/// Spatial slope of the correction field by the variational equation: the
/// derivative field w = d_x h solves the linearized problem with the flow
/// operator, reaction -dG/dh and the coefficient-slope source.
inline TimeSpaceField grad_h_variational(const ModelSpec& spec, const TimeSpaceField& h_field,
                                         const SolveGrid& grid, double nu = 0.0) {
    detail::FieldKernel ker{&spec, &h_field, nu};
    return solve_variational_linear(
        spec,
        [&spec, nu](double x) {
            // d_x of the terminal value; the shifted correction ends at
            // nu^{p} Y_T - nu eta_T whose slope is -nu d_x eta(T, .).
            return nu == 0.0 ? 0.0 : -nu * spec.deta_dx(spec.T, x);
        },
        [&spec, ker, nu](double t, double x) {
            const double tau = spec.T - t + nu;
            return tau * spec.db_eta_dx(t, x) + std::pow(tau, spec.p) * spec.dgamma_dx(t, x) -
                   ker.dG_deta(t, x) * spec.deta_dx(t, x);
        },
        [ker](double t, double x) { return -ker.dG_dh(t, x); }, grid,
        nu == 0.0 ? "grad_h" : "grad_hn");
}

/// The exponential-representation route to the spatial slope of a truncated
/// solution field: one linear solve with the flow operator, reaction
/// -p |u|^{q-1}/eta^{q-1} and source |u|^{q-1} u / eta^q d_x eta + d_x gamma.
inline TimeSpaceField grad_un_exponential(const ModelSpec& spec, const TimeSpaceField& un_field,
                                          const SolveGrid& grid) {
    return solve_variational_linear(
        spec, nullptr,
        [&spec, &un_field](double t, double x) {
            const double u = un_field.interpolate(t, x);
            const double e = spec.eta_at(t, x);
            return pow_signed(u, spec.q - 1.0) * u / std::pow(e, spec.q) * spec.deta_dx(t, x) +
                   spec.dgamma_dx(t, x);
        },
        [&spec, &un_field](double t, double x) {
            const double u = un_field.interpolate(t, x);
            return -spec.p * std::pow(std::abs(u), spec.q - 1.0) /
                   std::pow(spec.eta_at(t, x), spec.q - 1.0);
        },
        grid, "grad_un_exponential");
}

/// Conditional mass of the coefficient slopes under the flow weight; the
/// diagnostic process behind the perturbation-response envelope.
inline TimeSpaceField zeta_mass_field(const ModelSpec& spec, const SolveGrid& grid) {
    return solve_variational_linear(
        spec, nullptr,
        [&spec](double t, double x) {
            return std::abs(spec.db_eta_dx(t, x)) + std::abs(spec.dgamma_dx(t, x)) +
                   std::abs(spec.deta_dx(t, x));
        },
        nullptr, grid, "zeta_mass");
}

namespace detail {

inline MalliavinField make_dfield(const PathEnsemble& ens, double theta, std::size_t k,
                                  DKind kind) {
    MalliavinField f;
    f.theta = theta;
    f.theta_idx = k;
    f.kind = kind;
    f.n_paths = ens.n_paths;
    f.n_times = ens.time.size();
    f.valid_until_idx = ens.time.size() - 1;
    f.values.assign(ens.n_paths * ens.time.size(), 0.0);
    return f;
}

} // namespace detail

/// Gradient-times-state-response rule: derivative of field(t, X_t) w.r.t. a
/// kick at theta is (d_x field)(t, X_t) * D_theta X_t.
inline MalliavinField d_field_along(const ModelSpec& spec, const PathEnsemble& ens, double theta,
                                    const TimeSpaceField& dx_field, DKind kind) {
    const std::size_t k = theta_index(ens, theta);
    const std::size_t M = ens.time.size();
    MalliavinField out = detail::make_dfield(ens, theta, k, kind);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        const double load = spec.sigma_at(theta, ens.state(p, k)) / ens.flow(p, k);
        for (std::size_t m = k; m < M; ++m)
            out.at(p, m) =
                dx_field.interpolate_clamped(ens.time[m], ens.state(p, m)) * ens.flow(p, m) * load;
    }
    return out;
}

/// Coefficient response D_theta eta_t = d_x eta(t, X_t) D_theta X_t (and the
/// same rule for gamma or the impact drift via the fn argument).
inline MalliavinField d_coefficient_along(const ModelSpec& spec, const PathEnsemble& ens,
                                          double theta,
                                          const std::function<double(double, double)>& dcoef_dx,
                                          DKind kind) {
    const std::size_t k = theta_index(ens, theta);
    const std::size_t M = ens.time.size();
    MalliavinField out = detail::make_dfield(ens, theta, k, kind);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        const double load = spec.sigma_at(theta, ens.state(p, k)) / ens.flow(p, k);
        for (std::size_t m = k; m < M; ++m)
            out.at(p, m) = dcoef_dx(ens.time[m], ens.state(p, m)) * ens.flow(p, m) * load;
    }
    return out;
}

/// Perturbation response of the correction process along the ensemble;
/// grad_h must come from grad_h_variational (or the gradient of the stored
/// correction field, its cross-check).
inline MalliavinField solve_DH(const ModelSpec& spec, const TimeSpaceField& grad_h,
                               const PathEnsemble& ens, double theta) {
    return d_field_along(spec, ens, theta, grad_h, DKind::D_H);
}

/// Perturbation response of the level-n solution via the spatial gradient of
/// its field.
inline MalliavinField solve_DYn(const ModelSpec& spec, const TimeSpaceField& un_field,
                                const PathEnsemble& ens, double theta) {
    return d_field_along(spec, ens, theta, un_field.gradient_x(), DKind::D_Yn);
}

/// D_theta Y = D_theta eta / (T-t)^{p-1} + D_theta H / (T-t)^p on t <= T - eps.
inline MalliavinField assemble_DY(const ModelSpec& spec, const PathEnsemble& ens,
                                  const MalliavinField& d_eta, const MalliavinField& d_H,
                                  double eps) {
    if (d_eta.theta_idx != d_H.theta_idx || d_eta.n_times != d_H.n_times)
        throw std::domain_error("assemble_DY: components on different grids");
    MalliavinField out = detail::make_dfield(ens, d_eta.theta, d_eta.theta_idx, DKind::D_Y);
    std::size_t valid = 0;
    for (std::size_t m = 0; m < ens.time.size(); ++m)
        if (ens.time[m] <= spec.T - eps + 1e-15) valid = m;
    out.valid_until_idx = valid;
    for (std::size_t p = 0; p < ens.n_paths; ++p)
        for (std::size_t m = d_eta.theta_idx; m <= valid; ++m) {
            const double tau = spec.T - ens.time[m];
            out.at(p, m) = d_eta.at(p, m) / std::pow(tau, spec.p - 1.0) +
                           d_H.at(p, m) / std::pow(tau, spec.p);
        }
    return out;
}

/// D_theta Y^n = D_theta eta / (T-t+nu)^{p-1} + D_theta Hn / (T-t+nu)^p, all t.
inline MalliavinField assemble_DYn(const ModelSpec& spec, const PathEnsemble& ens, double n,
                                   const MalliavinField& d_eta, const MalliavinField& d_Hn) {
    if (d_eta.theta_idx != d_Hn.theta_idx || d_eta.n_times != d_Hn.n_times)
        throw std::domain_error("assemble_DYn: components on different grids");
    const double nu = std::pow(spec.eta_upper / n, spec.q - 1.0);
    MalliavinField out = detail::make_dfield(ens, d_eta.theta, d_eta.theta_idx, DKind::D_Yn);
    for (std::size_t p = 0; p < ens.n_paths; ++p)
        for (std::size_t m = d_eta.theta_idx; m < ens.time.size(); ++m) {
            const double tau = spec.T - ens.time[m] + nu;
            out.at(p, m) = d_eta.at(p, m) / std::pow(tau, spec.p - 1.0) +
                           d_Hn.at(p, m) / std::pow(tau, spec.p);
        }
    return out;
}

/// Envelope check: |response| <= C (T-t) * conditional slope mass, with C the
/// smallest constant making it hold on the sampled nodes. The flow factors
/// cancel, so the ratio is a pure field statement.
struct ResponseBound {
    double c_fitted = 0.0;
    bool finite = true;
};

inline ResponseBound response_envelope_constant(const ModelSpec& spec,
                                                const TimeSpaceField& grad_h,
                                                const TimeSpaceField& zeta_mass) {
    ResponseBound rb;
    const auto& tg = grad_h.time_grid();
    for (std::size_t it = 0; it < grad_h.nt(); ++it) {
        const double tau = spec.T - tg[it];
        if (tau <= 1e-12) continue;
        for (std::size_t ix = 0; ix < grad_h.nx(); ++ix) {
            const double denom = tau * zeta_mass.at(it, ix);
            const double num = std::abs(grad_h.at(it, ix));
            if (denom > 1e-13)
                rb.c_fitted = std::max(rb.c_fitted, num / denom);
            else if (num > 1e-10)
                rb.finite = false;
        }
    }
    return rb;
}

/// Lower bound of the kernel slope along a shifted solution (window constant
/// C1 zeta*/eta_lower, coarse uniform constant away from the horizon).
struct KernelSlopeCheck {
    double min_on_window = 0.0;
    double kappa1 = 0.0;
    double max_abs_outside = 0.0;
    double kappa_outside = 0.0;
    bool pass = false;
};

inline KernelSlopeCheck kernel_slope_lower_bound(const ModelSpec& spec, const ShiftedSolution& s,
                                                 const HnBounds& b) {
    KernelSlopeCheck chk;
    chk.kappa1 = b.c1 * b.zeta_star / spec.eta_lower;
    double sup_outside = 0.0;
    const auto& tg = s.hn.time_grid();
    chk.min_on_window = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < s.hn.nt(); ++it) {
        const double tau = spec.T - tg[it];
        for (std::size_t ix = 0; ix < s.hn.nx(); ++ix) {
            const double slope = dG_dh_kernel(tau + s.nu, s.hn.at(it, ix),
                                              spec.eta_at(tg[it], s.hn.space_grid()[ix]), spec);
            if (tau <= b.delta + 1e-12)
                chk.min_on_window = std::min(chk.min_on_window, slope);
            else {
                chk.max_abs_outside = std::max(chk.max_abs_outside, std::abs(slope));
                sup_outside = std::max(sup_outside, std::abs(s.hn.at(it, ix)));
            }
        }
    }
    chk.kappa_outside =
        spec.p / b.delta *
        (std::pow(1.0 + sup_outside / (spec.eta_lower * b.delta), spec.q - 1.0) + 1.0);
    chk.pass = chk.min_on_window >= -chk.kappa1 - 1e-9 &&
               chk.max_abs_outside <= chk.kappa_outside + 1e-9;
    return chk;
}

/// The weighted truncation-error functional of the derivative fields:
/// per level, sup over theta of the path average of
/// sup_t (T-t)^{ell p} |D_theta Y - D_theta Y^n|^ell, evaluated through the
/// stable combination (T-t)^p DY = (T-t) Deta + DH.
struct ConvergenceReport {
    std::vector<double> levels;
    std::vector<double> weighted;
    std::vector<double> unweighted; // sup over t <= 0.9 T, no weight
    double ell = 2.0;
    double rho = 4.0;
};

class MalliavinPipeline {
public:
    MalliavinPipeline(const ModelSpec& spec, const SolveGrid& grid, const TimeSpaceField& h_field)
        : spec_(&spec), grid_(&grid), grad_h_(grad_h_variational(spec, h_field, grid)) {}

    const TimeSpaceField& grad_h() const { return grad_h_; }

    /// Per-path samples of a field along the ensemble, cached row-major.
    static std::vector<double> sample_along(const TimeSpaceField& f, const PathEnsemble& ens) {
        std::vector<double> out(ens.n_paths * ens.time.size());
        for (std::size_t p = 0; p < ens.n_paths; ++p)
            for (std::size_t m = 0; m < ens.time.size(); ++m)
                out[p * ens.time.size() + m] =
                    f.interpolate_clamped(ens.time[m], ens.state(p, m));
        return out;
    }

    ConvergenceReport convergence_experiment(const PathEnsemble& ens,
                                             const std::vector<std::size_t>& theta_indices,
                                             const std::vector<ShiftedSolution>& levels,
                                             double ell, double rho) const {
        if (!(1.0 < ell && ell < rho))
            throw config_error("convergence_experiment: need 1 < ell < rho");
        const ModelSpec& spec = *spec_;
        const std::size_t M = ens.time.size();
        ConvergenceReport rep;
        rep.ell = ell;
        rep.rho = rho;

        const std::vector<double> wh = sample_along(grad_h_, ens);
        std::vector<double> deta(ens.n_paths * M);
        for (std::size_t p = 0; p < ens.n_paths; ++p)
            for (std::size_t m = 0; m < M; ++m)
                deta[p * M + m] = spec.deta_dx(ens.time[m], ens.state(p, m));

        for (const ShiftedSolution& lvl : levels) {
            const TimeSpaceField grad_hn = grad_h_variational(spec, lvl.hn, *grid_, lvl.nu);
            const std::vector<double> whn = sample_along(grad_hn, ens);
            double worst_weighted = 0.0, worst_unweighted = 0.0;
            for (std::size_t k : theta_indices) {
                double acc_w = 0.0, acc_u = 0.0;
                for (std::size_t p = 0; p < ens.n_paths; ++p) {
                    const double load =
                        spec.sigma_at(ens.time[k], ens.state(p, k)) / ens.flow(p, k);
                    double sup_w = 0.0, sup_u = 0.0;
                    for (std::size_t m = k; m < M; ++m) {
                        const double tau = spec.T - ens.time[m];
                        const double dx = ens.flow(p, m) * load;
                        const double de = deta[p * M + m] * dx;
                        const double dh = wh[p * M + m] * dx;
                        const double dhn = whn[p * M + m] * dx;
                        const double tn = tau + lvl.nu;
                        // (T-t)^p (DY - DYn)
                        const double diff_w =
                            tau * de + dh -
                            std::pow(tau, spec.p) *
                                (de / std::pow(tn, spec.p - 1.0) + dhn / std::pow(tn, spec.p));
                        sup_w = std::max(sup_w, std::abs(diff_w));
                        if (tau >= 0.1 * spec.T) {
                            const double dy = de / std::pow(tau, spec.p - 1.0) +
                                              dh / std::pow(tau, spec.p);
                            const double dyn = de / std::pow(tn, spec.p - 1.0) +
                                               dhn / std::pow(tn, spec.p);
                            sup_u = std::max(sup_u, std::abs(dy - dyn));
                        }
                    }
                    acc_w += std::pow(sup_w, ell);
                    acc_u += std::pow(sup_u, ell);
                }
                worst_weighted = std::max(worst_weighted, acc_w / static_cast<double>(ens.n_paths));
                worst_unweighted =
                    std::max(worst_unweighted, acc_u / static_cast<double>(ens.n_paths));
            }
            rep.levels.push_back(lvl.n);
            rep.weighted.push_back(worst_weighted);
            rep.unweighted.push_back(worst_unweighted);
        }
        return rep;
    }

private:
    const ModelSpec* spec_;
    const SolveGrid* grid_;
    TimeSpaceField grad_h_;
};

/// Agreement between the two routes to the level-n response: spatial gradient
/// of the solved field versus the exponential-representation solve, compared
/// on random (theta, t, path) triples drawn from a counter stream.
struct TripleCheckReport {
    double max_rel_err = 0.0;
    std::size_t triples = 0;
};

inline TripleCheckReport dyn_route_agreement(const ModelSpec& spec, const PathEnsemble& ens,
                                             const TimeSpaceField& un_field,
                                             std::size_t n_triples, std::uint64_t seed) {
    const TimeSpaceField g_num = un_field.gradient_x();
    const TimeSpaceField g_exp = grad_un_exponential(spec, un_field, SolveGrid{
                                                         un_field.time_grid(),
                                                         un_field.space_grid()});
    const std::size_t M = ens.time.size();
    double scale = 0.0;
    std::vector<std::array<double, 2>> pairs;
    pairs.reserve(n_triples);
    for (std::size_t i = 0; i < n_triples; ++i) {
        const auto blk = Philox2x64::generate(seed, 0x7472697074ULL, i);
        const std::size_t p = blk.a % ens.n_paths;
        const std::size_t k = blk.b % M;
        const std::size_t span = M - 1 - k;
        const auto blk2 = Philox2x64::generate(seed, 0x7472697074ULL + 1, i);
        std::size_t m = k + (span ? blk2.a % span : 0);
        if (spec.T - ens.time[m] < 1e-3 * spec.T) m = k + span / 2; // keep clear of the flat terminal row
        const double load = spec.sigma_at(ens.time[k], ens.state(p, k)) / ens.flow(p, k);
        const double dx = ens.flow(p, m) * load;
        const double a = g_num.interpolate_clamped(ens.time[m], ens.state(p, m)) * dx;
        const double b = g_exp.interpolate_clamped(ens.time[m], ens.state(p, m)) * dx;
        pairs.push_back({a, b});
        scale = std::max({scale, std::abs(a), std::abs(b)});
    }
    TripleCheckReport rep;
    rep.triples = pairs.size();
    const double floor = std::max(1e-300, 1e-6 * scale);
    for (const auto& ab : pairs)
        rep.max_rel_err = std::max(rep.max_rel_err, std::abs(ab[0] - ab[1]) /
                                                        std::max(floor, std::abs(ab[1])));
    return rep;
}

} // namespace singliq
