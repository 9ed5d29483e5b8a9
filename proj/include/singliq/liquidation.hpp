#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "singliq/errors.hpp"
#include "singliq/grids.hpp"
#include "singliq/malliavin.hpp"
#include "singliq/model.hpp"
#include "singliq/paths.hpp"

namespace singliq {

/// One liquidation trajectory on the ensemble time grid. Inventory before the
/// start node is held at x0 with zero rate.
struct LiquidationPath {
    double x0 = 0.0;
    std::size_t start_idx = 0;
    std::vector<double> xi;
    std::vector<double> alpha;
    double terminal_inventory() const { return xi.back(); }
};

namespace detail {

/// The normalized correction w = (T-t)^{p-1} Y / eta - 1 extracted from a
/// solved value field. w is tabulated at the field's own nodes and
/// interpolated as the bounded quantity it is (interpolating the blow-up
/// field directly would amplify the time-interpolation error near T). The
/// field stops at T - eps; past its last node w is continued linearly in
/// (T-t), matching its quadratic-over-linear decay.
class WCurve {
public:
    WCurve(const ModelSpec& spec, const TimeSpaceField& y_field)
        : spec_(&spec), w_(y_field.time_grid(), y_field.space_grid()) {
        t_last_ = y_field.time_grid().back();
        if (!(t_last_ < spec.T)) throw std::domain_error("WCurve: value field reaches T");
        for (std::size_t it = 0; it < y_field.nt(); ++it) {
            const double t = y_field.time_grid()[it];
            const double pow_tau = std::pow(spec.T - t, spec.p - 1.0);
            for (std::size_t ix = 0; ix < y_field.nx(); ++ix) {
                const double y = y_field.at(it, ix);
                if (y < 0.0) throw std::domain_error("WCurve: value field has negative entries");
                w_.at(it, ix) =
                    pow_tau * y / spec.eta_at(t, y_field.space_grid()[ix]) - 1.0;
            }
        }
    }

    double operator()(double t, double x) const {
        if (t <= t_last_) return w_.interpolate_clamped(t, x);
        return w_.interpolate_clamped(t_last_, x) * (spec_->T - t) / (spec_->T - t_last_);
    }

private:
    const ModelSpec* spec_;
    TimeSpaceField w_;
    double t_last_ = 0.0;
};

inline std::size_t grid_index(const std::vector<double>& grid, double t, const char* who) {
    for (std::size_t m = 0; m < grid.size(); ++m)
        if (std::abs(grid[m] - t) <= 1e-12 * std::max(1.0, grid.back())) return m;
    throw std::domain_error(std::string(who) + ": time is not an ensemble grid node");
}

} // namespace detail

/// Optimal inventory along each path, in the factored form
/// xi_s = x0 (T-s)/(T-t) exp(-int_t^s [(1+w)^{q-1} - 1]/(T-u) du):
/// the explicit linear prefactor absorbs the divergent part of the rate, the
/// remaining correction integrand is bounded up to T.
inline std::vector<LiquidationPath> optimal_state(const ModelSpec& spec,
                                                  const TimeSpaceField& y_field,
                                                  const PathEnsemble& ens, double x0,
                                                  double start_t) {
    if (!(start_t < spec.T)) throw std::domain_error("optimal_state: start_t must precede T");
    const detail::WCurve w(spec, y_field);
    const std::size_t start = detail::grid_index(ens.time, start_t, "optimal_state");
    const std::size_t M = ens.time.size();
    const double horizon = spec.T - start_t;

    std::vector<LiquidationPath> out(ens.n_paths);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        LiquidationPath& lp = out[p];
        lp.x0 = x0;
        lp.start_idx = start;
        lp.xi.assign(M, x0);
        lp.alpha.assign(M, 0.0);
        double acc = 0.0, prev_c = 0.0;
        for (std::size_t m = start; m < M; ++m) {
            const double t = ens.time[m];
            const double tau = spec.T - t;
            const double wv = w(t, ens.state(p, m));
            // c = [(1+w)^{q-1} - 1]/tau, continued by its limit at tau = 0
            double c;
            if (tau > 1e-14 * spec.T)
                c = std::expm1((spec.q - 1.0) * std::log1p(wv)) / tau;
            else
                c = prev_c;
            if (m > start) acc += 0.5 * (prev_c + c) * (t - ens.time[m - 1]);
            prev_c = c;
            const double damp = std::exp(-acc);
            lp.xi[m] = x0 * tau / horizon * damp;
            lp.alpha[m] =
                -x0 / horizon * damp * std::pow(1.0 + wv, spec.q - 1.0);
        }
        lp.xi[M - 1] = 0.0;
    }
    return out;
}

struct CostEstimate {
    double mean = 0.0;
    double se = 0.0;
};

/// Monte Carlo cost of a family of admissible trajectories: pathwise
/// trapezoidal quadrature of eta |alpha|^p + gamma |xi|^p, averaged over paths.
inline CostEstimate cost(const ModelSpec& spec, const std::vector<LiquidationPath>& paths,
                         const PathEnsemble& ens) {
    if (paths.size() != ens.n_paths) throw config_error("cost: path count mismatch");
    const std::size_t M = ens.time.size();
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t p = 0; p < paths.size(); ++p) {
        const LiquidationPath& lp = paths[p];
        double J = 0.0, prev = 0.0;
        for (std::size_t m = lp.start_idx; m < M; ++m) {
            const double t = ens.time[m], x = ens.state(p, m);
            const double integrand =
                spec.eta_at(t, x) * std::pow(std::abs(lp.alpha[m]), spec.p) +
                spec.gamma_at(t, x) * std::pow(std::abs(lp.xi[m]), spec.p);
            if (m > lp.start_idx) J += 0.5 * (prev + integrand) * (t - ens.time[m - 1]);
            prev = integrand;
        }
        sum += J;
        sumsq += J * J;
    }
    CostEstimate est;
    const double n = static_cast<double>(paths.size());
    est.mean = sum / n;
    if (paths.size() > 1) {
        const double var = std::max(0.0, (sumsq - n * est.mean * est.mean) / (n - 1.0));
        est.se = std::sqrt(var / n);
    }
    return est;
}

/// Constant-rate liquidation to zero, the comparison strategy.
inline std::vector<LiquidationPath> twap_baseline(double x0, double start_t,
                                                  const PathEnsemble& ens) {
    const std::size_t start = detail::grid_index(ens.time, start_t, "twap_baseline");
    const std::size_t M = ens.time.size();
    const double horizon = ens.time.back() - start_t;
    std::vector<LiquidationPath> out(ens.n_paths);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        LiquidationPath& lp = out[p];
        lp.x0 = x0;
        lp.start_idx = start;
        lp.xi.assign(M, x0);
        lp.alpha.assign(M, 0.0);
        for (std::size_t m = start; m < M; ++m) {
            lp.xi[m] = x0 * (ens.time.back() - ens.time[m]) / horizon;
            lp.alpha[m] = -x0 / horizon;
        }
    }
    return out;
}

/// Multiplicative in-flight perturbation of a trajectory that preserves both
/// endpoints (admissibility): xi -> xi (1 + a sin(k pi s-progress)).
inline std::vector<LiquidationPath> perturbed_strategy(const std::vector<LiquidationPath>& base,
                                                       const PathEnsemble& ens, double amplitude,
                                                       int mode) {
    std::vector<LiquidationPath> out = base;
    const std::size_t M = ens.time.size();
    for (LiquidationPath& lp : out) {
        const double t0 = ens.time[lp.start_idx];
        const double horizon = ens.time.back() - t0;
        for (std::size_t m = lp.start_idx; m < M; ++m) {
            const double s = (ens.time[m] - t0) / horizon;
            lp.xi[m] *= 1.0 + amplitude * std::sin(mode * 3.14159265358979323846 * s);
        }
        for (std::size_t m = lp.start_idx; m < M; ++m) {
            if (m == lp.start_idx)
                lp.alpha[m] = (lp.xi[m + 1] - lp.xi[m]) / (ens.time[m + 1] - ens.time[m]);
            else if (m + 1 == M)
                lp.alpha[m] = (lp.xi[m] - lp.xi[m - 1]) / (ens.time[m] - ens.time[m - 1]);
            else
                lp.alpha[m] = (lp.xi[m + 1] - lp.xi[m - 1]) / (ens.time[m + 1] - ens.time[m - 1]);
        }
    }
    return out;
}

struct ValueIdentityReport {
    double cost_mean = 0.0;
    double cost_se = 0.0;
    double value = 0.0;
    double discrepancy = 0.0;
    double allowance = 0.0;
    bool pass = false;
};

/// |x|^p times the value field at the start node should reproduce the optimal
/// cost up to Monte Carlo noise and a discretization allowance.
inline ValueIdentityReport value_identity_check(const ModelSpec& spec,
                                                const TimeSpaceField& y_field, double x0,
                                                double start_t, const PathEnsemble& ens,
                                                double rel_allowance = 1e-3) {
    const auto paths = optimal_state(spec, y_field, ens, x0, start_t);
    const CostEstimate est = cost(spec, paths, ens);
    ValueIdentityReport rep;
    rep.cost_mean = est.mean;
    rep.cost_se = est.se;
    rep.value = std::pow(std::abs(x0), spec.p) * y_field.interpolate(start_t, spec.x0);
    rep.discrepancy = std::abs(est.mean - rep.value);
    rep.allowance = 2.0 * est.se + rel_allowance * std::abs(rep.value);
    rep.pass = rep.discrepancy <= rep.allowance;
    return rep;
}

/// Perturbation response of the inventory:
/// D_theta xi_s = -(q-1) xi_s int_t^s |Y/eta|^{q-2} sgn(Y) D_theta(Y/eta) du,
/// with D_theta(Y/eta) = (eta D_theta Y - Y D_theta eta)/eta^2. Requires the
/// value field positive on the evaluation window.
inline std::vector<std::vector<double>> sensitivity_Xi(
    const ModelSpec& spec, const TimeSpaceField& y_field,
    const std::vector<LiquidationPath>& paths, const PathEnsemble& ens,
    const MalliavinField& d_Y, const MalliavinField& d_eta) {
    const detail::WCurve w(spec, y_field);
    const std::size_t M = ens.time.size();
    const std::size_t last = d_Y.valid_until_idx;
    std::vector<std::vector<double>> out(paths.size());
    for (std::size_t p = 0; p < paths.size(); ++p) {
        const LiquidationPath& lp = paths[p];
        out[p].assign(M, 0.0);
        double acc = 0.0, prev_f = 0.0;
        for (std::size_t m = lp.start_idx; m <= last; ++m) {
            const double t = ens.time[m], x = ens.state(p, m);
            const double tau = spec.T - t;
            double f = 0.0;
            if (m >= d_Y.theta_idx) {
                const double eta_v = spec.eta_at(t, x);
                const double y_over_eta =
                    (1.0 + w(t, x)) / std::pow(tau, spec.p - 1.0);
                const double y_v = eta_v * y_over_eta;
                if (!(y_v > 0.0))
                    throw std::domain_error("sensitivity_Xi: nonpositive value field");
                const double d_ratio =
                    (eta_v * d_Y.at(p, m) - y_v * d_eta.at(p, m)) / (eta_v * eta_v);
                f = std::pow(y_over_eta, spec.q - 2.0) * d_ratio;
            }
            // intervals whose left endpoint precedes the kick carry no mass
            if (m > lp.start_idx && m >= d_Y.theta_idx + 1 && m - 1 >= d_Y.theta_idx)
                acc += 0.5 * (prev_f + f) * (t - ens.time[m - 1]);
            prev_f = f;
            out[p][m] = -(spec.q - 1.0) * lp.xi[m] * acc;
        }
    }
    return out;
}

} // namespace singliq
