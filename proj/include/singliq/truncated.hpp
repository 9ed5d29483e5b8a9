#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "singliq/errors.hpp"
#include "singliq/grids.hpp"
#include "singliq/model.hpp"
#include "singliq/pde.hpp"

namespace singliq {

/// One level of the truncation scheme: the level-n field (terminal value n)
/// and the matching a-priori upper bound field evaluated on the same grid.
struct TruncatedSolution {
    double n = 0.0;
    TimeSpaceField u;
    TimeSpaceField bound;
    TimeSpaceField bound_alt; // proof-variant of the bound, kept for diagnostics
};

/// Reusable pieces of the a-priori bound: the two conditional expectations are
/// level-independent, so one pair of linear solves serves every level.
class AprioriBound {
public:
    AprioriBound(const ModelSpec& spec, const SolveGrid& grid) : spec_(&spec) {
        psi_ = solve_linear_parabolic(
            spec, nullptr,
            [&spec](double t, double x) {
                return spec.eta_at(t, x) +
                       std::pow(spec.T - t + 1.0, spec.p) * spec.gamma_at(t, x);
            },
            nullptr, grid, "apriori_integral");
        psi_alt_ = solve_linear_parabolic(
            spec, nullptr,
            [&spec](double t, double x) {
                return std::pow((spec.p - 1.0) / spec.eta_at(t, x), spec.p - 1.0) +
                       std::pow(spec.T - t + 1.0, spec.p) * spec.gamma_at(t, x);
            },
            nullptr, grid, "apriori_integral_alt");
    }

    TimeSpaceField field_for(double n, bool alt = false) const {
        const TimeSpaceField& psi = alt ? psi_alt_ : psi_;
        TimeSpaceField b(psi.time_grid(), psi.space_grid(),
                         (alt ? "apriori_bound_alt_n" : "apriori_bound_n") + std::to_string(n));
        const double shift = std::pow(n, 1.0 - spec_->q);
        for (std::size_t it = 0; it < b.nt(); ++it) {
            const double tau = spec_->T - b.time_grid()[it];
            const double pref = std::pow(tau + shift, -spec_->p);
            for (std::size_t ix = 0; ix < b.nx(); ++ix)
                b.at(it, ix) = pref * (shift + psi.at(it, ix));
        }
        return b;
    }

    double value_at(double n, double t, double x) const {
        const double shift = std::pow(n, 1.0 - spec_->q);
        return std::pow(spec_->T - t + shift, -spec_->p) * (shift + psi_.interpolate(t, x));
    }

private:
    const ModelSpec* spec_;
    TimeSpaceField psi_, psi_alt_;
};

inline TruncatedSolution solve_Yn(const ModelSpec& spec, double n, const SolveGrid& grid) {
    if (n < 0.0) throw std::domain_error("solve_Yn: truncation level must be nonnegative");
    const double pm1 = spec.p - 1.0, qm1 = spec.q - 1.0;
    TruncatedSolution sol;
    sol.n = n;
    sol.u = solve_semilinear(
        spec, [n](double) { return n; },
        [&spec, pm1, qm1](double t, double x, double u) {
            return -pm1 * pow_signed(u, qm1) * u / std::pow(spec.eta_at(t, x), qm1) +
                   spec.gamma_at(t, x);
        },
        grid, "u_n" + std::to_string(n),
        [&spec, qm1](double t, double x, double u) {
            return -spec.p * std::pow(std::abs(u), qm1) / std::pow(spec.eta_at(t, x), qm1);
        });
    sol.u.check_finite("solve_Yn");
    AprioriBound ab(spec, grid);
    sol.bound = ab.field_for(n);
    sol.bound_alt = ab.field_for(n, true);
    return sol;
}

/// Max over nodes of relative excess of u over the bound (positive = violation).
inline double bound_violation_max(const TimeSpaceField& u, const TimeSpaceField& bound) {
    double worst = 0.0;
    for (std::size_t it = 0; it < u.nt(); ++it)
        for (std::size_t ix = 0; ix < u.nx(); ++ix) {
            const double b = bound.at(it, ix);
            worst = std::max(worst, (u.at(it, ix) - b) / std::max(std::abs(b), 1e-300));
        }
    return worst;
}

/// Lower envelope of the limit field from the conjugate-power conditional
/// expectation; infinite at t = T, meaningful on [0, T - eps].
inline TimeSpaceField minimal_solution_lower_bound(const ModelSpec& spec, const SolveGrid& grid) {
    TimeSpaceField psi = solve_linear_parabolic(
        spec, nullptr,
        [&spec](double t, double x) { return std::pow(spec.eta_at(t, x), 1.0 - spec.q); },
        nullptr, grid, "eta_conjugate_integral");
    TimeSpaceField low(psi.time_grid(), psi.space_grid(), "lower_bound");
    for (std::size_t it = 0; it < low.nt(); ++it)
        for (std::size_t ix = 0; ix < low.nx(); ++ix)
            low.at(it, ix) = std::pow(psi.at(it, ix), 1.0 - spec.p);
    return low;
}

struct LevelRow {
    double n = 0.0;
    double sup_increment = 0.0;     // relative step (u_next - u)/u_next, sup over [0, T - eps]
    double bound_violation = 0.0;   // relative, over all nodes
    double blowup_slope = 0.0;      // fitted on the level's own field
    double monotonicity_violation = 0.0; // relative, over all nodes
};

struct MonotoneLimit {
    TimeSpaceField y;  // largest-level field, the limit approximation
    std::vector<LevelRow> table;
    std::vector<TruncatedSolution> levels;
};

/// Least-squares slope of log field(t, x_probe) against log(T-t) over
/// T-t in [win_lo, win_hi].
inline double blowup_slope(const TimeSpaceField& f, double T, double x_probe, double win_lo,
                           double win_hi) {
    const auto& xg = f.space_grid();
    std::size_t ix = 0;
    for (std::size_t j = 1; j < xg.size(); ++j)
        if (std::abs(xg[j] - x_probe) < std::abs(xg[ix] - x_probe)) ix = j;
    double sl = 0, sll = 0, sv = 0, slv = 0;
    std::size_t cnt = 0;
    for (std::size_t it = 0; it < f.nt(); ++it) {
        const double tau = T - f.time_grid()[it];
        if (tau < win_lo || tau > win_hi) continue;
        const double v = f.at(it, ix);
        if (!(v > 0.0)) continue;
        const double lt = std::log(tau), lv = std::log(v);
        sl += lt;
        sll += lt * lt;
        sv += lv;
        slv += lt * lv;
        ++cnt;
    }
    if (cnt < 3) throw std::domain_error("blowup_slope: too few nodes in the fit window");
    const double nd = static_cast<double>(cnt);
    return (nd * slv - sl * sv) / (nd * sll - sl * sl);
}

inline MonotoneLimit monotone_limit(const ModelSpec& spec, const std::vector<double>& levels,
                                    const SolveGrid& grid, double eps_cutoff) {
    if (levels.empty()) throw config_error("monotone_limit: empty level schedule");
    for (std::size_t k = 0; k + 1 < levels.size(); ++k)
        if (!(levels[k + 1] > levels[k]))
            throw config_error("monotone_limit: levels must be strictly increasing");

    MonotoneLimit out;
    out.levels.reserve(levels.size());
    for (double n : levels) out.levels.push_back(solve_Yn(spec, n, grid));

    const double t_cut = spec.T - eps_cutoff;
    for (std::size_t k = 0; k < levels.size(); ++k) {
        LevelRow row;
        row.n = levels[k];
        const TimeSpaceField& u = out.levels[k].u;
        row.bound_violation = bound_violation_max(u, out.levels[k].bound);
        row.blowup_slope =
            blowup_slope(u, spec.T, spec.x0, 1e-3 * spec.T, 1e-1 * spec.T);
        if (k > 0) {
            const TimeSpaceField& u_prev = out.levels[k - 1].u;
            for (std::size_t it = 0; it < u.nt(); ++it) {
                for (std::size_t ix = 0; ix < u.nx(); ++ix) {
                    const double inc = u.at(it, ix) - u_prev.at(it, ix);
                    const double scale = std::max(1.0, std::abs(u_prev.at(it, ix)));
                    row.monotonicity_violation =
                        std::max(row.monotonicity_violation, -inc / scale);
                    if (u.time_grid()[it] <= t_cut)
                        row.sup_increment = std::max(
                            row.sup_increment, std::abs(inc) / std::max(1e-300, u.at(it, ix)));
                }
            }
            if (row.monotonicity_violation > 1e-6)
                throw invariant_error("monotone_limit: monotonicity violated by " +
                                      std::to_string(row.monotonicity_violation) +
                                      " at level " + std::to_string(levels[k]));
        }
        out.table.push_back(row);
    }
    out.y = out.levels.back().u;
    out.y.set_label("y_limit");
    return out;
}

} // namespace singliq
