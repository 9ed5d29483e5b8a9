#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "singliq/config.hpp"
#include "singliq/errors.hpp"
#include "singliq/expansion.hpp"
#include "singliq/grids.hpp"
#include "singliq/liquidation.hpp"
#include "singliq/malliavin.hpp"
#include "singliq/model.hpp"
#include "singliq/oracles.hpp"
#include "singliq/parallel.hpp"
#include "singliq/paths.hpp"
#include "singliq/pde.hpp"
#include "singliq/report.hpp"
#include "singliq/truncated.hpp"

namespace singliq {

namespace run_detail {

inline void echo_config(const ExperimentConfig& cfg, const std::string& outdir) {
    ensure_dir(outdir);
    std::ofstream os(outdir + "/config_resolved.json");
    os << cfg.resolved.dump(2) << '\n';
}

inline int finish(CheckSet& checks, const std::string& outdir) {
    checks.print(std::cout);
    checks.write_csv(outdir + "/summary.csv");
    return checks.all_pass() ? 0 : 3;
}

inline bool x_flat(const std::function<double(double, double)>& dfdx, const ModelSpec& m,
                   double x_lo, double x_hi) {
    if (!dfdx) return true;
    for (int i = 0; i <= 8; ++i)
        for (int jx = 0; jx <= 8; ++jx)
            if (std::abs(dfdx(m.T * i / 8.0, x_lo + (x_hi - x_lo) * jx / 8.0)) > 1e-12)
                return false;
    return true;
}

inline bool eta_is_deterministic(const ModelSpec& m, const SolveGrid& g) {
    return x_flat([&m](double t, double x) { return m.deta_dx(t, x); }, m, g.x.front(),
                  g.x.back());
}
inline bool gamma_is_deterministic(const ModelSpec& m, const SolveGrid& g) {
    return x_flat([&m](double t, double x) { return m.dgamma_dx(t, x); }, m, g.x.front(),
                  g.x.back());
}

inline std::vector<std::size_t> theta_indices(std::size_t n_times, int count) {
    std::vector<std::size_t> idx;
    const std::size_t last = n_times >= 2 ? n_times - 2 : 0; // strictly before T
    for (int j = 0; j < count; ++j)
        idx.push_back(count > 1 ? (last * j) / (count - 1) : 0);
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    return idx;
}

inline double max_ratio(const std::vector<double>& r) {
    double m = 0.0;
    for (double v : r) m = std::max(m, v);
    return m;
}

/// Relative shortfall of the field below the lower envelope on t <= T - eps.
inline double lower_bound_violation(const TimeSpaceField& u, const TimeSpaceField& low, double T,
                                    double eps) {
    double worst = 0.0;
    for (std::size_t it = 0; it < u.nt(); ++it) {
        if (u.time_grid()[it] > T - eps + 1e-15) continue;
        for (std::size_t ix = 0; ix < u.nx(); ++ix) {
            const double l = low.at(it, ix);
            if (!(l > 0.0) || !std::isfinite(l)) continue;
            worst = std::max(worst, (l - u.at(it, ix)) / l);
        }
    }
    return worst;
}

inline double relative_sup_distance(const TimeSpaceField& a, const TimeSpaceField& b, double T,
                                    double eps) {
    double worst = 0.0;
    for (std::size_t it = 0; it < a.nt(); ++it) {
        if (a.time_grid()[it] > T - eps + 1e-15) continue;
        for (std::size_t ix = 0; ix < a.nx(); ++ix) {
            const double bv = b.interpolate(a.time_grid()[it], a.space_grid()[ix]);
            worst = std::max(worst,
                             std::abs(a.at(it, ix) - bv) / std::max(1e-300, std::abs(bv)));
        }
    }
    return worst;
}

inline void write_picard_report(const PicardReport& rep, const std::string& path) {
    CsvWriter w(path, "iteration,weighted_norm,sup_norm_outside,ratio");
    for (std::size_t k = 0; k < rep.weighted_norms.size(); ++k)
        w.row({static_cast<double>(k + 1), rep.weighted_norms[k], rep.sup_norms[k],
               k >= 1 && k - 1 < rep.contraction_ratios.size() ? rep.contraction_ratios[k - 1]
                                                               : 0.0});
}

} // namespace run_detail

// ---------------------------------------------------------------------------
// solve-y: correction fixed point and assembled value field
// ---------------------------------------------------------------------------
inline int cmd_solve_y(const ExperimentConfig& cfg, const std::string& outdir, int /*threads*/) {
    run_detail::echo_config(cfg, outdir);
    const SolveGrid grid = cfg.make_grid();
    const ExpansionSolution H = solve_H(cfg.model, grid, cfg.solver.tol, cfg.solver.max_iter);
    const TimeSpaceField y = assemble_Y(cfg.model, H.h, cfg.eps_cutoff());
    H.h.to_csv(outdir + "/h_field.csv");
    y.to_csv(outdir + "/y_field.csv");
    run_detail::write_picard_report(H.report, outdir + "/picard_report.csv");

    CheckSet checks;
    checks.flag("picard_converged", H.report.converged);
    checks.le("picard_ball_violation", H.report.ball_violation_max, 1e-9);
    checks.le("picard_contraction_ratio", run_detail::max_ratio(H.report.contraction_ratios), 0.6);
    checks.le("picard_guard_ratio", H.report.guard_ratio_max, 0.5 + 1e-9);
    checks.le("picard_residual_weighted", H.report.residual_weighted, 2.0 * cfg.solver.tol);
    checks.le("blowup_slope_error",
              std::abs(blowup_slope(y, cfg.model.T, cfg.model.x0, 1e-3 * cfg.model.T,
                                    1e-1 * cfg.model.T) +
                       (cfg.model.p - 1.0)) /
                  (cfg.model.p - 1.0),
              0.02);
    return run_detail::finish(checks, outdir);
}

// ---------------------------------------------------------------------------
// truncated: level sweep, monotone limit, a-priori envelopes
// ---------------------------------------------------------------------------
inline int cmd_truncated(const ExperimentConfig& cfg, const std::string& outdir, int /*threads*/) {
    run_detail::echo_config(cfg, outdir);
    const SolveGrid grid = cfg.make_grid();
    const double eps = cfg.eps_cutoff();
    const MonotoneLimit ml = monotone_limit(cfg.model, cfg.solver.levels, grid, eps);
    {
        CsvWriter w(outdir + "/truncated_convergence.csv",
                    "n,sup_increment,bound_violation_max,blowup_slope");
        for (const LevelRow& r : ml.table)
            w.row({r.n, r.sup_increment, r.bound_violation, r.blowup_slope});
    }
    ml.y.to_csv(outdir + "/y_limit.csv");

    CheckSet checks;
    double worst_bound = 0.0, worst_mono = 0.0;
    for (const LevelRow& r : ml.table) {
        worst_bound = std::max(worst_bound, r.bound_violation);
        worst_mono = std::max(worst_mono, r.monotonicity_violation);
    }
    checks.le("apriori_bound_violation", worst_bound, 1e-6);
    checks.le("monotonicity_violation", worst_mono, 1e-6);
    bool decreasing = true;
    for (std::size_t k = 2; k < ml.table.size(); ++k)
        decreasing = decreasing && ml.table[k].sup_increment <= ml.table[k - 1].sup_increment;
    checks.flag("sup_increments_decreasing", decreasing);
    const TimeSpaceField low = minimal_solution_lower_bound(cfg.model, grid);
    checks.le("lower_bound_violation",
              run_detail::lower_bound_violation(ml.y, low, cfg.model.T, eps), 1e-3);
    checks.le("blowup_slope_error",
              std::abs(ml.table.back().blowup_slope + (cfg.model.p - 1.0)) / (cfg.model.p - 1.0),
              0.02);
    return run_detail::finish(checks, outdir);
}

// ---------------------------------------------------------------------------
// picard: fixed-point report plus shifted-process certificates
// ---------------------------------------------------------------------------
inline int cmd_picard(const ExperimentConfig& cfg, const std::string& outdir, int threads) {
    run_detail::echo_config(cfg, outdir);
    const SolveGrid grid = cfg.make_grid();
    const ExpansionSolution H = solve_H(cfg.model, grid, cfg.solver.tol, cfg.solver.max_iter);
    run_detail::write_picard_report(H.report, outdir + "/picard_report.csv");

    const HnBounds hb = hn_bounds(cfg.model);
    std::vector<double> hn_levels;
    for (int k = 0; k < 5; ++k) hn_levels.push_back(hb.n0 * std::pow(4.0, k));
    std::vector<ShiftedSolution> shifted(hn_levels.size());
    parallel_for(hn_levels.size(), threads, [&](std::size_t i) {
        shifted[i] = solve_Hn(cfg.model, hn_levels[i], grid, &hb);
    });

    double lower_v = 0.0, upper_v = 0.0;
    for (std::size_t i = 0; i < 2 && i < shifted.size(); ++i) {
        const SandwichCheck sc = check_hn_sandwich(cfg.model, shifted[i], hb);
        lower_v = std::max(lower_v, sc.lower_violation);
        upper_v = std::max(upper_v, sc.upper_violation);
    }
    std::vector<double> wdist;
    for (const auto& s : shifted) wdist.push_back(weighted_hn_distance(cfg.model, H.h, s));

    {
        CsvWriter w(outdir + "/bounds_ledger.csv",
                    "R,L,delta,C1,C2,n0,ball_violation,guard_ratio,sandwich_lower_violation,"
                    "sandwich_upper_violation");
        w.row({H.constants.R, H.constants.L, H.constants.delta, hb.c1, hb.c2, hb.n0,
               H.report.ball_violation_max, H.report.guard_ratio_max, lower_v, upper_v});
    }
    {
        CsvWriter w(outdir + "/hn_weighted_distance.csv", "n,weighted_distance");
        for (std::size_t i = 0; i < shifted.size(); ++i) w.row({hn_levels[i], wdist[i]});
    }

    CheckSet checks;
    checks.flag("picard_converged", H.report.converged);
    checks.le("picard_ball_violation", H.report.ball_violation_max, 1e-9);
    checks.le("picard_contraction_ratio", run_detail::max_ratio(H.report.contraction_ratios), 0.6);
    checks.le("picard_guard_ratio", H.report.guard_ratio_max, 0.5 + 1e-9);
    checks.le("sandwich_lower_violation", lower_v, 1e-8);
    checks.le("sandwich_upper_violation", upper_v, 1e-8);
    bool wdist_decreasing = true;
    for (std::size_t k = 1; k < wdist.size(); ++k)
        wdist_decreasing = wdist_decreasing && wdist[k] <= wdist[k - 1] * 1.0000001;
    checks.flag("hn_weighted_distance_decreasing", wdist_decreasing);
    checks.le("hn_weighted_distance_final", wdist.back(), 1e-2);
    // consistency of the two level-n routes
    const TruncatedSolution direct = solve_Yn(cfg.model, hn_levels.front(), grid);
    checks.le("hn_assembly_vs_direct",
              run_detail::relative_sup_distance(assemble_un_from_Hn(cfg.model, shifted.front()),
                                                direct.u, cfg.model.T, -1e-9),
              1e-4);
    return run_detail::finish(checks, outdir);
}

// ---------------------------------------------------------------------------
// malliavin: derivative fields, blow-up fit, plumbing identities
// ---------------------------------------------------------------------------
inline int cmd_malliavin(const ExperimentConfig& cfg, const std::string& outdir, int threads) {
    run_detail::echo_config(cfg, outdir);
    const ModelSpec& m = cfg.model;
    const SolveGrid grid = cfg.make_grid();
    const ExpansionSolution H = solve_H(m, grid, cfg.solver.tol, cfg.solver.max_iter);
    const MalliavinPipeline pipe(m, grid, H.h);
    const PathEnsemble ens = simulate(m, cfg.mc.n_paths, cfg.mc_time_grid(), cfg.mc.seed);
    const auto thetas = run_detail::theta_indices(ens.time.size(), cfg.mc.theta_count);
    const std::size_t M = ens.time.size();

    CheckSet checks;

    // Plumbing: flow-ratio route versus the direct linear recursion.
    checks.le("flow_vs_direct_DX", flow_identity_max_error(m, ens, ens.time[thetas.back()/2]),
              1e-9);

    // Plumbing: kernel derivatives against centered differences.
    {
        double worst = 0.0;
        for (int i = 0; i < 400; ++i) {
            const auto blk = Philox2x64::generate(cfg.mc.seed, 0xFD5EEDULL, i);
            const double tau = (0.05 + 0.9 * uniform_open(blk.a)) * m.T;
            const double ev = m.eta_lower + (m.eta_upper - m.eta_lower) * uniform_open(blk.b);
            const auto blk2 = Philox2x64::generate(cfg.mc.seed, 0xFD5EEDULL + 1, i);
            const double w = (uniform_open(blk2.a) < 0.5 ? -1.0 : 1.0) *
                             (0.02 + 0.42 * uniform_open(blk2.b));
            const double h = w * ev * tau, d = 1e-6;
            const double t = m.T - tau;
            const double fd_h = (eval_G(t, h + d, ev, m) - eval_G(t, h - d, ev, m)) / (2.0 * d);
            const double fd_e =
                (eval_G(t, h, ev + d, m) - eval_G(t, h, ev - d, m)) / (2.0 * d);
            worst = std::max(worst, std::abs(fd_h - eval_dG_dh(t, h, ev, m)) /
                                        std::max(1e-8, std::abs(fd_h)));
            worst = std::max(worst, std::abs(fd_e - eval_dG_deta(t, h, ev, m)) /
                                        std::max(1e-8, std::abs(fd_e)));
        }
        checks.le("kernel_derivative_fd", worst, 1e-5);
    }

    // Plumbing: the two routes to the level response on random triples.
    {
        const double n_ref = cfg.solver.levels[cfg.solver.levels.size() / 2];
        const TruncatedSolution ref = solve_Yn(m, n_ref, grid);
        const TripleCheckReport tr = dyn_route_agreement(m, ens, ref.u, 100, cfg.mc.seed);
        checks.le("dyn_route_agreement", tr.max_rel_err, 1e-3);
    }

    // Response envelope constant (finite by construction of the fields).
    const TimeSpaceField zeta = zeta_mass_field(m, grid);
    const ResponseBound rb = response_envelope_constant(m, pipe.grad_h(), zeta);
    checks.flag("response_envelope_finite", rb.finite);

    // Derivative fields per level, long-format report.
    std::vector<ShiftedSolution> shifted(cfg.solver.levels.size());
    parallel_for(shifted.size(), threads, [&](std::size_t i) {
        shifted[i] = solve_Hn(m, cfg.solver.levels[i], grid);
    });

    const std::vector<double> wh = MalliavinPipeline::sample_along(pipe.grad_h(), ens);
    CsvWriter rep(outdir + "/malliavin_report.csv",
                  "theta,t,level,d_y_mean_abs,d_yn_mean_abs,weighted_diff_mean");
    std::vector<double> dy_abs_mean(M, 0.0); // at theta = first node, reused by the fit
    for (std::size_t li = 0; li < shifted.size(); ++li) {
        const TimeSpaceField grad_hn = grad_h_variational(m, shifted[li].hn, grid, shifted[li].nu);
        const std::vector<double> whn = MalliavinPipeline::sample_along(grad_hn, ens);
        for (std::size_t k : thetas) {
            std::vector<double> acc_y(M, 0.0), acc_yn(M, 0.0), acc_wd(M, 0.0);
            for (std::size_t p = 0; p < ens.n_paths; ++p) {
                const double load = m.sigma_at(ens.time[k], ens.state(p, k)) / ens.flow(p, k);
                for (std::size_t mm = k; mm < M; ++mm) {
                    const double tau = m.T - ens.time[mm];
                    const double dx = ens.flow(p, mm) * load;
                    const double de = m.deta_dx(ens.time[mm], ens.state(p, mm)) * dx;
                    const double dh = wh[p * M + mm] * dx;
                    const double dhn = whn[p * M + mm] * dx;
                    const double tn = tau + shifted[li].nu;
                    const double dyn_v =
                        de / std::pow(tn, m.p - 1.0) + dhn / std::pow(tn, m.p);
                    const double dy_w = tau * de + dh; // (T-t)^p D_theta Y
                    acc_yn[mm] += std::abs(dyn_v);
                    acc_wd[mm] += std::abs(dy_w - std::pow(tau, m.p) * dyn_v);
                    if (tau > 1e-12)
                        acc_y[mm] += std::abs(de / std::pow(tau, m.p - 1.0) +
                                              dh / std::pow(tau, m.p));
                }
            }
            for (std::size_t mm = k; mm < M; ++mm)
                rep.row({ens.time[k], ens.time[mm], shifted[li].n,
                         acc_y[mm] / static_cast<double>(ens.n_paths),
                         acc_yn[mm] / static_cast<double>(ens.n_paths),
                         acc_wd[mm] / static_cast<double>(ens.n_paths)});
            if (li == 0 && k == thetas.front())
                for (std::size_t mm = 0; mm < M; ++mm)
                    dy_abs_mean[mm] = acc_y[mm] / static_cast<double>(ens.n_paths);
        }
    }

    // Horizon behavior of the derivative of the limit field.
    const bool det_eta = run_detail::eta_is_deterministic(m, grid);
    double slope = 0.0, intercept = 0.0;
    {
        double sl = 0, sll = 0, sv = 0, slv = 0;
        std::size_t cnt = 0;
        for (std::size_t mm = 0; mm + 1 < M; ++mm) {
            const double tau = m.T - ens.time[mm];
            if (tau < 1e-3 * m.T || tau > 1e-1 * m.T || !(dy_abs_mean[mm] > 0.0)) continue;
            const double lt = std::log(tau), lv = std::log(dy_abs_mean[mm]);
            sl += lt;
            sll += lt * lt;
            sv += lv;
            slv += lt * lv;
            ++cnt;
        }
        if (cnt >= 3) {
            const double nd = static_cast<double>(cnt);
            slope = (nd * slv - sl * sv) / (nd * sll - sl * sl);
            intercept = (sv - slope * sl) / nd;
        }
        CsvWriter bw(outdir + "/blowup_fit.csv", "slope,intercept,window_lo,window_hi");
        bw.row({slope, intercept, 1e-3 * m.T, 1e-1 * m.T});
    }
    if (det_eta) {
        // weighted response (T-t)^{p-1} |D_theta Y| must die out at the horizon
        auto value_near = [&](double tau_target) {
            std::size_t best = 0;
            for (std::size_t mm = 0; mm + 1 < M; ++mm)
                if (std::abs(m.T - ens.time[mm] - tau_target) <
                    std::abs(m.T - ens.time[best] - tau_target))
                    best = mm;
            return dy_abs_mean[best] * std::pow(m.T - ens.time[best], m.p - 1.0);
        };
        const double v_hi = value_near(1e-1 * m.T), v_lo = value_near(1e-3 * m.T);
        checks.le("weighted_dy_decay_ratio", v_lo / std::max(v_hi, 1e-300), 0.05);
    } else {
        checks.le("dy_blowup_slope_error", std::abs(slope + (m.p - 1.0)) / (m.p - 1.0), 0.05);
    }
    return run_detail::finish(checks, outdir);
}

// ---------------------------------------------------------------------------
// converge: weighted truncation error of the derivative fields
// ---------------------------------------------------------------------------
inline int cmd_converge(const ExperimentConfig& cfg, const std::string& outdir, int threads) {
    run_detail::echo_config(cfg, outdir);
    const ModelSpec& m = cfg.model;
    const SolveGrid grid = cfg.make_grid();
    const ExpansionSolution H = solve_H(m, grid, cfg.solver.tol, cfg.solver.max_iter);
    const MalliavinPipeline pipe(m, grid, H.h);
    const PathEnsemble ens = simulate(m, cfg.mc.n_paths, cfg.mc_time_grid(), cfg.mc.seed);
    const auto thetas = run_detail::theta_indices(ens.time.size(), cfg.mc.theta_count);

    std::vector<ShiftedSolution> shifted(cfg.solver.levels.size());
    parallel_for(shifted.size(), threads, [&](std::size_t i) {
        shifted[i] = solve_Hn(m, cfg.solver.levels[i], grid);
    });
    const ConvergenceReport rep =
        pipe.convergence_experiment(ens, thetas, shifted, cfg.solver.ell, cfg.solver.rho);
    {
        CsvWriter w(outdir + "/converge.csv", "n,weighted_error,unweighted_error_tau09");
        for (std::size_t i = 0; i < rep.levels.size(); ++i)
            w.row({rep.levels[i], rep.weighted[i], rep.unweighted[i]});
    }

    CheckSet checks;
    const bool degenerate = run_detail::eta_is_deterministic(m, grid) &&
                            run_detail::gamma_is_deterministic(m, grid);
    if (degenerate) {
        double worst = 0.0;
        for (double v : rep.weighted) worst = std::max(worst, v);
        checks.le("weighted_error_all_zero", worst, 1e-20);
    } else {
        bool noninc = true;
        for (std::size_t k = 1; k < rep.weighted.size(); ++k)
            noninc = noninc && rep.weighted[k] <= rep.weighted[k - 1] * 1.05;
        checks.flag("weighted_error_nonincreasing", noninc);
        checks.le("weighted_error_final_over_first",
                  rep.weighted.back() / std::max(rep.weighted.front(), 1e-300), 0.10);
    }
    return run_detail::finish(checks, outdir);
}

// ---------------------------------------------------------------------------
// liquidate: optimal trajectory, cost, baselines, value identity
// ---------------------------------------------------------------------------
inline int cmd_liquidate(const ExperimentConfig& cfg, const std::string& outdir, int /*threads*/) {
    run_detail::echo_config(cfg, outdir);
    const ModelSpec& m = cfg.model;
    const SolveGrid grid = cfg.make_grid();
    const ExpansionSolution H = solve_H(m, grid, cfg.solver.tol, cfg.solver.max_iter);
    const TimeSpaceField y = assemble_Y(m, H.h, cfg.eps_cutoff());
    const PathEnsemble ens = simulate(m, cfg.mc.n_paths, cfg.mc_time_grid(), cfg.mc.seed);
    const double x0 = 1.0, start_t = 0.0;

    const auto opt = optimal_state(m, y, ens, x0, start_t);
    const CostEstimate j_opt = cost(m, opt, ens);
    const auto twap = twap_baseline(x0, start_t, ens);
    const CostEstimate j_twap = cost(m, twap, ens);

    double terminal_worst = 0.0;
    for (const auto& lp : opt)
        terminal_worst = std::max(terminal_worst, std::abs(lp.terminal_inventory()));

    CsvWriter w(outdir + "/liquidation_report.csv", "strategy,mean_cost,se,terminal_inventory_max");
    w.row("optimal", {j_opt.mean, j_opt.se, terminal_worst});
    w.row("twap", {j_twap.mean, j_twap.se, 0.0});

    CheckSet checks;
    checks.le("terminal_inventory", terminal_worst, 1e-3 * std::abs(x0));
    checks.le("optimal_vs_twap", j_opt.mean - j_twap.mean,
              2.0 * std::sqrt(j_opt.se * j_opt.se + j_twap.se * j_twap.se));
    for (int k = 1; k <= 5; ++k) {
        const auto pert = perturbed_strategy(opt, ens, 0.02 * k, k);
        const CostEstimate j_p = cost(m, pert, ens);
        w.row("perturbed_" + std::to_string(k), {j_p.mean, j_p.se, 0.0});
        checks.le("optimal_vs_perturbed_" + std::to_string(k), j_opt.mean - j_p.mean,
                  2.0 * std::sqrt(j_opt.se * j_opt.se + j_p.se * j_p.se));
    }
    const ValueIdentityReport vi = value_identity_check(m, y, x0, start_t, ens);
    w.row("value_identity", {vi.value, vi.cost_se, vi.discrepancy});
    checks.le("value_identity", vi.discrepancy, vi.allowance);
    return run_detail::finish(checks, outdir);
}

// ---------------------------------------------------------------------------
// sensitivity: perturbation response of the optimal inventory
// ---------------------------------------------------------------------------
inline int cmd_sensitivity(const ExperimentConfig& cfg, const std::string& outdir,
                           int /*threads*/) {
    run_detail::echo_config(cfg, outdir);
    const ModelSpec& m = cfg.model;
    const SolveGrid grid = cfg.make_grid();
    const ExpansionSolution H = solve_H(m, grid, cfg.solver.tol, cfg.solver.max_iter);
    const TimeSpaceField y = assemble_Y(m, H.h, cfg.eps_cutoff());
    const MalliavinPipeline pipe(m, grid, H.h);
    const PathEnsemble ens = simulate(m, cfg.mc.n_paths, cfg.mc_time_grid(), cfg.mc.seed);
    const double x0 = 1.0, start_t = 0.0;
    const auto opt = optimal_state(m, y, ens, x0, start_t);
    const auto thetas = run_detail::theta_indices(ens.time.size(), std::min(cfg.mc.theta_count, 4));

    CheckSet checks;
    CsvWriter w(outdir + "/sensitivity.csv", "theta,s,mean_abs_d_xi,max_abs_d_xi");
    double global_max = 0.0, before_theta_max = 0.0;
    for (std::size_t k : thetas) {
        const double theta = ens.time[k];
        const MalliavinField d_eta =
            d_coefficient_along(m, ens, theta,
                                [&m](double t, double x) { return m.deta_dx(t, x); },
                                DKind::D_eta);
        const MalliavinField d_H = solve_DH(m, pipe.grad_h(), ens, theta);
        const MalliavinField d_Y = assemble_DY(m, ens, d_eta, d_H, cfg.eps_cutoff());
        const auto d_xi = sensitivity_Xi(m, y, opt, ens, d_Y, d_eta);
        for (std::size_t mm = 0; mm <= d_Y.valid_until_idx; ++mm) {
            double mean = 0.0, worst = 0.0;
            for (std::size_t p = 0; p < ens.n_paths; ++p) {
                mean += std::abs(d_xi[p][mm]);
                worst = std::max(worst, std::abs(d_xi[p][mm]));
            }
            w.row({theta, ens.time[mm], mean / static_cast<double>(ens.n_paths), worst});
            global_max = std::max(global_max, worst);
            if (ens.time[mm] < theta) before_theta_max = std::max(before_theta_max, worst);
        }
    }
    checks.le("adapted_zero_before_theta", before_theta_max, 0.0);
    const UmiCheck uc = umi_check(m, grid);
    const bool det_eta = run_detail::eta_is_deterministic(m, grid);
    const bool det_gamma = run_detail::gamma_is_deterministic(m, grid);
    if (det_eta && det_gamma)
        checks.le("sensitivity_zero_deterministic", global_max, 1e-12 * std::abs(x0));
    else if (uc.is_umi && m.gamma_upper == 0.0)
        checks.le("sensitivity_umi_bound", global_max, 1e-3 * std::abs(x0));
    else
        checks.flag("sensitivity_reported", true);
    return run_detail::finish(checks, outdir);
}

// ---------------------------------------------------------------------------
// verify-oracle: closed-form battery
// ---------------------------------------------------------------------------
inline int cmd_verify_oracle(const ExperimentConfig& cfg, const std::string& outdir,
                             int /*threads*/) {
    run_detail::echo_config(cfg, outdir);
    const ModelSpec& m = cfg.model;
    CheckSet checks;

    // conjugate-exponent sweep
    {
        double worst = 0.0;
        for (int i = 0; i <= 500; ++i) {
            const double p = 1.01 + (10.0 - 1.01) * i / 500.0;
            worst = std::max(worst, std::abs((p - 1.0) * (holder_conjugate(p) - 1.0) - 1.0));
        }
        checks.le("holder_conjugacy_sweep", worst, 1e-12);
    }

    // closed kernels versus their averaged representations, and positivity
    {
        double worst = 0.0, neg = 0.0;
        for (double q : {1.5, 2.0, 2.67, 3.0}) {
            ModelSpec k;
            k.p = holder_conjugate(q);
            k.q = q;
            k.T = m.T;
            k.eta = [](double, double) { return 1.0; };
            k.eta_lower = 0.5;
            k.eta_upper = 2.0;
            for (int i = 0; i < 1000; ++i) {
                const auto blk = Philox2x64::generate(11u, static_cast<std::uint64_t>(q * 100), i);
                const auto blk2 =
                    Philox2x64::generate(13u, static_cast<std::uint64_t>(q * 100), i);
                const double tau = (0.05 + 0.9 * uniform_open(blk.a)) * k.T;
                const double ev = 0.5 + 1.5 * uniform_open(blk.b);
                const double w = (uniform_open(blk2.a) - 0.5) * 0.98; // inside the guard
                const double h = w * ev * tau;
                const double t = k.T - tau;
                const double g_d = eval_G(t, h, ev, k), g_i = eval_G_integral(t, h, ev, k);
                const double dh_d = eval_dG_dh(t, h, ev, k), dh_i = eval_dG_dh_integral(t, h, ev, k);
                const double de_d = eval_dG_deta(t, h, ev, k),
                             de_i = eval_dG_deta_integral(t, h, ev, k);
                const double s = std::max({1e-12, std::abs(g_i), std::abs(dh_i), std::abs(de_i)});
                worst = std::max({worst, std::abs(g_d - g_i) / std::max(1e-12, std::abs(g_i)),
                                  std::abs(dh_d - dh_i) / std::max(1e-12 * s, std::abs(dh_i)),
                                  std::abs(de_d - de_i) / std::max(1e-12 * s, std::abs(de_i))});
                neg = std::min(neg, g_d);
            }
        }
        checks.le("kernel_representation_agreement", worst, 1e-9);
        checks.ge("kernel_nonnegative_on_guard", neg, -1e-14);
    }

    if (!std::isnan(cfg.umi_g)) {
        const UmiSpec u{[g = cfg.umi_g](double) { return g; }, m.q, m.p, m.T};
        // quadrature self-consistency under tolerance halving
        {
            double worst = 0.0;
            for (double t : {0.0, 0.3 * m.T, 0.9 * m.T, m.T - 1e-4 * m.T})
                worst = std::max(worst, std::abs(umi_h(t, u, 1e-12) - umi_h(t, u, 5e-13)));
            checks.le("umi_quadrature_stability", worst, 1e-10);
        }
        // algebraic consistency of the two closed forms
        {
            double worst = 0.0;
            for (int i = 1; i <= 100; ++i) {
                const double t = m.T * i / 101.0;
                const double eta_t = m.eta_at(t, m.x0);
                const double tau = m.T - t;
                const double y1 = umi_Y(t, eta_t, u);
                const double y2 = eta_t / std::pow(tau, m.p - 1.0) +
                                  eta_t * tau * umi_h(t, u) / std::pow(tau, m.p);
                worst = std::max(worst, std::abs(y1 - y2) / std::abs(y1));
            }
            checks.le("umi_h_vs_Y_identity", worst, 1e-10);
        }
        // fixed point versus oracle profile
        {
            const SolveGrid grid = cfg.make_grid();
            const ExpansionSolution H = solve_H(m, grid, cfg.solver.tol, cfg.solver.max_iter);
            double worst = 0.0;
            for (std::size_t it = 0; it < H.h.nt(); ++it) {
                const double t = H.h.time_grid()[it];
                const double tau = m.T - t;
                if (tau < cfg.eps_cutoff() - 1e-15) continue;
                const double oracle = umi_h(t, u);
                const double num = H.h.interpolate(t, m.x0) / (m.eta_at(t, m.x0) * tau);
                worst = std::max(worst, std::abs(num - oracle) / std::max(1e-12, std::abs(oracle)));
            }
            checks.le("picard_vs_umi_oracle", worst, 1e-3);

            // the normalized value field is deterministic under this family
            const TimeSpaceField y = assemble_Y(m, H.h, cfg.eps_cutoff());
            const PathEnsemble ens =
                simulate(m, std::min<std::size_t>(cfg.mc.n_paths, 2000), cfg.mc_time_grid(),
                         cfg.mc.seed);
            double worst_cv = 0.0;
            for (std::size_t mm = 0; mm < ens.time.size(); mm += ens.time.size() / 16) {
                const double t = ens.time[mm];
                if (t > m.T - cfg.eps_cutoff()) continue;
                double s1 = 0.0, s2 = 0.0;
                for (std::size_t p = 0; p < ens.n_paths; ++p) {
                    const double ratio = y.interpolate_clamped(t, ens.state(p, mm)) /
                                         m.eta_at(t, ens.state(p, mm));
                    s1 += ratio;
                    s2 += ratio * ratio;
                }
                const double n = static_cast<double>(ens.n_paths);
                const double mean = s1 / n;
                const double sd = std::sqrt(std::max(0.0, s2 / n - mean * mean));
                worst_cv = std::max(worst_cv, sd / mean);
            }
            checks.le("umi_y_over_eta_dispersion", worst_cv, 1e-3);
        }
    }

    // drift-ratio classification of the configured model
    {
        const SolveGrid grid = cfg.make_grid();
        const UmiCheck uc = umi_check(m, grid);
        if (!std::isnan(cfg.umi_g) || cfg.eta_family == "constant")
            checks.flag("umi_check_positive", uc.is_umi);
        else
            checks.flag("umi_check_ran", true);
    }

    // deterministic-impact family: the correction response must sit inside the
    // explicit (T-t)^p penalty-mass envelope
    {
        const SolveGrid grid = cfg.make_grid();
        if (run_detail::eta_is_deterministic(m, grid) &&
            !run_detail::gamma_is_deterministic(m, grid)) {
            const TimeSpaceField curve = deterministic_eta_sensitivity_bound(m, grid);
            const ExpansionSolution H = solve_H(m, grid, cfg.solver.tol, cfg.solver.max_iter);
            const TimeSpaceField grad_h = grad_h_variational(m, H.h, grid);
            double c_fit = 0.0;
            bool finite = true;
            for (std::size_t it = 0; it < grad_h.nt(); ++it)
                for (std::size_t ix = 0; ix < grad_h.nx(); ++ix) {
                    const double num = std::abs(grad_h.at(it, ix));
                    const double den = curve.at(it, ix);
                    if (den > 1e-13)
                        c_fit = std::max(c_fit, num / den);
                    else if (num > 1e-10)
                        finite = false;
                }
            checks.flag("det_eta_response_inside_envelope", finite);
            checks.le("det_eta_envelope_constant", c_fit, 1e3);
        }
    }
    return run_detail::finish(checks, outdir);
}

// ---------------------------------------------------------------------------
// verify-bounds: every certified envelope on one config
// ---------------------------------------------------------------------------
inline int cmd_verify_bounds(const ExperimentConfig& cfg, const std::string& outdir, int threads) {
    run_detail::echo_config(cfg, outdir);
    const ModelSpec& m = cfg.model;
    const SolveGrid grid = cfg.make_grid();
    const double eps = cfg.eps_cutoff();
    CheckSet checks;

    const ExpansionSolution H = solve_H(m, grid, cfg.solver.tol, cfg.solver.max_iter);
    checks.le("picard_ball_violation", H.report.ball_violation_max, 1e-9);
    checks.le("picard_contraction_ratio", run_detail::max_ratio(H.report.contraction_ratios), 0.6);
    checks.le("picard_guard_ratio", H.report.guard_ratio_max, 0.5 + 1e-9);

    const MonotoneLimit ml = monotone_limit(m, cfg.solver.levels, grid, eps);
    double worst_bound = 0.0, worst_mono = 0.0;
    for (const LevelRow& r : ml.table) {
        worst_bound = std::max(worst_bound, r.bound_violation);
        worst_mono = std::max(worst_mono, r.monotonicity_violation);
    }
    checks.le("apriori_bound_violation", worst_bound, 1e-6);
    checks.le("monotonicity_violation", worst_mono, 1e-6);
    checks.le("lower_bound_violation",
              run_detail::lower_bound_violation(
                  ml.y, minimal_solution_lower_bound(m, grid), m.T, eps),
              1e-3);

    const HnBounds hb = hn_bounds(m);
    double lower_v = 0.0, upper_v = 0.0, kappa_min_margin = 0.0;
    std::vector<double> hn_levels{hb.n0, 4.0 * hb.n0};
    std::vector<ShiftedSolution> shifted(hn_levels.size());
    parallel_for(hn_levels.size(), threads, [&](std::size_t i) {
        shifted[i] = solve_Hn(m, hn_levels[i], grid, &hb);
    });
    bool kappa_pass = true;
    for (const auto& s : shifted) {
        const SandwichCheck sc = check_hn_sandwich(m, s, hb);
        lower_v = std::max(lower_v, sc.lower_violation);
        upper_v = std::max(upper_v, sc.upper_violation);
        const KernelSlopeCheck ks = kernel_slope_lower_bound(m, s, hb);
        kappa_pass = kappa_pass && ks.pass;
        kappa_min_margin = std::min(kappa_min_margin, ks.min_on_window + ks.kappa1);
    }
    checks.le("sandwich_lower_violation", lower_v, 1e-8);
    checks.le("sandwich_upper_violation", upper_v, 1e-8);
    checks.flag("kernel_slope_lower_bound", kappa_pass);

    const MalliavinPipeline pipe(m, grid, H.h);
    const ResponseBound rb =
        response_envelope_constant(m, pipe.grad_h(), zeta_mass_field(m, grid));
    checks.flag("response_envelope_finite", rb.finite);

    CsvWriter w(outdir + "/bounds_ledger.csv",
                "R,L,delta,C1,C2,n0,ball_violation,guard_ratio,apriori_violation,"
                "lower_bound_violation,sandwich_lower,sandwich_upper,kappa_margin,envelope_C");
    w.row({H.constants.R, H.constants.L, H.constants.delta, hb.c1, hb.c2, hb.n0,
           H.report.ball_violation_max, H.report.guard_ratio_max, worst_bound,
           run_detail::lower_bound_violation(ml.y, minimal_solution_lower_bound(m, grid), m.T,
                                             eps),
           lower_v, upper_v, kappa_min_margin, rb.c_fitted});
    return run_detail::finish(checks, outdir);
}

inline int run_command(const std::string& cmd, const ExperimentConfig& cfg,
                       const std::string& outdir, int threads) {
    if (cmd == "solve-y") return cmd_solve_y(cfg, outdir, threads);
    if (cmd == "truncated") return cmd_truncated(cfg, outdir, threads);
    if (cmd == "picard") return cmd_picard(cfg, outdir, threads);
    if (cmd == "malliavin") return cmd_malliavin(cfg, outdir, threads);
    if (cmd == "converge") return cmd_converge(cfg, outdir, threads);
    if (cmd == "liquidate") return cmd_liquidate(cfg, outdir, threads);
    if (cmd == "sensitivity") return cmd_sensitivity(cfg, outdir, threads);
    if (cmd == "verify-oracle") return cmd_verify_oracle(cfg, outdir, threads);
    if (cmd == "verify-bounds") return cmd_verify_bounds(cfg, outdir, threads);
    throw config_error("unknown subcommand '" + cmd + "'");
}

} // namespace singliq
