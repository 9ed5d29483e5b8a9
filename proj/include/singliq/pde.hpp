#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "singliq/errors.hpp"
#include "singliq/grids.hpp"

namespace singliq {

/// Terminal-value problems on [0,T] x [x_lo, x_hi]:
///
///   d_t w + a(t,x) d_x w + (1/2) s(t,x)^2 d_xx w + c(t,x) w + f(t,x,w) = 0,
///   w(T, .) = terminal(x),
///
/// reflecting (homogeneous Neumann) boundaries, Crank-Nicolson in time with a
/// Newton solve per slab when f depends on w. Coefficients are callables so
/// the same engine serves the base operator and its variational companions.
class ParabolicSolver {
public:
    using Fn2 = std::function<double(double, double)>;
    using Gen = std::function<double(double, double, double)>; // (t, x, w)

    struct Problem {
        Fn2 drift;            // a(t,x); null -> 0
        Fn2 sigma;            // s(t,x); null -> 0
        Fn2 zeroth;           // c(t,x); null -> 0
        Fn2 source;           // f(t,x); null -> 0 (linear problems)
        Gen generator;        // f(t,x,w); overrides source when set
        Gen generator_dw;     // analytic d f/d w; null -> finite difference
        std::function<double(double)> terminal; // w(T,x)
        double newton_tol = 1e-10;
        int newton_max_iter = 50;
    };

    static TimeSpaceField solve(const Problem& pb, const SolveGrid& grid,
                                const std::string& label = {}) {
        const std::size_t M = grid.t.size(), J = grid.x.size();
        if (M < 2 || J < 2) throw config_error("ParabolicSolver: degenerate grid");
        TimeSpaceField w(grid.t, grid.x, label);
        const double dx = grid.x[1] - grid.x[0];

        for (std::size_t j = 0; j < J; ++j)
            w.at(M - 1, j) = pb.terminal ? pb.terminal(grid.x[j]) : 0.0;

        std::vector<double> lo(J), di(J), up(J), rhs(J), expl(J), cur(J), res(J), dlt(J);
        std::vector<double> lo_m(J), di_m(J), up_m(J);

        for (std::size_t m = M - 1; m-- > 0;) {
            const double t0 = grid.t[m], t1 = grid.t[m + 1];
            const double dt = t1 - t0;
            if (!(dt > 0.0)) throw config_error("ParabolicSolver: non-monotone time grid");
            const double* prev = w.row(m + 1);

            // Explicit half: (I + dt/2 A(t1)) w^{m+1} + dt/2 f(t1, w^{m+1}).
            assemble_rows(pb, grid, t1, dx, lo, di, up);
            for (std::size_t j = 0; j < J; ++j) {
                double Aw = di[j] * prev[j];
                if (j > 0) Aw += lo[j] * prev[j - 1];
                if (j + 1 < J) Aw += up[j] * prev[j + 1];
                expl[j] = prev[j] + 0.5 * dt * (Aw + inhomog(pb, t1, grid.x[j], prev[j]));
            }

            assemble_rows(pb, grid, t0, dx, lo_m, di_m, up_m);
            for (std::size_t j = 0; j < J; ++j) {
                lo[j] = -0.5 * dt * lo_m[j];
                di[j] = 1.0 - 0.5 * dt * di_m[j];
                up[j] = -0.5 * dt * up_m[j];
            }

            double* out = w.row(m);
            if (!pb.generator) {
                for (std::size_t j = 0; j < J; ++j)
                    rhs[j] = expl[j] + 0.5 * dt * (pb.source ? pb.source(t0, grid.x[j]) : 0.0);
                thomas(lo, di, up, rhs, out, J, t0);
            } else {
                newton_slab(pb, grid, t0, dt, lo, di, up, expl, prev, cur, res, dlt, out, J);
            }
            for (std::size_t j = 0; j < J; ++j)
                if (!std::isfinite(out[j]))
                    throw numerical_error("ParabolicSolver: non-finite value at t=" +
                                          std::to_string(t0));
        }
        return w;
    }

private:
    static double inhomog(const Problem& pb, double t, double x, double wv) {
        if (pb.generator) return pb.generator(t, x, wv);
        return pb.source ? pb.source(t, x) : 0.0;
    }

    // Rows of A = a d_x + (1/2) s^2 d_xx + c with mirror ghost nodes at the ends.
    static void assemble_rows(const Problem& pb, const SolveGrid& grid, double t, double dx,
                              std::vector<double>& lo, std::vector<double>& di,
                              std::vector<double>& up) {
        const std::size_t J = grid.x.size();
        for (std::size_t j = 0; j < J; ++j) {
            const double x = grid.x[j];
            const double a = pb.drift ? pb.drift(t, x) : 0.0;
            const double s = pb.sigma ? pb.sigma(t, x) : 0.0;
            const double D = 0.5 * s * s;
            const double c = pb.zeroth ? pb.zeroth(t, x) : 0.0;
            if (j == 0) {
                di[j] = -2.0 * D / (dx * dx) + c;
                up[j] = 2.0 * D / (dx * dx);
                lo[j] = 0.0;
            } else if (j + 1 == J) {
                di[j] = -2.0 * D / (dx * dx) + c;
                lo[j] = 2.0 * D / (dx * dx);
                up[j] = 0.0;
            } else {
                lo[j] = D / (dx * dx) - a / (2.0 * dx);
                di[j] = -2.0 * D / (dx * dx) + c;
                up[j] = D / (dx * dx) + a / (2.0 * dx);
            }
        }
    }

    static void thomas(const std::vector<double>& lo, const std::vector<double>& di,
                       const std::vector<double>& up, const std::vector<double>& rhs,
                       double* out, std::size_t J, double t_diag) {
        static thread_local std::vector<double> cp, dp;
        cp.assign(J, 0.0);
        dp.assign(J, 0.0);
        double piv = di[0];
        if (std::abs(piv) < 1e-300)
            throw numerical_error("tridiagonal solve: zero pivot at t=" + std::to_string(t_diag));
        cp[0] = up[0] / piv;
        dp[0] = rhs[0] / piv;
        for (std::size_t j = 1; j < J; ++j) {
            piv = di[j] - lo[j] * cp[j - 1];
            if (std::abs(piv) < 1e-300)
                throw numerical_error("tridiagonal solve: zero pivot (row " + std::to_string(j) +
                                      ", t=" + std::to_string(t_diag) + ")");
            cp[j] = up[j] / piv;
            dp[j] = (rhs[j] - lo[j] * dp[j - 1]) / piv;
        }
        out[J - 1] = dp[J - 1];
        for (std::size_t j = J - 1; j-- > 0;) out[j] = dp[j] - cp[j] * out[j + 1];
    }

    static void newton_slab(const Problem& pb, const SolveGrid& grid, double t0, double dt,
                            const std::vector<double>& lo, const std::vector<double>& di,
                            const std::vector<double>& up, const std::vector<double>& expl,
                            const double* prev, std::vector<double>& cur, std::vector<double>& res,
                            std::vector<double>& dlt, double* out, std::size_t J) {
        static thread_local std::vector<double> jlo, jdi, jup;
        jlo.assign(J, 0.0);
        jdi.assign(J, 0.0);
        jup.assign(J, 0.0);
        for (std::size_t j = 0; j < J; ++j) cur[j] = prev[j];

        for (int iter = 0; iter < pb.newton_max_iter; ++iter) {
            double rnorm = 0.0, wnorm = 1.0;
            for (std::size_t j = 0; j < J; ++j) {
                double Bw = di[j] * cur[j];
                if (j > 0) Bw += lo[j] * cur[j - 1];
                if (j + 1 < J) Bw += up[j] * cur[j + 1];
                res[j] = Bw - 0.5 * dt * pb.generator(t0, grid.x[j], cur[j]) - expl[j];
                rnorm = std::max(rnorm, std::abs(res[j]));
                wnorm = std::max(wnorm, std::abs(cur[j]));
            }
            // at least one correction per slab: tiny slabs would otherwise
            // accept the stale initial guess
            if (iter > 0 && rnorm <= pb.newton_tol * wnorm) {
                for (std::size_t j = 0; j < J; ++j) out[j] = cur[j];
                return;
            }
            for (std::size_t j = 0; j < J; ++j) {
                const double gw = pb.generator_dw
                                      ? pb.generator_dw(t0, grid.x[j], cur[j])
                                      : fd_dw(pb.generator, t0, grid.x[j], cur[j]);
                jlo[j] = lo[j];
                jdi[j] = di[j] - 0.5 * dt * gw;
                jup[j] = up[j];
                res[j] = -res[j];
            }
            thomas(jlo, jdi, jup, res, dlt.data(), J, t0);
            for (std::size_t j = 0; j < J; ++j) cur[j] += dlt[j];
        }
        throw numerical_error("ParabolicSolver: Newton failed to converge at t=" +
                              std::to_string(t0));
    }

    static double fd_dw(const Gen& g, double t, double x, double wv) {
        const double h = 1e-7 * std::max(1.0, std::abs(wv));
        return (g(t, x, wv + h) - g(t, x, wv - h)) / (2.0 * h);
    }
};

/// Conditional-expectation solve: w(t,x) = E[ integral of source + terminal ]
/// under the model's forward dynamics.
inline TimeSpaceField solve_linear_parabolic(const ModelSpec& spec,
                                             std::function<double(double)> terminal,
                                             ParabolicSolver::Fn2 source,
                                             ParabolicSolver::Fn2 zeroth,
                                             const SolveGrid& grid,
                                             const std::string& label = {}) {
    ParabolicSolver::Problem pb;
    pb.drift = [&spec](double t, double x) { return spec.b_at(t, x); };
    pb.sigma = [&spec](double t, double x) { return spec.sigma_at(t, x); };
    pb.zeroth = std::move(zeroth);
    pb.source = std::move(source);
    pb.terminal = std::move(terminal);
    return ParabolicSolver::solve(pb, grid, label);
}

inline TimeSpaceField solve_semilinear(const ModelSpec& spec,
                                       std::function<double(double)> terminal,
                                       ParabolicSolver::Gen generator,
                                       const SolveGrid& grid,
                                       const std::string& label = {},
                                       ParabolicSolver::Gen generator_dw = nullptr) {
    ParabolicSolver::Problem pb;
    pb.drift = [&spec](double t, double x) { return spec.b_at(t, x); };
    pb.sigma = [&spec](double t, double x) { return spec.sigma_at(t, x); };
    pb.generator = std::move(generator);
    pb.generator_dw = std::move(generator_dw);
    pb.terminal = std::move(terminal);
    return ParabolicSolver::solve(pb, grid, label);
}

/// Flow-weighted conditional expectation
///   v(t,x) = E[ integral_t^T c(u,X_u) (grad X_u / grad X_t) du  + terminal(X_T) grad X_T/grad X_t ],
/// the operator behind spatial gradients of solved fields: same diffusion,
/// drift augmented by s d_x s, zeroth-order d_x b plus any extra reaction term.
inline TimeSpaceField solve_variational_linear(const ModelSpec& spec,
                                               std::function<double(double)> terminal,
                                               ParabolicSolver::Fn2 source,
                                               ParabolicSolver::Fn2 extra_zeroth,
                                               const SolveGrid& grid,
                                               const std::string& label = {}) {
    ParabolicSolver::Problem pb;
    pb.drift = [&spec](double t, double x) {
        return spec.b_at(t, x) + spec.sigma_at(t, x) * spec.dsigma_dx(t, x);
    };
    pb.sigma = [&spec](double t, double x) { return spec.sigma_at(t, x); };
    pb.zeroth = [&spec, z = std::move(extra_zeroth)](double t, double x) {
        return spec.db_dx(t, x) + (z ? z(t, x) : 0.0);
    };
    pb.source = std::move(source);
    pb.terminal = std::move(terminal);
    return ParabolicSolver::solve(pb, grid, label);
}

} // namespace singliq
