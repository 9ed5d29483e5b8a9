#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "singliq/errors.hpp"
#include "singliq/model.hpp"
#include "singliq/rng.hpp"

namespace singliq {

/// Euler paths of the forward state together with the first-variation flow
/// grad X (derivative w.r.t. the initial condition, started at 1). Immutable
/// after construction; storage is row-major [path][time].
struct PathEnsemble {
    std::size_t n_paths = 0;
    std::vector<double> time;
    std::vector<double> x;      // state
    std::vector<double> nabla;  // first-variation flow
    std::vector<double> dw;     // Brownian increments, dw[p][m] drives step m -> m+1
    std::uint64_t seed = 0;

    std::size_t steps() const { return time.size(); }
    double state(std::size_t p, std::size_t m) const { return x[p * time.size() + m]; }
    double flow(std::size_t p, std::size_t m) const { return nabla[p * time.size() + m]; }
    double increment(std::size_t p, std::size_t m) const { return dw[p * time.size() + m]; }
};

inline PathEnsemble simulate(const ModelSpec& spec, std::size_t n_paths,
                             std::vector<double> time_grid, std::uint64_t seed) {
    const std::size_t M = time_grid.size();
    if (M < 2) throw config_error("simulate: need at least two time nodes");
    for (std::size_t m = 0; m + 1 < M; ++m)
        if (!(time_grid[m + 1] > time_grid[m]))
            throw config_error("simulate: time grid must be strictly increasing");

    PathEnsemble ens;
    ens.n_paths = n_paths;
    ens.time = std::move(time_grid);
    ens.seed = seed;
    ens.x.assign(n_paths * M, 0.0);
    ens.nabla.assign(n_paths * M, 0.0);
    ens.dw.assign(n_paths * M, 0.0);

    for (std::size_t p = 0; p < n_paths; ++p) {
        double xv = spec.x0, fv = 1.0;
        ens.x[p * M] = xv;
        ens.nabla[p * M] = fv;
        for (std::size_t m = 0; m + 1 < M; ++m) {
            const double t = ens.time[m];
            const double dt = ens.time[m + 1] - t;
            const double dWm = std::sqrt(dt) * normal_at(seed, p, m);
            ens.dw[p * M + m] = dWm;
            const double b = spec.b_at(t, xv), s = spec.sigma_at(t, xv);
            const double bx = spec.db_dx(t, xv), sx = spec.dsigma_dx(t, xv);
            fv *= 1.0 + bx * dt + sx * dWm;
            xv += b * dt + s * dWm;
            if (!std::isfinite(xv) || !std::isfinite(fv))
                throw numerical_error("simulate: non-finite state on path " + std::to_string(p) +
                                      " at step " + std::to_string(m));
            if (!(fv > 0.0))
                throw numerical_error("simulate: variational flow lost positivity on path " +
                                      std::to_string(p) + " at step " + std::to_string(m) +
                                      " (refine the time grid)");
            ens.x[p * M + m + 1] = xv;
            ens.nabla[p * M + m + 1] = fv;
        }
    }
    return ens;
}

/// Locate theta on the ensemble grid; the perturbation-time identity is exact
/// only at grid nodes, so off-grid values are refused rather than interpolated.
inline std::size_t theta_index(const PathEnsemble& ens, double theta) {
    for (std::size_t m = 0; m < ens.time.size(); ++m)
        if (std::abs(ens.time[m] - theta) <= 1e-12 * std::max(1.0, ens.time.back()))
            return m;
    throw std::domain_error("theta_index: theta is not a grid node");
}

/// Sensitivity of the state to a Brownian perturbation at theta:
/// flow ratio times the volatility loading, zero before theta.
inline std::vector<double> malliavin_X(const PathEnsemble& ens, double theta,
                                       const ModelSpec& spec) {
    const std::size_t M = ens.time.size();
    const std::size_t k = theta_index(ens, theta);
    std::vector<double> d(ens.n_paths * M, 0.0);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        const double load = spec.sigma_at(ens.time[k], ens.state(p, k)) / ens.flow(p, k);
        for (std::size_t m = k; m < M; ++m) d[p * M + m] = ens.flow(p, m) * load;
    }
    return d;
}

/// Max discrepancy between the flow-ratio formula and integrating the state
/// response as its own linear recursion on the same noise. The two coincide up
/// to roundoff; the return value is the worst absolute gap over paths/times.
inline double flow_identity_max_error(const ModelSpec& spec, const PathEnsemble& ens,
                                      double theta) {
    const std::size_t M = ens.time.size();
    const std::size_t k = theta_index(ens, theta);
    const std::vector<double> via_flow = malliavin_X(ens, theta, spec);
    double worst = 0.0;
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        double d = spec.sigma_at(ens.time[k], ens.state(p, k));
        worst = std::max(worst, std::abs(d - via_flow[p * M + k]));
        for (std::size_t m = k; m + 1 < M; ++m) {
            const double t = ens.time[m], x = ens.state(p, m);
            const double dt = ens.time[m + 1] - t;
            d *= 1.0 + spec.db_dx(t, x) * dt + spec.dsigma_dx(t, x) * ens.increment(p, m);
            worst = std::max(worst, std::abs(d - via_flow[p * M + m + 1]));
        }
    }
    return worst;
}

inline void save_ensemble(const PathEnsemble& ens, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw numerical_error("save_ensemble: cannot open " + path);
    const std::uint64_t magic = 0x534C504154485331ULL;
    const std::uint64_t np = ens.n_paths, nm = ens.time.size();
    os.write(reinterpret_cast<const char*>(&magic), 8);
    os.write(reinterpret_cast<const char*>(&np), 8);
    os.write(reinterpret_cast<const char*>(&nm), 8);
    os.write(reinterpret_cast<const char*>(&ens.seed), 8);
    auto blk = [&os](const std::vector<double>& v) {
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    blk(ens.time);
    blk(ens.x);
    blk(ens.nabla);
    blk(ens.dw);
}

inline PathEnsemble load_ensemble(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw numerical_error("load_ensemble: cannot open " + path);
    std::uint64_t magic = 0, np = 0, nm = 0;
    PathEnsemble ens;
    is.read(reinterpret_cast<char*>(&magic), 8);
    is.read(reinterpret_cast<char*>(&np), 8);
    is.read(reinterpret_cast<char*>(&nm), 8);
    is.read(reinterpret_cast<char*>(&ens.seed), 8);
    if (!is || magic != 0x534C504154485331ULL) throw numerical_error("load_ensemble: bad header");
    ens.n_paths = np;
    auto blk = [&is](std::vector<double>& v, std::size_t n) {
        v.resize(n);
        is.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!is) throw numerical_error("load_ensemble: truncated file");
    };
    blk(ens.time, nm);
    blk(ens.x, np * nm);
    blk(ens.nabla, np * nm);
    blk(ens.dw, np * nm);
    return ens;
}

} // namespace singliq
