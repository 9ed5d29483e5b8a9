#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "singliq/errors.hpp"
#include "singliq/model.hpp"

namespace singliq {

/// Time ladder refined toward the horizon: node spacing tracks (1-ratio)*(T-t)
/// down to tau_min (so node density ~ 1/(T-t) near T), with a uniform section
/// away from T sized by bisection to hit the requested interval count.
inline std::vector<double> refined_time_grid(double T, int nt, double ratio = 0.9,
                                             double tau_min = 1e-9) {
    if (!(T > 0.0) || nt < 4) throw config_error("refined_time_grid: need T > 0 and nt >= 4");
    if (!(ratio > 0.0 && ratio < 1.0)) throw config_error("refined_time_grid: ratio in (0,1)");
    tau_min = std::min(tau_min, T / 16.0);

    // Remaining-time ladder from tau_min up to T given a uniform cap du.
    const auto build = [&](double du) {
        std::vector<double> tau{0.0, tau_min};
        double t = tau_min;
        while (t < T) {
            double next = std::min(t + du, t / ratio);
            if (next > T || T - next < 0.25 * (next - t)) next = T;
            tau.push_back(next);
            t = next;
        }
        tau.back() = T;
        return tau;
    };

    const int geo_steps = static_cast<int>(std::ceil(std::log(T / tau_min) / std::log(1.0 / ratio)));
    std::vector<double> tau;
    if (nt <= geo_steps + 2) {
        // Too few intervals for the target ratio: fall back to a pure
        // log-uniform ladder with the ratio the budget affords.
        const double rho = std::pow(tau_min / T, 1.0 / (nt - 1));
        tau.assign(1, 0.0);
        for (int k = nt - 1; k >= 0; --k) tau.push_back(T * std::pow(rho, k));
        tau.back() = T;
    } else {
        double lo = tau_min, hi = T;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (static_cast<int>(build(mid).size()) - 1 > nt)
                lo = mid;
            else
                hi = mid;
        }
        tau = build(hi);
    }

    std::vector<double> t_grid(tau.size());
    for (std::size_t i = 0; i < tau.size(); ++i) t_grid[i] = T - tau[tau.size() - 1 - i];
    t_grid.front() = 0.0;
    t_grid.back() = T;
    return t_grid;
}

inline std::vector<double> uniform_grid(double lo, double hi, int n_nodes) {
    if (n_nodes < 2 || !(hi > lo)) throw config_error("uniform_grid: bad range or node count");
    std::vector<double> g(n_nodes);
    for (int i = 0; i < n_nodes; ++i) g[i] = lo + (hi - lo) * i / (n_nodes - 1);
    g.front() = lo;
    g.back() = hi;
    return g;
}

/// Shared discretization of one problem instance: refined time ladder plus a
/// uniform state lattice wide enough that the forward diffusion stays inside.
struct SolveGrid {
    std::vector<double> t;
    std::vector<double> x;

    static SolveGrid make(const ModelSpec& spec, int nt, int nx, double ratio = 0.9,
                          double tau_min = 1e-9, double halfwidth_sigmas = 6.0) {
        SolveGrid g;
        g.t = refined_time_grid(spec.T, nt, ratio, tau_min);
        double sig_max = 0.0;
        for (int i = 0; i <= 32; ++i)
            for (int j = 0; j <= 32; ++j)
                sig_max = std::max(sig_max, std::abs(spec.sigma_at(spec.T * i / 32.0,
                                                                   spec.x0 + (j - 16.0) / 4.0)));
        double half = halfwidth_sigmas * sig_max * std::sqrt(spec.T);
        if (half <= 0.0) half = 1.0; // deterministic state: any bounded box will do
        g.x = uniform_grid(spec.x0 - half, spec.x0 + half, nx);
        return g;
    }
};

/// A function of (t, x) stored on a time-space grid; bilinear between nodes.
class TimeSpaceField {
public:
    TimeSpaceField() = default;
    TimeSpaceField(std::vector<double> time_grid, std::vector<double> space_grid,
                   std::string label = {})
        : t_(std::move(time_grid)), x_(std::move(space_grid)),
          v_(t_.size() * x_.size(), 0.0), label_(std::move(label)) {}

    std::size_t nt() const { return t_.size(); }
    std::size_t nx() const { return x_.size(); }
    const std::vector<double>& time_grid() const { return t_; }
    const std::vector<double>& space_grid() const { return x_; }
    const std::string& label() const { return label_; }
    void set_label(std::string l) { label_ = std::move(l); }

    double& at(std::size_t it, std::size_t ix) { return v_[it * x_.size() + ix]; }
    double at(std::size_t it, std::size_t ix) const { return v_[it * x_.size() + ix]; }

    const double* row(std::size_t it) const { return v_.data() + it * x_.size(); }
    double* row(std::size_t it) { return v_.data() + it * x_.size(); }

    void check_finite(const std::string& who) const {
        for (double v : v_)
            if (!std::isfinite(v)) throw numerical_error(who + ": non-finite field value");
    }

    double interpolate(double t, double x) const { return interp_impl(t, x, false); }

    /// Clamped variant for evaluation along simulated paths; the state lattice
    /// is wide enough that clamping is a tail event, and the fields are flat
    /// at the edges under the reflecting boundary.
    double interpolate_clamped(double t, double x) const { return interp_impl(t, x, true); }

    TimeSpaceField gradient_x() const {
        if (x_.size() < 3) throw std::domain_error("gradient_x: need at least 3 space nodes");
        TimeSpaceField g(t_, x_, label_.empty() ? "" : label_ + "_dx");
        const std::size_t J = x_.size() - 1;
        const double dx = x_[1] - x_[0];
        for (std::size_t it = 0; it < t_.size(); ++it) {
            const double* r = row(it);
            double* o = g.row(it);
            o[0] = (-3.0 * r[0] + 4.0 * r[1] - r[2]) / (2.0 * dx);
            for (std::size_t i = 1; i < J; ++i) o[i] = (r[i + 1] - r[i - 1]) / (2.0 * dx);
            o[J] = (3.0 * r[J] - 4.0 * r[J - 1] + r[J - 2]) / (2.0 * dx);
        }
        return g;
    }

    void to_csv(const std::string& path) const;
    void to_binary(const std::string& path) const;
    static TimeSpaceField from_binary(const std::string& path);

private:
    std::vector<double> t_, x_, v_;
    std::string label_;

    static std::size_t bracket(const std::vector<double>& g, double v) {
        auto it = std::upper_bound(g.begin(), g.end(), v);
        std::size_t hi = static_cast<std::size_t>(it - g.begin());
        if (hi == 0) hi = 1;
        if (hi == g.size()) hi = g.size() - 1;
        return hi - 1;
    }

    double interp_impl(double t, double x, bool clamp) const {
        const double ttol = 1e-12 * std::max(1.0, std::abs(t_.back()));
        const double xtol = 1e-12 * std::max(1.0, std::abs(x_.back()) + std::abs(x_.front()));
        if (t < t_.front() - ttol || t > t_.back() + ttol)
            throw std::domain_error("interpolate: t outside grid hull");
        if (!clamp && (x < x_.front() - xtol || x > x_.back() + xtol))
            throw std::domain_error("interpolate: x outside grid hull");
        t = std::clamp(t, t_.front(), t_.back());
        x = std::clamp(x, x_.front(), x_.back());
        const std::size_t it = bracket(t_, t), ix = bracket(x_, x);
        const double wt = (t_[it + 1] > t_[it]) ? (t - t_[it]) / (t_[it + 1] - t_[it]) : 0.0;
        const double wx = (x_[ix + 1] > x_[ix]) ? (x - x_[ix]) / (x_[ix + 1] - x_[ix]) : 0.0;
        const double v00 = at(it, ix), v01 = at(it, ix + 1);
        const double v10 = at(it + 1, ix), v11 = at(it + 1, ix + 1);
        return (1.0 - wt) * ((1.0 - wx) * v00 + wx * v01) + wt * ((1.0 - wx) * v10 + wx * v11);
    }
};

namespace detail {
inline void write_f64(std::ofstream& os, const double* p, std::size_t n) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}
inline void read_f64(std::ifstream& is, double* p, std::size_t n) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw numerical_error("binary field: truncated file");
}
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
} // namespace detail

inline void TimeSpaceField::to_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw numerical_error("to_csv: cannot open " + path);
    os << "t,x,value\n";
    for (std::size_t it = 0; it < t_.size(); ++it)
        for (std::size_t ix = 0; ix < x_.size(); ++ix)
            os << detail::fmt17(t_[it]) << ',' << detail::fmt17(x_[ix]) << ','
               << detail::fmt17(at(it, ix)) << '\n';
}

// Flat little-endian layout shared with the path ensembles:
// magic, counts, grids, then the row-major value block.
inline void TimeSpaceField::to_binary(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw numerical_error("to_binary: cannot open " + path);
    const std::uint64_t magic = 0x534C46444C444631ULL, n_t = t_.size(), n_x = x_.size();
    os.write(reinterpret_cast<const char*>(&magic), 8);
    os.write(reinterpret_cast<const char*>(&n_t), 8);
    os.write(reinterpret_cast<const char*>(&n_x), 8);
    detail::write_f64(os, t_.data(), t_.size());
    detail::write_f64(os, x_.data(), x_.size());
    detail::write_f64(os, v_.data(), v_.size());
}

inline TimeSpaceField TimeSpaceField::from_binary(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw numerical_error("from_binary: cannot open " + path);
    std::uint64_t magic = 0, n_t = 0, n_x = 0;
    is.read(reinterpret_cast<char*>(&magic), 8);
    is.read(reinterpret_cast<char*>(&n_t), 8);
    is.read(reinterpret_cast<char*>(&n_x), 8);
    if (!is || magic != 0x534C46444C444631ULL) throw numerical_error("from_binary: bad header");
    std::vector<double> t(n_t), x(n_x);
    detail::read_f64(is, t.data(), n_t);
    detail::read_f64(is, x.data(), n_x);
    TimeSpaceField f(std::move(t), std::move(x));
    detail::read_f64(is, f.v_.data(), f.v_.size());
    return f;
}

} // namespace singliq
