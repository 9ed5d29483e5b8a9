#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "singliq/errors.hpp"
#include "singliq/grids.hpp"
#include "singliq/model.hpp"

namespace singliq {

struct GridConfig {
    int nt = 800;
    int nx = 201;
    double ratio = 0.9;
    double tau_min = 1e-9;
    double halfwidth_sigmas = 6.0;
    double eps_cutoff = -1.0; // < 0: use 1e-3 * T
};

struct McConfig {
    std::size_t n_paths = 10000;
    int nt = 1000;
    std::uint64_t seed = 20240601;
    int theta_count = 16;
};

struct SolverConfig {
    double tol = 1e-10;
    int max_iter = 200;
    std::vector<double> levels{4, 16, 64, 256, 1024};
    double ell = 2.0;
    double rho = 4.0;
};

struct OutputConfig {
    std::string dir = "out";
    std::vector<std::string> formats{"csv"};
};

struct ExperimentConfig {
    ModelSpec model;
    GridConfig grid;
    McConfig mc;
    SolverConfig solver;
    OutputConfig outputs;
    std::string eta_family;
    double umi_g = std::numeric_limits<double>::quiet_NaN(); // set for the umi family
    nlohmann::json resolved;

    double eps_cutoff() const {
        return grid.eps_cutoff > 0.0 ? grid.eps_cutoff : 1e-3 * model.T;
    }
    SolveGrid make_grid() const {
        return SolveGrid::make(model, grid.nt, grid.nx, grid.ratio, grid.tau_min,
                               grid.halfwidth_sigmas);
    }
    std::vector<double> mc_time_grid() const {
        return uniform_grid(0.0, model.T, mc.nt + 1);
    }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys,
                           const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : keys)
            if (it.key() == k) known = true;
        if (!known) throw config_error("config: unknown key '" + it.key() + "' in " + where);
    }
}

inline double req_num(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_number())
        throw config_error("config: missing numeric '" + std::string(key) + "' in " + where);
    return j[key].get<double>();
}

struct SdeSpec {
    CoefficientFn b;
    CoefficientFn sigma;
    CoefficientFn db_dx_symbolic;   // for family bookkeeping only
    double b_const = 0.0, s_const = 0.0;
    bool constant_coeffs = true;
};

inline SdeSpec parse_sde(const nlohmann::json& j) {
    SdeSpec s;
    nlohmann::json drift = j.value("drift", nlohmann::json{{"family", "zero"}});
    nlohmann::json sigma = j.value("sigma", nlohmann::json{{"family", "constant"}, {"value", 1.0}});
    reject_unknown(j, {"drift", "sigma"}, "model.sde");

    const std::string df = drift.value("family", "zero");
    if (df == "zero") {
        reject_unknown(drift, {"family"}, "model.sde.drift");
        s.b = nullptr;
    } else if (df == "constant") {
        reject_unknown(drift, {"family", "value"}, "model.sde.drift");
        const double v = req_num(drift, "value", "model.sde.drift");
        s.b_const = v;
        s.b = [v](double, double) { return v; };
    } else if (df == "ou") {
        reject_unknown(drift, {"family", "kappa", "mean"}, "model.sde.drift");
        const double kappa = req_num(drift, "kappa", "model.sde.drift");
        const double mean = drift.value("mean", 0.0);
        s.b = [kappa, mean](double, double x) { return kappa * (mean - x); };
        s.constant_coeffs = false;
    } else {
        throw config_error("config: unknown drift family '" + df + "'");
    }

    const std::string sf = sigma.value("family", "constant");
    if (sf == "constant") {
        reject_unknown(sigma, {"family", "value"}, "model.sde.sigma");
        const double v = req_num(sigma, "value", "model.sde.sigma");
        s.s_const = v;
        s.sigma = [v](double, double) { return v; };
    } else if (sf == "tanh") {
        reject_unknown(sigma, {"family", "base", "amp"}, "model.sde.sigma");
        const double base = req_num(sigma, "base", "model.sde.sigma");
        const double amp = req_num(sigma, "amp", "model.sde.sigma");
        if (!(std::abs(amp) < base))
            throw config_error("config: tanh sigma needs |amp| < base for ellipticity");
        s.sigma = [base, amp](double, double x) { return base + amp * std::tanh(x); };
        s.constant_coeffs = false;
    } else {
        throw config_error("config: unknown sigma family '" + sf + "'");
    }
    return s;
}

} // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    detail::reject_unknown(j, {"model", "grid", "mc", "solver", "outputs"}, "top level");
    if (!j.contains("model")) throw config_error("config: missing 'model' block");

    ExperimentConfig cfg;
    const nlohmann::json& jm = j["model"];
    detail::reject_unknown(jm, {"p", "q", "T", "x0", "eta", "gamma", "sde"}, "model");

    ModelSpec& m = cfg.model;
    const bool has_p = jm.contains("p"), has_q = jm.contains("q");
    if (!has_p && !has_q) throw config_error("config: model needs p or q");
    if (has_p) m.p = detail::req_num(jm, "p", "model");
    if (has_q) m.q = detail::req_num(jm, "q", "model");
    if (has_p && !has_q) m.q = holder_conjugate(m.p);
    if (has_q && !has_p) m.p = holder_conjugate(m.q);
    if (has_p && has_q && std::abs(1.0 / m.p + 1.0 / m.q - 1.0) > 1e-9)
        throw config_error("config: p and q are inconsistent beyond 1e-9");
    m.T = detail::req_num(jm, "T", "model");
    m.x0 = jm.value("x0", 0.0);

    const detail::SdeSpec sde = detail::parse_sde(jm.value("sde", nlohmann::json::object()));
    m.drift_b = sde.b;
    m.vol_sigma = sde.sigma;

    if (!jm.contains("eta")) throw config_error("config: model.eta block required");
    const nlohmann::json& je = jm["eta"];
    cfg.eta_family = je.value("family", "");
    if (cfg.eta_family == "constant") {
        detail::reject_unknown(je, {"family", "value"}, "model.eta");
        const double c = detail::req_num(je, "value", "model.eta");
        if (!(c > 0.0)) throw config_error("config: constant eta must be positive");
        m.eta = [c](double, double) { return c; };
        m.ito_drift_eta = [](double, double) { return 0.0; };
        m.eta_lower = m.eta_upper = c;
        m.b_eta_sup = 0.0;
    } else if (cfg.eta_family == "arctan") {
        detail::reject_unknown(je, {"family", "lower", "upper"}, "model.eta");
        const double lo = detail::req_num(je, "lower", "model.eta");
        const double hi = detail::req_num(je, "upper", "model.eta");
        if (!(lo > 0.0 && hi > lo)) throw config_error("config: arctan eta needs 0 < lower < upper");
        const double slope = (hi - lo) / 3.14159265358979323846;
        const double mid = 0.5 * (hi + lo);
        m.eta = [slope, mid](double, double x) { return slope * std::atan(x) + mid; };
        CoefficientFn b = m.drift_b, s = m.vol_sigma;
        m.ito_drift_eta = [slope, b, s](double t, double x) {
            const double d1 = slope / (1.0 + x * x);
            const double d2 = slope * (-2.0 * x) / ((1.0 + x * x) * (1.0 + x * x));
            const double sv = s ? s(t, x) : 0.0;
            return (b ? b(t, x) : 0.0) * d1 + 0.5 * sv * sv * d2;
        };
        m.eta_lower = lo;
        m.eta_upper = hi;
        m.b_eta_sup = -1.0; // estimated on the lattice below
    } else if (cfg.eta_family == "umi") {
        detail::reject_unknown(je, {"family", "eta0", "g", "alpha"}, "model.eta");
        if (!sde.constant_coeffs)
            throw config_error("config: umi eta family requires constant drift and sigma");
        const double eta0 = detail::req_num(je, "eta0", "model.eta");
        const double g = detail::req_num(je, "g", "model.eta");
        const double alpha = je.value("alpha", 0.0);
        if (!(eta0 > 0.0)) throw config_error("config: umi eta0 must be positive");
        const double b0 = sde.b_const, s0 = sde.s_const;
        // eta = eta0 exp(g t) * martingale profile; its Ito drift is g * eta.
        const double decay = alpha * b0 + 0.5 * alpha * alpha * s0 * s0;
        m.eta = [eta0, g, alpha, decay](double t, double x) {
            return eta0 * std::exp(g * t + alpha * x - decay * t);
        };
        m.ito_drift_eta = [g, eta = m.eta](double t, double x) { return g * eta(t, x); };
        cfg.umi_g = g;
        m.b_eta_sup = -1.0;
        m.eta_lower = m.eta_upper = -1.0; // corner evaluation below
    } else {
        throw config_error("config: unknown eta family '" + cfg.eta_family + "'");
    }

    nlohmann::json jg = jm.value("gamma", nlohmann::json{{"family", "zero"}});
    const std::string gf = jg.value("family", "zero");
    if (gf == "zero") {
        detail::reject_unknown(jg, {"family"}, "model.gamma");
        m.gamma_fn = nullptr;
        m.gamma_upper = 0.0;
    } else if (gf == "constant") {
        detail::reject_unknown(jg, {"family", "value"}, "model.gamma");
        const double c = detail::req_num(jg, "value", "model.gamma");
        if (c < 0.0) throw config_error("config: gamma must be nonnegative");
        m.gamma_fn = [c](double, double) { return c; };
        m.gamma_upper = c;
    } else if (gf == "arctan") {
        detail::reject_unknown(jg, {"family", "lower", "upper"}, "model.gamma");
        const double lo = detail::req_num(jg, "lower", "model.gamma");
        const double hi = detail::req_num(jg, "upper", "model.gamma");
        if (!(lo >= 0.0 && hi > lo)) throw config_error("config: arctan gamma needs 0 <= lower < upper");
        const double slope = (hi - lo) / 3.14159265358979323846;
        const double mid = 0.5 * (hi + lo);
        m.gamma_fn = [slope, mid](double, double x) { return slope * std::atan(x) + mid; };
        m.gamma_upper = hi;
    } else {
        throw config_error("config: unknown gamma family '" + gf + "'");
    }

    if (j.contains("grid")) {
        const nlohmann::json& g = j["grid"];
        detail::reject_unknown(g, {"nt", "nx", "ratio", "tau_min", "halfwidth_sigmas", "eps_cutoff"},
                               "grid");
        cfg.grid.nt = g.value("nt", cfg.grid.nt);
        cfg.grid.nx = g.value("nx", cfg.grid.nx);
        cfg.grid.ratio = g.value("ratio", cfg.grid.ratio);
        cfg.grid.tau_min = g.value("tau_min", cfg.grid.tau_min);
        cfg.grid.halfwidth_sigmas = g.value("halfwidth_sigmas", cfg.grid.halfwidth_sigmas);
        cfg.grid.eps_cutoff = g.value("eps_cutoff", cfg.grid.eps_cutoff);
    }
    if (j.contains("mc")) {
        const nlohmann::json& g = j["mc"];
        detail::reject_unknown(g, {"n_paths", "nt", "seed", "theta_count"}, "mc");
        cfg.mc.n_paths = g.value("n_paths", cfg.mc.n_paths);
        cfg.mc.nt = g.value("nt", cfg.mc.nt);
        cfg.mc.seed = g.value("seed", cfg.mc.seed);
        cfg.mc.theta_count = g.value("theta_count", cfg.mc.theta_count);
    }
    if (j.contains("solver")) {
        const nlohmann::json& g = j["solver"];
        detail::reject_unknown(g, {"tol", "max_iter", "levels", "ell", "rho"}, "solver");
        cfg.solver.tol = g.value("tol", cfg.solver.tol);
        cfg.solver.max_iter = g.value("max_iter", cfg.solver.max_iter);
        if (g.contains("levels")) cfg.solver.levels = g["levels"].get<std::vector<double>>();
        cfg.solver.ell = g.value("ell", cfg.solver.ell);
        cfg.solver.rho = g.value("rho", cfg.solver.rho);
    }
    if (j.contains("outputs")) {
        const nlohmann::json& g = j["outputs"];
        detail::reject_unknown(g, {"dir", "formats"}, "outputs");
        cfg.outputs.dir = g.value("dir", cfg.outputs.dir);
        if (g.contains("formats"))
            cfg.outputs.formats = g["formats"].get<std::vector<std::string>>();
    }
    if (!(cfg.solver.ell > 1.0 && cfg.solver.ell < cfg.solver.rho))
        throw config_error("config: solver needs 1 < ell < rho");

    // Domain-dependent bounds: probe the state box the grid will use.
    {
        double sig_max = 0.0;
        for (int i = 0; i <= 32; ++i)
            for (int k = 0; k <= 32; ++k)
                sig_max = std::max(sig_max, std::abs(m.sigma_at(m.T * i / 32.0,
                                                                m.x0 + (k - 16.0) / 4.0)));
        double half = cfg.grid.halfwidth_sigmas * sig_max * std::sqrt(m.T);
        if (half <= 0.0) half = 1.0;
        const double x_lo = m.x0 - half, x_hi = m.x0 + half;
        if (m.eta_lower < 0.0) { // umi family: monotone in t and x, corners are exact
            double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
            for (double tt : {0.0, m.T})
                for (double xx : {x_lo, x_hi}) {
                    lo = std::min(lo, m.eta(tt, xx));
                    hi = std::max(hi, m.eta(tt, xx));
                }
            m.eta_lower = lo * (1.0 - 1e-12);
            m.eta_upper = hi * (1.0 + 1e-12);
        }
        if (m.b_eta_sup < 0.0) m.b_eta_sup = m.estimate_b_eta_sup(x_lo, x_hi);
        m.validate();
        m.check_bounds_on(x_lo, x_hi);
    }

    cfg.resolved = j;
    cfg.resolved["model"]["p"] = cfg.model.p;
    cfg.resolved["model"]["q"] = cfg.model.q;
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw config_error("config: cannot open " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw config_error("config: parse failure in " + path + ": " + e.what());
    }
    return parse_config(j);
}

} // namespace singliq
