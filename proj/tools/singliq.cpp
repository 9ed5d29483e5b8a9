// Command-line front end: one subcommand per experiment battery. Every run
// echoes its resolved configuration and writes CSV artifacts plus a summary
// with one pass/fail line per verified invariant.
//
// Exit codes: 0 success, 2 configuration error, 3 invariant failure,
// 4 numerical failure.

#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "singliq/config.hpp"
#include "singliq/errors.hpp"
#include "singliq/runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"singular-terminal liquidation solver"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed_override;
    int threads = 1;

    const std::vector<std::string> names = {"solve-y",   "truncated",     "picard",
                                            "malliavin", "converge",      "liquidate",
                                            "sensitivity", "verify-oracle", "verify-bounds"};
    std::string chosen;
    for (const auto& name : names) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "experiment configuration (JSON)")->required();
        sub->add_option("--out", out_dir, "artifact directory (default: outputs.dir)");
        sub->add_option("--seed", seed_override, "override mc.seed");
        sub->add_option("--threads", threads, "worker threads for independent solves");
        sub->callback([&chosen, name]() { chosen = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        singliq::ExperimentConfig cfg = singliq::load_config(config_path);
        if (seed_override) {
            cfg.mc.seed = *seed_override;
            cfg.resolved["mc"]["seed"] = *seed_override;
        }
        const std::string dir = out_dir.empty() ? cfg.outputs.dir : out_dir;
        return singliq::run_command(chosen, cfg, dir, threads);
    } catch (const singliq::config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const singliq::invariant_error& e) {
        std::cerr << "invariant failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 4;
    }
}
