#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "singliq/config.hpp"
#include "singliq/runner.hpp"

using namespace singliq;
namespace fs = std::filesystem;

namespace {

nlohmann::json minimal_config() {
    return nlohmann::json::parse(R"({
      "model": {
        "q": 2.0, "T": 1.0,
        "eta": {"family": "constant", "value": 1.0},
        "gamma": {"family": "zero"},
        "sde": {"drift": {"family": "zero"}, "sigma": {"family": "constant", "value": 1.0}}
      },
      "grid": {"nt": 300, "nx": 21, "ratio": 0.9, "tau_min": 1e-7},
      "mc": {"n_paths": 64, "nt": 65, "seed": 7, "theta_count": 4},
      "solver": {"levels": [4, 16]},
      "outputs": {"dir": "/tmp/singliq_cli_out"}
    })");
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

} // namespace

TEST_CASE("config parsing") {
    SECTION("round trip with defaults") {
        const ExperimentConfig cfg = parse_config(minimal_config());
        CHECK(cfg.model.p == Catch::Approx(2.0));
        CHECK(cfg.model.eta_lower == 1.0);
        CHECK(cfg.solver.tol == 1e-10);
        CHECK(cfg.eps_cutoff() == Catch::Approx(1e-3));
        CHECK(cfg.mc.seed == 7);
    }
    SECTION("unknown keys are rejected at every level") {
        auto j = minimal_config();
        j["extra"] = 1;
        CHECK_THROWS_AS(parse_config(j), config_error);
        j = minimal_config();
        j["model"]["typo_tol"] = 1e-3;
        CHECK_THROWS_AS(parse_config(j), config_error);
        j = minimal_config();
        j["grid"]["nnt"] = 100;
        CHECK_THROWS_AS(parse_config(j), config_error);
    }
    SECTION("p and q must be conjugate if both given") {
        auto j = minimal_config();
        j["model"]["p"] = 2.0; // consistent
        CHECK_NOTHROW(parse_config(j));
        j["model"]["p"] = 2.1;
        CHECK_THROWS_AS(parse_config(j), config_error);
    }
    SECTION("family validation") {
        auto j = minimal_config();
        j["model"]["eta"] = {{"family", "nosuch"}};
        CHECK_THROWS_AS(parse_config(j), config_error);
        j = minimal_config();
        j["model"]["eta"] = {{"family", "arctan"}, {"lower", 1.2}, {"upper", 0.8}};
        CHECK_THROWS_AS(parse_config(j), config_error);
        j = minimal_config();
        j["model"]["sde"]["sigma"] = {{"family", "tanh"}, {"base", 0.2}, {"amp", 0.5}};
        CHECK_THROWS_AS(parse_config(j), config_error);
        j = minimal_config();
        j["model"]["eta"] = {{"family", "umi"}, {"eta0", 1.0}, {"g", 0.2}};
        j["model"]["sde"]["drift"] = {{"family", "ou"}, {"kappa", 0.3}};
        CHECK_THROWS_AS(parse_config(j), config_error); // umi needs constant coefficients
    }
    SECTION("umi bounds come from the domain corners") {
        auto j = minimal_config();
        j["model"]["eta"] = {{"family", "umi"}, {"eta0", 1.0}, {"g", 0.3}, {"alpha", 0.25}};
        const ExperimentConfig cfg = parse_config(j);
        CHECK(cfg.model.eta_lower > 0.0);
        CHECK(cfg.model.eta_upper > cfg.model.eta_lower);
        CHECK(cfg.model.b_eta_sup == Catch::Approx(0.3 * cfg.model.eta_upper).epsilon(1e-9));
        CHECK(cfg.umi_g == 0.3);
    }
}

TEST_CASE("runner smoke and artifact determinism") {
    ExperimentConfig cfg = parse_config(minimal_config());
    const std::string dir1 = "/tmp/singliq_det_a", dir2 = "/tmp/singliq_det_b";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    REQUIRE(run_command("solve-y", cfg, dir1, 1) == 0);
    REQUIRE(run_command("solve-y", cfg, dir2, 1) == 0);
    for (const char* name : {"h_field.csv", "y_field.csv", "picard_report.csv", "summary.csv",
                             "config_resolved.json"}) {
        INFO(name);
        REQUIRE(fs::exists(fs::path(dir1) / name));
        CHECK(slurp(fs::path(dir1) / name) == slurp(fs::path(dir2) / name));
    }
    CHECK_THROWS_AS(run_command("nosuch", cfg, dir1, 1), config_error);
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("binary front end exit codes") {
    const std::string cli = SINGLIQ_CLI_PATH;
    REQUIRE(fs::exists(cli));
    const std::string cfgdir = SINGLIQ_CONFIG_DIR;

    auto run = [&](const std::string& args) {
        const int rc = std::system((cli + " " + args + " > /dev/null 2>&1").c_str());
        return WEXITSTATUS(rc);
    };
    CHECK(run("") == 2);                                    // missing subcommand
    CHECK(run("solve-y --config /nonexistent.json") == 2);  // unreadable config
    {
        std::ofstream bad("/tmp/singliq_bad.json");
        bad << "{\"model\": {\"q\": 2.0}}"; // missing required blocks
    }
    CHECK(run("solve-y --config /tmp/singliq_bad.json") == 2);
    {
        std::ofstream garbled("/tmp/singliq_garbled.json");
        garbled << "not json at all";
    }
    CHECK(run("truncated --config /tmp/singliq_garbled.json") == 2);
    fs::remove("/tmp/singliq_bad.json");
    fs::remove("/tmp/singliq_garbled.json");

    // a real run through the binary, with a seed override
    {
        nlohmann::json j = minimal_config();
        std::ofstream ok("/tmp/singliq_ok.json");
        ok << j.dump(2);
    }
    CHECK(run("solve-y --config /tmp/singliq_ok.json --out /tmp/singliq_cli_run --seed 99") == 0);
    CHECK(fs::exists("/tmp/singliq_cli_run/summary.csv"));
    const std::string echo = slurp("/tmp/singliq_cli_run/config_resolved.json");
    CHECK(echo.find("\"seed\": 99") != std::string::npos);
    fs::remove("/tmp/singliq_ok.json");
    fs::remove_all("/tmp/singliq_cli_run");
}
