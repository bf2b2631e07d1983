#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "mvsde/config.hpp"
#include "mvsde/errors.hpp"
#include "mvsde/runner.hpp"

using namespace mvsde;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
    static const fs::path dir = [] {
        const auto p = fs::temp_directory_path() / ("mvsde_runner_" + std::to_string(::getpid()));
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

fs::path write_config(const std::string& name, const json& doc) {
    const auto path = scratch() / name;
    std::ofstream(path) << doc.dump(2);
    return path;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

json ou_model(double eps) {
    return {{"name", "meanfield_ou"},
            {"params", {{"a", 1.0}, {"b", 0.5}, {"sigma", 1.0}, {"x0", 1.0}, {"T", 1.0}, {"epsilon", eps}}}};
}

json coupled_zero(const fs::path& out) {
    return {{"experiment", "coupled-variance"},
            {"model", {{"name", "zero"}, {"params", {{"x0", 1.0}, {"T", 1.0}, {"epsilon", 0.2}}}}},
            {"grid", {{"refinement_n", 2}, {"levels", {1, 3}}, {"m_particles", 8}, {"replications", 5}}},
            {"seed", 3},
            {"output_dir", out.string()}};
}

bool mentions(const std::vector<Diagnostic>& diags, const std::string& text) {
    for (const auto& d : diags) {
        if (d.key.find(text) != std::string::npos || d.message.find(text) != std::string::npos) return true;
    }
    return false;
}

int run_quiet(const fs::path& cfg, RunOptions opt = {}) {
    std::ostringstream out, err;
    return run(cfg, opt, out, err);
}

}  // namespace

TEST_CASE("experiment names round-trip") {
    for (auto e : {Experiment::StrongError, Experiment::CoupledVariance, Experiment::SecondMoment, Experiment::Mlmc,
                   Experiment::CostCompare, Experiment::Chaos, Experiment::SmallNoiseDeviation}) {
        CHECK(experiment_from_string(to_string(e)) == e);
    }
    CHECK_FALSE(experiment_from_string("montecarlo").has_value());
}

TEST_CASE("valid config has no diagnostics") {
    const auto parsed = parse_config(coupled_zero(scratch() / "v").dump());
    CHECK(parsed.diagnostics.empty());
    CHECK(parsed.config.grid.level_lo == 1);
    CHECK(parsed.config.grid.level_hi == 3);
    CHECK(parsed.config.seed == 3);
    CHECK(validate(write_config("valid.json", coupled_zero(scratch() / "v"))).empty());
}

TEST_CASE("schema diagnostics") {
    auto doc = coupled_zero(scratch());
    doc["grid"].erase("m_particles");
    CHECK(mentions(parse_config(doc.dump()).diagnostics, "m_particles"));

    doc = coupled_zero(scratch());
    doc["grid"]["refinement_n"] = 1;
    CHECK(mentions(parse_config(doc.dump()).diagnostics, "refinement_n must be >= 2"));

    doc = coupled_zero(scratch());
    doc["grid"]["replicatons"] = 4;
    CHECK(mentions(parse_config(doc.dump()).diagnostics, "replicatons"));

    doc = coupled_zero(scratch());
    doc["model"]["params"].erase("T");
    CHECK(mentions(parse_config(doc.dump()).diagnostics, "'T'"));

    doc = coupled_zero(scratch());
    doc["experiment"] = "bogus";
    CHECK(mentions(parse_config(doc.dump()).diagnostics, "experiment"));

    doc = coupled_zero(scratch());
    doc["formats"] = {"xml"};
    CHECK(mentions(parse_config(doc.dump()).diagnostics, "formats"));

    CHECK_THROWS_AS((void)parse_config("{not json"), ConfigError);
}

TEST_CASE("non-nested step list names the offending pair") {
    const json doc = {{"experiment", "strong-error"},
                      {"model", ou_model(0.1)},
                      {"grid", {{"h_list", {0.25, 0.1}}, {"m_particles", 4}, {"replications", 2}}}};
    const auto diags = parse_config(doc.dump()).diagnostics;
    REQUIRE_FALSE(diags.empty());
    CHECK(mentions(diags, "0.25"));
    CHECK(mentions(diags, "0.1"));
}

TEST_CASE("cross-field checks") {
    json doc = {{"experiment", "chaos"},
                {"model", ou_model(0.1)},
                {"grid", {{"m_list", {8, 16}}, {"reference_m", 16}, {"replications", 4}}}};
    CHECK(mentions(parse_config(doc.dump()).diagnostics, "reference_m"));

    doc = {{"experiment", "small-noise-deviation"},
           {"model", ou_model(0.1)},
           {"grid", {{"h", 0.3}, {"m_particles", 4}, {"replications", 4}}},
           {"targets", {{"epsilon_list", {0.1}}}}};
    CHECK(mentions(parse_config(doc.dump()).diagnostics, "grid.h"));
}

TEST_CASE("validate reports unreadable and unparsable files") {
    CHECK(validate(scratch() / "does_not_exist.json").size() == 1);
    const auto bad = scratch() / "bad.json";
    std::ofstream(bad) << "{\"experiment\": ";
    CHECK(validate(bad).size() == 1);
    std::ostringstream out, err;
    CHECK(run_validate(bad, out, err) == kExitValidation);
    CHECK(run(bad, {}, out, err) == kExitValidation);
}

TEST_CASE("zero model coupled variance writes all-zero var_diff") {
    const auto out = scratch() / "zero";
    const auto cfg = write_config("zero.json", coupled_zero(out));
    CHECK(run_quiet(cfg) == kExitOk);
    std::istringstream csv(slurp(out / "coupled-variance.csv"));
    std::string header;
    std::getline(csv, header);
    CHECK(header == "level,h_coarse,epsilon,var_diff,ci_lo,ci_hi,rng_cost,samples");
    std::string line;
    int rows = 0;
    while (std::getline(csv, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        CHECK(std::stod(cells[3]) == 0.0);
        ++rows;
    }
    CHECK(rows == 3);
    const auto report = json::parse(slurp(out / "coupled-variance.json"));
    CHECK(report["metadata"].contains("wall_time_seconds"));
    CHECK(report["metadata"]["config"]["seed"] == 3);
}

TEST_CASE("missing m_particles exits 2 naming the key") {
    auto doc = coupled_zero(scratch() / "missing");
    doc["grid"].erase("m_particles");
    std::ostringstream out, err;
    CHECK(run(write_config("missing.json", doc), {}, out, err) == kExitValidation);
    CHECK(err.str().find("m_particles") != std::string::npos);
}

TEST_CASE("mlmc report estimate is near the closed-form mean") {
    const auto out = scratch() / "mlmc";
    const json doc = {{"experiment", "mlmc"},
                      {"model", ou_model(0.25)},
                      {"grid", {{"refinement_n", 2}, {"m_particles", 64}}},
                      {"targets", {{"delta_list", {2e-3}}}},
                      {"seed", 5},
                      {"output_dir", out.string()},
                      {"formats", {"json"}}};
    CHECK(run_quiet(write_config("mlmc.json", doc)) == kExitOk);
    CHECK_FALSE(fs::exists(out / "mlmc.csv"));
    const auto report = json::parse(slurp(out / "mlmc.json"));
    CHECK(std::abs(report["estimate"].get<double>() - std::exp(-1.0)) <= 3 * 2e-3);
}

TEST_CASE("rerun produces byte-identical csv") {
    const json doc = {{"experiment", "strong-error"},
                      {"model", ou_model(0.3)},
                      {"grid", {{"h_list", {0.25, 0.125}}, {"m_particles", 8}, {"replications", 4}}},
                      {"seed", 8}};
    const auto cfg = write_config("det.json", doc);
    RunOptions a, b;
    a.output_dir = (scratch() / "det_a").string();
    b.output_dir = (scratch() / "det_b").string();
    REQUIRE(run_quiet(cfg, a) == kExitOk);
    REQUIRE(run_quiet(cfg, b) == kExitOk);
    CHECK(slurp(scratch() / "det_a" / "strong-error.csv") == slurp(scratch() / "det_b" / "strong-error.csv"));
    auto ja = json::parse(slurp(scratch() / "det_a" / "strong-error.json"));
    auto jb = json::parse(slurp(scratch() / "det_b" / "strong-error.json"));
    ja.erase("metadata");
    jb.erase("metadata");
    CHECK(ja == jb);
    REQUIRE(ja["rate_fits"].size() == 1);
    CHECK(ja["rate_fits"][0]["points"].size() == 2);

    RunOptions c;
    c.output_dir = (scratch() / "det_c").string();
    c.seed = 9;
    REQUIRE(run_quiet(cfg, c) == kExitOk);
    CHECK(slurp(scratch() / "det_a" / "strong-error.csv") != slurp(scratch() / "det_c" / "strong-error.csv"));
}

TEST_CASE("failed assertion exits 4 only with assert") {
    json doc = {{"experiment", "coupled-variance"},
                {"model", ou_model(0.5)},
                {"grid", {{"refinement_n", 2}, {"levels", {1, 2}}, {"m_particles", 4}, {"replications", 4}}},
                {"output_dir", (scratch() / "assert").string()},
                {"expect", {{"max_var_diff", 0.0}}}};
    const auto cfg = write_config("assert.json", doc);
    RunOptions opt;
    CHECK(run_quiet(cfg, opt) == kExitOk);
    opt.assert_checks = true;
    CHECK(run_quiet(cfg, opt) == kExitAssertion);
}

TEST_CASE("divergence exits 3 naming the step") {
    json doc = {{"experiment", "strong-error"},
                {"model",
                 {{"name", "meanfield_ou"},
                  {"params", {{"a", -60.0}, {"b", 0.0}, {"sigma", 1.0}, {"x0", 1.0}, {"T", 1.0}, {"epsilon", 0.0}}}}},
                {"grid", {{"h_list", {0.5, 0.25}}, {"m_particles", 2}, {"replications", 2}}},
                {"output_dir", (scratch() / "div").string()}};
    std::ostringstream out, err;
    CHECK(run(write_config("div.json", doc), {}, out, err) == kExitDivergence);
    CHECK(err.str().find("step") != std::string::npos);
}

TEST_CASE("every experiment runs and reports exact rng costs") {
    const auto out = scratch() / "all";
    const std::vector<json> docs{
        {{"experiment", "second-moment"},
         {"model", ou_model(0.1)},
         {"grid", {{"refinement_n", 2}, {"levels", {1, 3}}, {"m_particles", 4}, {"replications", 4}}}},
        {{"experiment", "cost-compare"},
         {"model", ou_model(0.1)},
         {"grid", {{"refinement_n", 2}, {"m_particles", 4}, {"pilot_samples", 4}}},
         {"targets", {{"delta_list", {0.02}}, {"epsilon_list", {0.1, 0.5}}}}},
        {{"experiment", "chaos"},
         {"model", ou_model(0.5)},
         {"grid", {{"m_list", {4, 8}}, {"reference_m", 64}, {"replications", 4}, {"steps", 8}}}},
        {{"experiment", "small-noise-deviation"},
         {"model", ou_model(0.1)},
         {"grid", {{"h", 0.125}, {"m_particles", 4}, {"replications", 4}}},
         {"targets", {{"epsilon_list", {0.2, 0.1}}}}},
    };
    for (auto doc : docs) {
        doc["output_dir"] = out.string();
        const std::string name = doc["experiment"];
        CAPTURE(name);
        const auto parsed = parse_config(doc.dump());
        REQUIRE(parsed.diagnostics.empty());
        const auto report = execute(parsed.config);
        CHECK_FALSE(report.table.rows.empty());
        for (const auto& c : report.checks) CHECK(c.passed);
        CHECK(run_quiet(write_config(name + ".json", doc)) == kExitOk);
        CHECK(fs::exists(out / (name + ".csv")));
    }
}

TEST_CASE("cli binary exit codes") {
    const char* cli = std::getenv("MVSDE_CLI");
    if (cli == nullptr) return;
    const auto cfg = write_config("cli.json", coupled_zero(scratch() / "cli"));
    auto sh = [&](const std::string& args) {
        const int status = std::system((std::string(cli) + " " + args + " > /dev/null 2>&1").c_str());
        return WEXITSTATUS(status);
    };
    CHECK(sh("validate " + cfg.string()) == 0);
    CHECK(sh("run " + cfg.string() + " --seed 4 --out " + (scratch() / "cli_out").string()) == 0);
    CHECK(fs::exists(scratch() / "cli_out" / "coupled-variance.csv"));
    CHECK(sh("run " + (scratch() / "nope.json").string()) == 2);
    CHECK(sh("frobnicate") == 2);
}
