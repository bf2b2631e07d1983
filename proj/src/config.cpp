#include "mvsde/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "mvsde/em_engine.hpp"
#include "mvsde/errors.hpp"

namespace mvsde {

using nlohmann::json;

namespace {

struct ExperimentName {
    Experiment id;
    const char* name;
};

constexpr ExperimentName kExperiments[] = {
    {Experiment::StrongError, "strong-error"},
    {Experiment::CoupledVariance, "coupled-variance"},
    {Experiment::SecondMoment, "second-moment"},
    {Experiment::Mlmc, "mlmc"},
    {Experiment::CostCompare, "cost-compare"},
    {Experiment::Chaos, "chaos"},
    {Experiment::SmallNoiseDeviation, "small-noise-deviation"},
};

const std::set<std::string> kTopKeys{"experiment", "model", "test_function", "grid", "targets",
                                     "seed",       "output_dir", "formats", "expect", "description"};
const std::set<std::string> kGridKeys{"refinement_n", "levels",        "h_list",    "ref_factor", "h",
                                      "steps",        "m_particles",   "m_list",    "reference_m", "replications",
                                      "pilot_samples", "max_level",    "runs",      "pathwise",   "skip_coarsest"};
const std::set<std::string> kExpectKeys{"slope",         "r_squared_min", "max_var_diff", "log2_ratio",
                                        "abs_error_max", "reference",     "min_hits"};

// Typed field access that records diagnostics instead of throwing.
class Reader {
public:
    explicit Reader(std::vector<Diagnostic>& diags) : diags_(diags) {}

    void error(const std::string& key, const std::string& msg) { diags_.push_back({key, msg}); }

    void unknown_keys(const json& obj, const std::set<std::string>& known, const std::string& prefix) {
        for (const auto& [k, v] : obj.items()) {
            if (!known.count(k)) error(prefix + k, "unknown key '" + prefix + k + "'");
        }
    }

    std::optional<double> number(const json& obj, const std::string& key, const std::string& path) {
        if (!obj.contains(key)) return std::nullopt;
        const auto& v = obj.at(key);
        if (!v.is_number()) {
            error(path, "'" + path + "' must be a number");
            return std::nullopt;
        }
        return v.get<double>();
    }

    std::optional<std::uint64_t> count(const json& obj, const std::string& key, const std::string& path,
                                       std::uint64_t min_value) {
        if (!obj.contains(key)) return std::nullopt;
        const auto& v = obj.at(key);
        const bool nonnegative =
            v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
        if (!nonnegative) {
            error(path, "'" + path + "' must be a nonnegative integer");
            return std::nullopt;
        }
        const auto value = v.get<std::uint64_t>();
        if (value < min_value) {
            error(path, "'" + path + "' must be >= " + std::to_string(min_value));
            return std::nullopt;
        }
        return value;
    }

    std::optional<std::vector<double>> numbers(const json& obj, const std::string& key, const std::string& path) {
        if (!obj.contains(key)) return std::nullopt;
        const auto& v = obj.at(key);
        if (!v.is_array() || v.empty() || !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); })) {
            error(path, "'" + path + "' must be a non-empty array of numbers");
            return std::nullopt;
        }
        return v.get<std::vector<double>>();
    }

    std::optional<std::pair<double, double>> range(const json& obj, const std::string& key, const std::string& path) {
        auto v = numbers(obj, key, path);
        if (!v) return std::nullopt;
        if (v->size() != 2 || (*v)[0] > (*v)[1]) {
            error(path, "'" + path + "' must be [lo, hi] with lo <= hi");
            return std::nullopt;
        }
        return std::pair{(*v)[0], (*v)[1]};
    }

    void require(bool present, const std::string& path, const std::string& experiment) {
        if (!present) error(path, "missing '" + path + "' (required by " + experiment + ")");
    }

private:
    std::vector<Diagnostic>& diags_;
};

}  // namespace

std::string to_string(Experiment e) {
    for (const auto& x : kExperiments) {
        if (x.id == e) return x.name;
    }
    return "unknown";
}

std::optional<Experiment> experiment_from_string(const std::string& name) {
    for (const auto& x : kExperiments) {
        if (name == x.name) return x.id;
    }
    return std::nullopt;
}

ParsedConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    ParsedConfig parsed;
    auto& cfg = parsed.config;
    auto& diags = parsed.diagnostics;
    Reader rd(diags);
    cfg.raw = doc;

    if (!doc.is_object()) {
        rd.error("", "config must be a JSON object");
        return parsed;
    }
    rd.unknown_keys(doc, kTopKeys, "");

    // experiment
    std::string experiment_name = "?";
    if (!doc.contains("experiment") || !doc["experiment"].is_string()) {
        rd.error("experiment", "missing or non-string 'experiment'");
    } else {
        experiment_name = doc["experiment"].get<std::string>();
        if (auto e = experiment_from_string(experiment_name)) {
            cfg.experiment = *e;
        } else {
            std::string known;
            for (const auto& x : kExperiments) known += (known.empty() ? "" : ", ") + std::string(x.name);
            rd.error("experiment", "unknown experiment '" + experiment_name + "' (known: " + known + ")");
            experiment_name = "?";
        }
    }

    // model
    bool model_ok = false;
    if (!doc.contains("model") || !doc["model"].is_object()) {
        rd.error("model", "missing 'model' object");
    } else {
        const auto& m = doc["model"];
        rd.unknown_keys(m, {"name", "params"}, "model.");
        if (!m.contains("name") || !m["name"].is_string()) {
            rd.error("model.name", "missing or non-string 'model.name'");
        } else {
            cfg.model_name = m["name"].get<std::string>();
        }
        if (m.contains("params")) {
            if (!m["params"].is_object()) {
                rd.error("model.params", "'model.params' must be an object of numbers");
            } else {
                for (const auto& [k, v] : m["params"].items()) {
                    if (!v.is_number()) {
                        rd.error("model.params." + k, "'model.params." + k + "' must be a number");
                    } else {
                        cfg.model_params[k] = v.get<double>();
                    }
                }
            }
        }
        if (!cfg.model_name.empty()) {
            try {
                (void)builtin_model(cfg.model_name, cfg.model_params);
                model_ok = true;
            } catch (const Error& e) {
                rd.error("model", e.what());
            }
        }
    }

    if (doc.contains("test_function")) {
        if (!doc["test_function"].is_string()) {
            rd.error("test_function", "'test_function' must be a string");
        } else {
            cfg.test_function = doc["test_function"].get<std::string>();
        }
    }
    try {
        (void)builtin_test_function(cfg.test_function);
    } catch (const Error& e) {
        rd.error("test_function", e.what());
    }

    if (doc.contains("seed")) {
        if (!doc["seed"].is_number_unsigned() && !(doc["seed"].is_number_integer() && doc["seed"].get<std::int64_t>() >= 0)) {
            rd.error("seed", "'seed' must be a nonnegative 64-bit integer");
        } else {
            cfg.seed = doc["seed"].get<std::uint64_t>();
        }
    }
    if (doc.contains("output_dir")) {
        if (!doc["output_dir"].is_string()) {
            rd.error("output_dir", "'output_dir' must be a string");
        } else {
            cfg.output_dir = doc["output_dir"].get<std::string>();
        }
    }
    if (doc.contains("formats")) {
        const auto& f = doc["formats"];
        cfg.write_csv = cfg.write_json = false;
        if (!f.is_array() || f.empty()) {
            rd.error("formats", "'formats' must be a non-empty subset of [\"csv\", \"json\"]");
        } else {
            for (const auto& e : f) {
                if (e == "csv") {
                    cfg.write_csv = true;
                } else if (e == "json") {
                    cfg.write_json = true;
                } else {
                    rd.error("formats", "unsupported format " + e.dump() + " (use csv, json)");
                }
            }
        }
    }

    // grid
    json grid = doc.contains("grid") ? doc["grid"] : json::object();
    if (!grid.is_object()) {
        rd.error("grid", "'grid' must be an object");
        grid = json::object();
    }
    rd.unknown_keys(grid, kGridKeys, "grid.");
    auto& g = cfg.grid;
    if (grid.contains("refinement_n")) {
        if (!grid["refinement_n"].is_number_integer() || grid["refinement_n"].get<std::int64_t>() < 2) {
            rd.error("grid.refinement_n", "refinement_n must be >= 2");
        } else {
            g.refinement_n = grid["refinement_n"].get<unsigned>();
        }
    }
    if (auto lv = rd.numbers(grid, "levels", "grid.levels")) {
        const auto& v = *lv;
        if (v.size() != 2 || v[0] < 1 || v[1] < v[0] || v[0] != std::floor(v[0]) || v[1] != std::floor(v[1]) ||
            v[1] > 30) {
            rd.error("grid.levels", "'grid.levels' must be [lo, hi] integers with 1 <= lo <= hi <= 30");
        } else {
            g.level_lo = static_cast<unsigned>(v[0]);
            g.level_hi = static_cast<unsigned>(v[1]);
        }
    }
    if (auto v = rd.numbers(grid, "h_list", "grid.h_list")) g.h_list = *v;
    if (auto v = rd.count(grid, "ref_factor", "grid.ref_factor", 1)) g.ref_factor = *v;
    if (auto v = rd.number(grid, "h", "grid.h")) {
        if (!(*v > 0.0)) {
            rd.error("grid.h", "'grid.h' must be positive");
        } else {
            g.h = *v;
        }
    }
    if (auto v = rd.count(grid, "steps", "grid.steps", 1)) g.steps = *v;
    if (auto v = rd.count(grid, "m_particles", "grid.m_particles", 1)) g.m_particles = *v;
    if (grid.contains("m_list")) {
        const auto& ml = grid["m_list"];
        if (!ml.is_array() || ml.empty() ||
            !std::all_of(ml.begin(), ml.end(), [](const json& e) { return e.is_number_integer() && e.get<std::int64_t>() >= 1; })) {
            rd.error("grid.m_list", "'grid.m_list' must be a non-empty array of positive integers");
        } else {
            g.m_list = ml.get<std::vector<std::size_t>>();
        }
    }
    if (auto v = rd.count(grid, "reference_m", "grid.reference_m", 1)) g.reference_m = *v;
    if (auto v = rd.count(grid, "replications", "grid.replications", 2)) g.replications = *v;
    if (auto v = rd.count(grid, "pilot_samples", "grid.pilot_samples", 2)) g.pilot_samples = *v;
    if (auto v = rd.count(grid, "max_level", "grid.max_level", 0)) {
        if (*v > 30) {
            rd.error("grid.max_level", "'grid.max_level' must be <= 30");
        } else {
            g.max_level = static_cast<unsigned>(*v);
        }
    }
    if (auto v = rd.count(grid, "runs", "grid.runs", 1)) g.runs = *v;
    for (const char* flag : {"pathwise", "skip_coarsest"}) {
        if (grid.contains(flag)) {
            if (!grid[flag].is_boolean()) {
                rd.error(std::string("grid.") + flag, std::string("'grid.") + flag + "' must be a boolean");
            } else {
                (std::string(flag) == "pathwise" ? g.pathwise : g.skip_coarsest) = grid[flag].get<bool>();
            }
        }
    }

    // targets
    json targets = doc.contains("targets") ? doc["targets"] : json::object();
    if (!targets.is_object()) {
        rd.error("targets", "'targets' must be an object");
        targets = json::object();
    }
    rd.unknown_keys(targets, {"delta_list", "epsilon_list"}, "targets.");
    if (auto v = rd.numbers(targets, "delta_list", "targets.delta_list")) {
        if (std::any_of(v->begin(), v->end(), [](double d) { return !(d > 0.0); })) {
            rd.error("targets.delta_list", "every delta must be positive");
        } else {
            cfg.targets.delta_list = *v;
        }
    }
    if (auto v = rd.numbers(targets, "epsilon_list", "targets.epsilon_list")) {
        if (std::any_of(v->begin(), v->end(), [](double e) { return !(e >= 0.0 && e <= 1.0); })) {
            rd.error("targets.epsilon_list", "every epsilon must lie in [0, 1]");
        } else {
            cfg.targets.epsilon_list = *v;
        }
    }

    // expect
    json expect = doc.contains("expect") ? doc["expect"] : json::object();
    if (!expect.is_object()) {
        rd.error("expect", "'expect' must be an object");
        expect = json::object();
    }
    rd.unknown_keys(expect, kExpectKeys, "expect.");
    cfg.expect.slope = rd.range(expect, "slope", "expect.slope");
    cfg.expect.log2_ratio = rd.range(expect, "log2_ratio", "expect.log2_ratio");
    cfg.expect.r_squared_min = rd.number(expect, "r_squared_min", "expect.r_squared_min");
    cfg.expect.max_var_diff = rd.number(expect, "max_var_diff", "expect.max_var_diff");
    cfg.expect.abs_error_max = rd.number(expect, "abs_error_max", "expect.abs_error_max");
    cfg.expect.reference = rd.number(expect, "reference", "expect.reference");
    if (auto v = rd.count(expect, "min_hits", "expect.min_hits", 0)) cfg.expect.min_hits = *v;

    // cross-field requirements
    const auto& name = experiment_name;
    auto need_m = [&] { rd.require(grid.contains("m_particles"), "grid.m_particles", name); };
    auto need_reps = [&] { rd.require(grid.contains("replications"), "grid.replications", name); };
    switch (cfg.experiment) {
        case Experiment::StrongError:
            need_m();
            need_reps();
            rd.require(grid.contains("h_list"), "grid.h_list", name);
            if (!g.h_list.empty() && model_ok) {
                try {
                    const auto model = builtin_model(cfg.model_name, cfg.model_params);
                    (void)nested_step_counts(model.horizon(), g.h_list, g.ref_factor);
                } catch (const Error& e) {
                    rd.error("grid.h_list", e.what());
                }
            }
            break;
        case Experiment::CoupledVariance:
        case Experiment::SecondMoment:
            need_m();
            need_reps();
            rd.require(grid.contains("levels"), "grid.levels", name);
            rd.require(grid.contains("refinement_n"), "grid.refinement_n", name);
            break;
        case Experiment::Mlmc:
            need_m();
            rd.require(grid.contains("refinement_n"), "grid.refinement_n", name);
            rd.require(targets.contains("delta_list"), "targets.delta_list", name);
            break;
        case Experiment::CostCompare:
            need_m();
            rd.require(grid.contains("refinement_n"), "grid.refinement_n", name);
            rd.require(targets.contains("delta_list"), "targets.delta_list", name);
            rd.require(targets.contains("epsilon_list"), "targets.epsilon_list", name);
            break;
        case Experiment::Chaos:
            need_reps();
            rd.require(grid.contains("m_list"), "grid.m_list", name);
            rd.require(grid.contains("reference_m"), "grid.reference_m", name);
            if (!g.m_list.empty() && g.reference_m > 0 &&
                g.reference_m <= *std::max_element(g.m_list.begin(), g.m_list.end())) {
                rd.error("grid.reference_m", "'grid.reference_m' must exceed every entry of 'grid.m_list'");
            }
            break;
        case Experiment::SmallNoiseDeviation:
            need_m();
            need_reps();
            rd.require(grid.contains("h"), "grid.h", name);
            rd.require(targets.contains("epsilon_list"), "targets.epsilon_list", name);
            if (g.h > 0.0 && model_ok) {
                try {
                    const auto model = builtin_model(cfg.model_name, cfg.model_params);
                    (void)SimulationGrid::from_step(model.horizon(), g.h);
                } catch (const Error& e) {
                    rd.error("grid.h", e.what());
                }
            }
            break;
    }
    if ((cfg.experiment == Experiment::Mlmc || cfg.experiment == Experiment::CostCompare) && g.pilot_samples < 2) {
        rd.error("grid.pilot_samples", "pilot_samples must be >= 2");
    }
    return parsed;
}

ParsedConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

std::vector<Diagnostic> validate(const std::filesystem::path& path) {
    try {
        return load_config(path).diagnostics;
    } catch (const ConfigError& e) {
        return {{"", e.what()}};
    }
}

}  // namespace mvsde
