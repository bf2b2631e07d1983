#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mvsde/model.hpp"

namespace mvsde {

enum class Experiment { StrongError, CoupledVariance, SecondMoment, Mlmc, CostCompare, Chaos, SmallNoiseDeviation };

[[nodiscard]] std::string to_string(Experiment e);
[[nodiscard]] std::optional<Experiment> experiment_from_string(const std::string& name);

struct GridConfig {
    unsigned refinement_n = 2;
    unsigned level_lo = 1;
    unsigned level_hi = 1;
    std::vector<double> h_list;
    std::size_t ref_factor = 8;
    // Step for small-noise-deviation; 0 means "not given".
    double h = 0.0;
    // Time steps for chaos.
    std::size_t steps = 64;
    std::size_t m_particles = 0;
    std::vector<std::size_t> m_list;
    std::size_t reference_m = 0;
    std::size_t replications = 0;
    std::size_t pilot_samples = 32;
    unsigned max_level = 8;
    // Independent repetitions of an MLMC run (seeds seed, seed+1, ...).
    std::size_t runs = 1;
    bool pathwise = false;
    // Drop the coarsest point from rate fits.
    bool skip_coarsest = false;
};

struct Targets {
    std::vector<double> delta_list;
    std::vector<double> epsilon_list;
};

// Acceptance bounds evaluated by `run --assert`.
struct Expectations {
    std::optional<std::pair<double, double>> slope;
    std::optional<double> r_squared_min;
    std::optional<double> max_var_diff;
    std::optional<std::pair<double, double>> log2_ratio;
    std::optional<double> abs_error_max;
    std::optional<double> reference;
    std::optional<std::size_t> min_hits;
};

struct ExperimentConfig {
    Experiment experiment = Experiment::CoupledVariance;
    std::string model_name;
    ParameterMap model_params;
    std::string test_function = "identity";
    GridConfig grid;
    Targets targets;
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    bool write_csv = true;
    bool write_json = true;
    Expectations expect;
    nlohmann::json raw;
};

struct Diagnostic {
    std::string key;
    std::string message;
};

struct ParsedConfig {
    ExperimentConfig config;
    std::vector<Diagnostic> diagnostics;
};

// Schema and cross-field validation; never runs a simulation. Throws ConfigError
// only when the document is not valid JSON.
[[nodiscard]] ParsedConfig parse_config(const std::string& text);
[[nodiscard]] ParsedConfig load_config(const std::filesystem::path& path);

// Diagnostics of load_config, with unreadable or unparsable files reported as a
// single diagnostic.
[[nodiscard]] std::vector<Diagnostic> validate(const std::filesystem::path& path);

}  // namespace mvsde
