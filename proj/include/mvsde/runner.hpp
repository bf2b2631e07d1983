#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mvsde/config.hpp"
#include "mvsde/stats.hpp"

namespace mvsde {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitAssertion = 4;

using Cell = std::variant<double, std::int64_t, std::string>;

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;
};

struct FitRecord {
    std::string name;
    std::string x;
    std::string y;
    RateFit fit;
    std::vector<RatePoint> points;
};

struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ReportBundle {
    std::string experiment;
    Table table;
    std::vector<FitRecord> fits;
    std::vector<std::string> flags;
    std::vector<Check> checks;
    // Experiment-specific payload (e.g. per-run MLMC estimates).
    nlohmann::json extra = nlohmann::json::object();
    // Config echo, version, wall time, timestamp. Never written to CSV.
    nlohmann::json metadata = nlohmann::json::object();
};

// Runs the configured experiment in memory. Throws mvsde::Error subclasses.
[[nodiscard]] ReportBundle execute(const ExperimentConfig& config);

// CSV with a header row; doubles printed with 17 significant digits.
[[nodiscard]] std::string to_csv(const Table& table);
[[nodiscard]] nlohmann::json to_json(const ReportBundle& report);
// Human-readable table, fits and checks.
void print_summary(const ReportBundle& report, std::ostream& out);

struct RunOptions {
    bool assert_checks = false;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
};

// Loads, validates, executes and writes <output_dir>/<experiment>.{csv,json}.
// Returns 0, 2 (validation), 3 (divergence) or 4 (failed check with assert_checks).
int run(const std::filesystem::path& config_path, const RunOptions& options, std::ostream& out, std::ostream& err);

// Prints diagnostics; returns 0 when the config is valid, 2 otherwise.
int run_validate(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err);

[[nodiscard]] const char* version();

}  // namespace mvsde
