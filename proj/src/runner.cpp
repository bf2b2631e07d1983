#include "mvsde/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mvsde/em_engine.hpp"
#include "mvsde/errors.hpp"
#include "mvsde/mlmc_engine.hpp"

namespace mvsde {

using nlohmann::json;

namespace {

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string short_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::string cell_text(const Cell& c) {
    if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
    if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
    return std::get<std::string>(c);
}

Cell count_cell(std::uint64_t v) { return static_cast<std::int64_t>(v); }

json cell_json(const Cell& c) {
    if (const auto* d = std::get_if<double>(&c)) return std::isfinite(*d) ? json(*d) : json(nullptr);
    if (const auto* i = std::get_if<std::int64_t>(&c)) return *i;
    return std::get<std::string>(c);
}

// Adds a log-log fit unless some point is nonpositive, in which case a flag is raised.
void add_fit(ReportBundle& report, std::string name, std::string x, std::string y, std::vector<RatePoint> points,
             bool skip_first) {
    if (points.size() < 2 + (skip_first ? 1 : 0)) return;
    const bool positive =
        std::all_of(points.begin(), points.end(), [](const RatePoint& p) { return p.x > 0.0 && p.y > 0.0; });
    if (!positive) {
        report.flags.push_back("fit_skipped_nonpositive:" + name);
        return;
    }
    FitRecord rec{std::move(name), std::move(x), std::move(y), loglog_fit(points, skip_first), std::move(points)};
    report.fits.push_back(std::move(rec));
}

void add_slope_checks(ReportBundle& report, const Expectations& expect) {
    for (const auto& f : report.fits) {
        if (expect.slope) {
            const bool ok = f.fit.slope >= expect.slope->first && f.fit.slope <= expect.slope->second;
            report.checks.push_back({"slope:" + f.name, ok,
                                     "slope " + short_double(f.fit.slope) + " in [" +
                                         short_double(expect.slope->first) + ", " +
                                         short_double(expect.slope->second) + "]"});
        }
        if (expect.r_squared_min) {
            const bool ok = f.fit.r_squared >= *expect.r_squared_min;
            report.checks.push_back({"r_squared:" + f.name, ok,
                                     "r^2 " + short_double(f.fit.r_squared) + " >= " +
                                         short_double(*expect.r_squared_min)});
        }
    }
    if ((expect.slope || expect.r_squared_min) && report.fits.empty()) {
        report.checks.push_back({"slope", false, "no rate fit could be computed"});
    }
}

Check cost_check(bool all_equal, std::size_t rows) {
    return {"rng_cost_closed_form", all_equal,
            std::to_string(rows) + " level rows checked against samples * M * d_bar * N^l"};
}

ReportBundle run_strong_error(const ExperimentConfig& cfg, const ModelSpec& model, const TestFunction& tf) {
    ReportBundle report;
    const auto& g = cfg.grid;
    const auto points = strong_error_curve(model, g.h_list, g.m_particles, g.replications, cfg.seed, tf, g.ref_factor);
    report.table.columns = {"h", "steps", "mse", "ci_lo", "ci_hi", "samples"};
    std::vector<RatePoint> fit;
    for (const auto& p : points) {
        report.table.rows.push_back({p.h, count_cell(p.steps), p.mse, p.ci_lo, p.ci_hi, count_cell(p.samples)});
        fit.push_back({p.h, p.mse});
    }
    std::sort(fit.begin(), fit.end(), [](const RatePoint& a, const RatePoint& b) { return a.x > b.x; });
    add_fit(report, "mse_vs_h", "h", "mse", fit, g.skip_coarsest);
    std::size_t finest = 0;
    for (const auto& p : points) finest = std::max(finest, p.steps);
    report.extra["h_ref"] = model.horizon() / static_cast<double>(finest * g.ref_factor);
    add_slope_checks(report, cfg.expect);
    return report;
}

ReportBundle run_coupled(const ExperimentConfig& cfg, const ModelSpec& model, const TestFunction& tf,
                         bool second_moment) {
    ReportBundle report;
    const auto& g = cfg.grid;
    std::vector<double> eps = cfg.targets.epsilon_list;
    if (eps.empty()) eps.push_back(model.epsilon());

    std::vector<std::vector<CoupledVarianceRow>> by_eps;
    for (double e : eps) {
        by_eps.push_back(coupled_variance_study(model.with_epsilon(e), g.level_lo, g.level_hi, g.refinement_n,
                                                g.m_particles, g.replications, tf, cfg.seed));
    }

    bool cost_ok = true;
    std::size_t cost_rows = 0;
    double worst_var = 0.0;
    std::vector<double> ratios;
    if (second_moment) {
        report.table.columns = {"level",      "h_fine", "h_coarse", "epsilon", "second_moment", "ci_lo",
                                "ci_hi",      "log2_ratio", "rng_cost", "samples"};
    } else {
        report.table.columns = {"level", "h_coarse", "epsilon", "var_diff", "ci_lo", "ci_hi", "rng_cost", "samples"};
    }
    for (const auto& rows : by_eps) {
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const auto& r = rows[k];
            const LevelConfig lc(g.refinement_n, r.level, model.horizon());
            ++cost_rows;
            cost_ok = cost_ok && r.rng_cost == r.samples * level_cost(lc, g.m_particles, model.d_bar());
            worst_var = std::max(worst_var, r.var_diff);
            if (second_moment) {
                Cell ratio = std::string();
                if (k > 0 && r.second_moment > 0.0 && rows[k - 1].second_moment > 0.0) {
                    const double lr = std::log2(rows[k - 1].second_moment / r.second_moment);
                    ratios.push_back(lr);
                    ratio = lr;
                }
                report.table.rows.push_back({count_cell(r.level), r.h_fine, r.h_coarse, r.epsilon, r.second_moment,
                                             r.second_moment_lo, r.second_moment_hi, ratio, count_cell(r.rng_cost),
                                             count_cell(r.samples)});
            } else {
                report.table.rows.push_back({count_cell(r.level), r.h_coarse, r.epsilon, r.var_diff, r.ci_lo, r.ci_hi,
                                             count_cell(r.rng_cost), count_cell(r.samples)});
            }
        }
    }

    // Rate in h per epsilon, rate in epsilon per level.
    for (std::size_t e = 0; e < eps.size(); ++e) {
        std::vector<RatePoint> pts;
        for (const auto& r : by_eps[e]) pts.push_back({second_moment ? r.h_fine : r.h_coarse,
                                                       second_moment ? r.second_moment : r.var_diff});
        add_fit(report,
                std::string(second_moment ? "second_moment_vs_h_fine" : "var_diff_vs_h_coarse") +
                    "[epsilon=" + short_double(eps[e]) + "]",
                second_moment ? "h_fine" : "h_coarse", second_moment ? "second_moment" : "var_diff", pts,
                g.skip_coarsest);
    }
    if (eps.size() > 1) {
        for (std::size_t k = 0; k < by_eps.front().size(); ++k) {
            std::vector<RatePoint> pts;
            for (std::size_t e = 0; e < eps.size(); ++e) {
                pts.push_back({eps[e], second_moment ? by_eps[e][k].second_moment : by_eps[e][k].var_diff});
            }
            add_fit(report,
                    std::string(second_moment ? "second_moment" : "var_diff") + "_vs_epsilon[level=" +
                        std::to_string(by_eps.front()[k].level) + "]",
                    "epsilon", second_moment ? "second_moment" : "var_diff", pts, false);
        }
    }
    // With one epsilon only the h-fit exists; with one level only the epsilon-fit is meaningful.
    if (eps.size() > 1 && g.level_lo == g.level_hi) {
        std::erase_if(report.fits, [](const FitRecord& f) { return f.x != "epsilon"; });
    }

    report.checks.push_back(cost_check(cost_ok, cost_rows));
    if (cfg.expect.max_var_diff) {
        report.checks.push_back({"max_var_diff", worst_var <= *cfg.expect.max_var_diff,
                                 "max var_diff " + short_double(worst_var) + " <= " +
                                     short_double(*cfg.expect.max_var_diff)});
    }
    if (cfg.expect.log2_ratio) {
        const auto [lo, hi] = *cfg.expect.log2_ratio;
        const bool ok = !ratios.empty() && std::all_of(ratios.begin(), ratios.end(),
                                                       [&](double r) { return r >= lo && r <= hi; });
        std::string list;
        for (double r : ratios) list += (list.empty() ? "" : ", ") + short_double(r);
        report.checks.push_back({"log2_ratio", ok, "log2 ratios {" + list + "} in [" + short_double(lo) + ", " +
                                                       short_double(hi) + "]"});
    }
    add_slope_checks(report, cfg.expect);
    return report;
}

ReportBundle run_mlmc(const ExperimentConfig& cfg, const ModelSpec& model, const TestFunction& tf) {
    ReportBundle report;
    const auto& g = cfg.grid;
    report.table.columns = {"run",      "seed",    "delta",    "level",    "samples",
                            "mean_diff", "var_diff", "rng_cost", "estimate", "total_cost"};

    std::optional<double> reference = cfg.expect.reference;
    if (!reference && model.has_mean_oracle() && tf.name == "identity") reference = model.mean_oracle(model.horizon());

    bool cost_ok = true;
    std::size_t cost_rows = 0;
    std::size_t hits = 0, total_runs = 0;
    json runs = json::array();
    std::vector<RatePoint> cost_points;
    for (double delta : cfg.targets.delta_list) {
        double cost_sum = 0.0;
        for (std::size_t run = 0; run < g.runs; ++run) {
            MlmcOptions opts;
            opts.target_delta = delta;
            opts.refinement_n = g.refinement_n;
            opts.m_particles = g.m_particles;
            opts.pilot_samples = g.pilot_samples;
            opts.max_level = g.max_level;
            opts.seed = cfg.seed + run;
            const auto rep = mlmc_estimate(model, tf, opts);
            for (const auto& lv : rep.per_level) {
                const LevelConfig lc(g.refinement_n, lv.level, model.horizon());
                ++cost_rows;
                cost_ok = cost_ok && lv.rng_cost == lv.samples * level_cost(lc, g.m_particles, model.d_bar());
                report.table.rows.push_back({count_cell(run), count_cell(opts.seed), delta, count_cell(lv.level),
                                             count_cell(lv.samples), lv.mean_diff, lv.var_diff,
                                             count_cell(lv.rng_cost), rep.estimate, count_cell(rep.total_cost)});
            }
            json r = {{"run", run},
                      {"seed", opts.seed},
                      {"delta", delta},
                      {"estimate", rep.estimate},
                      {"total_cost", rep.total_cost},
                      {"allocation", rep.allocation},
                      {"bias_proxy", rep.bias_proxy},
                      {"bias_converged", rep.bias_converged},
                      {"flags", rep.flags}};
            if (reference) {
                const double err = std::abs(rep.estimate - *reference);
                r["abs_error"] = err;
                const double tol = cfg.expect.abs_error_max.value_or(3.0 * delta);
                if (err <= tol) ++hits;
            }
            ++total_runs;
            for (const auto& f : rep.flags) {
                if (std::find(report.flags.begin(), report.flags.end(), f) == report.flags.end()) report.flags.push_back(f);
            }
            runs.push_back(r);
            cost_sum += static_cast<double>(rep.total_cost);
        }
        cost_points.push_back({delta, cost_sum / static_cast<double>(g.runs)});
    }
    report.extra["runs"] = runs;
    if (reference) report.extra["reference"] = *reference;
    if (total_runs == 1) report.extra["estimate"] = runs[0]["estimate"];
    add_fit(report, "total_cost_vs_delta", "delta", "total_cost", cost_points, false);

    report.checks.push_back(cost_check(cost_ok, cost_rows));
    if (reference && (cfg.expect.abs_error_max || cfg.expect.min_hits)) {
        const std::size_t need = cfg.expect.min_hits.value_or(total_runs);
        report.checks.push_back({"estimate_accuracy", hits >= need,
                                 std::to_string(hits) + "/" + std::to_string(total_runs) +
                                     " runs within tolerance of " + short_double(*reference) + " (need " +
                                     std::to_string(need) + ")"});
    } else if (cfg.expect.abs_error_max || cfg.expect.min_hits) {
        report.checks.push_back({"estimate_accuracy", false, "no reference value available"});
    }
    add_slope_checks(report, cfg.expect);
    return report;
}

ReportBundle run_cost_compare(const ExperimentConfig& cfg, const ModelSpec& model, const TestFunction& tf) {
    ReportBundle report;
    const auto& g = cfg.grid;
    MlmcOptions base;
    base.refinement_n = g.refinement_n;
    base.m_particles = g.m_particles;
    base.pilot_samples = g.pilot_samples;
    base.max_level = g.max_level;
    base.seed = cfg.seed;
    const auto rows = cost_compare(model, tf, cfg.targets.delta_list, cfg.targets.epsilon_list, base);
    report.table.columns = {"delta", "epsilon", "mc_cost", "mlmc_cost", "mc_steps", "mc_samples", "mlmc_estimate"};
    for (const auto& r : rows) {
        report.table.rows.push_back({r.delta, r.epsilon, count_cell(r.mc_cost), count_cell(r.mlmc_cost),
                                     count_cell(r.mc_steps), count_cell(r.mc_samples), r.mlmc_estimate});
        if (!r.bias_converged &&
            std::find(report.flags.begin(), report.flags.end(), "bias_unconverged") == report.flags.end()) {
            report.flags.emplace_back("bias_unconverged");
        }
    }
    for (double e : cfg.targets.epsilon_list) {
        std::vector<RatePoint> pts;
        for (const auto& r : rows) {
            if (r.epsilon == e) pts.push_back({r.delta, static_cast<double>(r.mlmc_cost)});
        }
        add_fit(report, "mlmc_cost_vs_delta[epsilon=" + short_double(e) + "]", "delta", "mlmc_cost", pts, false);
    }
    add_slope_checks(report, cfg.expect);
    return report;
}

ReportBundle run_chaos(const ExperimentConfig& cfg, const ModelSpec& model, const TestFunction& tf) {
    ReportBundle report;
    const auto& g = cfg.grid;
    ChaosOptions opts;
    opts.reference_m = g.reference_m;
    opts.replications = g.replications;
    opts.steps = g.steps;
    opts.seed = cfg.seed;
    opts.pathwise = g.pathwise;
    const auto rows = chaos_study(model, tf, g.m_list, opts);
    report.table.columns = {"m_particles", "mse", "ci_lo", "ci_hi", "samples"};
    std::vector<RatePoint> pts;
    for (const auto& r : rows) {
        report.table.rows.push_back({count_cell(r.m_particles), r.mse, r.ci_lo, r.ci_hi, count_cell(r.samples)});
        pts.push_back({static_cast<double>(r.m_particles), r.mse});
    }
    add_fit(report, g.pathwise ? "pathwise_mse_vs_m" : "mse_vs_m", "m_particles", "mse", pts, g.skip_coarsest);
    add_slope_checks(report, cfg.expect);
    return report;
}

ReportBundle run_deviation(const ExperimentConfig& cfg, const ModelSpec& model) {
    ReportBundle report;
    const auto& g = cfg.grid;
    const auto grid = SimulationGrid::from_step(model.horizon(), g.h);
    const auto rows =
        small_noise_deviation(model, grid, cfg.targets.epsilon_list, g.m_particles, g.replications, cfg.seed);
    report.table.columns = {"epsilon", "sup_sq_dev", "ci_lo", "ci_hi", "samples"};
    std::vector<RatePoint> pts;
    for (const auto& r : rows) {
        report.table.rows.push_back({r.epsilon, r.mean_sup_sq, r.ci_lo, r.ci_hi, count_cell(r.samples)});
        pts.push_back({r.epsilon, r.mean_sup_sq});
    }
    add_fit(report, "sup_sq_dev_vs_epsilon", "epsilon", "sup_sq_dev", pts, false);
    add_slope_checks(report, cfg.expect);
    return report;
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

const char* version() { return "0.1.0"; }

ReportBundle execute(const ExperimentConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    const ModelSpec model = builtin_model(cfg.model_name, cfg.model_params);
    const TestFunction tf = builtin_test_function(cfg.test_function);

    ReportBundle report;
    switch (cfg.experiment) {
        case Experiment::StrongError: report = run_strong_error(cfg, model, tf); break;
        case Experiment::CoupledVariance: report = run_coupled(cfg, model, tf, false); break;
        case Experiment::SecondMoment: report = run_coupled(cfg, model, tf, true); break;
        case Experiment::Mlmc: report = run_mlmc(cfg, model, tf); break;
        case Experiment::CostCompare: report = run_cost_compare(cfg, model, tf); break;
        case Experiment::Chaos: report = run_chaos(cfg, model, tf); break;
        case Experiment::SmallNoiseDeviation: report = run_deviation(cfg, model); break;
    }
    report.experiment = to_string(cfg.experiment);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.metadata = {{"config", cfg.raw},
                       {"seed", cfg.seed},
                       {"version", version()},
                       {"wall_time_seconds", wall},
                       {"timestamp", timestamp_utc()}};
    return report;
}

std::string to_csv(const Table& table) {
    std::ostringstream out;
    for (std::size_t c = 0; c < table.columns.size(); ++c) out << (c ? "," : "") << table.columns[c];
    out << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << cell_text(row[c]);
        out << '\n';
    }
    return out.str();
}

json to_json(const ReportBundle& report) {
    json rows = json::array();
    for (const auto& row : report.table.rows) {
        json obj = json::object();
        for (std::size_t c = 0; c < row.size(); ++c) obj[report.table.columns[c]] = cell_json(row[c]);
        rows.push_back(obj);
    }
    json fits = json::array();
    for (const auto& f : report.fits) {
        json pts = json::array();
        for (const auto& p : f.points) pts.push_back({p.x, p.y});
        fits.push_back({{"name", f.name},
                        {"x", f.x},
                        {"y", f.y},
                        {"slope", f.fit.slope},
                        {"intercept", f.fit.intercept},
                        {"r_squared", f.fit.r_squared},
                        {"points", pts}});
    }
    json checks = json::array();
    for (const auto& c : report.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    json doc = {{"experiment", report.experiment},
                {"metadata", report.metadata},
                {"columns", report.table.columns},
                {"table", rows},
                {"rate_fits", fits},
                {"flags", report.flags},
                {"checks", checks}};
    for (const auto& [k, v] : report.extra.items()) doc[k] = v;
    return doc;
}

void print_summary(const ReportBundle& report, std::ostream& out) {
    out << "experiment: " << report.experiment << '\n';
    std::vector<std::size_t> width(report.table.columns.size());
    for (std::size_t c = 0; c < width.size(); ++c) width[c] = report.table.columns[c].size();
    std::vector<std::vector<std::string>> text;
    for (const auto& row : report.table.rows) {
        std::vector<std::string> cells;
        for (std::size_t c = 0; c < row.size(); ++c) {
            const auto* d = std::get_if<double>(&row[c]);
            cells.push_back(d ? short_double(*d) : cell_text(row[c]));
            width[c] = std::max(width[c], cells.back().size());
        }
        text.push_back(std::move(cells));
    }
    for (std::size_t c = 0; c < width.size(); ++c) out << std::setw(static_cast<int>(width[c]) + 2) << report.table.columns[c];
    out << '\n';
    for (const auto& cells : text) {
        for (std::size_t c = 0; c < cells.size(); ++c) out << std::setw(static_cast<int>(width[c]) + 2) << cells[c];
        out << '\n';
    }
    for (const auto& f : report.fits) {
        out << "fit " << f.name << ": slope " << short_double(f.fit.slope) << ", r^2 " << short_double(f.fit.r_squared)
            << '\n';
    }
    for (const auto& flag : report.flags) out << "flag: " << flag << '\n';
    for (const auto& c : report.checks) out << (c.passed ? "[PASS] " : "[FAIL] ") << c.name << ": " << c.detail << '\n';
}

int run(const std::filesystem::path& config_path, const RunOptions& options, std::ostream& out, std::ostream& err) {
    ParsedConfig parsed;
    try {
        parsed = load_config(config_path);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    }
    if (!parsed.diagnostics.empty()) {
        for (const auto& d : parsed.diagnostics) err << "error: " << d.key << ": " << d.message << '\n';
        return kExitValidation;
    }
    auto cfg = parsed.config;
    if (options.seed) cfg.seed = *options.seed;
    if (options.output_dir) cfg.output_dir = *options.output_dir;

    ReportBundle report;
    try {
        report = execute(cfg);
    } catch (const DivergenceError& e) {
        err << "divergence: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    }

    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    if (ec) {
        err << "error: output_dir: cannot create '" << cfg.output_dir << "': " << ec.message() << '\n';
        return kExitValidation;
    }
    const auto base = std::filesystem::path(cfg.output_dir) / report.experiment;
    if (cfg.write_csv) {
        std::ofstream(base.string() + ".csv", std::ios::binary) << to_csv(report.table);
    }
    if (cfg.write_json) {
        std::ofstream(base.string() + ".json", std::ios::binary) << to_json(report).dump(2) << '\n';
    }
    print_summary(report, out);

    if (options.assert_checks) {
        const bool all = std::all_of(report.checks.begin(), report.checks.end(), [](const Check& c) { return c.passed; });
        if (!all) return kExitAssertion;
    }
    return kExitOk;
}

int run_validate(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err) {
    const auto diags = validate(config_path);
    if (diags.empty()) {
        out << "ok: " << config_path.string() << '\n';
        return kExitOk;
    }
    for (const auto& d : diags) err << "error: " << (d.key.empty() ? "" : d.key + ": ") << d.message << '\n';
    return kExitValidation;
}

}  // namespace mvsde
