#include "mvsde/mlmc_engine.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mvsde/errors.hpp"
#include "mvsde/parallel.hpp"
#include "streams.hpp"

namespace mvsde {

namespace {

constexpr double kMaxSamplesPerLevel = 1e9;

double mean_psi(const TestFunction& fn, const ParticleCloud& cloud) {
    double acc = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) acc += fn.psi(cloud.particle(i));
    return acc / static_cast<double>(cloud.size());
}

NoiseSource stream_source(const GaussianStream& stream) {
    return [stream](std::uint64_t step, std::uint64_t particle, double* out, std::size_t count) {
        stream.fill(step, particle, out, count);
    };
}

GaussianStream level_stream(std::uint64_t seed, unsigned level, std::uint64_t index) {
    return GaussianStream(seed, stream_id({streams::kLevel, level, index}));
}

struct CoupledWorkspace {
    EulerWorkspace euler;
    std::vector<double> sum;
};

void advance_coupled(const ModelSpec& model, CoupledLevelState& state, const LevelConfig& cfg,
                     std::span<const double> gaussians, CoupledWorkspace& ws) {
    const std::size_t block = state.fine.size() * model.d_bar();
    const unsigned n_sub = cfg.refinement_n();
    if (gaussians.size() != block * n_sub) {
        throw ShapeError("coupled_coarse_interval: expected N x M x d_bar = " + std::to_string(block * n_sub) +
                         " normals, got " + std::to_string(gaussians.size()));
    }
    const double h_fine = cfg.h_fine();
    const double sqrt_fine = std::sqrt(h_fine);
    const std::size_t n = state.coarse_time_index;
    for (unsigned k = 0; k < n_sub; ++k) {
        euler_update(model, state.fine, h_fine, sqrt_fine, gaussians.subspan(k * block, block), n * n_sub + k,
                     ws.euler);
    }
    ws.sum.assign(block, 0.0);
    for (unsigned k = 0; k < n_sub; ++k) {
        const double* blk = gaussians.data() + k * block;
        for (std::size_t q = 0; q < block; ++q) ws.sum[q] += blk[q];
    }
    euler_update(model, state.coarse, cfg.h_coarse(), sqrt_fine, ws.sum, n, ws.euler);
    ++state.coarse_time_index;
}

void require_level_inputs(const ModelSpec& model, const LevelConfig& cfg, std::size_t m_particles) {
    if (m_particles == 0) throw ConfigError("m_particles must be >= 1");
    if (std::abs(cfg.horizon() - model.horizon()) > 1e-12 * model.horizon()) {
        throw ConfigError("level config horizon differs from the model horizon");
    }
}

}  // namespace

LevelConfig::LevelConfig(unsigned refinement_n, unsigned level, double horizon)
    : n_(refinement_n), level_(level), horizon_(horizon), fine_steps_(1) {
    if (refinement_n < 2) throw ConfigError("refinement_n must be >= 2");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
    for (unsigned l = 0; l < level; ++l) {
        if (fine_steps_ > (std::uint64_t{1} << 40) / refinement_n) {
            throw CapabilityError("level " + std::to_string(level) + " needs more than 2^40 steps");
        }
        fine_steps_ *= refinement_n;
    }
}

double LevelConfig::h_coarse() const noexcept {
    return level_ == 0 ? horizon_ : horizon_ / static_cast<double>(coarse_steps());
}

std::uint64_t level_cost(const LevelConfig& cfg, std::size_t m_particles, std::size_t d_bar) {
    return static_cast<std::uint64_t>(m_particles) * d_bar * cfg.fine_steps();
}

CoupledLevelState CoupledLevelState::initial(const ModelSpec& model, std::size_t m_particles, std::uint64_t seed) {
    ParticleCloud start = model.initial_cloud(m_particles, seed);
    return CoupledLevelState{start, start, 0};
}

CoupledLevelState coupled_coarse_interval(const ModelSpec& model, CoupledLevelState state, const LevelConfig& cfg,
                                          std::span<const double> gaussians) {
    if (cfg.level() == 0) throw ConfigError("coupled_coarse_interval: level must be >= 1");
    if (state.fine.size() != state.coarse.size() || state.fine.dim() != state.coarse.dim() ||
        state.fine.dim() != model.d()) {
        throw ShapeError("coupled_coarse_interval: fine and coarse clouds must share M and d = model d");
    }
    CoupledWorkspace ws;
    advance_coupled(model, state, cfg, gaussians, ws);
    return state;
}

LevelPairSample simulate_level_pair(const ModelSpec& model, const LevelConfig& cfg, std::size_t m_particles,
                                    const TestFunction& test_fn, const NoiseSource& noise) {
    if (cfg.level() == 0) throw ConfigError("simulate_level_pair: level must be >= 1 (use level0_sample)");
    require_level_inputs(model, cfg, m_particles);
    const std::size_t db = model.d_bar();
    const std::size_t block = m_particles * db;
    const unsigned n_sub = cfg.refinement_n();

    auto state = CoupledLevelState::initial(model, m_particles);
    CoupledWorkspace ws;
    std::vector<double> gaussians(block * n_sub);
    for (std::uint64_t n = 0; n < cfg.coarse_steps(); ++n) {
        for (unsigned k = 0; k < n_sub; ++k) {
            for (std::size_t i = 0; i < m_particles; ++i) {
                noise(n * n_sub + k, i, gaussians.data() + k * block + i * db, db);
            }
        }
        advance_coupled(model, state, cfg, gaussians, ws);
    }

    LevelPairSample out;
    double diff = 0.0, fine = 0.0, gap = 0.0;
    for (std::size_t i = 0; i < m_particles; ++i) {
        const auto yf = state.fine.particle(i);
        const auto yc = state.coarse.particle(i);
        const double pf = test_fn.psi(yf);
        diff += pf - test_fn.psi(yc);
        fine += pf;
        for (std::size_t k = 0; k < yf.size(); ++k) gap += (yf[k] - yc[k]) * (yf[k] - yc[k]);
    }
    const double m = static_cast<double>(m_particles);
    out.diff = diff / m;
    out.fine = fine / m;
    out.second_moment = gap / m;
    out.rng_cost = level_cost(cfg, m_particles, db);
    return out;
}

LevelPairSample simulate_level_pair(const ModelSpec& model, const LevelConfig& cfg, std::size_t m_particles,
                                    const TestFunction& test_fn, std::uint64_t seed, std::uint64_t sample_index) {
    return simulate_level_pair(model, cfg, m_particles, test_fn,
                               stream_source(level_stream(seed, cfg.level(), sample_index)));
}

Level0Sample level0_sample(const ModelSpec& model, const LevelConfig& cfg, std::size_t m_particles,
                           const TestFunction& test_fn, std::uint64_t seed, std::uint64_t sample_index) {
    if (cfg.level() != 0) throw ConfigError("level0_sample: level must be 0");
    require_level_inputs(model, cfg, m_particles);
    const auto stream = level_stream(seed, 0, sample_index);
    ParticleCloud cloud = model.initial_cloud(m_particles);
    std::vector<double> xi(m_particles * model.d_bar());
    draw_normals(stream, 0, m_particles, model.d_bar(), xi);
    EulerWorkspace ws;
    euler_update(model, cloud, cfg.horizon(), std::sqrt(cfg.horizon()), xi, 0, ws);
    return {mean_psi(test_fn, cloud), level_cost(cfg, m_particles, model.d_bar())};
}

LevelPairSample level_sample(const ModelSpec& model, const LevelConfig& cfg, std::size_t m_particles,
                             const TestFunction& test_fn, std::uint64_t seed, std::uint64_t sample_index) {
    if (cfg.level() == 0) {
        const auto s = level0_sample(model, cfg, m_particles, test_fn, seed, sample_index);
        return {s.sample, s.sample, 0.0, s.rng_cost};
    }
    return simulate_level_pair(model, cfg, m_particles, test_fn, seed, sample_index);
}

std::vector<CoupledVarianceRow> coupled_variance_study(const ModelSpec& model, unsigned level_lo, unsigned level_hi,
                                                       unsigned refinement_n, std::size_t m_particles,
                                                       std::size_t replications, const TestFunction& test_fn,
                                                       std::uint64_t seed) {
    if (level_lo < 1 || level_hi < level_lo) throw ConfigError("levels must satisfy 1 <= lo <= hi");
    if (replications < 2) throw ConfigError("replications must be >= 2");
    std::vector<CoupledVarianceRow> rows;
    for (unsigned level = level_lo; level <= level_hi; ++level) {
        const LevelConfig cfg(refinement_n, level, model.horizon());
        std::vector<LevelPairSample> samples(replications);
        parallel_for(replications, [&](std::size_t r) {
            samples[r] = simulate_level_pair(model, cfg, m_particles, test_fn, seed, r);
        });
        std::vector<double> diffs(replications), gaps(replications);
        CoupledVarianceRow row;
        for (std::size_t r = 0; r < replications; ++r) {
            diffs[r] = samples[r].diff;
            gaps[r] = samples[r].second_moment;
            row.rng_cost += samples[r].rng_cost;
        }
        const auto diff_moments = moments_of(diffs);
        const auto [lo, hi] = variance_ci(diffs);
        const auto gap_moments = moments_of(gaps);
        const auto [glo, ghi] = normal_ci(gap_moments);
        row.level = level;
        row.h_fine = cfg.h_fine();
        row.h_coarse = cfg.h_coarse();
        row.epsilon = model.epsilon();
        row.mean_diff = diff_moments.mean();
        row.var_diff = diff_moments.variance();
        row.ci_lo = lo;
        row.ci_hi = hi;
        row.ci_halfwidth = 0.5 * (hi - lo);
        row.second_moment = gap_moments.mean();
        row.second_moment_lo = glo;
        row.second_moment_hi = ghi;
        row.samples = replications;
        rows.push_back(row);
    }
    return rows;
}

std::vector<std::uint64_t> optimal_allocation(std::span<const double> variances, std::span<const double> costs,
                                              double delta) {
    if (variances.size() != costs.size()) throw ShapeError("optimal_allocation: variances and costs differ in size");
    if (!(delta > 0.0)) throw ConfigError("target_delta must be positive");
    double total = 0.0;
    for (std::size_t l = 0; l < variances.size(); ++l) total += std::sqrt(std::max(0.0, variances[l]) * costs[l]);
    std::vector<std::uint64_t> k(variances.size(), 0);
    if (total == 0.0) return k;
    for (std::size_t l = 0; l < variances.size(); ++l) {
        const double v = std::max(0.0, variances[l]);
        const double want = std::ceil(2.0 / (delta * delta) * std::sqrt(v / costs[l]) * total);
        if (want > kMaxSamplesPerLevel) {
            throw CapabilityError("MLMC allocation at level " + std::to_string(l) + " exceeds 1e9 samples");
        }
        k[l] = static_cast<std::uint64_t>(want);
    }
    return k;
}

MlmcReport mlmc_estimate(const ModelSpec& model, const TestFunction& test_fn, const MlmcOptions& options) {
    if (!(options.target_delta > 0.0)) throw ConfigError("target_delta must be positive");
    if (options.pilot_samples < 2) throw ConfigError("pilot_samples must be >= 2");
    if (options.refinement_n < 2) throw ConfigError("refinement_n must be >= 2");
    if (options.m_particles == 0) throw ConfigError("m_particles must be >= 1");

    struct LevelState {
        LevelConfig cfg;
        RunningMoments diff;
        RunningMoments fine;
        std::uint64_t cost = 0;
    };
    std::vector<LevelState> levels;

    auto run = [&](LevelState& lv, std::uint64_t count) {
        const std::uint64_t first = lv.diff.count();
        std::vector<LevelPairSample> batch(count);
        parallel_for(count, [&](std::size_t j) {
            batch[j] = level_sample(model, lv.cfg, options.m_particles, test_fn, options.seed, first + j);
        });
        for (const auto& s : batch) {
            lv.diff.push(s.diff);
            lv.fine.push(s.fine);
            lv.cost += s.rng_cost;
        }
    };

    MlmcReport report;
    report.target_delta = options.target_delta;
    const double n_minus_1 = static_cast<double>(options.refinement_n - 1);
    for (unsigned top = 0;; ++top) {
        levels.push_back({LevelConfig(options.refinement_n, top, model.horizon()), {}, {}, 0});
        run(levels.back(), options.pilot_samples);

        std::vector<double> variances, costs;
        for (const auto& lv : levels) {
            variances.push_back(lv.diff.variance());
            costs.push_back(static_cast<double>(level_cost(lv.cfg, options.m_particles, model.d_bar())));
        }
        const auto want = optimal_allocation(variances, costs, options.target_delta);
        report.degenerate_allocation = std::all_of(variances.begin(), variances.end(), [](double v) { return v <= 0.0; });
        for (std::size_t l = 0; l < levels.size(); ++l) {
            if (want[l] > levels[l].diff.count()) run(levels[l], want[l] - levels[l].diff.count());
        }

        if (top >= 1) {
            report.bias_proxy = std::abs(levels.back().diff.mean()) / n_minus_1;
            if (report.bias_proxy <= options.target_delta / std::sqrt(2.0)) {
                report.bias_converged = true;
                break;
            }
        }
        if (top >= options.max_level) break;
    }

    for (const auto& lv : levels) {
        LevelStatistics st;
        st.level = lv.cfg.level();
        st.samples = lv.diff.count();
        st.mean_diff = lv.diff.mean();
        st.var_diff = lv.diff.variance();
        st.mean_fine = lv.fine.mean();
        st.var_fine = lv.fine.variance();
        st.rng_cost = lv.cost;
        report.estimate += st.mean_diff;
        report.total_cost += st.rng_cost;
        report.allocation.push_back(st.samples);
        report.per_level.push_back(st);
    }
    if (!report.bias_converged) report.flags.emplace_back("bias_unconverged");
    if (report.degenerate_allocation) report.flags.emplace_back("degenerate_allocation");
    return report;
}

std::vector<CostCompareRow> cost_compare(const ModelSpec& model, const TestFunction& test_fn,
                                         std::span<const double> deltas, std::span<const double> epsilons,
                                         const MlmcOptions& base) {
    if (deltas.empty() || epsilons.empty()) throw ConfigError("cost_compare: delta_list and epsilon_list are required");
    std::vector<CostCompareRow> rows;
    for (double eps : epsilons) {
        const ModelSpec variant = model.with_epsilon(eps);
        for (double delta : deltas) {
            MlmcOptions opts = base;
            opts.target_delta = delta;
            const auto report = mlmc_estimate(variant, test_fn, opts);

            CostCompareRow row;
            row.delta = delta;
            row.epsilon = eps;
            row.mlmc_cost = report.total_cost;
            row.mlmc_estimate = report.estimate;
            row.bias_converged = report.bias_converged;

            // Weak error model bias(h) ~ c h, calibrated on the deepest correction.
            const auto& deepest = report.per_level.back();
            const double h_deep = LevelConfig(opts.refinement_n, deepest.level, model.horizon()).h_fine();
            const double c = deepest.level == 0 ? 0.0 : report.bias_proxy / h_deep;
            const double steps = std::max(1.0, std::ceil(c * model.horizon() * std::sqrt(2.0) / delta));
            const double samples = std::max(1.0, std::ceil(2.0 * deepest.var_fine / (delta * delta)));
            row.mc_steps = static_cast<std::uint64_t>(steps);
            row.mc_samples = static_cast<std::uint64_t>(samples);
            row.mc_cost = row.mc_samples * opts.m_particles * model.d_bar() * row.mc_steps;
            rows.push_back(row);
        }
    }
    return rows;
}

std::vector<ChaosRow> chaos_study(const ModelSpec& model, const TestFunction& test_fn,
                                  std::span<const std::size_t> m_list, const ChaosOptions& options) {
    if (m_list.empty()) throw ConfigError("chaos_study: m_list must not be empty");
    if (options.replications < 2) throw ConfigError("chaos_study: replications must be >= 2");
    const std::size_t largest = *std::max_element(m_list.begin(), m_list.end());
    if (options.reference_m <= largest) throw ConfigError("chaos_study: reference_m must exceed every entry of m_list");
    if (std::find(m_list.begin(), m_list.end(), std::size_t{0}) != m_list.end()) {
        throw ConfigError("chaos_study: particle counts must be >= 1");
    }
    const SimulationGrid grid(model.horizon(), options.steps);
    const std::size_t db = model.d_bar();
    const double sqrt_h = std::sqrt(grid.h());

    auto terminal_mean = [&](std::size_t m, const GaussianStream& noise) {
        ParticleCloud cloud = model.initial_cloud(m, options.seed);
        std::vector<double> xi(m * db);
        EulerWorkspace ws;
        for (std::size_t n = 0; n < grid.steps(); ++n) {
            draw_normals(noise, n, m, db, xi);
            euler_update(model, cloud, grid.h(), sqrt_h, xi, n, ws);
        }
        return mean_psi(test_fn, cloud);
    };

    std::vector<std::vector<double>> samples(m_list.size(), std::vector<double>(options.replications));
    if (!options.pathwise) {
        parallel_for(options.replications, [&](std::size_t r) {
            const double ref =
                terminal_mean(options.reference_m, GaussianStream(options.seed, stream_id({streams::kChaosReference, r})));
            for (std::size_t j = 0; j < m_list.size(); ++j) {
                const double avg =
                    terminal_mean(m_list[j], GaussianStream(options.seed, stream_id({streams::kChaos, m_list[j], r})));
                samples[j][r] = (avg - ref) * (avg - ref);
            }
        });
    } else {
        const std::size_t d = model.d();
        parallel_for(options.replications, [&](std::size_t r) {
            const GaussianStream noise(options.seed, stream_id({streams::kChaosPathwise, r}));
            ParticleCloud ref = model.initial_cloud(options.reference_m, options.seed);
            std::vector<ParticleCloud> small;
            for (auto m : m_list) small.push_back(model.initial_cloud(m, options.seed));
            std::vector<std::vector<double>> sup(m_list.size());
            for (std::size_t j = 0; j < m_list.size(); ++j) sup[j].assign(m_list[j], 0.0);
            std::vector<double> xi(options.reference_m * db);
            EulerWorkspace ws;
            for (std::size_t n = 0; n < grid.steps(); ++n) {
                draw_normals(noise, n, options.reference_m, db, xi);
                euler_update(model, ref, grid.h(), sqrt_h, xi, n, ws);
                for (std::size_t j = 0; j < m_list.size(); ++j) {
                    const std::size_t m = m_list[j];
                    euler_update(model, small[j], grid.h(), sqrt_h, std::span<const double>(xi).first(m * db), n, ws);
                    for (std::size_t i = 0; i < m; ++i) {
                        double dist = 0.0;
                        for (std::size_t k = 0; k < d; ++k) {
                            const double diff = small[j].particle(i)[k] - ref.particle(i)[k];
                            dist += diff * diff;
                        }
                        sup[j][i] = std::max(sup[j][i], dist);
                    }
                }
            }
            for (std::size_t j = 0; j < m_list.size(); ++j) {
                double acc = 0.0;
                for (double s : sup[j]) acc += s;
                samples[j][r] = acc / static_cast<double>(m_list[j]);
            }
        });
    }

    std::vector<ChaosRow> rows;
    for (std::size_t j = 0; j < m_list.size(); ++j) {
        const auto moments = moments_of(samples[j]);
        const auto [lo, hi] = normal_ci(moments);
        rows.push_back({m_list[j], moments.mean(), lo, hi, options.replications});
    }
    return rows;
}

}  // namespace mvsde
