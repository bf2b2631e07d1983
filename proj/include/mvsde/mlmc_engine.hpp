#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mvsde/em_engine.hpp"
#include "mvsde/measure.hpp"
#include "mvsde/model.hpp"
#include "mvsde/rng.hpp"
#include "mvsde/stats.hpp"

namespace mvsde {

// Level l of the hierarchy: fine step h_l = T N^-l, coarse step h_{l-1} = T N^-(l-1).
// Step sizes derive from integer step counts so that N h_l == h_{l-1} exactly.
class LevelConfig {
public:
    LevelConfig(unsigned refinement_n, unsigned level, double horizon);

    [[nodiscard]] unsigned refinement_n() const noexcept { return n_; }
    [[nodiscard]] unsigned level() const noexcept { return level_; }
    [[nodiscard]] double horizon() const noexcept { return horizon_; }
    // N^l
    [[nodiscard]] std::uint64_t fine_steps() const noexcept { return fine_steps_; }
    // N^(l-1); 0 at level 0, which has no coarse path.
    [[nodiscard]] std::uint64_t coarse_steps() const noexcept { return level_ == 0 ? 0 : fine_steps_ / n_; }
    [[nodiscard]] double h_fine() const noexcept { return horizon_ / static_cast<double>(fine_steps_); }
    [[nodiscard]] double h_coarse() const noexcept;

private:
    unsigned n_;
    unsigned level_;
    double horizon_;
    std::uint64_t fine_steps_;
};

// RNG draws of one particle system at this level: M d_bar N^l.
[[nodiscard]] std::uint64_t level_cost(const LevelConfig& cfg, std::size_t m_particles, std::size_t d_bar);

struct CoupledLevelState {
    ParticleCloud fine;
    ParticleCloud coarse;
    std::size_t coarse_time_index = 0;

    // Both clouds at the model's initial condition.
    static CoupledLevelState initial(const ModelSpec& model, std::size_t m_particles, std::uint64_t seed = 0);
};

// Advances the pair over one coarse interval [t_n, t_{n+1}]. `gaussians` holds N
// blocks of M x d_bar standard normals (block k drives fine sub-step k). The
// coarse cloud takes a single step of h_{l-1} driven by sqrt(h_l) times the sum of
// the N blocks; each cloud freezes its own empirical measure.
[[nodiscard]] CoupledLevelState coupled_coarse_interval(const ModelSpec& model, CoupledLevelState state,
                                                        const LevelConfig& cfg, std::span<const double> gaussians);

// Normal source used by the level simulators: writes `count` normals for
// (global fine step, particle).
using NoiseSource = std::function<void(std::uint64_t step, std::uint64_t particle, double* out, std::size_t count)>;

struct LevelPairSample {
    // Mean over particles of Psi(fine) - Psi(coarse); plain Psi(fine) mean at level 0.
    double diff = 0.0;
    double fine = 0.0;
    // Mean over particles of |Y_fine(T) - Y_coarse(T)|^2 (0 at level 0).
    double second_moment = 0.0;
    std::uint64_t rng_cost = 0;
};

// One independent particle system of the coupled pair (level >= 1).
[[nodiscard]] LevelPairSample simulate_level_pair(const ModelSpec& model, const LevelConfig& cfg,
                                                  std::size_t m_particles, const TestFunction& test_fn,
                                                  const NoiseSource& noise);
// Draws from the stream of (seed, level, sample_index).
[[nodiscard]] LevelPairSample simulate_level_pair(const ModelSpec& model, const LevelConfig& cfg,
                                                  std::size_t m_particles, const TestFunction& test_fn,
                                                  std::uint64_t seed, std::uint64_t sample_index = 0);

struct Level0Sample {
    double sample = 0.0;
    std::uint64_t rng_cost = 0;
};

// One Euler step of size T; requires cfg.level() == 0.
[[nodiscard]] Level0Sample level0_sample(const ModelSpec& model, const LevelConfig& cfg, std::size_t m_particles,
                                         const TestFunction& test_fn, std::uint64_t seed,
                                         std::uint64_t sample_index = 0);

// Dispatches to level0_sample or simulate_level_pair.
[[nodiscard]] LevelPairSample level_sample(const ModelSpec& model, const LevelConfig& cfg, std::size_t m_particles,
                                           const TestFunction& test_fn, std::uint64_t seed,
                                           std::uint64_t sample_index);

struct LevelStatistics {
    unsigned level = 0;
    std::uint64_t samples = 0;
    double mean_diff = 0.0;
    double var_diff = 0.0;
    // Moments of the fine-level functional alone.
    double mean_fine = 0.0;
    double var_fine = 0.0;
    std::uint64_t rng_cost = 0;
};

struct CoupledVarianceRow {
    unsigned level = 0;
    double h_fine = 0.0;
    double h_coarse = 0.0;
    double epsilon = 0.0;
    double mean_diff = 0.0;
    double var_diff = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double ci_halfwidth = 0.0;
    // E|Y_fine(T) - Y_coarse(T)|^2 over particles and systems, with its normal CI.
    double second_moment = 0.0;
    double second_moment_lo = 0.0;
    double second_moment_hi = 0.0;
    std::uint64_t rng_cost = 0;
    std::uint64_t samples = 0;
};

// Var(Psi(Y_{h_l}) - Psi(Y_{h_{l-1}})) across `replications` independent systems at
// each level in [level_lo, level_hi].
[[nodiscard]] std::vector<CoupledVarianceRow> coupled_variance_study(const ModelSpec& model, unsigned level_lo,
                                                                     unsigned level_hi, unsigned refinement_n,
                                                                     std::size_t m_particles, std::size_t replications,
                                                                     const TestFunction& test_fn, std::uint64_t seed);

struct MlmcOptions {
    double target_delta = 1e-2;
    unsigned refinement_n = 2;
    std::size_t m_particles = 64;
    std::size_t pilot_samples = 32;
    unsigned max_level = 8;
    std::uint64_t seed = 0;
};

struct MlmcReport {
    double estimate = 0.0;
    std::vector<LevelStatistics> per_level;
    std::uint64_t total_cost = 0;
    double target_delta = 0.0;
    std::vector<std::uint64_t> allocation;
    // |mean_diff_L| / (N - 1) at the final level L (0 when L = 0).
    double bias_proxy = 0.0;
    bool bias_converged = false;
    bool degenerate_allocation = false;
    std::vector<std::string> flags;
};

// Adaptive MLMC: pilot samples per level, variance-optimal allocation with a
// delta^2/2 variance budget, and level deepening until the bias proxy is at most
// delta / sqrt(2) or max_level is reached.
[[nodiscard]] MlmcReport mlmc_estimate(const ModelSpec& model, const TestFunction& test_fn, const MlmcOptions& options);

// K_l = ceil(2 delta^-2 sqrt(V_l / C_l) sum_m sqrt(V_m C_m)). All-zero variances yield zeros.
[[nodiscard]] std::vector<std::uint64_t> optimal_allocation(std::span<const double> variances,
                                                            std::span<const double> costs, double delta);

struct CostCompareRow {
    double delta = 0.0;
    double epsilon = 0.0;
    std::uint64_t mc_cost = 0;
    std::uint64_t mlmc_cost = 0;
    std::uint64_t mc_steps = 0;
    std::uint64_t mc_samples = 0;
    double mlmc_estimate = 0.0;
    bool bias_converged = false;
};

// Single-level MC cost (step chosen from a first-order bias model fitted to the MLMC
// level corrections, sample count 2 delta^-2 Var(Psi)) against the measured MLMC cost,
// both counted in scalar normal draws.
[[nodiscard]] std::vector<CostCompareRow> cost_compare(const ModelSpec& model, const TestFunction& test_fn,
                                                       std::span<const double> deltas,
                                                       std::span<const double> epsilons, const MlmcOptions& base);

struct ChaosRow {
    std::size_t m_particles = 0;
    double mse = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::size_t samples = 0;
};

struct ChaosOptions {
    std::size_t reference_m = 4096;
    std::size_t replications = 100;
    std::size_t steps = 64;
    std::uint64_t seed = 0;
    // false: E|mean_M Psi - mean_ref Psi|^2 with independent systems.
    // true: E[max_n |Y_i^M - Y_i^ref|^2] with particle i driven by the same Brownian path in both.
    bool pathwise = false;
};

[[nodiscard]] std::vector<ChaosRow> chaos_study(const ModelSpec& model, const TestFunction& test_fn,
                                                std::span<const std::size_t> m_list, const ChaosOptions& options);

}  // namespace mvsde
