#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mvsde/measure.hpp"
#include "mvsde/model.hpp"
#include "mvsde/rng.hpp"

namespace mvsde {

// Uniform grid t_n = n h on [0, T] with h = T / steps.
class SimulationGrid {
public:
    SimulationGrid(double horizon, std::size_t steps);

    // Throws ConfigError unless T / h is an integer (to 1e-12 relative).
    static SimulationGrid from_step(double horizon, double h);

    [[nodiscard]] double h() const noexcept { return h_; }
    [[nodiscard]] std::size_t steps() const noexcept { return steps_; }
    [[nodiscard]] double horizon() const noexcept { return horizon_; }
    [[nodiscard]] double time(std::size_t n) const noexcept { return static_cast<double>(n) * h_; }

private:
    double horizon_;
    std::size_t steps_;
    double h_;
};

struct PathRecord {
    std::vector<double> times;
    std::vector<ParticleCloud> clouds;
    std::uint64_t rng_draws = 0;
};

// Scratch buffers reused across steps.
struct EulerWorkspace {
    std::vector<double> features;
    std::vector<double> drift;
    std::vector<double> diffusion;
};

// In-place synchronous Euler update of every particle:
//   x_i <- x_i + f(x_i, mu) h + eps * noise_scale * g(x_i, mu) increments_i
// where mu is the empirical measure of the cloud BEFORE the update and
// `increments` is M x d_bar row-major. Throws DivergenceError carrying `step`
// when a component becomes non-finite or exceeds 1e12 in magnitude.
void euler_update(const ModelSpec& model, ParticleCloud& cloud, double h, double noise_scale,
                  std::span<const double> increments, std::size_t step, EulerWorkspace& ws);

// One Euler-Maruyama step with standard normal draws `gaussians` (M x d_bar).
[[nodiscard]] ParticleCloud em_step(const ModelSpec& model, const ParticleCloud& cloud, double h,
                                    std::span<const double> gaussians, std::size_t step = 0);

// Fills out (M x d_bar) with the normals of grid step `step`.
void draw_normals(const GaussianStream& noise, std::uint64_t step, std::size_t m, std::size_t d_bar,
                  std::span<double> out);

struct PathOptions {
    std::uint64_t stream = 0;
    // Keep every k-th cloud (the terminal cloud is always kept). 0 keeps only t = 0 and T.
    std::size_t record_every = 1;
};

[[nodiscard]] PathRecord simulate_path(const ModelSpec& model, const SimulationGrid& grid, std::size_t m_particles,
                                       std::uint64_t seed, const PathOptions& options = {});

// Deterministic Euler iterates z_{n+1} = z_n + h f(z_n, delta_{z_n}), z_0 = x0.
[[nodiscard]] std::vector<std::vector<double>> ode_limit(const ModelSpec& model, const SimulationGrid& grid);

struct StrongErrorPoint {
    double h = 0.0;
    std::size_t steps = 0;
    double mse = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::size_t samples = 0;
};

// E|Psi(Y_h(T)) - Psi(Y_ref(T))|^2 per particle, with h_ref = min(h_list) / ref_factor and
// every coarse increment equal to the sum of the reference increments it spans.
[[nodiscard]] std::vector<StrongErrorPoint> strong_error_curve(const ModelSpec& model, std::span<const double> h_list,
                                                               std::size_t m_particles, std::size_t replications,
                                                               std::uint64_t seed, const TestFunction& test_fn,
                                                               std::size_t ref_factor = 8);

// Step counts T / h for a nested family; throws ConfigError naming the first
// offending pair otherwise.
[[nodiscard]] std::vector<std::size_t> nested_step_counts(double horizon, std::span<const double> h_list,
                                                          std::size_t ref_factor);

struct DeviationPoint {
    double epsilon = 0.0;
    double mean_sup_sq = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::size_t samples = 0;
};

// E[max_n |Y_i(t_n) - z_h(t_n)|^2] for each noise level, with the same Brownian
// increments reused across the epsilon sweep.
[[nodiscard]] std::vector<DeviationPoint> small_noise_deviation(const ModelSpec& model, const SimulationGrid& grid,
                                                                std::span<const double> epsilons,
                                                                std::size_t m_particles, std::size_t replications,
                                                                std::uint64_t seed);

struct GapPoint {
    double h = 0.0;
    double mean_gap_sq = 0.0;
    std::size_t samples = 0;
};

// Mean of |Ybar(t_n + h/2) - Y(t_n)|^2 over steps, particles and replications, where
// Ybar is the continuous Euler interpolation and each step's increment is split into
// two half-step draws.
[[nodiscard]] std::vector<GapPoint> one_step_gap(const ModelSpec& model, std::span<const double> h_list,
                                                 std::size_t m_particles, std::size_t replications,
                                                 std::uint64_t seed);

}  // namespace mvsde
