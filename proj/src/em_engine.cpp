#include "mvsde/em_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mvsde/errors.hpp"
#include "mvsde/parallel.hpp"
#include "mvsde/stats.hpp"
#include "streams.hpp"

namespace mvsde {

namespace {

constexpr double kDivergenceBound = 1e12;

void require_cloud_shape(const ModelSpec& model, const ParticleCloud& cloud, const char* op) {
    if (cloud.dim() != model.d()) {
        throw ShapeError(std::string(op) + ": cloud dimension " + std::to_string(cloud.dim()) + " but model d = " +
                         std::to_string(model.d()));
    }
}

}  // namespace

SimulationGrid::SimulationGrid(double horizon, std::size_t steps)
    : horizon_(horizon), steps_(steps), h_(horizon / static_cast<double>(steps)) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("grid: horizon must be positive");
    if (steps == 0) throw ConfigError("grid: steps must be >= 1");
}

SimulationGrid SimulationGrid::from_step(double horizon, double h) {
    if (!(h > 0.0)) throw ConfigError("grid: step size must be positive");
    const double ratio = horizon / h;
    const double steps = std::round(ratio);
    if (steps < 1.0 || std::abs(steps * h - horizon) > 1e-12 * horizon) {
        throw ConfigError("grid: step " + std::to_string(h) + " does not divide horizon " + std::to_string(horizon));
    }
    return SimulationGrid(horizon, static_cast<std::size_t>(steps));
}

void euler_update(const ModelSpec& model, ParticleCloud& cloud, double h, double noise_scale,
                  std::span<const double> increments, std::size_t step, EulerWorkspace& ws) {
    const std::size_t d = model.d();
    const std::size_t db = model.d_bar();
    const std::size_t m = cloud.size();
    if (increments.size() != m * db) {
        throw ShapeError("euler_update: expected " + std::to_string(m * db) + " increments, got " +
                         std::to_string(increments.size()));
    }
    // Freeze the empirical measure before any particle moves.
    model.measure_features(cloud, ws.features);
    ws.drift.resize(d);
    ws.diffusion.resize(d * db);
    const double amplitude = model.epsilon() * noise_scale;

    for (std::size_t i = 0; i < m; ++i) {
        auto x = cloud.particle(i);
        model.drift(x, ws.features, ws.drift);
        model.diffusion(x, ws.features, ws.diffusion);
        const double* xi = increments.data() + i * db;
        for (std::size_t k = 0; k < d; ++k) {
            double noise = 0.0;
            for (std::size_t j = 0; j < db; ++j) noise += ws.diffusion[k * db + j] * xi[j];
            const double next = x[k] + ws.drift[k] * h + amplitude * noise;
            if (!std::isfinite(next) || std::abs(next) > kDivergenceBound) {
                throw DivergenceError("particle " + std::to_string(i) + " component " + std::to_string(k) +
                                          " diverged in model '" + model.name() + "'",
                                      step);
            }
            x[k] = next;
        }
    }
}

ParticleCloud em_step(const ModelSpec& model, const ParticleCloud& cloud, double h,
                      std::span<const double> gaussians, std::size_t step) {
    require_cloud_shape(model, cloud, "em_step");
    if (gaussians.size() != cloud.size() * model.d_bar()) {
        throw ShapeError("em_step: gaussians must be M x d_bar = " + std::to_string(cloud.size() * model.d_bar()));
    }
    ParticleCloud next = cloud;
    EulerWorkspace ws;
    euler_update(model, next, h, std::sqrt(h), gaussians, step, ws);
    return next;
}

void draw_normals(const GaussianStream& noise, std::uint64_t step, std::size_t m, std::size_t d_bar,
                  std::span<double> out) {
    for (std::size_t i = 0; i < m; ++i) noise.fill(step, i, out.data() + i * d_bar, d_bar);
}

PathRecord simulate_path(const ModelSpec& model, const SimulationGrid& grid, std::size_t m_particles,
                         std::uint64_t seed, const PathOptions& options) {
    if (m_particles == 0) throw ConfigError("simulate_path: m_particles must be >= 1");
    const GaussianStream noise(seed, stream_id({streams::kPath, options.stream}));
    const std::size_t db = model.d_bar();

    PathRecord record;
    ParticleCloud cloud = model.initial_cloud(m_particles, seed);
    record.times.push_back(0.0);
    record.clouds.push_back(cloud);

    std::vector<double> xi(m_particles * db);
    EulerWorkspace ws;
    const double sqrt_h = std::sqrt(grid.h());
    for (std::size_t n = 0; n < grid.steps(); ++n) {
        draw_normals(noise, n, m_particles, db, xi);
        euler_update(model, cloud, grid.h(), sqrt_h, xi, n, ws);
        record.rng_draws += m_particles * db;
        const bool last = n + 1 == grid.steps();
        if (last || (options.record_every > 0 && (n + 1) % options.record_every == 0)) {
            record.times.push_back(last ? grid.horizon() : grid.time(n + 1));
            record.clouds.push_back(cloud);
        }
    }
    return record;
}

std::vector<std::vector<double>> ode_limit(const ModelSpec& model, const SimulationGrid& grid) {
    std::vector<std::vector<double>> path;
    path.reserve(grid.steps() + 1);
    ParticleCloud z = ParticleCloud::filled(1, model.x0());
    path.emplace_back(z.positions().begin(), z.positions().end());
    EulerWorkspace ws;
    ws.drift.resize(model.d());
    for (std::size_t n = 0; n < grid.steps(); ++n) {
        model.measure_features(z, ws.features);
        auto x = z.particle(0);
        model.drift(x, ws.features, ws.drift);
        for (std::size_t k = 0; k < model.d(); ++k) {
            const double next = x[k] + ws.drift[k] * grid.h();
            if (!std::isfinite(next) || std::abs(next) > kDivergenceBound) {
                throw DivergenceError("ode_limit diverged in model '" + model.name() + "'", n);
            }
            x[k] = next;
        }
        path.emplace_back(z.positions().begin(), z.positions().end());
    }
    return path;
}

std::vector<std::size_t> nested_step_counts(double horizon, std::span<const double> h_list, std::size_t ref_factor) {
    if (h_list.empty()) throw ConfigError("h_list must not be empty");
    if (ref_factor == 0) throw ConfigError("ref_factor must be >= 1");
    std::vector<std::size_t> steps;
    for (double h : h_list) steps.push_back(SimulationGrid::from_step(horizon, h).steps());
    const std::size_t finest = *std::max_element(steps.begin(), steps.end());
    const std::size_t ref_steps = finest * ref_factor;
    for (std::size_t j = 0; j < steps.size(); ++j) {
        if (ref_steps % steps[j] != 0) {
            throw ConfigError("h_list: h = " + std::to_string(h_list[j]) + " is not nested with h_ref = " +
                              std::to_string(horizon / static_cast<double>(ref_steps)));
        }
    }
    for (std::size_t j = 0; j + 1 < steps.size(); ++j) {
        const auto lo = std::min(steps[j], steps[j + 1]);
        const auto hi = std::max(steps[j], steps[j + 1]);
        if (hi % lo != 0) {
            throw ConfigError("h_list: pair (" + std::to_string(h_list[j]) + ", " + std::to_string(h_list[j + 1]) +
                              ") is not nested");
        }
    }
    return steps;
}

std::vector<StrongErrorPoint> strong_error_curve(const ModelSpec& model, std::span<const double> h_list,
                                                 std::size_t m_particles, std::size_t replications,
                                                 std::uint64_t seed, const TestFunction& test_fn,
                                                 std::size_t ref_factor) {
    if (replications < 2) throw ConfigError("strong_error_curve: replications must be >= 2");
    if (m_particles == 0) throw ConfigError("strong_error_curve: m_particles must be >= 1");
    const auto steps = nested_step_counts(model.horizon(), h_list, ref_factor);
    const std::size_t ref_steps = *std::max_element(steps.begin(), steps.end()) * ref_factor;
    const double h_ref = model.horizon() / static_cast<double>(ref_steps);
    const std::size_t db = model.d_bar();
    const std::size_t nh = steps.size();

    // samples[j][r]: particle-averaged squared error at h_j in replication r.
    std::vector<std::vector<double>> samples(nh, std::vector<double>(replications));
    parallel_for(replications, [&](std::size_t r) {
        const GaussianStream noise(seed, stream_id({streams::kStrongError, r}));
        ParticleCloud reference = model.initial_cloud(m_particles, seed);
        std::vector<ParticleCloud> coarse(nh, reference);
        std::vector<std::vector<double>> accum(nh, std::vector<double>(m_particles * db, 0.0));
        std::vector<double> xi(m_particles * db);
        EulerWorkspace ws;
        const double sqrt_ref = std::sqrt(h_ref);

        for (std::size_t k = 0; k < ref_steps; ++k) {
            draw_normals(noise, k, m_particles, db, xi);
            euler_update(model, reference, h_ref, sqrt_ref, xi, k, ws);
            for (std::size_t j = 0; j < nh; ++j) {
                const std::size_t ratio = ref_steps / steps[j];
                auto& acc = accum[j];
                for (std::size_t q = 0; q < acc.size(); ++q) acc[q] += xi[q];
                if ((k + 1) % ratio == 0) {
                    const double h = model.horizon() / static_cast<double>(steps[j]);
                    euler_update(model, coarse[j], h, sqrt_ref, acc, (k + 1) / ratio - 1, ws);
                    std::fill(acc.begin(), acc.end(), 0.0);
                }
            }
        }
        for (std::size_t j = 0; j < nh; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m_particles; ++i) {
                const double diff = test_fn.psi(coarse[j].particle(i)) - test_fn.psi(reference.particle(i));
                acc += diff * diff;
            }
            samples[j][r] = acc / static_cast<double>(m_particles);
        }
    });

    std::vector<StrongErrorPoint> out;
    for (std::size_t j = 0; j < nh; ++j) {
        const auto moments = moments_of(samples[j]);
        const auto [lo, hi] = normal_ci(moments);
        out.push_back({model.horizon() / static_cast<double>(steps[j]), steps[j], moments.mean(), lo, hi,
                       replications});
    }
    return out;
}

std::vector<DeviationPoint> small_noise_deviation(const ModelSpec& model, const SimulationGrid& grid,
                                                  std::span<const double> epsilons, std::size_t m_particles,
                                                  std::size_t replications, std::uint64_t seed) {
    if (replications < 2) throw ConfigError("small_noise_deviation: replications must be >= 2");
    if (epsilons.empty()) throw ConfigError("small_noise_deviation: epsilon list must not be empty");
    const auto z = ode_limit(model, grid);
    const std::size_t db = model.d_bar();
    const std::size_t d = model.d();

    std::vector<ModelSpec> variants;
    for (double e : epsilons) variants.push_back(model.with_epsilon(e));

    std::vector<std::vector<double>> samples(epsilons.size(), std::vector<double>(replications));
    parallel_for(replications, [&](std::size_t r) {
        const GaussianStream noise(seed, stream_id({streams::kDeviation, r}));
        std::vector<double> xi(m_particles * db);
        std::vector<double> sup(m_particles);
        EulerWorkspace ws;
        auto track = [&](const ParticleCloud& cloud, std::size_t n) {
            for (std::size_t i = 0; i < m_particles; ++i) {
                double dist = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    const double diff = cloud.particle(i)[k] - z[n][k];
                    dist += diff * diff;
                }
                sup[i] = std::max(sup[i], dist);
            }
        };
        for (std::size_t e = 0; e < variants.size(); ++e) {
            ParticleCloud cloud = variants[e].initial_cloud(m_particles, seed);
            std::fill(sup.begin(), sup.end(), 0.0);
            track(cloud, 0);
            for (std::size_t n = 0; n < grid.steps(); ++n) {
                draw_normals(noise, n, m_particles, db, xi);
                euler_update(variants[e], cloud, grid.h(), std::sqrt(grid.h()), xi, n, ws);
                track(cloud, n + 1);
            }
            double acc = 0.0;
            for (double s : sup) acc += s;
            samples[e][r] = acc / static_cast<double>(m_particles);
        }
    });

    std::vector<DeviationPoint> out;
    for (std::size_t e = 0; e < epsilons.size(); ++e) {
        const auto moments = moments_of(samples[e]);
        const auto [lo, hi] = normal_ci(moments);
        out.push_back({epsilons[e], moments.mean(), lo, hi, replications});
    }
    return out;
}

std::vector<GapPoint> one_step_gap(const ModelSpec& model, std::span<const double> h_list, std::size_t m_particles,
                                   std::size_t replications, std::uint64_t seed) {
    if (replications < 1) throw ConfigError("one_step_gap: replications must be >= 1");
    const std::size_t d = model.d();
    const std::size_t db = model.d_bar();
    std::vector<GapPoint> out;
    for (std::size_t j = 0; j < h_list.size(); ++j) {
        const auto grid = SimulationGrid::from_step(model.horizon(), h_list[j]);
        const double half = 0.5 * grid.h();
        const double sqrt_half = std::sqrt(half);
        std::vector<double> per_rep(replications);
        parallel_for(replications, [&](std::size_t r) {
            const GaussianStream noise(seed, stream_id({streams::kGap, j, r}));
            ParticleCloud cloud = model.initial_cloud(m_particles, seed);
            std::vector<double> first(m_particles * db), second(m_particles * db), sum(m_particles * db);
            EulerWorkspace ws;
            std::vector<double> f(d), g(d * db);
            double acc = 0.0;
            for (std::size_t n = 0; n < grid.steps(); ++n) {
                draw_normals(noise, 2 * n, m_particles, db, first);
                draw_normals(noise, 2 * n + 1, m_particles, db, second);
                model.measure_features(cloud, ws.features);
                for (std::size_t i = 0; i < m_particles; ++i) {
                    const auto x = cloud.particle(i);
                    model.drift(x, ws.features, f);
                    model.diffusion(x, ws.features, g);
                    for (std::size_t k = 0; k < d; ++k) {
                        double noise_term = 0.0;
                        for (std::size_t q = 0; q < db; ++q) noise_term += g[k * db + q] * first[i * db + q];
                        const double gap = f[k] * half + model.epsilon() * sqrt_half * noise_term;
                        acc += gap * gap;
                    }
                }
                for (std::size_t q = 0; q < sum.size(); ++q) sum[q] = first[q] + second[q];
                euler_update(model, cloud, grid.h(), sqrt_half, sum, n, ws);
            }
            per_rep[r] = acc / static_cast<double>(m_particles * grid.steps());
        });
        out.push_back({grid.h(), moments_of(per_rep).mean(), replications});
    }
    return out;
}

}  // namespace mvsde
