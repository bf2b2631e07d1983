#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mvsde/em_engine.hpp"
#include "mvsde/errors.hpp"
#include "mvsde/mlmc_engine.hpp"
#include "mvsde/rng.hpp"
#include "mvsde/stats.hpp"
#include "oracles.hpp"

using namespace mvsde;

namespace {

ModelSpec ou(double eps) {
    return builtin_model("meanfield_ou", {{"a", 1}, {"b", 0.5}, {"sigma", 1}, {"x0", 1}, {"T", 1}, {"epsilon", eps}});
}

ModelSpec constant(double c, double eps, double sigma = 1.0, double x0 = 0.0) {
    return builtin_model("constant_drift", {{"c", c}, {"sigma", sigma}, {"x0", x0}, {"T", 1}, {"epsilon", eps}});
}

ModelSpec zero() { return builtin_model("zero", {{"x0", 1.25}, {"T", 1}, {"epsilon", 0.3}}); }

const TestFunction identity = builtin_test_function("identity");

}  // namespace

TEST_CASE("level configuration") {
    const LevelConfig l3(2, 3, 1.0);
    CHECK(l3.fine_steps() == 8);
    CHECK(l3.coarse_steps() == 4);
    CHECK(l3.h_fine() * 2 == l3.h_coarse());
    const LevelConfig l0(4, 0, 2.0);
    CHECK(l0.fine_steps() == 1);
    CHECK(l0.coarse_steps() == 0);
    CHECK(l0.h_fine() == 2.0);
    for (unsigned n : {2u, 3u, 4u, 7u}) {
        for (unsigned l = 1; l < 8; ++l) {
            const LevelConfig c(n, l, 1.0);
            CHECK(c.h_fine() * n == doctest::Approx(c.h_coarse()).epsilon(1e-15));
        }
    }
    CHECK_THROWS_AS(LevelConfig(1, 2, 1.0), ConfigError);
    CHECK_THROWS_AS(LevelConfig(2, 41, 1.0), CapabilityError);
    CHECK(level_cost(LevelConfig(3, 2, 1.0), 10, 2) == 10 * 2 * 9);
}

TEST_CASE("coupled interval examples") {
    const unsigned n = 2;
    const LevelConfig cfg(n, 1, 1.0);
    const std::vector<double> xi(n * 3, 0.4);

    auto cd = coupled_coarse_interval(constant(3.0, 0.0), CoupledLevelState::initial(constant(3.0, 0.0), 3), cfg, xi);
    CHECK(cd.coarse_time_index == 1);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(cd.fine.particle(i)[0] == 3.0);
        CHECK(cd.coarse.particle(i)[0] == 3.0);
    }

    const auto o = coupled_coarse_interval(ou(0.0), CoupledLevelState::initial(ou(0.0), 3), cfg, xi);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(o.fine.particle(i)[0] == doctest::Approx(oracle::euler_decay_closed(1.0, 1.0, 0.5, 2)));
        CHECK(o.coarse.particle(i)[0] == 0.0);
    }
}

TEST_CASE("coarse step consumes the summed fine increments") {
    // Zero drift and additive noise: both clouds end at sqrt(h_l) * sum of the N blocks.
    const auto m = constant(0.0, 1.0);
    const unsigned n = 4;
    const std::size_t M = 5;
    const LevelConfig cfg(n, 2, 1.0);
    const auto xi = oracle::std_normals(n * M, 11);
    const auto s = coupled_coarse_interval(m, CoupledLevelState::initial(m, M), cfg, xi);
    for (std::size_t i = 0; i < M; ++i) {
        double sum = 0.0;
        for (unsigned k = 0; k < n; ++k) sum += xi[k * M + i];
        CHECK(s.coarse.particle(i)[0] == doctest::Approx(std::sqrt(cfg.h_fine()) * sum).epsilon(1e-15));
        CHECK(s.fine.particle(i)[0] == doctest::Approx(s.coarse.particle(i)[0]).epsilon(1e-14));
    }
}

TEST_CASE("coupled interval matches independent fine and coarse recursions") {
    const double eps = 0.4;
    const unsigned n = 3;
    const std::size_t M = 6;
    const LevelConfig cfg(n, 2, 1.0);
    const auto xi = oracle::std_normals(n * M, 12);

    std::vector<double> fine(M, 1.0), coarse(M, 1.0);
    for (unsigned k = 0; k < n; ++k) {
        const std::vector<double> block(xi.begin() + k * M, xi.begin() + (k + 1) * M);
        fine = oracle::meanfield_ou_step(fine, 1.0, 0.5, 1.0, eps, cfg.h_fine(), block);
    }
    // The coarse normal is the block sum rescaled to unit variance.
    std::vector<double> coarse_xi(M, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
        for (unsigned k = 0; k < n; ++k) coarse_xi[i] += xi[k * M + i];
        coarse_xi[i] /= std::sqrt(static_cast<double>(n));
    }
    coarse = oracle::meanfield_ou_step(coarse, 1.0, 0.5, 1.0, eps, cfg.h_coarse(), coarse_xi);

    const auto s = coupled_coarse_interval(ou(eps), CoupledLevelState::initial(ou(eps), M), cfg, xi);
    for (std::size_t i = 0; i < M; ++i) {
        CHECK(s.fine.particle(i)[0] == doctest::Approx(fine[i]).epsilon(1e-13));
        CHECK(s.coarse.particle(i)[0] == doctest::Approx(coarse[i]).epsilon(1e-13));
    }
    CHECK_THROWS_AS((void)coupled_coarse_interval(ou(eps), CoupledLevelState::initial(ou(eps), M), cfg,
                                                  std::vector<double>(M)),
                    ShapeError);
}

TEST_CASE("effective coarse increment has variance h_coarse") {
    const auto m = constant(0.0, 1.0);
    const LevelConfig cfg(2, 3, 1.0);
    RunningMoments coarse_inc;
    for (std::uint64_t s = 0; s < 200; ++s) {
        const GaussianStream g(5, s);
        std::vector<double> xi(2 * 50);
        for (std::size_t k = 0; k < 2; ++k) {
            for (std::size_t i = 0; i < 50; ++i) xi[k * 50 + i] = g.normal(k, i, 0);
        }
        const auto st = coupled_coarse_interval(m, CoupledLevelState::initial(m, 50), cfg, xi);
        for (std::size_t i = 0; i < 50; ++i) coarse_inc.push(st.coarse.particle(i)[0]);
    }
    CHECK(coarse_inc.variance() == doctest::Approx(cfg.h_coarse()).epsilon(0.05));
}

TEST_CASE("level pair examples") {
    const LevelConfig cfg(2, 3, 1.0);
    const auto z = simulate_level_pair(zero(), cfg, 8, identity, 1);
    CHECK(z.diff == 0.0);
    CHECK(z.fine == 1.25);
    CHECK(z.rng_cost == 8 * 8);

    const auto d = simulate_level_pair(ou(0.0), cfg, 8, identity, 1);
    const double fine = ode_limit(ou(0.0), SimulationGrid(1.0, 8)).back()[0];
    const double coarse = ode_limit(ou(0.0), SimulationGrid(1.0, 4)).back()[0];
    CHECK(d.diff == doctest::Approx(fine - coarse).epsilon(1e-14));
    CHECK(d.second_moment == doctest::Approx((fine - coarse) * (fine - coarse)).epsilon(1e-12));

    for (double eps : {0.1, 0.5, 1.0}) {
        for (unsigned l = 1; l <= 4; ++l) {
            const auto c = simulate_level_pair(constant(2.0, eps, 0.8, 0.3), LevelConfig(2, l, 1.0), 16, identity, 3, l);
            CHECK(std::abs(c.diff) < 1e-12);
            CHECK(c.rng_cost == 16 * (1u << l));
        }
    }
}

TEST_CASE("level pair is reproducible and seeded") {
    const LevelConfig cfg(2, 4, 1.0);
    const auto a = simulate_level_pair(ou(0.3), cfg, 16, identity, 9, 4);
    const auto b = simulate_level_pair(ou(0.3), cfg, 16, identity, 9, 4);
    CHECK(a.diff == b.diff);
    CHECK(a.fine == b.fine);
    CHECK(simulate_level_pair(ou(0.3), cfg, 16, identity, 9, 5).diff != a.diff);
}

TEST_CASE("level pair is exchangeable under relabelled noise") {
    const LevelConfig cfg(2, 3, 1.0);
    const std::size_t M = 7;
    const GaussianStream g(21, 4);
    const std::vector<std::uint64_t> perm{4, 2, 6, 0, 1, 5, 3};
    auto plain = [&](std::uint64_t step, std::uint64_t p, double* out, std::size_t count) { g.fill(step, p, out, count); };
    auto relabelled = [&](std::uint64_t step, std::uint64_t p, double* out, std::size_t count) {
        g.fill(step, perm[p], out, count);
    };
    const auto a = simulate_level_pair(ou(0.5), cfg, M, identity, NoiseSource(plain));
    const auto b = simulate_level_pair(ou(0.5), cfg, M, identity, NoiseSource(relabelled));
    CHECK(b.diff == doctest::Approx(a.diff).epsilon(1e-13));
    CHECK(b.fine == doctest::Approx(a.fine).epsilon(1e-13));
}

TEST_CASE("level 0 examples") {
    const LevelConfig l0(2, 0, 1.0);
    CHECK(level0_sample(zero(), l0, 5, identity, 1).sample == 1.25);
    const auto c = level0_sample(constant(2.0, 0.0), l0, 5, identity, 1);
    CHECK(c.sample == 2.0);
    CHECK(c.rng_cost == 5);
    CHECK(level0_sample(ou(0.0), l0, 5, identity, 1).sample == 0.0);
    const auto ou2 = builtin_model("meanfield_ou",
                                   {{"a", 0.5}, {"b", 0.5}, {"sigma", 1}, {"x0", 2}, {"T", 1}, {"epsilon", 0}});
    CHECK(level0_sample(ou2, l0, 5, identity, 1).sample == 1.0);
    CHECK_THROWS_AS((void)level0_sample(zero(), LevelConfig(2, 1, 1.0), 5, identity, 1), ConfigError);
}

TEST_CASE("coupled variance study") {
    const auto rows = coupled_variance_study(ou(0.0), 1, 4, 2, 16, 10, identity, 3);
    REQUIRE(rows.size() == 4);
    for (const auto& r : rows) {
        CHECK(r.var_diff == 0.0);
        CHECK(r.h_coarse == 2 * r.h_fine);
        CHECK(r.rng_cost == r.samples * level_cost(LevelConfig(2, r.level, 1.0), 16, 1));
    }
    const auto noisy = coupled_variance_study(ou(0.2), 2, 3, 2, 16, 40, identity, 3);
    for (const auto& r : noisy) {
        CHECK(r.var_diff > 0.0);
        CHECK(r.ci_lo <= r.var_diff);
        CHECK(r.var_diff <= r.ci_hi);
        CHECK(r.ci_halfwidth == doctest::Approx(0.5 * (r.ci_hi - r.ci_lo)));
    }
    CHECK_THROWS_AS((void)coupled_variance_study(ou(0.1), 0, 2, 2, 4, 10, identity, 1), ConfigError);
    CHECK_THROWS_AS((void)coupled_variance_study(ou(0.1), 1, 2, 2, 4, 1, identity, 1), ConfigError);
}

TEST_CASE("second moment decays with level") {
    const auto rows = coupled_variance_study(ou(0.1), 3, 6, 2, 32, 20, identity, 5);
    for (std::size_t k = 1; k < rows.size(); ++k) {
        const double r = std::log2(rows[k - 1].second_moment / rows[k].second_moment);
        CHECK(r > 0.5);
        CHECK(r < 2.7);
    }
}

TEST_CASE("optimal allocation") {
    const std::vector<double> v{4e-2, 1e-3, 2e-4}, c{1, 2, 4};
    const double delta = 0.01;
    double sum = 0;
    for (std::size_t l = 0; l < 3; ++l) sum += std::sqrt(v[l] * c[l]);
    const auto k = optimal_allocation(v, c, delta);
    double var = 0;
    for (std::size_t l = 0; l < 3; ++l) {
        CHECK(k[l] == static_cast<std::uint64_t>(std::ceil(2.0 / (delta * delta) * std::sqrt(v[l] / c[l]) * sum)));
        var += v[l] / static_cast<double>(k[l]);
    }
    CHECK(var <= delta * delta / 2.0);
    const std::vector<double> none{0, 0};
    CHECK(optimal_allocation(none, std::vector<double>{1, 2}, delta) == std::vector<std::uint64_t>{0, 0});
    CHECK_THROWS_AS((void)optimal_allocation(std::vector<double>{1.0}, std::vector<double>{1.0}, 1e-6),
                    CapabilityError);
}

TEST_CASE("mlmc estimate examples") {
    MlmcOptions opt;
    opt.target_delta = 1e-2;
    opt.m_particles = 8;
    opt.pilot_samples = 4;
    const auto c = mlmc_estimate(constant(2.0, 0.5, 1.0, 0.5), identity, opt);
    // Level 0 is a single Euler step, which is exact for constant drift in mean.
    CHECK(std::abs(c.estimate - c.per_level[0].mean_diff) < 1e-12);
    CHECK(c.bias_converged);

    const auto z = mlmc_estimate(zero(), identity, opt);
    CHECK(z.estimate == 1.25);
    CHECK(z.degenerate_allocation);
    CHECK(z.per_level.size() == 2);
    CHECK(z.total_cost == opt.pilot_samples * opt.m_particles * (1 + 2));
}

TEST_CASE("report invariants") {
    MlmcOptions opt;
    opt.target_delta = 5e-3;
    opt.m_particles = 16;
    opt.pilot_samples = 8;
    opt.seed = 4;
    const auto r = mlmc_estimate(ou(0.25), identity, opt);
    double sum = 0.0;
    std::uint64_t cost = 0;
    for (const auto& lv : r.per_level) {
        sum += lv.mean_diff;
        cost += lv.rng_cost;
        CHECK(lv.rng_cost == lv.samples * level_cost(LevelConfig(2, lv.level, 1.0), 16, 1));
        CHECK(lv.var_diff >= 0.0);
    }
    CHECK(r.estimate == sum);
    CHECK(r.total_cost == cost);
    CHECK(r.allocation.size() == r.per_level.size());

    const auto again = mlmc_estimate(ou(0.25), identity, opt);
    CHECK(again.estimate == r.estimate);
    CHECK(again.total_cost == r.total_cost);
}

TEST_CASE("unconverged bias is flagged, not fatal") {
    MlmcOptions opt;
    opt.target_delta = 1e-4;
    opt.m_particles = 4;
    opt.pilot_samples = 4;
    opt.max_level = 1;
    const auto r = mlmc_estimate(ou(0.0), identity, opt);
    CHECK_FALSE(r.bias_converged);
    CHECK(std::find(r.flags.begin(), r.flags.end(), "bias_unconverged") != r.flags.end());
}

TEST_CASE("mlmc hits the closed-form mean") {
    MlmcOptions opt;
    opt.target_delta = 2e-3;
    opt.m_particles = 64;
    int hits = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        opt.seed = 1000 + s;
        const auto r = mlmc_estimate(ou(0.25), identity, opt);
        hits += std::abs(r.estimate - std::exp(-1.0)) <= 3 * opt.target_delta ? 1 : 0;
    }
    CHECK(hits >= 19);
}

TEST_CASE("telescoping sum agrees with the plain fine-level estimator") {
    const auto m = ou(0.5);
    const unsigned top = 3;
    const std::size_t samples = 400, M = 8;
    double sum = 0.0, joint_var = 0.0;
    for (unsigned l = 0; l <= top; ++l) {
        RunningMoments mom;
        for (std::size_t j = 0; j < samples; ++j) mom.push(level_sample(m, LevelConfig(2, l, 1.0), M, identity, 1, j).diff);
        sum += mom.mean();
        joint_var += mom.variance() / samples;
    }
    RunningMoments plain;
    for (std::size_t j = 0; j < samples; ++j) {
        plain.push(level_sample(m, LevelConfig(2, top, 1.0), M, identity, 2, j).fine);
    }
    joint_var += plain.variance() / samples;
    CHECK(std::abs(sum - plain.mean()) <= 3.0 * std::sqrt(joint_var));
}

TEST_CASE("cost compare") {
    MlmcOptions base;
    base.m_particles = 16;
    base.pilot_samples = 8;
    base.seed = 3;
    const std::vector<double> deltas{8e-3, 4e-3, 2e-3};
    const std::vector<double> eps{0.5, 0.2, 0.05, 0.0};
    const auto rows = cost_compare(ou(0.1), identity, deltas, eps, base);
    REQUIRE(rows.size() == deltas.size() * eps.size());
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        std::uint64_t prev = UINT64_MAX;
        for (std::size_t e = 0; e < eps.size(); ++e) {
            const auto& r = rows[e * deltas.size() + k];
            CHECK(r.delta == deltas[k]);
            CHECK(r.mlmc_cost <= prev);
            prev = r.mlmc_cost;
        }
    }
    // At eps = 0 only pilot samples are drawn.
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        const auto& r = rows[3 * deltas.size() + k];
        MlmcOptions o = base;
        o.target_delta = deltas[k];
        const auto rep = mlmc_estimate(ou(0.0), identity, o);
        std::uint64_t pilot = 0;
        for (const auto& lv : rep.per_level) {
            CHECK(lv.samples == base.pilot_samples);
            pilot += base.pilot_samples * level_cost(LevelConfig(2, lv.level, 1.0), 16, 1);
        }
        CHECK(r.mlmc_cost == pilot);
    }
    std::vector<RatePoint> pts;
    for (std::size_t k = 0; k < deltas.size(); ++k) pts.push_back({deltas[k], double(rows[k].mlmc_cost)});
    const double slope = loglog_fit(pts).slope;
    CHECK(slope <= -1.5);
    CHECK(slope >= -2.5);
}

TEST_CASE("chaos study") {
    ChaosOptions opt;
    opt.reference_m = 512;
    opt.replications = 40;
    opt.steps = 16;
    opt.seed = 2;
    const std::vector<std::size_t> ms{8, 16, 32};
    for (const auto& r : chaos_study(zero(), identity, ms, opt)) CHECK(r.mse == 0.0);
    for (const auto& r : chaos_study(constant(1.0, 0.0), identity, ms, opt)) CHECK(r.mse == 0.0);

    // Additive constant coefficients: each system mean is Gaussian with variance
    // eps^2 sigma^2 T / M, so the mse is eps^2 T (1/M + 1/M_ref).
    const auto rows = chaos_study(constant(1.0, 0.5), identity, ms, opt);
    for (const auto& r : rows) {
        const double expect = 0.25 * (1.0 / double(r.m_particles) + 1.0 / 512.0);
        CHECK(r.ci_lo <= expect * 1.05);
        CHECK(expect * 0.95 <= r.ci_hi);
    }
    std::vector<std::size_t> big{16, 32, 64, 128};
    opt.reference_m = 2048;
    opt.replications = 60;
    std::vector<RatePoint> pts;
    for (const auto& r : chaos_study(ou(0.5), identity, big, opt)) pts.push_back({double(r.m_particles), r.mse});
    const double slope = loglog_fit(pts).slope;
    CHECK(slope < -0.7);
    CHECK(slope > -1.3);

    opt.pathwise = true;
    for (const auto& r : chaos_study(ou(0.5), identity, ms, opt)) CHECK(r.mse > 0.0);
    const std::vector<std::size_t> too_big{4096};
    CHECK_THROWS_AS((void)chaos_study(ou(0.5), identity, too_big, opt), ConfigError);
}
