#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvsde/measure.hpp"

namespace mvsde {

using StateView = std::span<const double>;

// Summary statistics of an empirical measure that the coefficients read (e.g. the
// mean). Computed once per cloud and time step, then shared by every particle.
using FeatureMap = std::function<void(const ParticleCloud& mu, std::vector<double>& features)>;
// Writes f(x, mu) (length d) or g(x, mu) (d x d_bar, row-major) given the features of mu.
using CoefficientMap = std::function<void(StateView x, std::span<const double> features, std::span<double> out)>;
// Deterministic initial state for particle `index`; replaces the shared x0 when set.
using InitialSampler = std::function<void(std::size_t index, std::uint64_t seed, std::span<double> out)>;

// McKean-Vlasov SDE  dX = f(X, law(X)) dt + eps g(X, law(X)) dW  with X(0) = x0.
// Immutable after construction; the coefficient maps must be pure.
class ModelSpec {
public:
    struct Params {
        std::string name = "custom";
        std::size_t d = 1;
        std::size_t d_bar = 1;
        std::vector<double> x0;
        double horizon = 1.0;
        double epsilon = 1.0;
        double lipschitz_K = 0.0;
        double growth_beta = 0.0;
        // Empty: the coefficients receive the raw particle positions as features.
        FeatureMap features;
        CoefficientMap drift;
        CoefficientMap diffusion;
        InitialSampler initial_sampler;
        // Closed-form E[X_1(t)] when known.
        std::function<double(double)> mean_oracle;
        std::string description;
    };

    explicit ModelSpec(Params params);

    [[nodiscard]] const std::string& name() const noexcept { return p_.name; }
    [[nodiscard]] std::size_t d() const noexcept { return p_.d; }
    [[nodiscard]] std::size_t d_bar() const noexcept { return p_.d_bar; }
    [[nodiscard]] std::span<const double> x0() const noexcept { return p_.x0; }
    [[nodiscard]] double horizon() const noexcept { return p_.horizon; }
    [[nodiscard]] double epsilon() const noexcept { return p_.epsilon; }
    [[nodiscard]] double lipschitz_K() const noexcept { return p_.lipschitz_K; }
    [[nodiscard]] double growth_beta() const noexcept { return p_.growth_beta; }
    [[nodiscard]] const std::string& description() const noexcept { return p_.description; }
    [[nodiscard]] bool has_mean_oracle() const noexcept { return static_cast<bool>(p_.mean_oracle); }
    [[nodiscard]] double mean_oracle(double t) const;
    [[nodiscard]] bool has_initial_sampler() const noexcept { return static_cast<bool>(p_.initial_sampler); }

    // Copies with one field replaced; the result is revalidated.
    [[nodiscard]] ModelSpec with_epsilon(double epsilon) const;
    [[nodiscard]] ModelSpec with_horizon(double horizon) const;
    [[nodiscard]] ModelSpec with_initial_sampler(InitialSampler sampler) const;

    // Low-level hooks used by the steppers. No shape or finiteness checks.
    void measure_features(const ParticleCloud& mu, std::vector<double>& out) const;
    void drift(StateView x, std::span<const double> features, std::span<double> out) const {
        p_.drift(x, features, out);
    }
    void diffusion(StateView x, std::span<const double> features, std::span<double> out) const {
        p_.diffusion(x, features, out);
    }

    // The all-x0 cloud, or the sampled one when an initial sampler is installed.
    [[nodiscard]] ParticleCloud initial_cloud(std::size_t m, std::uint64_t seed = 0) const;

private:
    Params p_;
};

// f(x, mu) with full shape and finiteness checks.
[[nodiscard]] std::vector<double> drift_eval(const ModelSpec& model, StateView x, const ParticleCloud& mu);
// g(x, mu) as a row-major d x d_bar matrix. The eps factor is NOT applied here.
[[nodiscard]] std::vector<double> diffusion_eval(const ModelSpec& model, StateView x, const ParticleCloud& mu);

using ParameterMap = std::map<std::string, double>;

// Built-in models:
//   zero              f = 0, g = 0                                   keys x0 T epsilon
//   constant_drift    f = c, g = sigma (default 1)                   keys c x0 T epsilon [sigma]
//   meanfield_ou      f = -a x + b (mean(mu) - x), g = sigma x        keys a b sigma x0 T epsilon [additive dim]
//                     (additive = 1 switches to g = sigma)
//   kuramoto          f = c mean_j sin(x_j - x), g = sigma           keys c sigma x0 T epsilon
//   measure_diffusion f = -a x, g = sigma (1 + mean(mu))             keys a sigma x0 T epsilon
[[nodiscard]] ModelSpec builtin_model(const std::string& name, const ParameterMap& params);
[[nodiscard]] const std::vector<std::string>& builtin_model_names();

// Psi: R^d -> R together with a bound on its partial derivatives.
struct TestFunction {
    std::string name;
    std::function<double(StateView)> psi;
    double grad_bound = 0.0;
};

// "identity" (x_1), "sin" (sin x_1), "cos" (cos x_1).
[[nodiscard]] TestFunction builtin_test_function(const std::string& name);

struct SpotCheckOptions {
    std::size_t samples = 1000;
    double radius = 10.0;
    std::size_t max_particles = 64;
    double slack = 1.01;
    std::uint64_t seed = 20240601;
};

struct SpotCheckReport {
    std::size_t samples = 0;
    // max over samples of lhs / rhs; <= slack means the declared constant holds.
    double worst_lipschitz_ratio = 0.0;
    double worst_growth_ratio = 0.0;
    bool lipschitz_ok = false;
    bool growth_ok = false;
};

// Samples (x, mu), (y, nu) with |x| <= radius and checks
//   |f(x,mu)-f(y,nu)|^2 v |g(x,mu)-g(y,nu)|^2 <= K (|x-y|^2 + W2^2(mu,nu))
//   |f(x,mu)|^2 v |g(x,mu)|^2 <= beta (1 + |x|^2 + W2^2(mu)).
[[nodiscard]] SpotCheckReport spot_check_assumptions(const ModelSpec& model, const SpotCheckOptions& options = {});

// Largest central finite-difference partial derivative of psi over random points,
// divided by grad_bound.
[[nodiscard]] double gradient_bound_ratio(const TestFunction& fn, std::size_t d, std::size_t samples = 1000,
                                          double radius = 10.0, std::uint64_t seed = 7);

}  // namespace mvsde
