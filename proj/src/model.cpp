#include "mvsde/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "mvsde/errors.hpp"

namespace mvsde {

namespace {

void check_finite(std::span<const double> values, const std::string& what) {
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (!std::isfinite(values[k])) {
            throw NumericError(what + ": non-finite component " + std::to_string(k));
        }
    }
}

void check_args(const ModelSpec& model, StateView x, const ParticleCloud& mu, const char* op) {
    if (x.size() != model.d()) {
        throw ShapeError(std::string(op) + ": state has length " + std::to_string(x.size()) + ", model d = " +
                         std::to_string(model.d()));
    }
    if (mu.dim() != model.d()) {
        throw ShapeError(std::string(op) + ": measure has dimension " + std::to_string(mu.dim()) +
                         ", model d = " + std::to_string(model.d()));
    }
}

// Componentwise running mean; exact when every particle sits at the same point.
void running_mean(const ParticleCloud& mu, std::vector<double>& out) {
    const std::size_t d = mu.dim();
    out.assign(d, 0.0);
    for (std::size_t j = 0; j < mu.size(); ++j) {
        const auto x = mu.particle(j);
        const double w = 1.0 / static_cast<double>(j + 1);
        for (std::size_t k = 0; k < d; ++k) out[k] += (x[k] - out[k]) * w;
    }
}

double growth_constant(double K, double f0_sq, double g0_sq) { return 2.0 * std::max({1.0, K, f0_sq, g0_sq}); }

class ParamReader {
public:
    ParamReader(std::string model, const ParameterMap& params) : model_(std::move(model)), params_(params) {}

    double required(const std::string& key) {
        seen_.insert(key);
        const auto it = params_.find(key);
        if (it == params_.end()) missing_.push_back(key);
        return it == params_.end() ? 0.0 : it->second;
    }

    double optional(const std::string& key, double fallback) {
        seen_.insert(key);
        const auto it = params_.find(key);
        return it == params_.end() ? fallback : it->second;
    }

    // Throws listing every missing or unrecognized key.
    void finish() const {
        std::string msg;
        if (!missing_.empty()) {
            msg += "missing parameter";
            msg += missing_.size() > 1 ? "s" : "";
            for (const auto& k : missing_) msg += " '" + k + "'";
        }
        for (const auto& [k, v] : params_) {
            if (!seen_.count(k)) msg += (msg.empty() ? "" : "; ") + std::string("unknown parameter '") + k + "'";
        }
        if (!msg.empty()) throw ConfigError("model '" + model_ + "': " + msg);
    }

private:
    std::string model_;
    const ParameterMap& params_;
    std::set<std::string> seen_;
    std::vector<std::string> missing_;
};

}  // namespace

ModelSpec::ModelSpec(Params params) : p_(std::move(params)) {
    if (p_.d < 1 || p_.d_bar < 1) throw ConfigError("model '" + p_.name + "': d and d_bar must be >= 1");
    if (p_.x0.size() != p_.d) {
        throw ShapeError("model '" + p_.name + "': x0 has length " + std::to_string(p_.x0.size()) + ", d = " +
                         std::to_string(p_.d));
    }
    check_finite(p_.x0, "model '" + p_.name + "' x0");
    if (!(p_.horizon > 0.0) || !std::isfinite(p_.horizon)) {
        throw ConfigError("model '" + p_.name + "': horizon T must be positive");
    }
    // eps = 0 is admitted as the deterministic limit.
    if (!(p_.epsilon >= 0.0 && p_.epsilon <= 1.0)) {
        throw ConfigError("model '" + p_.name + "': epsilon must lie in [0, 1]");
    }
    if (!(p_.lipschitz_K >= 0.0) || !(p_.growth_beta >= 0.0)) {
        throw ConfigError("model '" + p_.name + "': lipschitz_K and growth_beta must be nonnegative");
    }
    if (!p_.drift || !p_.diffusion) throw ConfigError("model '" + p_.name + "': drift and diffusion are required");
}

double ModelSpec::mean_oracle(double t) const {
    if (!p_.mean_oracle) throw ConfigError("model '" + p_.name + "' has no closed-form mean");
    return p_.mean_oracle(t);
}

ModelSpec ModelSpec::with_epsilon(double epsilon) const {
    Params p = p_;
    p.epsilon = epsilon;
    return ModelSpec(std::move(p));
}

ModelSpec ModelSpec::with_horizon(double horizon) const {
    Params p = p_;
    p.horizon = horizon;
    return ModelSpec(std::move(p));
}

ModelSpec ModelSpec::with_initial_sampler(InitialSampler sampler) const {
    Params p = p_;
    p.initial_sampler = std::move(sampler);
    return ModelSpec(std::move(p));
}

void ModelSpec::measure_features(const ParticleCloud& mu, std::vector<double>& out) const {
    if (p_.features) {
        p_.features(mu, out);
    } else {
        out.assign(mu.positions().begin(), mu.positions().end());
    }
}

ParticleCloud ModelSpec::initial_cloud(std::size_t m, std::uint64_t seed) const {
    if (!p_.initial_sampler) return ParticleCloud::filled(m, p_.x0);
    ParticleCloud cloud(m, p_.d);
    for (std::size_t i = 0; i < m; ++i) p_.initial_sampler(i, seed, cloud.particle(i));
    if (!cloud.all_finite()) throw NumericError("model '" + p_.name + "': initial sampler produced non-finite state");
    return cloud;
}

std::vector<double> drift_eval(const ModelSpec& model, StateView x, const ParticleCloud& mu) {
    check_args(model, x, mu, "drift_eval");
    std::vector<double> features;
    model.measure_features(mu, features);
    std::vector<double> out(model.d(), 0.0);
    model.drift(x, features, out);
    check_finite(out, "drift_eval");
    return out;
}

std::vector<double> diffusion_eval(const ModelSpec& model, StateView x, const ParticleCloud& mu) {
    check_args(model, x, mu, "diffusion_eval");
    std::vector<double> features;
    model.measure_features(mu, features);
    std::vector<double> out(model.d() * model.d_bar(), 0.0);
    model.diffusion(x, features, out);
    check_finite(out, "diffusion_eval");
    return out;
}

const std::vector<std::string>& builtin_model_names() {
    static const std::vector<std::string> names{"zero", "constant_drift", "meanfield_ou", "kuramoto",
                                                "measure_diffusion"};
    return names;
}

ModelSpec builtin_model(const std::string& name, const ParameterMap& params) {
    ParamReader read(name, params);
    ModelSpec::Params p;
    p.name = name;

    if (name == "zero") {
        const double x0 = read.required("x0");
        p.horizon = read.required("T");
        p.epsilon = read.required("epsilon");
        read.finish();
        p.x0 = {x0};
        p.drift = [](StateView, std::span<const double>, std::span<double> out) { out[0] = 0.0; };
        p.diffusion = [](StateView, std::span<const double>, std::span<double> out) { out[0] = 0.0; };
        p.features = [](const ParticleCloud&, std::vector<double>& f) { f.clear(); };
        p.lipschitz_K = 0.0;
        p.growth_beta = growth_constant(0.0, 0.0, 0.0);
        p.mean_oracle = [x0](double) { return x0; };
        p.description = "f = 0, g = 0. Globally compliant.";
    } else if (name == "constant_drift") {
        const double c = read.required("c");
        const double x0 = read.required("x0");
        p.horizon = read.required("T");
        p.epsilon = read.required("epsilon");
        const double sigma = read.optional("sigma", 1.0);
        read.finish();
        p.x0 = {x0};
        p.drift = [c](StateView, std::span<const double>, std::span<double> out) { out[0] = c; };
        p.diffusion = [sigma](StateView, std::span<const double>, std::span<double> out) { out[0] = sigma; };
        p.features = [](const ParticleCloud&, std::vector<double>& f) { f.clear(); };
        p.lipschitz_K = 0.0;
        p.growth_beta = growth_constant(0.0, c * c, sigma * sigma);
        p.mean_oracle = [x0, c](double t) { return x0 + c * t; };
        p.description = "f = c, g = sigma. Globally compliant; Euler is exact for the drift.";
    } else if (name == "meanfield_ou") {
        const double a = read.required("a");
        const double b = read.required("b");
        const double sigma = read.required("sigma");
        const double x0 = read.required("x0");
        p.horizon = read.required("T");
        p.epsilon = read.required("epsilon");
        const bool additive = read.optional("additive", 0.0) != 0.0;
        const double dim_raw = read.optional("dim", 1.0);
        read.finish();
        if (!(dim_raw >= 1.0) || dim_raw != std::floor(dim_raw)) {
            throw ConfigError("model 'meanfield_ou': dim must be a positive integer");
        }
        const auto dim = static_cast<std::size_t>(dim_raw);
        p.d = dim;
        p.d_bar = dim;
        p.x0.assign(dim, x0);
        p.features = running_mean;
        p.drift = [a, b](StateView x, std::span<const double> mean, std::span<double> out) {
            for (std::size_t k = 0; k < x.size(); ++k) out[k] = -a * x[k] + b * (mean[k] - x[k]);
        };
        if (additive) {
            p.diffusion = [sigma, dim](StateView, std::span<const double>, std::span<double> out) {
                std::fill(out.begin(), out.end(), 0.0);
                for (std::size_t k = 0; k < dim; ++k) out[k * dim + k] = sigma;
            };
        } else {
            p.diffusion = [sigma, dim](StateView x, std::span<const double>, std::span<double> out) {
                std::fill(out.begin(), out.end(), 0.0);
                for (std::size_t k = 0; k < dim; ++k) out[k * dim + k] = sigma * x[k];
            };
        }
        p.lipschitz_K = std::max({2.0 * (a + b) * (a + b), 2.0 * b * b, sigma * sigma});
        p.growth_beta = growth_constant(p.lipschitz_K, 0.0, additive ? sigma * sigma : 0.0);
        p.mean_oracle = [x0, a](double t) { return x0 * std::exp(-a * t); };
        p.description =
            "f = -a x + b (mean(mu) - x); g = sigma x (or sigma with additive = 1). "
            "Lipschitz globally; the bounded-derivative part of the assumptions holds on compacts only. "
            "E[X(t)] = x0 exp(-a t).";
    } else if (name == "kuramoto") {
        const double c = read.required("c");
        const double sigma = read.required("sigma");
        const double x0 = read.required("x0");
        p.horizon = read.required("T");
        p.epsilon = read.required("epsilon");
        read.finish();
        p.x0 = {x0};
        // features = (mean sin x_j, mean cos x_j)
        p.features = [](const ParticleCloud& mu, std::vector<double>& f) {
            f.assign(2, 0.0);
            for (std::size_t j = 0; j < mu.size(); ++j) {
                const double w = 1.0 / static_cast<double>(j + 1);
                const double x = mu.particle(j)[0];
                f[0] += (std::sin(x) - f[0]) * w;
                f[1] += (std::cos(x) - f[1]) * w;
            }
        };
        p.drift = [c](StateView x, std::span<const double> f, std::span<double> out) {
            out[0] = c * (f[0] * std::cos(x[0]) - f[1] * std::sin(x[0]));
        };
        p.diffusion = [sigma](StateView, std::span<const double>, std::span<double> out) { out[0] = sigma; };
        p.lipschitz_K = 2.0 * c * c;
        p.growth_beta = growth_constant(p.lipschitz_K, 0.0, sigma * sigma);
        p.description = "f = c mean_j sin(x_j - x), g = sigma. Globally compliant (bounded smooth drift).";
    } else if (name == "measure_diffusion") {
        const double a = read.required("a");
        const double sigma = read.required("sigma");
        const double x0 = read.required("x0");
        p.horizon = read.required("T");
        p.epsilon = read.required("epsilon");
        read.finish();
        p.x0 = {x0};
        p.features = running_mean;
        p.drift = [a](StateView x, std::span<const double>, std::span<double> out) { out[0] = -a * x[0]; };
        p.diffusion = [sigma](StateView, std::span<const double> mean, std::span<double> out) {
            out[0] = sigma * (1.0 + mean[0]);
        };
        p.lipschitz_K = std::max(a * a, sigma * sigma);
        p.growth_beta = growth_constant(p.lipschitz_K, 0.0, sigma * sigma);
        p.mean_oracle = [x0, a](double t) { return x0 * std::exp(-a * t); };
        p.description = "f = -a x, g = sigma (1 + mean(mu)). Lipschitz globally; E[X(t)] = x0 exp(-a t).";
    } else {
        std::string known;
        for (const auto& n : builtin_model_names()) known += (known.empty() ? "" : ", ") + n;
        throw ConfigError("unknown model '" + name + "' (known: " + known + ")");
    }
    return ModelSpec(std::move(p));
}

TestFunction builtin_test_function(const std::string& name) {
    if (name == "identity") return {"identity", [](StateView x) { return x[0]; }, 1.0};
    if (name == "sin") return {"sin", [](StateView x) { return std::sin(x[0]); }, 1.0};
    if (name == "cos") return {"cos", [](StateView x) { return std::cos(x[0]); }, 1.0};
    throw ConfigError("unknown test function '" + name + "' (known: identity, sin, cos)");
}

SpotCheckReport spot_check_assumptions(const ModelSpec& model, const SpotCheckOptions& options) {
    std::mt19937_64 gen(options.seed);
    std::uniform_real_distribution<double> coord(-options.radius, options.radius);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> count(1, options.max_particles);
    std::normal_distribution<double> jitter(0.0, 0.1);

    const std::size_t d = model.d();
    const std::size_t gsize = d * model.d_bar();
    std::vector<double> x(d), y(d), fx(d), fy(d), gx(gsize), gy(gsize), feat_mu, feat_nu;

    auto sq_norm = [](std::span<const double> a) {
        double s = 0.0;
        for (double v : a) s += v * v;
        return s;
    };
    auto sq_dist = [](std::span<const double> a, std::span<const double> b) {
        double s = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
        return s;
    };

    SpotCheckReport report;
    report.samples = options.samples;
    for (std::size_t s = 0; s < options.samples; ++s) {
        const std::size_t m = count(gen);
        ParticleCloud mu(m, d), nu(m, d);
        // Half the pairs are small perturbations, where Lipschitz bounds are tight.
        const bool nearby = unit(gen) < 0.5;
        for (auto& v : mu.positions()) v = coord(gen);
        for (std::size_t k = 0; k < mu.positions().size(); ++k) {
            nu.positions()[k] = nearby ? std::clamp(mu.positions()[k] + jitter(gen), -options.radius, options.radius)
                                       : coord(gen);
        }
        for (std::size_t k = 0; k < d; ++k) {
            x[k] = coord(gen);
            y[k] = nearby ? std::clamp(x[k] + jitter(gen), -options.radius, options.radius) : coord(gen);
        }

        model.measure_features(mu, feat_mu);
        model.measure_features(nu, feat_nu);
        model.drift(x, feat_mu, fx);
        model.drift(y, feat_nu, fy);
        model.diffusion(x, feat_mu, gx);
        model.diffusion(y, feat_nu, gy);

        const double w2 = wasserstein2(mu, nu);
        const double lhs = std::max(sq_dist(fx, fy), sq_dist(gx, gy));
        const double rhs = model.lipschitz_K() * (sq_dist(x, y) + w2 * w2);
        const double lip_ratio = lhs == 0.0 ? 0.0 : (rhs == 0.0 ? INFINITY : lhs / rhs);
        report.worst_lipschitz_ratio = std::max(report.worst_lipschitz_ratio, lip_ratio);

        const double w2_mu = moment_w2(mu);
        const double growth_lhs = std::max(sq_norm(fx), sq_norm(gx));
        const double growth_rhs = model.growth_beta() * (1.0 + sq_norm(x) + w2_mu * w2_mu);
        report.worst_growth_ratio = std::max(report.worst_growth_ratio, growth_lhs / growth_rhs);
    }
    report.lipschitz_ok = report.worst_lipschitz_ratio <= options.slack;
    report.growth_ok = report.worst_growth_ratio <= options.slack;
    return report;
}

double gradient_bound_ratio(const TestFunction& fn, std::size_t d, std::size_t samples, double radius,
                            std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> coord(-radius, radius);
    constexpr double step = 1e-6;
    std::vector<double> x(d);
    double worst = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        for (auto& v : x) v = coord(gen);
        const double base = fn.psi(x);
        if (!std::isfinite(base)) throw NumericError("test function '" + fn.name + "' is not finite");
        for (std::size_t k = 0; k < d; ++k) {
            const double saved = x[k];
            x[k] = saved + step;
            const double up = fn.psi(x);
            x[k] = saved - step;
            const double down = fn.psi(x);
            x[k] = saved;
            worst = std::max(worst, std::abs(up - down) / (2.0 * step));
        }
    }
    return fn.grad_bound > 0.0 ? worst / fn.grad_bound : (worst == 0.0 ? 0.0 : INFINITY);
}

}  // namespace mvsde
