#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "mvsde/em_engine.hpp"
#include "mvsde/errors.hpp"
#include "mvsde/measure.hpp"
#include "mvsde/mlmc_engine.hpp"
#include "mvsde/model.hpp"
#include "mvsde/runner.hpp"
#include "mvsde/stats.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace mvsde;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// 1-D input is read as m scalar particles, 2-D as (m, d).
ParticleCloud to_cloud(const Array& a) {
    if (a.ndim() == 1) {
        return ParticleCloud(static_cast<std::size_t>(a.shape(0)), 1,
                             std::vector<double>(a.data(), a.data() + a.size()));
    }
    if (a.ndim() != 2) throw ShapeError("particle array must be 1-D or 2-D");
    return ParticleCloud(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                         std::vector<double>(a.data(), a.data() + a.size()));
}

Array from_cloud(const ParticleCloud& c) {
    Array out({c.size(), c.dim()});
    std::copy(c.positions().begin(), c.positions().end(), out.mutable_data());
    return out;
}

py::dict level_dict(const LevelStatistics& s) {
    py::dict d;
    d["level"] = s.level;
    d["samples"] = s.samples;
    d["mean_diff"] = s.mean_diff;
    d["var_diff"] = s.var_diff;
    d["mean_fine"] = s.mean_fine;
    d["var_fine"] = s.var_fine;
    d["rng_cost"] = s.rng_cost;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Particle Euler-Maruyama and multilevel Monte Carlo for small-noise McKean-Vlasov SDEs.";

    // Translators run newest first, so the base class goes in first.
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

    py::class_<ModelSpec>(m, "Model")
        .def_property_readonly("name", &ModelSpec::name)
        .def_property_readonly("d", &ModelSpec::d)
        .def_property_readonly("d_bar", &ModelSpec::d_bar)
        .def_property_readonly("horizon", &ModelSpec::horizon)
        .def_property_readonly("epsilon", &ModelSpec::epsilon)
        .def_property_readonly("x0", [](const ModelSpec& s) { return std::vector<double>(s.x0().begin(), s.x0().end()); })
        .def_property_readonly("description", &ModelSpec::description)
        .def("with_epsilon", &ModelSpec::with_epsilon, py::arg("epsilon"))
        .def("mean_oracle", [](const ModelSpec& s, double t) -> py::object {
            if (!s.has_mean_oracle()) return py::none();
            return py::float_(s.mean_oracle(t));
        }, py::arg("t"))
        .def("drift", [](const ModelSpec& s, std::vector<double> x, const Array& cloud) {
            return drift_eval(s, x, to_cloud(cloud));
        })
        .def("diffusion", [](const ModelSpec& s, std::vector<double> x, const Array& cloud) {
            return diffusion_eval(s, x, to_cloud(cloud));
        })
        .def("__repr__", [](const ModelSpec& s) {
            return "<Model " + s.name() + " eps=" + std::to_string(s.epsilon()) + ">";
        });

    m.def("builtin_model", &builtin_model, py::arg("name"), py::arg("params"));
    m.def("builtin_model_names", &builtin_model_names);

    m.def("simulate_path", [](const ModelSpec& model, std::size_t steps, std::size_t m_particles, std::uint64_t seed,
                              std::size_t record_every) {
        PathOptions opt;
        opt.record_every = record_every;
        PathRecord rec;
        {
            py::gil_scoped_release release;
            rec = simulate_path(model, SimulationGrid(model.horizon(), steps), m_particles, seed, opt);
        }
        py::list clouds;
        for (const auto& c : rec.clouds) clouds.append(from_cloud(c));
        py::dict out;
        out["times"] = rec.times;
        out["clouds"] = clouds;
        out["rng_draws"] = rec.rng_draws;
        return out;
    }, py::arg("model"), py::arg("steps"), py::arg("m_particles"), py::arg("seed"), py::arg("record_every") = 1);

    m.def("ode_limit", [](const ModelSpec& model, std::size_t steps) {
        return ode_limit(model, SimulationGrid(model.horizon(), steps));
    }, py::arg("model"), py::arg("steps"));

    m.def("strong_error_curve", [](const ModelSpec& model, std::vector<double> h_list, std::size_t m_particles,
                                   std::size_t replications, std::uint64_t seed, const std::string& test_function,
                                   std::size_t ref_factor) {
        std::vector<StrongErrorPoint> pts;
        {
            py::gil_scoped_release release;
            pts = strong_error_curve(model, h_list, m_particles, replications, seed,
                                     builtin_test_function(test_function), ref_factor);
        }
        py::list out;
        for (const auto& p : pts) {
            out.append(py::dict("h"_a = p.h, "steps"_a = p.steps, "mse"_a = p.mse, "ci_lo"_a = p.ci_lo,
                                "ci_hi"_a = p.ci_hi, "samples"_a = p.samples));
        }
        return out;
    }, py::arg("model"), py::arg("h_list"), py::arg("m_particles"), py::arg("replications"), py::arg("seed"),
       py::arg("test_function") = "identity", py::arg("ref_factor") = 8);

    m.def("coupled_variance_study", [](const ModelSpec& model, unsigned level_lo, unsigned level_hi,
                                       std::size_t m_particles, std::size_t replications, std::uint64_t seed,
                                       unsigned refinement_n, const std::string& test_function) {
        std::vector<CoupledVarianceRow> rows;
        {
            py::gil_scoped_release release;
            rows = coupled_variance_study(model, level_lo, level_hi, refinement_n, m_particles, replications,
                                          builtin_test_function(test_function), seed);
        }
        py::list out;
        for (const auto& r : rows) {
            out.append(py::dict("level"_a = r.level, "h_fine"_a = r.h_fine, "h_coarse"_a = r.h_coarse,
                                "epsilon"_a = r.epsilon, "mean_diff"_a = r.mean_diff, "var_diff"_a = r.var_diff,
                                "ci_lo"_a = r.ci_lo, "ci_hi"_a = r.ci_hi, "second_moment"_a = r.second_moment,
                                "rng_cost"_a = r.rng_cost, "samples"_a = r.samples));
        }
        return out;
    }, py::arg("model"), py::arg("level_lo"), py::arg("level_hi"), py::arg("m_particles"), py::arg("replications"),
       py::arg("seed"), py::arg("refinement_n") = 2, py::arg("test_function") = "identity");

    m.def("mlmc_estimate", [](const ModelSpec& model, double delta, std::size_t m_particles, std::uint64_t seed,
                              unsigned refinement_n, std::size_t pilot_samples, unsigned max_level,
                              const std::string& test_function) {
        MlmcOptions opt;
        opt.target_delta = delta;
        opt.m_particles = m_particles;
        opt.seed = seed;
        opt.refinement_n = refinement_n;
        opt.pilot_samples = pilot_samples;
        opt.max_level = max_level;
        MlmcReport rep;
        {
            py::gil_scoped_release release;
            rep = mlmc_estimate(model, builtin_test_function(test_function), opt);
        }
        py::list levels;
        for (const auto& s : rep.per_level) levels.append(level_dict(s));
        py::dict out;
        out["estimate"] = rep.estimate;
        out["per_level"] = levels;
        out["total_cost"] = rep.total_cost;
        out["allocation"] = rep.allocation;
        out["bias_proxy"] = rep.bias_proxy;
        out["bias_converged"] = rep.bias_converged;
        out["flags"] = rep.flags;
        return out;
    }, py::arg("model"), py::arg("delta"), py::arg("m_particles") = 64, py::arg("seed") = 0,
       py::arg("refinement_n") = 2, py::arg("pilot_samples") = 32, py::arg("max_level") = 8,
       py::arg("test_function") = "identity");

    m.def("optimal_allocation", [](std::vector<double> variances, std::vector<double> costs, double delta) {
        return optimal_allocation(variances, costs, delta);
    }, py::arg("variances"), py::arg("costs"), py::arg("delta"));

    m.def("wasserstein2", [](const Array& mu, const Array& nu) { return wasserstein2(to_cloud(mu), to_cloud(nu)); },
          py::arg("mu"), py::arg("nu"));
    m.def("moment_w2", [](const Array& mu) { return moment_w2(to_cloud(mu)); }, py::arg("mu"));

    m.def("loglog_fit", [](std::vector<double> x, std::vector<double> y, bool skip_first) {
        if (x.size() != y.size()) throw ShapeError("x and y must have the same length");
        std::vector<RatePoint> pts;
        for (std::size_t i = 0; i < x.size(); ++i) pts.push_back({x[i], y[i]});
        const auto f = loglog_fit(pts, skip_first);
        return py::dict("slope"_a = f.slope, "intercept"_a = f.intercept, "r_squared"_a = f.r_squared);
    }, py::arg("x"), py::arg("y"), py::arg("skip_first") = false);

    m.def("run", [](const std::filesystem::path& config, bool assert_checks, std::optional<std::uint64_t> seed,
                    std::optional<std::string> output_dir) {
        RunOptions opt;
        opt.assert_checks = assert_checks;
        opt.seed = seed;
        opt.output_dir = std::move(output_dir);
        std::ostringstream out, err;
        int code = 0;
        {
            py::gil_scoped_release release;
            code = run(config, opt, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
    }, py::arg("config"), py::arg("assert_checks") = false, py::arg("seed") = py::none(),
       py::arg("output_dir") = py::none());

    m.def("validate", [](const std::filesystem::path& config) {
        std::ostringstream out, err;
        const int code = run_validate(config, out, err);
        return py::make_tuple(code, out.str() + err.str());
    }, py::arg("config"));

    m.attr("__version__") = version();
}
