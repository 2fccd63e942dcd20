// Python bindings: configs and pipeline commands take and return JSON text,
// which the package wrapper converts to and from dicts. Array-valued entry
// points use NumPy through the Eigen type casters.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cuthmm/errors.hpp"
#include "cuthmm/experiment.hpp"
#include "cuthmm/histogram_gibbs.hpp"
#include "cuthmm/hmm.hpp"
#include "cuthmm/io.hpp"
#include "cuthmm/partition.hpp"
#include "cuthmm/spectral.hpp"

namespace py = pybind11;
using namespace cuthmm;

namespace {

RunContext context(const std::string& config_json, const std::string& out, std::optional<std::uint64_t> seed,
                   const std::string& scale, int jobs) {
    ExperimentConfig cfg = config_from_json(Json::parse(config_json.empty() ? "{}" : config_json));
    if (!out.empty()) cfg.outputs.directory = out;
    if (seed) cfg.seed = *seed;
    return RunContext(std::move(cfg), scale_from_string(scale), jobs);
}

py::dict store_to_dict(const DrawStore& s) {
    const auto k = static_cast<py::ssize_t>(s.size());
    py::array_t<double> q({k, static_cast<py::ssize_t>(s.states), static_cast<py::ssize_t>(s.states)});
    const auto orows = s.empty() ? 0 : static_cast<py::ssize_t>(s.omega.front().rows());
    const auto ocols = s.empty() ? 0 : static_cast<py::ssize_t>(s.omega.front().cols());
    py::array_t<double> omega({k, orows, ocols});
    auto qv = q.mutable_unchecked<3>();
    auto ov = omega.mutable_unchecked<3>();
    for (py::ssize_t d = 0; d < k; ++d) {
        const auto& qd = s.q[static_cast<std::size_t>(d)];
        const auto& od = s.omega[static_cast<std::size_t>(d)];
        for (py::ssize_t i = 0; i < qd.rows(); ++i)
            for (py::ssize_t j = 0; j < qd.cols(); ++j) qv(d, i, j) = qd(i, j);
        for (py::ssize_t i = 0; i < orows; ++i)
            for (py::ssize_t j = 0; j < ocols; ++j) ov(d, i, j) = od(i, j);
    }
    py::dict out;
    out["q"] = q;
    out["omega"] = omega;
    out["log_posterior"] = s.log_posterior;
    out["iteration"] = s.iteration;
    out["relabeling"] = s.relabeling;
    return out;
}

TransformG0 transform_named(const std::string& name) {
    return transform_mode_from_string(name) == TransformG0::Mode::PureSigmoid ? TransformG0::pure_sigmoid()
                                                                              : TransformG0::sigmoid_linear();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Cut-posterior inference for hidden Markov models with nonparametric emissions";

    // Translators registered later are tried first, so subclasses follow the base.
    const auto& base = py::register_exception<Error>(m, "CuthmmError");
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<MissingArtifact>(m, "MissingArtifact", base.ptr());

    m.def("default_config", [] { return config_to_json(ExperimentConfig::defaults()).dump(); },
          "Study defaults as JSON text.");
    m.def("resolve_config", [](const std::string& j) { return config_to_json(config_from_json(Json::parse(j))).dump(); },
          py::arg("config_json"), "Overlays a partial config on the defaults and validates it.");
    m.def("config_hash", [](const std::string& j) { return config_hash(config_from_json(Json::parse(j))); },
          py::arg("config_json"));
    m.def("command_names", &command_names);

    m.def(
        "run_command",
        [](const std::string& command, const std::string& config_json, const std::string& out,
           std::optional<std::uint64_t> seed, const std::string& scale, int jobs) {
            const auto ctx = context(config_json, out, seed, scale, jobs);
            py::gil_scoped_release release;
            return run_command(command, ctx).dump();
        },
        py::arg("command"), py::arg("config_json") = "", py::arg("out") = "", py::arg("seed") = py::none(),
        py::arg("scale") = "", py::arg("jobs") = 1, "Runs one pipeline stage and returns its manifest as JSON text.");
    m.def(
        "reproduce_paper",
        [](const std::string& config_json, const std::string& out, std::optional<std::uint64_t> seed,
           const std::string& scale, int jobs) {
            const auto ctx = context(config_json, out, seed, scale, jobs);
            py::gil_scoped_release release;
            return reproduce_paper(ctx).dump();
        },
        py::arg("config_json") = "", py::arg("out") = "", py::arg("seed") = py::none(), py::arg("scale") = "smoke",
        py::arg("jobs") = 1);
    m.def(
        "run_directory",
        [](const std::string& config_json, const std::string& out, std::optional<std::uint64_t> seed,
           const std::string& scale) { return context(config_json, out, seed, scale, 1).run_dir.string(); },
        py::arg("config_json") = "", py::arg("out") = "", py::arg("seed") = py::none(), py::arg("scale") = "");

    m.def(
        "simulate",
        [](const Eigen::MatrixXd& q, const std::vector<double>& means, const std::vector<double>& sds, int n,
           std::uint64_t seed) {
            if (means.size() != static_cast<std::size_t>(q.rows()) || sds.size() != means.size())
                throw InvalidArgument("need one mean and one sd per state");
            std::vector<EmissionSampler> samplers;
            for (std::size_t r = 0; r < means.size(); ++r)
                samplers.push_back([mu = means[r], sd = sds[r]](Rng& g) { return normal_draw(g, mu, sd); });
            Rng rng(seed);
            const auto sim = simulate_hmm(TransitionMatrix(q), samplers, n, rng);
            return py::make_tuple(sim.observations, sim.states);
        },
        py::arg("q"), py::arg("means"), py::arg("sds"), py::arg("n"), py::arg("seed"),
        "Simulates a Gaussian-emission HMM; returns (observations, states).");
    m.def(
        "partition_edges",
        [](int level, const std::string& transform) { return build_partition(transform_named(transform), level).edges(); },
        py::arg("level"), py::arg("transform") = "sigmoid-linear");
    m.def(
        "coarsen",
        [](const std::vector<double>& y, int level, const std::string& transform) {
            return coarsen(build_partition(transform_named(transform), level), y);
        },
        py::arg("y"), py::arg("level"), py::arg("transform") = "sigmoid-linear");
    m.def(
        "sample_transition_posterior",
        [](const std::vector<double>& y, int level, int states, long iterations, long burn_in, long thin,
           std::uint64_t seed, const std::string& transform) {
            const auto part = build_partition(transform_named(transform), level);
            const auto bins = coarsen(part, y);
            DrawStore store;
            {
                py::gil_scoped_release release;
                store = run_chain(bins, DirichletHyper::uniform(states, part.bins()),
                                  Pi1Config{iterations, burn_in, thin, seed}, states, part);
            }
            return store_to_dict(store);
        },
        py::arg("y"), py::arg("level"), py::arg("states") = 2, py::arg("iterations") = 150000,
        py::arg("burn_in") = 10000, py::arg("thin") = 20, py::arg("seed") = 1, py::arg("transform") = "sigmoid-linear",
        "Histogram-prior Gibbs sampler for the transition matrix; returns relabelled draws.");
    m.def(
        "spectral_estimate",
        [](const std::vector<double>& y, int level, int states, std::uint64_t seed, const std::string& transform) {
            const auto part = build_partition(transform_named(transform), level);
            SpectralOptions options;
            options.seed = seed;
            return spectral_to_json(spectral_estimate(coarsen(part, y), part.bins(), states, std::nullopt, options))
                .dump();
        },
        py::arg("y"), py::arg("level"), py::arg("states") = 2, py::arg("seed") = 1,
        py::arg("transform") = "sigmoid-linear", "Blind spectral estimate as JSON text.");
    m.def(
        "read_draw_store",
        [](const std::string& csv, const std::string& json) { return store_to_dict(read_draw_store(csv, json)); },
        py::arg("csv_path"), py::arg("json_path"));
    m.def("read_series", [](const std::string& path) { return read_series(path); }, py::arg("path"));
    m.def(
        "read_density_bands",
        [](const std::string& path) {
            std::vector<double> grid;
            const auto bands = read_density_bands(path, &grid);
            py::list states;
            for (const auto& b : bands) {
                py::dict d;
                d["mean"] = b.mean;
                d["lower"] = b.lower;
                d["upper"] = b.upper;
                states.append(d);
            }
            return py::make_tuple(grid, states);
        },
        py::arg("path"), "Returns (grid, [per-state dict of mean, lower, upper]).");
}
