#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "cftwin/cfgen.hpp"
#include "cftwin/commands.hpp"
#include "cftwin/compression.hpp"
#include "cftwin/config.hpp"
#include "cftwin/diffusion.hpp"
#include "cftwin/error.hpp"
#include "cftwin/evalkit.hpp"

namespace py = pybind11;
using namespace cftwin;

namespace {

py::array_t<double> grid_array(const cfgen::CFGrid& g) {
    py::array_t<double> a({g.resolution, g.resolution, g.channels});
    std::memcpy(a.mutable_data(), g.values.data(), g.values.size() * sizeof(double));
    return a;
}

std::vector<double> flat(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    return {a.data(), a.data() + a.size()};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Channel fingerprint synthesis, diffusion reconstruction and compression";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<FormatError>(m, "FormatError");
    py::register_exception<NumericalError>(m, "NumericalError");
    py::register_exception<InfeasibleError>(m, "InfeasibleError");
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);

    m.attr("EXIT_OK") = static_cast<int>(commands::kOk);
    m.attr("EXIT_CONFIG") = static_cast<int>(commands::kConfigError);
    m.attr("EXIT_FORMAT") = static_cast<int>(commands::kFormatError);
    m.attr("EXIT_RUNTIME") = static_cast<int>(commands::kRuntimeError);

    m.def(
        "run_command",
        [](const std::string& command, const std::string& out, std::optional<std::string> config,
           std::vector<std::string> overrides, std::optional<std::uint64_t> seed) {
            commands::Invocation inv;
            inv.command = command;
            inv.out = out;
            if (config) inv.sources.file = *config;
            inv.sources.overrides = std::move(overrides);
            inv.sources.seed = seed;
            py::gil_scoped_release release;
            return commands::run(inv).dump();
        },
        py::arg("command"), py::arg("out"), py::arg("config") = py::none(), py::arg("overrides") = std::vector<std::string>{},
        py::arg("seed") = py::none(), "Runs one command and returns its manifest as JSON text.");

    m.def("default_config", [] { return config::default_tree().dump(); });
    m.def("config_hash", [](const std::string& text) {
        return config::hex64(config::config_hash(nlohmann::json::parse(text)));
    });

    m.def(
        "rasterize",
        [](const std::string& scenario_json, int resolution) {
            auto s = nlohmann::json::parse(scenario_json).get<cfgen::Scenario>();
            s.validate();
            return grid_array(cfgen::rasterize_cf(s, resolution));
        },
        py::arg("scenario_json"), py::arg("resolution"), "Channel power map in dB, shape (res, res, 1).");

    m.def("read_dataset", [](const std::string& path) {
        const auto ds = cfgen::read_dataset(path);
        py::list pairs;
        for (const auto& p : ds.pairs) pairs.append(py::make_tuple(grid_array(p.hr), grid_array(p.lr)));
        return py::make_tuple(ds.header.dump(), pairs);
    });

    m.def(
        "linear_schedule",
        [](int steps, double beta_start, double beta_end) {
            const auto s = diffusion::linear_schedule(steps, beta_start, beta_end);
            py::dict d;
            d["betas"] = s.betas;
            d["alphas"] = s.alphas;
            d["alpha_bars"] = s.alpha_bars;
            d["posterior_vars"] = s.posterior_vars;
            return d;
        },
        py::arg("steps"), py::arg("beta_start"), py::arg("beta_end"));

    m.def(
        "solve_knapsack",
        [](const std::vector<double>& values, const std::vector<std::int64_t>& weights, std::int64_t budget,
           std::int64_t unit) {
            const auto r = compression::solve_knapsack(values, weights, budget, unit);
            return py::make_tuple(r.selection, r.objective, r.selected_weight);
        },
        py::arg("values"), py::arg("weights"), py::arg("budget"), py::arg("unit") = 1,
        "Minimum-value subset whose weight reaches the budget: (selection, objective, weight).");

    using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;
    m.def("nmse", [](const Arr& p, const Arr& r) { return evalkit::nmse(flat(p), flat(r)); });
    m.def("mse", [](const Arr& p, const Arr& r) { return evalkit::mse(flat(p), flat(r)); });
    m.def(
        "psnr", [](const Arr& p, const Arr& r, double peak, double cap) { return evalkit::psnr(flat(p), flat(r), peak, cap); },
        py::arg("pred"), py::arg("ref"), py::arg("peak") = 255.0, py::arg("cap_db") = 100.0);
    m.def(
        "ssim", [](const Arr& p, const Arr& r, double peak) { return evalkit::ssim_global(flat(p), flat(r), peak); },
        py::arg("pred"), py::arg("ref"), py::arg("peak") = 255.0);
}
