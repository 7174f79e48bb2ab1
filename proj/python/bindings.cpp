#include "bot/basis.hpp"
#include "bot/env.hpp"
#include "bot/errors.hpp"
#include "bot/harness.hpp"
#include "bot/transport.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace bot;

namespace {

using json = nlohmann::json;

json parse(const std::string& s) { return json::parse(s); }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Entropic optimal transport bandits: solvers, bases, environments and the experiment runner.";

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<InfeasibleAction>(m, "InfeasibleAction", base.ptr());

    py::class_<DiscreteMeasure>(m, "DiscreteMeasure")
        .def(py::init<Matrix, Vector>(), py::arg("points"), py::arg("weights"))
        .def_static("uniform_grid", &DiscreteMeasure::uniform_grid, py::arg("k"))
        .def_property_readonly("points", &DiscreteMeasure::points)
        .def_property_readonly("weights", &DiscreteMeasure::weights)
        .def("__len__", &DiscreteMeasure::size);

    m.def("pairing", py::overload_cast<const Matrix&, const Matrix&>(&pairing), py::arg("cost"),
          py::arg("plan"));
    m.def("relative_entropy", py::overload_cast<const Matrix&, const Matrix&>(&relative_entropy),
          py::arg("plan"), py::arg("reference"));
    m.def(
        "is_coupling",
        [](const Matrix& plan, const DiscreteMeasure& mu, const DiscreteMeasure& nu, double tol) {
            return check_coupling(Coupling{plan}, mu, nu, tol).feasible;
        },
        py::arg("plan"), py::arg("mu"), py::arg("nu"), py::arg("tol") = 1e-10);

    m.def(
        "sinkhorn",
        [](const Matrix& cost, const DiscreteMeasure& mu, const DiscreteMeasure& nu, double eps,
           double tol, bool newton) {
            SinkhornOptions opt;
            opt.tol = tol;
            opt.newton = newton;
            auto r = sinkhorn_annealed(CostTable(cost), mu, nu, eps, opt);
            py::dict out;
            out["plan"] = r.plan.mass;
            out["phi"] = r.potentials.phi;
            out["psi"] = r.potentials.psi;
            out["primal"] = r.primal_value;
            out["dual"] = r.dual_value;
            out["gap"] = r.gap;
            out["iterations"] = r.iterations;
            out["converged"] = r.converged;
            return out;
        },
        py::arg("cost"), py::arg("mu"), py::arg("nu"), py::arg("epsilon"), py::arg("tol") = 1e-9,
        py::arg("newton") = true);

    m.def(
        "kantorovich",
        [](const Matrix& cost, const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
            auto b = kantorovich_baseline(CostTable(cost), mu, nu);
            return py::make_tuple(b.value, b.optimizer.mass);
        },
        py::arg("cost"), py::arg("mu"), py::arg("nu"));

    m.def(
        "cosine_basis",
        [](const DiscreteMeasure& mu, const DiscreteMeasure& nu, int n) { return cosine_basis(mu, nu, n).eval(); },
        py::arg("mu"), py::arg("nu"), py::arg("n_max"),
        "Basis functions as rows over the row-major flattened grid.");
    m.def(
        "loci_basis",
        [](const DiscreteMeasure& mu, const DiscreteMeasure& nu) { return loci_indicator_basis(mu, nu).eval(); },
        py::arg("mu"), py::arg("nu"));

    m.def("noise_term", &noise_term, py::arg("T"), py::arg("delta"), py::arg("sigma"));
    m.def("epsilon_sum_bound", &epsilon_sum_bound, py::arg("T"), py::arg("alpha"), py::arg("kappa"));
    m.def("varying_order_bound", &varying_order_bound, py::arg("T"), py::arg("q"), py::arg("delta"),
          py::arg("sigma"), py::arg("lam"), py::arg("C"), py::arg("kappa") = py::none());

    m.def(
        "env_summary", [](const std::string& spec) { return to_json(env_from_spec(parse(spec))).dump(); },
        py::arg("spec_json"));
    m.def(
        "baseline",
        [](const std::string& spec, double eps) {
            const BanditEnv env = env_from_spec(parse(spec));
            const auto& k = env.kantorovich();
            json out = {{"kantorovich", k.value}, {"method", to_string(k.method)}};
            if (eps > 0.0) {
                const auto e = env.entropic(eps);
                out["entropic"] = {{"epsilon", eps}, {"value", e.value}, {"dual", e.dual}};
            }
            return out.dump();
        },
        py::arg("spec_json"), py::arg("epsilon") = 0.0);
    m.def(
        "run",
        [](const std::string& config) {
            const ExperimentConfig c = config_from_json(parse(config));
            std::vector<RunRecord> recs;
            {
                py::gil_scoped_release release;
                recs = run_experiment(c);
            }
            return records_to_json(recs, {{"config", to_json(c)}, {"config_hash", config_hash(c)}}).dump();
        },
        py::arg("config_json"), "Runs every repetition and returns the records as JSON text.");
    m.def(
        "to_csv",
        [](const std::string& records) {
            std::ostringstream os;
            write_csv(os, records_from_json(parse(records)));
            return os.str();
        },
        py::arg("records_json"));
    m.attr("CSV_HEADER") = kCsvHeader;
}
