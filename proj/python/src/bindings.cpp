#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "searchphase/committee.hpp"
#include "searchphase/errors.hpp"
#include "searchphase/hermite.hpp"
#include "searchphase/ode.hpp"
#include "searchphase/plan.hpp"

namespace py = pybind11;
using namespace searchphase;

namespace {

// Keyword settings become [model] entries, so the Python side gets the same
// parsing and validation as config files.
ExperimentPlan plan_with(PlanKind kind, const py::kwargs& kw) {
    ExperimentPlan plan = default_plan(kind);
    plan.settings.clear();
    for (const auto& [k, v] : kw) {
        std::string text;
        if (py::isinstance<py::bool_>(v))
            text = v.cast<bool>() ? "true" : "false";
        else if (py::isinstance<py::float_>(v))
            text = format_number(v.cast<double>());
        else
            text = py::str(v).cast<std::string>();
        plan.settings[k.cast<std::string>()] = text;
    }
    return plan;
}

void check_keys(const ExperimentPlan& plan) {
    // validate() also checks the grids; give it harmless ones
    ExperimentPlan p = plan;
    if (p.mus.empty()) p.mus = {0.5};
    if (p.activations.empty()) p.activations = {"linear"};
    if (p.seeds.empty()) p.seeds = {0};
    if (p.ranks.empty()) p.ranks = {1};
    validate(p);
}

py::dict table_dict(const CsvTable& t) {
    py::dict columns;
    for (const auto& c : t.columns) columns[py::str(c)] = t.numeric_column(c);
    py::dict meta;
    for (const auto& [k, v] : t.meta) meta[py::str(k)] = v;
    py::dict out;
    out["columns"] = columns;
    out["meta"] = meta;
    return out;
}

py::dict lin_dict(const SearchPhaseLinearization& l) {
    py::dict d;
    d["mu"] = l.mu;
    d["A"] = l.A;
    d["B"] = l.B;
    d["lambda_plus"] = l.lambda_plus;
    d["lambda_minus"] = l.lambda_minus;
    d["tau"] = l.tau;
    d["converged"] = l.converged;
    return d;
}

ModelConfig model(const std::string& activation, double mu, const std::optional<std::string>& teacher,
                  const std::optional<int>& k_max, const std::string& teacher_transform) {
    ExperimentPlan plan = default_plan(PlanKind::tau_curve);
    if (teacher) plan.settings["teacher"] = *teacher;
    if (k_max) plan.settings["k_max"] = std::to_string(*k_max);
    plan.settings["teacher_transform"] = teacher_transform;
    return model_for(plan, activation, mu);
}

std::vector<std::vector<double>> rows(const Eigen::MatrixXd& m) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)].push_back(m(i, j));
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Search-phase escape-time theory and simulations";

    static py::exception<ValidationError> validation_error(m, "ValidationError", PyExc_ValueError);
    static py::exception<AlignmentError> alignment_error(m, "AlignmentError", PyExc_ValueError);
    static py::exception<NumericalBlowup> blowup(m, "NumericalBlowup", PyExc_ArithmeticError);
    static py::exception<DegenerateStateError> degenerate(m, "DegenerateStateError", PyExc_ArithmeticError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ValidationError& e) {
            PyErr_SetString(validation_error.ptr(), e.what());
        } catch (const AlignmentError& e) {
            PyErr_SetString(alignment_error.ptr(), e.what());
        } catch (const NumericalBlowup& e) {
            PyErr_SetString(blowup.ptr(), e.what());
        } catch (const DegenerateStateError& e) {
            PyErr_SetString(degenerate.ptr(), e.what());
        } catch (const LookupError& e) {
            PyErr_SetString(PyExc_KeyError, e.what());
        }
    });

    m.def("scaled_hermite", &eval_scaled_hermite, py::arg("k"), py::arg("r"), py::arg("z"),
          "He_k^{[r]}(z), orthogonal under N(0, r)");

    m.def(
        "hermite_coefficients",
        [](const std::string& activation, double r, int k_max) {
            const auto c = scaled_coefficients(builtin(activation), r, k_max);
            py::dict d;
            d["sigma_k"] = c.sigma_k;
            d["sigma_bar_k"] = c.sigma_bar_k;
            d["information_exponent"] = information_exponent(c.sigma_k);
            return d;
        },
        py::arg("activation"), py::arg("r") = 1.0, py::arg("k_max") = 25);

    m.def(
        "activation",
        [](const std::string& name, const std::vector<double>& z) {
            const auto a = builtin(name);
            std::vector<double> out;
            for (double x : z) out.push_back(a(x));
            return out;
        },
        py::arg("name"), py::arg("z"));

    m.def(
        "linearize",
        [](const std::string& activation, double mu, std::optional<std::string> teacher, std::optional<int> k_max,
           const std::string& teacher_transform) {
            return lin_dict(linearize_search_phase(model(activation, mu, teacher, k_max, teacher_transform)));
        },
        py::arg("activation"), py::arg("mu"), py::arg("teacher") = py::none(), py::arg("k_max") = py::none(),
        py::arg("teacher_transform") = "identity");

    m.def(
        "tau_curve",
        [](const std::string& activation, const std::vector<double>& mus, std::optional<std::string> teacher,
           std::optional<int> k_max) {
            py::list out;
            if (mus.empty()) throw ValidationError({"mu: grid is empty"});
            for (const auto& l : tau_curve(model(activation, mus.front(), teacher, k_max, "identity"), mus))
                out.append(lin_dict(l));
            return out;
        },
        py::arg("activation"), py::arg("mus"), py::arg("teacher") = py::none(), py::arg("k_max") = py::none());

    m.def(
        "find_singularities",
        [](const std::string& activation, double lo, double hi, double step) {
            return find_singularities(model(activation, 0.5, std::nullopt, std::nullopt, "identity"),
                                      SingularityScan{lo, hi, step});
        },
        py::arg("activation"), py::arg("lo") = 1e-3, py::arg("hi") = 1.0 - 1e-3, py::arg("step") = 1e-3);

    m.def(
        "population_loss",
        [](const std::string& activation, double mu, double u, double mm, std::optional<std::string> teacher) {
            const auto cfg = model(activation, mu, teacher, std::nullopt, "identity");
            const auto l = population_loss(cfg, {u, mm});
            const auto g = loss_gradients(cfg, {u, mm});
            py::dict d;
            d["loss"] = l.value;
            d["du"] = g.du;
            d["dm"] = g.dm;
            d["converged"] = l.converged && g.converged;
            return d;
        },
        py::arg("activation"), py::arg("mu"), py::arg("u"), py::arg("m"), py::arg("teacher") = py::none());

    m.def(
        "asymptotic_tau",
        [](int k_star, double mu, const std::string& regime) {
            return asymptotic_tau(k_star, mu,
                                  regime == "near_zero" ? AsymptoticRegime::near_zero : AsymptoticRegime::near_one);
        },
        py::arg("k_star"), py::arg("mu"), py::arg("regime") = "near_one");

    m.def(
        "integrate_flow",
        [](const std::string& activation, double mu, const py::kwargs& kw) {
            auto plan = plan_with(PlanKind::ode_run, kw);
            check_keys(plan);
            return table_dict(ode_table(plan, activation, mu));
        },
        py::arg("activation"), py::arg("mu"),
        "ODE flow; keywords are [model] settings of an ode plan (d, dt, t_max, integrator, ...)");

    m.def(
        "run_sgd",
        [](const std::string& activation, double mu, std::uint64_t seed, std::int64_t record_every,
           const py::kwargs& kw) {
            auto plan = plan_with(PlanKind::sgd_run, kw);
            check_keys(plan);
            const auto cfg = sim_for(plan, activation, mu, seed);
            SgdTrajectory tr;
            {
                py::gil_scoped_release release;
                tr = run_simulation(cfg, record_every);
            }
            return table_dict(sgd_table(cfg, tr));
        },
        py::arg("activation"), py::arg("mu"), py::arg("seed") = 0, py::arg("record_every") = 1,
        "online SGD; keywords are [model] settings of an sgd plan (d, batch, lr, epochs, sampler, ...)");

    m.def(
        "committee_rates",
        [](double mu, int R) {
            py::list out;
            for (const auto& r : committee_linear_rates(standard_committee(mu, R))) {
                py::dict d;
                d["k"] = r.k;
                d["mu"] = r.mu;
                d["lambda_plus"] = r.lambda_plus;
                d["tau"] = r.tau;
                out.append(d);
            }
            return out;
        },
        py::arg("mu"), py::arg("R") = 1);

    m.def(
        "run_committee",
        [](double mu, int R, std::uint64_t seed, std::int64_t record_every, const std::string& activation,
           const py::kwargs& kw) {
            auto plan = plan_with(PlanKind::committee_run, kw);
            check_keys(plan);
            const auto cfg = committee_for(plan, activation, mu, R, seed);
            CommitteeTrajectory tr;
            {
                py::gil_scoped_release release;
                tr = committee_sgd(cfg, record_every);
            }
            auto d = table_dict(committee_table(cfg, tr));
            py::list M;
            for (const auto& x : tr.M) M.append(rows(x));
            d["M"] = M;
            return d;
        },
        py::arg("mu"), py::arg("R") = 1, py::arg("seed") = 0, py::arg("record_every") = 1,
        py::arg("activation") = "linear");

    m.def(
        "compare",
        [](const std::string& theory_csv, const std::string& experiment_csv, double d, double flow_time_per_step,
           const std::string& exit_column) {
            const auto rep = compare_theory_experiment(parse_csv(theory_csv), parse_csv(experiment_csv),
                                                       {d, flow_time_per_step, exit_column});
            return table_dict(rep.table());
        },
        py::arg("theory_csv"), py::arg("experiment_csv"), py::arg("d") = 1000.0,
        py::arg("flow_time_per_step") = 0.2, py::arg("exit_column") = "empirical_exit_epoch");

    m.def(
        "run_plan",
        [](const std::string& ini_text, const std::string& output_dir, unsigned threads) {
            auto plan = parse_plan(ini_text);
            if (!output_dir.empty()) plan.output_dir = output_dir;
            Manifest man;
            {
                py::gil_scoped_release release;
                man = run_plan(plan, threads);
            }
            return py::module_::import("json").attr("loads")(man.to_json());
        },
        py::arg("ini_text"), py::arg("output_dir") = "", py::arg("threads") = 0,
        "run an INI plan; returns the manifest as a dict");
}
