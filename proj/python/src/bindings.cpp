#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "qopf/cli.hpp"
#include "qopf/compact.hpp"
#include "qopf/errors.hpp"
#include "qopf/grid.hpp"
#include "qopf/io.hpp"
#include "qopf/model.hpp"
#include "qopf/opf_solver.hpp"
#include "qopf/qsim.hpp"
#include "qopf/train.hpp"

namespace py = pybind11;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::optional<qopf::NoiseSpec> level_noise(std::optional<double> level) {
  if (!level) return std::nullopt;
  return qopf::NoiseSpec::from_level(*level);
}

py::dict solve(const std::string& path, double scale, const std::string& objective) {
  const qopf::NetworkCase c = qopf::load_case_file(path);
  const qopf::CompactModel m = qopf::build_compact(c);
  qopf::SolverOptions opts;
  if (objective == "quadratic") {
    opts.objective = qopf::CostModel::quadratic;
  } else if (objective != "linear") {
    throw qopf::ValidationError("objective must be 'linear' or 'quadratic'");
  }
  const VectorXd d = scale * c.demand();
  qopf::OPFSolution sol;
  {
    py::gil_scoped_release release;
    sol = qopf::solve_acopf(m, d, std::nullopt, opts);
  }
  const qopf::VerifyReport rep = qopf::verify_solution(m, sol, d);
  const int nb = c.n_bus(), ng = c.n_gen();
  const VectorXd& v = sol.candidate.v;
  VectorXd vm(nb), va(nb);
  for (int i = 0; i < nb; ++i) {
    vm(i) = std::hypot(v(i), v(nb + i));
    va(i) = std::atan2(v(nb + i), v(i));
  }
  py::dict out;
  out["status"] = qopf::to_string(sol.status);
  out["objective"] = sol.objective;
  out["iterations"] = sol.iterations;
  out["max_eq"] = rep.max_eq;
  out["max_ineq"] = rep.max_ineq;
  out["kkt"] = std::vector<double>{rep.kkt.eps_stat, rep.kkt.eps_comp, rep.kkt.eps_dual, rep.kkt.eps_prim};
  out["pg"] = VectorXd(sol.candidate.g.head(ng));
  out["qg"] = VectorXd(sol.candidate.g.tail(ng));
  out["vm"] = vm;
  out["va"] = va;
  out["rho"] = sol.candidate.rho;
  out["mu"] = sol.candidate.mu;
  return out;
}

class Model {
 public:
  explicit Model(const std::string& checkpoint) : model_(qopf::load_checkpoint(checkpoint).model) {}

  int n_inputs() const { return model_.config.n_in; }
  int n_outputs() const { return model_.config.out.size(); }
  std::string topology() const { return qopf::to_string(model_.config.topology); }

  // Columns are samples; rows follow the raw demand layout [Pd; Qd].
  py::dict predict(const MatrixXd& demand, std::optional<double> noise_level) const {
    const int ng = model_.config.out.n_g, nb = model_.config.out.n_b;
    MatrixXd pg(ng, demand.cols()), qg(ng, demand.cols()), vm(nb, demand.cols()), va(nb, demand.cols());
    {
      py::gil_scoped_release release;
      for (Eigen::Index k = 0; k < demand.cols(); ++k) {
        const qopf::CandidateSolution s = qopf::predict_solution(model_, demand.col(k), level_noise(noise_level));
        pg.col(k) = s.g.head(ng);
        qg.col(k) = s.g.tail(ng);
        for (int i = 0; i < nb; ++i) {
          vm(i, k) = std::hypot(s.v(i), s.v(nb + i));
          va(i, k) = std::atan2(s.v(nb + i), s.v(i));
        }
      }
    }
    py::dict out;
    out["pg"] = pg;
    out["qg"] = qg;
    out["vm"] = vm;
    out["va"] = va;
    return out;
  }

 private:
  qopf::HybridModel model_;
};

}  // namespace

PYBIND11_MODULE(_core, mod) {
  mod.doc() = "Core of the qopf toolkit";
  mod.attr("__version__") = qopf::kToolVersion;

  py::register_exception<qopf::NumericalError>(mod, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<qopf::ParseError>(mod, "ParseError", PyExc_ValueError);
  py::register_exception<qopf::ValidationError>(mod, "ValidationError", PyExc_ValueError);
  py::register_exception<qopf::DimensionError>(mod, "DimensionError", PyExc_ValueError);
  py::register_exception<qopf::IoError>(mod, "IoError", PyExc_OSError);

  mod.def("case_summary_json", [](const std::string& path) {
    std::ostringstream out, err;
    const int code = qopf::run_cli({"case", "inspect", path}, out, err);
    if (code != 0) throw qopf::ParseError(err.str());
    return out.str();
  });
  mod.def("compact_json", [](const std::string& path) {
    return qopf::to_json(qopf::build_compact(qopf::load_case_file(path))).dump();
  });
  mod.def("solve", &solve, py::arg("path"), py::arg("demand_scale") = 1.0, py::arg("objective") = "linear");
  mod.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = qopf::run_cli(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  });

  mod.def("noise_spec", [](double e) {
    const qopf::NoiseSpec n = qopf::NoiseSpec::from_level(e);
    py::dict d;
    d["e_s"] = n.e_s;
    d["e_t"] = n.e_t;
    d["e_d"] = n.e_d;
    d["e_m"] = n.e_m;
    d["e_c"] = n.e_c;
    return d;
  }, py::arg("level"), "Channel strengths for a scalar noise level.");

  mod.def("n_weights", [](int n_qubits, int depth) { return qopf::default_circuit(n_qubits, depth).n_weights(); },
          py::arg("n_qubits") = 4, py::arg("depth") = 3, "Trainable angles of the default ansatz.");
  mod.def("statevector_expectations",
          [](const VectorXd& features, const VectorXd& weights, int depth) {
            return qopf::run_statevector(qopf::default_circuit(static_cast<int>(features.size()), depth), features,
                                         weights);
          },
          py::arg("features"), py::arg("weights"), py::arg("depth") = 3,
          "<Z> per qubit of the default ansatz, noiseless.");
  mod.def("density_expectations",
          [](const VectorXd& features, const VectorXd& weights, int depth, double level) {
            return qopf::run_density(qopf::default_circuit(static_cast<int>(features.size()), depth), features,
                                     weights, qopf::NoiseSpec::from_level(level));
          },
          py::arg("features"), py::arg("weights"), py::arg("depth") = 3, py::arg("noise_level") = 0.0,
          "<Z> per qubit under the composite noise model.");
  mod.def("param_shift_grad",
          [](const VectorXd& features, const VectorXd& weights, int depth, std::optional<double> level) {
            const auto g = qopf::param_shift_grad(qopf::default_circuit(static_cast<int>(features.size()), depth),
                                                  features, weights, level_noise(level));
            return py::make_tuple(g.expectations, g.d_features, g.d_weights);
          },
          py::arg("features"), py::arg("weights"), py::arg("depth") = 3, py::arg("noise_level") = py::none(),
          "Returns (expectations, d/d features, d/d weights).");

  py::class_<Model>(mod, "Model")
      .def(py::init<const std::string&>(), py::arg("checkpoint"))
      .def_property_readonly("n_inputs", &Model::n_inputs)
      .def_property_readonly("n_outputs", &Model::n_outputs)
      .def_property_readonly("topology", &Model::topology)
      .def("predict", &Model::predict, py::arg("demand"), py::arg("noise_level") = py::none(),
           "Dispatch for raw demand columns [Pd; Qd] in p.u.");
}
