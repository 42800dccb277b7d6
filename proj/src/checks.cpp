#include "qopf/checks.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace qopf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Mat2 random_unitary(Rng& rng) {
  return ry_matrix(rng.uniform(-M_PI, M_PI)) * rx_matrix(rng.uniform(-M_PI, M_PI)) *
         ry_matrix(rng.uniform(-M_PI, M_PI));
}

DensityMatrix random_density(Rng& rng, int n_qubits) {
  const int dim = 1 << n_qubits;
  Eigen::MatrixXcd a(dim, dim);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = {rng.normal(), rng.normal()};
  DensityMatrix rho = a * a.adjoint();
  return rho / rho.trace().real();
}

double rel_err(const MatrixXd& a, const MatrixXd& f) {
  const double scale = std::max(f.norm(), 1e-8);
  return (a - f).norm() / scale;
}

VectorXd random_vector(Rng& rng, int n) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.uniform(-M_PI, M_PI);
  return v;
}

}  // namespace

CircuitSpec random_circuit(Rng& rng, int n_qubits) {
  CircuitSpec spec;
  spec.n_qubits = n_qubits;
  for (int q = 0; q < n_qubits; ++q) {
    Gate g;
    g.kind = rng.uniform() < 0.5 ? GateKind::ry : GateKind::rx;
    g.target = q;
    g.source = ThetaSource::feature;
    g.index = q;
    spec.feature_map.push_back(g);
  }
  const int n_gates = 6 + static_cast<int>(rng.below(5));
  int slot = 0;
  for (int k = 0; k < n_gates; ++k) {
    Gate g;
    const double u = rng.uniform();
    if (u < 0.3 && n_qubits > 1) {
      g.kind = GateKind::cnot;
      g.control = static_cast<int>(rng.below(n_qubits));
      g.target = (g.control + 1 + static_cast<int>(rng.below(n_qubits - 1))) % n_qubits;
    } else {
      g.kind = u < 0.65 ? GateKind::rx : GateKind::ry;
      g.target = static_cast<int>(rng.below(n_qubits));
      if (rng.uniform() < 0.2) {
        g.source = ThetaSource::fixed;
        g.theta = rng.uniform(-M_PI, M_PI);
      } else {
        g.source = ThetaSource::weight;
        g.index = slot++;
      }
    }
    spec.ansatz.push_back(g);
  }
  spec.depth = 1 + static_cast<int>(rng.below(3));
  spec.validate();
  return spec;
}

MatrixXd finite_difference_jacobian(const CircuitSpec& spec, const VectorXd& features, const VectorXd& weights,
                                    const std::optional<NoiseSpec>& noise, bool wrt_features, double h) {
  auto eval = [&](const VectorXd& f, const VectorXd& w) {
    return noise ? run_density(spec, f, w, *noise) : run_statevector(spec, f, w);
  };
  const VectorXd& base = wrt_features ? features : weights;
  MatrixXd jac(spec.n_qubits, base.size());
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    VectorXd p = base, m = base;
    p(i) += h;
    m(i) -= h;
    const VectorXd yp = wrt_features ? eval(p, weights) : eval(features, p);
    const VectorXd ym = wrt_features ? eval(m, weights) : eval(features, m);
    jac.col(i) = (yp - ym) / (2.0 * h);
  }
  return jac;
}

QsimCheckReport qsim_self_check(int circuits, int channel_applications, std::uint64_t seed, double noisy_level) {
  QsimCheckReport r;
  Rng rng(seed);

  for (double e : {0.0, 1e-3, 0.01, 0.05, 0.1, 0.3, 0.5, 0.9, 1.0}) {
    const auto k = amplitude_damping_kraus(e);
    const Mat2 sum = k[0].adjoint() * k[0] + k[1].adjoint() * k[1];
    r.kraus_completeness = std::max(r.kraus_completeness, (sum - Mat2::Identity()).cwiseAbs().maxCoeff());
  }

  const int nq = 4;
  DensityMatrix rho = random_density(rng, nq);
  for (int i = 0; i < channel_applications; ++i) {
    const int q = static_cast<int>(rng.below(nq));
    const int q2 = (q + 1 + static_cast<int>(rng.below(nq - 1))) % nq;
    switch (rng.below(5)) {
      case 0: rho = depolarize(rho, q, rng.uniform()); break;
      case 1: rho = depolarize_two_qubit(rho, q, q2, rng.uniform()); break;
      case 2: rho = amplitude_damp(rho, q, rng.uniform()); break;
      case 3: conjugate_1q(rho, q, random_unitary(rng)); break;
      default: apply_cnot(rho, q, q2); break;
    }
    const DensityCheck c = check_density(rho);
    r.channel_trace = std::max(r.channel_trace, c.trace_error);
    r.channel_hermitian = std::max(r.channel_hermitian, c.hermitian_error);
    r.channel_min_eigenvalue = std::min(r.channel_min_eigenvalue, c.min_eigenvalue);
    // Fresh state now and then so damping does not drive everything to |0>.
    if (i % 50 == 49) rho = random_density(rng, nq);
  }
  r.channel_applications = channel_applications;

  const NoiseSpec noisy = NoiseSpec::from_level(noisy_level);
  for (int c = 0; c < circuits; ++c) {
    const CircuitSpec spec = random_circuit(rng, nq);
    const VectorXd f = random_vector(rng, nq);
    const VectorXd w = random_vector(rng, spec.n_weights());

    const StateVector psi = final_state(spec, f, w);
    const DensityMatrix dens = final_density(spec, f, w, NoiseSpec{});
    r.density_vs_statevector =
        std::max(r.density_vs_statevector, (dens - pure_density(psi)).cwiseAbs().maxCoeff());
    r.density_vs_statevector = std::max(
        r.density_vs_statevector,
        (run_density(spec, f, w, NoiseSpec{}) - run_statevector(spec, f, w)).cwiseAbs().maxCoeff());

    for (bool with_noise : {false, true}) {
      const std::optional<NoiseSpec> n = with_noise ? std::optional<NoiseSpec>(noisy) : std::nullopt;
      const QuantumGradient g = param_shift_grad(spec, f, w, n);
      const double e = std::max(rel_err(g.d_features, finite_difference_jacobian(spec, f, w, n, true)),
                                rel_err(g.d_weights, finite_difference_jacobian(spec, f, w, n, false)));
      double& slot = with_noise ? r.shift_vs_fd_noisy : r.shift_vs_fd_noiseless;
      slot = std::max(slot, e);
    }
  }
  r.circuits = circuits;
  return r;
}

nlohmann::json to_json(const QsimCheckReport& r) {
  return {{"kraus_completeness", r.kraus_completeness},
          {"channel_applications", r.channel_applications},
          {"channel_trace_error", r.channel_trace},
          {"channel_hermitian_error", r.channel_hermitian},
          {"channel_min_eigenvalue", r.channel_min_eigenvalue},
          {"circuits", r.circuits},
          {"density_vs_statevector", r.density_vs_statevector},
          {"shift_vs_fd_noiseless", r.shift_vs_fd_noiseless},
          {"shift_vs_fd_noisy", r.shift_vs_fd_noisy}};
}

}  // namespace qopf
