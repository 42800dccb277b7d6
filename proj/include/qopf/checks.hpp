#pragma once

// Randomised self-checks of the quantum engine, shared by `qopf qsim check`
// and the acceptance suite.

#include <cstdint>

#include <json.hpp>

#include "qopf/qsim.hpp"
#include "qopf/rng.hpp"

namespace qopf {

struct QsimCheckReport {
  double kraus_completeness = 0.0;   // max |sum K^dagger K - I| over damping rates
  double channel_trace = 0.0;        // max |tr rho - 1| after random channels
  double channel_hermitian = 0.0;    // max |rho - rho^dagger|
  double channel_min_eigenvalue = 1.0;
  double density_vs_statevector = 0.0;  // max |rho - psi psi^dagger| entry, noiseless
  double shift_vs_fd_noiseless = 0.0;   // max relative error
  double shift_vs_fd_noisy = 0.0;
  int channel_applications = 0;
  int circuits = 0;
};

/// Random 4-qubit circuit: rotation feature map plus a random ansatz block of
/// 6-10 gates repeated 1-3 times.
CircuitSpec random_circuit(Rng& rng, int n_qubits = 4);

/// Central-difference Jacobian of the <Z> vector in the features
/// (`features` true) or weights.
Eigen::MatrixXd finite_difference_jacobian(const CircuitSpec& spec, const Eigen::VectorXd& features,
                                           const Eigen::VectorXd& weights, const std::optional<NoiseSpec>& noise,
                                           bool wrt_features, double h = 1e-5);

/// `noisy_level` is the scalar noise level used for the noisy gradient check.
QsimCheckReport qsim_self_check(int circuits, int channel_applications, std::uint64_t seed,
                                double noisy_level = 0.05);

nlohmann::json to_json(const QsimCheckReport& r);

}  // namespace qopf
