#pragma once

// Exact small-register quantum simulation: statevector and density-matrix
// backends, the composite noise channels, and parameter-shift gradients.
// Qubit q is bit q of the basis-state index.

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace qopf {

using StateVector = Eigen::VectorXcd;
using DensityMatrix = Eigen::MatrixXcd;
using Mat2 = Eigen::Matrix2cd;

enum class GateKind { rx, ry, cnot };
enum class ThetaSource { fixed, feature, weight };

struct Gate {
  GateKind kind = GateKind::ry;
  int target = 0;
  int control = -1;  // cnot only
  double theta = 0.0;  // used when source == fixed
  ThetaSource source = ThetaSource::fixed;
  int index = 0;  // feature or weight slot

  bool is_rotation() const { return kind != GateKind::cnot; }
};

struct CircuitSpec {
  int n_qubits = 4;
  std::vector<Gate> feature_map;
  std::vector<Gate> ansatz;  // one block; weight slots local to the block
  int depth = 1;

  int block_weights() const;
  int n_weights() const { return block_weights() * depth; }
  /// Feature map followed by `depth` copies of the ansatz, with weight
  /// slots offset per copy.
  std::vector<Gate> compiled() const;
  /// Throws ValidationError on a malformed spec.
  void validate() const;
};

/// RY(x_q) feature map; ansatz block RY(w) RX(w) on every qubit followed by
/// the CNOT ring 0->1->...->n-1->0.
CircuitSpec default_circuit(int n_qubits = 4, int depth = 3);

struct NoiseSpec {
  double e_s = 0.0;  // single-qubit depolarizing after each rotation
  double e_t = 0.0;  // depolarizing after each CNOT
  double e_d = 0.0;  // amplitude damping after each rotation
  double e_m = 0.0;  // readout misclassification
  double e_c = 0.0;  // coherent X over-rotation (radians) on each rotation
  bool two_qubit_pauli = false;  // full 15-Pauli channel after CNOT

  /// e_s = e_d = e_m = e, e_t = 2e, e_c = e.
  static NoiseSpec from_level(double e);
  bool is_zero() const { return e_s == 0 && e_t == 0 && e_d == 0 && e_m == 0 && e_c == 0; }
  void validate() const;
};

// Single-qubit matrices.
Mat2 rx_matrix(double theta);
Mat2 ry_matrix(double theta);
Mat2 coherent_error_matrix(double e_c);
std::array<Mat2, 2> amplitude_damping_kraus(double e_d);

// Statevector primitives.
StateVector zero_state(int n_qubits);
void apply_1q(StateVector& psi, int q, const Mat2& u);
void apply_cnot(StateVector& psi, int control, int target);
double expectation_z(const StateVector& psi, int q);
double expectation_zz(const StateVector& psi, int q0, int q1);

// Density-matrix primitives.
DensityMatrix pure_density(const StateVector& psi);
/// rho <- K rho K^dagger on qubit q (K need not be unitary).
void conjugate_1q(DensityMatrix& rho, int q, const Mat2& k);
void apply_cnot(DensityMatrix& rho, int control, int target);
DensityMatrix depolarize(const DensityMatrix& rho, int q, double p);
DensityMatrix depolarize_two_qubit(const DensityMatrix& rho, int q0, int q1, double p);
DensityMatrix amplitude_damp(const DensityMatrix& rho, int q, double e_d);
double expectation_z(const DensityMatrix& rho, int q);

struct DensityCheck {
  double trace_error = 0.0;      // |tr rho - 1|
  double hermitian_error = 0.0;  // max |rho - rho^dagger|
  double min_eigenvalue = 0.0;
};
DensityCheck check_density(const DensityMatrix& rho);

/// Final pure state of the circuit on |0...0>.
StateVector final_state(const CircuitSpec& spec, const Eigen::VectorXd& features,
                        const Eigen::VectorXd& weights);
/// Final mixed state under the noise schedule (readout error excluded).
DensityMatrix final_density(const CircuitSpec& spec, const Eigen::VectorXd& features,
                            const Eigen::VectorXd& weights, const NoiseSpec& noise);

/// <Z_q> for every qubit.
Eigen::VectorXd run_statevector(const CircuitSpec& spec, const Eigen::VectorXd& features,
                                const Eigen::VectorXd& weights);
/// <Z_q> under noise, readout error applied to each bit marginal.
Eigen::VectorXd run_density(const CircuitSpec& spec, const Eigen::VectorXd& features,
                            const Eigen::VectorXd& weights, const NoiseSpec& noise);

struct QuantumGradient {
  Eigen::VectorXd expectations;
  Eigen::MatrixXd d_features;  // n_qubits x n_features
  Eigen::MatrixXd d_weights;   // n_qubits x n_weights
};

/// Forward value plus parameter-shift Jacobians. Uses the density backend
/// when `noise` is given, the statevector backend otherwise.
QuantumGradient param_shift_grad(const CircuitSpec& spec, const Eigen::VectorXd& features,
                                 const Eigen::VectorXd& weights,
                                 const std::optional<NoiseSpec>& noise = std::nullopt);

nlohmann::json to_json(const CircuitSpec& spec);
CircuitSpec circuit_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NoiseSpec& n);
NoiseSpec noise_from_json(const nlohmann::json& j);

}  // namespace qopf
