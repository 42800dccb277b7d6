#include "qopf/qsim.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "qopf/errors.hpp"

namespace qopf {

using cd = std::complex<double>;
using Eigen::VectorXd;

namespace {

constexpr double kHalfPi = std::numbers::pi / 2;

const Mat2& pauli(int k) {
  static const std::array<Mat2, 4> p = [] {
    std::array<Mat2, 4> m;
    m[0] << 1, 0, 0, 1;
    m[1] << 0, 1, 1, 0;
    m[2] << 0, cd(0, -1), cd(0, 1), 0;
    m[3] << 1, 0, 0, -1;
    return m;
  }();
  return p[k];
}

void check_qubit(int q, int n) {
  if (q < 0 || q >= n) throw DimensionError("qubit index out of range");
}

int qubits_of(Eigen::Index dim) {
  int n = 0;
  while ((Eigen::Index{1} << n) < dim) ++n;
  if ((Eigen::Index{1} << n) != dim) throw DimensionError("state dimension is not a power of two");
  return n;
}

double gate_angle(const Gate& g, const VectorXd& features, const VectorXd& weights) {
  switch (g.source) {
    case ThetaSource::feature: return features(g.index);
    case ThetaSource::weight: return weights(g.index);
    case ThetaSource::fixed: break;
  }
  return g.theta;
}

Mat2 rotation(GateKind k, double theta) { return k == GateKind::rx ? rx_matrix(theta) : ry_matrix(theta); }

void check_inputs(const CircuitSpec& spec, const VectorXd& features, const VectorXd& weights) {
  int n_feat = 0;
  for (const auto& g : spec.feature_map) {
    if (g.source == ThetaSource::feature) n_feat = std::max(n_feat, g.index + 1);
  }
  if (features.size() != n_feat) {
    throw DimensionError("expected " + std::to_string(n_feat) + " feature angles, got " +
                         std::to_string(features.size()));
  }
  if (weights.size() != spec.n_weights()) {
    throw DimensionError("expected " + std::to_string(spec.n_weights()) + " weights, got " +
                         std::to_string(weights.size()));
  }
}

// Backends share one driver: a state type plus how to apply a gate (with its
// noise) and how to read out <Z>.
struct PureBackend {
  using State = StateVector;
  int n;
  State initial() const { return zero_state(n); }
  void gate(State& s, const Gate& g, double theta) const {
    if (g.is_rotation()) {
      apply_1q(s, g.target, rotation(g.kind, theta));
    } else {
      apply_cnot(s, g.control, g.target);
    }
  }
  VectorXd measure(const State& s) const {
    VectorXd z(n);
    for (int q = 0; q < n; ++q) z(q) = expectation_z(s, q);
    return z;
  }
};

struct MixedBackend {
  using State = DensityMatrix;
  int n;
  NoiseSpec noise;
  Mat2 err = coherent_error_matrix(noise.e_c);
  std::array<Mat2, 2> damp = amplitude_damping_kraus(noise.e_d);

  State initial() const { return pure_density(zero_state(n)); }
  void gate(State& s, const Gate& g, double theta) const {
    if (g.is_rotation()) {
      const Mat2 u = noise.e_c != 0.0 ? Mat2(err * rotation(g.kind, theta)) : rotation(g.kind, theta);
      conjugate_1q(s, g.target, u);
      if (noise.e_d > 0.0) {
        DensityMatrix a = s;
        conjugate_1q(s, g.target, damp[0]);
        conjugate_1q(a, g.target, damp[1]);
        s += a;
      }
      if (noise.e_s > 0.0) s = depolarize(s, g.target, noise.e_s);
    } else {
      apply_cnot(s, g.control, g.target);
      if (noise.e_t > 0.0) {
        if (noise.two_qubit_pauli) {
          s = depolarize_two_qubit(s, g.control, g.target, noise.e_t);
        } else {
          s = depolarize(s, g.control, noise.e_t);
          s = depolarize(s, g.target, noise.e_t);
        }
      }
    }
#ifndef NDEBUG
    const auto chk = check_density(s);
    if (chk.trace_error > 1e-10 || chk.hermitian_error > 1e-10) {
      throw NumericalError("density matrix lost trace or hermiticity");
    }
#endif
  }
  VectorXd measure(const State& s) const {
    VectorXd z(n);
    for (int q = 0; q < n; ++q) z(q) = (1.0 - 2.0 * noise.e_m) * expectation_z(s, q);
    return z;
  }
};

template <class Backend>
typename Backend::State run_gates(const Backend& be, const std::vector<Gate>& gates,
                                  const VectorXd& features, const VectorXd& weights) {
  auto s = be.initial();
  for (const auto& g : gates) be.gate(s, g, gate_angle(g, features, weights));
  return s;
}

template <class Backend>
QuantumGradient shift_gradient(const Backend& be, const CircuitSpec& spec, const VectorXd& features,
                               const VectorXd& weights) {
  const auto gates = spec.compiled();
  const int ng = static_cast<int>(gates.size());
  std::vector<typename Backend::State> prefix;
  prefix.reserve(ng + 1);
  prefix.push_back(be.initial());
  std::vector<double> angles(ng);
  for (int k = 0; k < ng; ++k) {
    angles[k] = gate_angle(gates[k], features, weights);
    prefix.push_back(prefix.back());
    be.gate(prefix.back(), gates[k], angles[k]);
  }

  QuantumGradient out;
  out.expectations = be.measure(prefix.back());
  out.d_features = Eigen::MatrixXd::Zero(be.n, features.size());
  out.d_weights = Eigen::MatrixXd::Zero(be.n, weights.size());
  for (int k = 0; k < ng; ++k) {
    const Gate& g = gates[k];
    if (!g.is_rotation() || g.source == ThetaSource::fixed) continue;
    VectorXd diff = VectorXd::Zero(be.n);
    for (int sign : {+1, -1}) {
      auto s = prefix[k];
      be.gate(s, g, angles[k] + sign * kHalfPi);
      for (int j = k + 1; j < ng; ++j) be.gate(s, gates[j], angles[j]);
      diff += sign * be.measure(s);
    }
    auto& target = g.source == ThetaSource::feature ? out.d_features : out.d_weights;
    target.col(g.index) += 0.5 * diff;
  }
  return out;
}

}  // namespace

int CircuitSpec::block_weights() const {
  int w = 0;
  for (const auto& g : ansatz) {
    if (g.source == ThetaSource::weight) w = std::max(w, g.index + 1);
  }
  return w;
}

std::vector<Gate> CircuitSpec::compiled() const {
  std::vector<Gate> out = feature_map;
  const int bw = block_weights();
  for (int r = 0; r < depth; ++r) {
    for (Gate g : ansatz) {
      if (g.source == ThetaSource::weight) g.index += r * bw;
      out.push_back(g);
    }
  }
  return out;
}

void CircuitSpec::validate() const {
  if (n_qubits < 1 || n_qubits > 8) throw ValidationError("circuit: n_qubits must be in [1, 8]");
  if (depth < 0) throw ValidationError("circuit: depth must be >= 0");
  auto check_gate = [&](const Gate& g) {
    if (g.target < 0 || g.target >= n_qubits) throw ValidationError("circuit: target out of range");
    if (g.kind == GateKind::cnot) {
      if (g.control < 0 || g.control >= n_qubits) throw ValidationError("circuit: control out of range");
      if (g.control == g.target) throw ValidationError("circuit: control equals target");
    } else if (!std::isfinite(g.theta)) {
      throw ValidationError("circuit: non-finite angle");
    }
    if (g.index < 0) throw ValidationError("circuit: negative parameter slot");
  };
  std::vector<bool> feat_seen;
  for (const auto& g : feature_map) {
    check_gate(g);
    if (g.source == ThetaSource::weight) throw ValidationError("circuit: weight slot in feature map");
    if (g.source == ThetaSource::feature) {
      if (static_cast<int>(feat_seen.size()) <= g.index) feat_seen.resize(g.index + 1, false);
      feat_seen[g.index] = true;
    }
  }
  if (static_cast<int>(feat_seen.size()) != n_qubits ||
      std::find(feat_seen.begin(), feat_seen.end(), false) != feat_seen.end()) {
    throw ValidationError("circuit: feature map must use slots 0..n_qubits-1");
  }
  std::vector<bool> w_seen(block_weights(), false);
  for (const auto& g : ansatz) {
    check_gate(g);
    if (g.source == ThetaSource::feature) throw ValidationError("circuit: feature slot in ansatz");
    if (g.source == ThetaSource::weight) w_seen[g.index] = true;
  }
  if (std::find(w_seen.begin(), w_seen.end(), false) != w_seen.end()) {
    throw ValidationError("circuit: weight slots must be contiguous from 0");
  }
}

CircuitSpec default_circuit(int n_qubits, int depth) {
  CircuitSpec s;
  s.n_qubits = n_qubits;
  s.depth = depth;
  for (int q = 0; q < n_qubits; ++q) {
    s.feature_map.push_back({GateKind::ry, q, -1, 0.0, ThetaSource::feature, q});
  }
  int w = 0;
  for (int q = 0; q < n_qubits; ++q) {
    s.ansatz.push_back({GateKind::ry, q, -1, 0.0, ThetaSource::weight, w++});
    s.ansatz.push_back({GateKind::rx, q, -1, 0.0, ThetaSource::weight, w++});
  }
  if (n_qubits > 1) {
    for (int q = 0; q < n_qubits; ++q) {
      const int t = (q + 1) % n_qubits;
      if (n_qubits == 2 && q == 1) break;  // ring of two is a single pair
      s.ansatz.push_back({GateKind::cnot, t, q, 0.0, ThetaSource::fixed, 0});
    }
  }
  s.validate();
  return s;
}

NoiseSpec NoiseSpec::from_level(double e) {
  NoiseSpec n;
  n.e_s = n.e_d = n.e_m = e;
  n.e_t = 2 * e;
  n.e_c = e;
  return n;
}

void NoiseSpec::validate() const {
  for (double p : {e_s, e_t, e_d, e_m}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("noise probabilities must lie in [0, 1]");
  }
  if (!(std::abs(e_c) <= std::numbers::pi)) throw ValidationError("coherent error must lie in [-pi, pi]");
}

Mat2 rx_matrix(double theta) {
  const double c = std::cos(theta / 2), s = std::sin(theta / 2);
  Mat2 m;
  m << c, cd(0, -s), cd(0, -s), c;
  return m;
}

Mat2 ry_matrix(double theta) {
  const double c = std::cos(theta / 2), s = std::sin(theta / 2);
  Mat2 m;
  m << c, -s, s, c;
  return m;
}

Mat2 coherent_error_matrix(double e_c) { return rx_matrix(e_c); }

std::array<Mat2, 2> amplitude_damping_kraus(double e_d) {
  std::array<Mat2, 2> k;
  k[0] << 1, 0, 0, std::sqrt(1 - e_d);
  k[1] << 0, std::sqrt(e_d), 0, 0;
  return k;
}

StateVector zero_state(int n_qubits) {
  StateVector s = StateVector::Zero(Eigen::Index{1} << n_qubits);
  s(0) = 1.0;
  return s;
}

void apply_1q(StateVector& psi, int q, const Mat2& u) {
  const Eigen::Index dim = psi.size();
  check_qubit(q, qubits_of(dim));
  const Eigen::Index bit = Eigen::Index{1} << q;
  const cd u00 = u(0, 0), u01 = u(0, 1), u10 = u(1, 0), u11 = u(1, 1);
  cd* a = psi.data();
  for (Eigen::Index i = 0; i < dim; ++i) {
    if (i & bit) continue;
    const cd x0 = a[i], x1 = a[i | bit];
    a[i] = u00 * x0 + u01 * x1;
    a[i | bit] = u10 * x0 + u11 * x1;
  }
}

void apply_cnot(StateVector& psi, int control, int target) {
  const int n = qubits_of(psi.size());
  check_qubit(control, n);
  check_qubit(target, n);
  const Eigen::Index cb = Eigen::Index{1} << control, tb = Eigen::Index{1} << target;
  for (Eigen::Index i = 0; i < psi.size(); ++i) {
    if ((i & cb) && !(i & tb)) std::swap(psi(i), psi(i | tb));
  }
}

double expectation_z(const StateVector& psi, int q) {
  check_qubit(q, qubits_of(psi.size()));
  const Eigen::Index bit = Eigen::Index{1} << q;
  double z = 0.0;
  for (Eigen::Index i = 0; i < psi.size(); ++i) z += (i & bit ? -1.0 : 1.0) * std::norm(psi(i));
  return z;
}

double expectation_zz(const StateVector& psi, int q0, int q1) {
  const int n = qubits_of(psi.size());
  check_qubit(q0, n);
  check_qubit(q1, n);
  double z = 0.0;
  for (Eigen::Index i = 0; i < psi.size(); ++i) {
    const bool parity = ((i >> q0) ^ (i >> q1)) & 1;
    z += (parity ? -1.0 : 1.0) * std::norm(psi(i));
  }
  return z;
}

DensityMatrix pure_density(const StateVector& psi) { return psi * psi.adjoint(); }

void conjugate_1q(DensityMatrix& rho, int q, const Mat2& k) {
  const Eigen::Index dim = rho.rows();
  check_qubit(q, qubits_of(dim));
  const Eigen::Index bit = Eigen::Index{1} << q;
  const cd k00 = k(0, 0), k01 = k(0, 1), k10 = k(1, 0), k11 = k(1, 1);
  // rho <- K rho: mix row pairs.
  for (Eigen::Index j = 0; j < dim; ++j) {
    cd* col = rho.col(j).data();
    for (Eigen::Index i = 0; i < dim; ++i) {
      if (i & bit) continue;
      const cd x0 = col[i], x1 = col[i | bit];
      col[i] = k00 * x0 + k01 * x1;
      col[i | bit] = k10 * x0 + k11 * x1;
    }
  }
  // rho <- rho K^dagger: mix column pairs with conj(K).
  const cd c00 = std::conj(k00), c01 = std::conj(k01), c10 = std::conj(k10), c11 = std::conj(k11);
  for (Eigen::Index j = 0; j < dim; ++j) {
    if (j & bit) continue;
    cd* a = rho.col(j).data();
    cd* b = rho.col(j | bit).data();
    for (Eigen::Index i = 0; i < dim; ++i) {
      const cd x0 = a[i], x1 = b[i];
      a[i] = x0 * c00 + x1 * c01;
      b[i] = x0 * c10 + x1 * c11;
    }
  }
}

void apply_cnot(DensityMatrix& rho, int control, int target) {
  const Eigen::Index dim = rho.rows();
  const int n = qubits_of(dim);
  check_qubit(control, n);
  check_qubit(target, n);
  const Eigen::Index cb = Eigen::Index{1} << control, tb = Eigen::Index{1} << target;
  for (Eigen::Index i = 0; i < dim; ++i) {
    if ((i & cb) && !(i & tb)) rho.row(i).swap(rho.row(i | tb));
  }
  for (Eigen::Index j = 0; j < dim; ++j) {
    if ((j & cb) && !(j & tb)) rho.col(j).swap(rho.col(j | tb));
  }
}

DensityMatrix depolarize(const DensityMatrix& rho, int q, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("depolarizing probability must lie in [0, 1]");
  if (p == 0.0) return rho;
  DensityMatrix out = (1.0 - p) * rho;
  for (int k = 1; k <= 3; ++k) {
    DensityMatrix t = rho;
    conjugate_1q(t, q, pauli(k));
    out += (p / 3.0) * t;
  }
  return out;
}

DensityMatrix depolarize_two_qubit(const DensityMatrix& rho, int q0, int q1, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("depolarizing probability must lie in [0, 1]");
  if (p == 0.0) return rho;
  DensityMatrix out = (1.0 - p) * rho;
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      if (a == 0 && b == 0) continue;
      DensityMatrix t = rho;
      if (a) conjugate_1q(t, q0, pauli(a));
      if (b) conjugate_1q(t, q1, pauli(b));
      out += (p / 15.0) * t;
    }
  }
  return out;
}

DensityMatrix amplitude_damp(const DensityMatrix& rho, int q, double e_d) {
  if (!(e_d >= 0.0 && e_d <= 1.0)) throw ValidationError("damping probability must lie in [0, 1]");
  const auto k = amplitude_damping_kraus(e_d);
  DensityMatrix a = rho, b = rho;
  conjugate_1q(a, q, k[0]);
  conjugate_1q(b, q, k[1]);
  return a + b;
}

double expectation_z(const DensityMatrix& rho, int q) {
  check_qubit(q, qubits_of(rho.rows()));
  const Eigen::Index bit = Eigen::Index{1} << q;
  double z = 0.0;
  for (Eigen::Index i = 0; i < rho.rows(); ++i) z += (i & bit ? -1.0 : 1.0) * rho(i, i).real();
  return z;
}

DensityCheck check_density(const DensityMatrix& rho) {
  DensityCheck c;
  c.trace_error = std::abs(rho.trace() - cd(1.0, 0.0));
  c.hermitian_error = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
  const Eigen::MatrixXcd h = 0.5 * (rho + rho.adjoint());
  c.min_eigenvalue = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd>(h, Eigen::EigenvaluesOnly)
                         .eigenvalues()
                         .minCoeff();
  return c;
}

StateVector final_state(const CircuitSpec& spec, const VectorXd& features, const VectorXd& weights) {
  check_inputs(spec, features, weights);
  return run_gates(PureBackend{spec.n_qubits}, spec.compiled(), features, weights);
}

DensityMatrix final_density(const CircuitSpec& spec, const VectorXd& features, const VectorXd& weights,
                            const NoiseSpec& noise) {
  check_inputs(spec, features, weights);
  noise.validate();
  return run_gates(MixedBackend{spec.n_qubits, noise}, spec.compiled(), features, weights);
}

VectorXd run_statevector(const CircuitSpec& spec, const VectorXd& features, const VectorXd& weights) {
  return PureBackend{spec.n_qubits}.measure(final_state(spec, features, weights));
}

VectorXd run_density(const CircuitSpec& spec, const VectorXd& features, const VectorXd& weights,
                     const NoiseSpec& noise) {
  const DensityMatrix rho = final_density(spec, features, weights, noise);
  const auto chk = check_density(rho);
  if (chk.trace_error > 1e-10 || chk.hermitian_error > 1e-10 || chk.min_eigenvalue < -1e-10) {
    throw NumericalError("density matrix invariant violated");
  }
  return MixedBackend{spec.n_qubits, noise}.measure(rho);
}

QuantumGradient param_shift_grad(const CircuitSpec& spec, const VectorXd& features,
                                 const VectorXd& weights, const std::optional<NoiseSpec>& noise) {
  check_inputs(spec, features, weights);
  if (noise) {
    noise->validate();
    return shift_gradient(MixedBackend{spec.n_qubits, *noise}, spec, features, weights);
  }
  return shift_gradient(PureBackend{spec.n_qubits}, spec, features, weights);
}

namespace {

std::string kind_name(GateKind k) {
  switch (k) {
    case GateKind::rx: return "rx";
    case GateKind::ry: return "ry";
    case GateKind::cnot: return "cnot";
  }
  return "?";
}

std::string source_name(ThetaSource s) {
  switch (s) {
    case ThetaSource::fixed: return "fixed";
    case ThetaSource::feature: return "feature";
    case ThetaSource::weight: return "weight";
  }
  return "?";
}

nlohmann::json gate_json(const Gate& g) {
  nlohmann::json j{{"kind", kind_name(g.kind)}, {"target", g.target}};
  if (g.kind == GateKind::cnot) {
    j["control"] = g.control;
  } else {
    j["source"] = source_name(g.source);
    if (g.source == ThetaSource::fixed) {
      j["theta"] = g.theta;
    } else {
      j["index"] = g.index;
    }
  }
  return j;
}

Gate gate_from(const nlohmann::json& j) {
  Gate g;
  const std::string kind = j.at("kind");
  if (kind == "rx") g.kind = GateKind::rx;
  else if (kind == "ry") g.kind = GateKind::ry;
  else if (kind == "cnot") g.kind = GateKind::cnot;
  else throw ValidationError("unsupported gate kind '" + kind + "'");
  g.target = j.at("target");
  if (g.kind == GateKind::cnot) {
    g.control = j.at("control");
    return g;
  }
  const std::string src = j.value("source", "fixed");
  if (src == "feature") g.source = ThetaSource::feature;
  else if (src == "weight") g.source = ThetaSource::weight;
  else if (src == "fixed") g.source = ThetaSource::fixed;
  else throw ValidationError("unknown angle source '" + src + "'");
  g.theta = j.value("theta", 0.0);
  g.index = j.value("index", 0);
  return g;
}

}  // namespace

nlohmann::json to_json(const CircuitSpec& spec) {
  nlohmann::json fm = nlohmann::json::array(), an = nlohmann::json::array();
  for (const auto& g : spec.feature_map) fm.push_back(gate_json(g));
  for (const auto& g : spec.ansatz) an.push_back(gate_json(g));
  return {{"n_qubits", spec.n_qubits}, {"depth", spec.depth}, {"feature_map", fm}, {"ansatz", an}};
}

CircuitSpec circuit_from_json(const nlohmann::json& j) {
  CircuitSpec s;
  s.n_qubits = j.at("n_qubits");
  s.depth = j.at("depth");
  for (const auto& g : j.at("feature_map")) s.feature_map.push_back(gate_from(g));
  for (const auto& g : j.at("ansatz")) s.ansatz.push_back(gate_from(g));
  s.validate();
  return s;
}

nlohmann::json to_json(const NoiseSpec& n) {
  return {{"e_s", n.e_s}, {"e_t", n.e_t}, {"e_d", n.e_d},
          {"e_m", n.e_m}, {"e_c", n.e_c}, {"two_qubit_pauli", n.two_qubit_pauli}};
}

NoiseSpec noise_from_json(const nlohmann::json& j) {
  NoiseSpec n;
  n.e_s = j.value("e_s", 0.0);
  n.e_t = j.value("e_t", 0.0);
  n.e_d = j.value("e_d", 0.0);
  n.e_m = j.value("e_m", 0.0);
  n.e_c = j.value("e_c", 0.0);
  n.two_qubit_pauli = j.value("two_qubit_pauli", false);
  n.validate();
  return n;
}

}  // namespace qopf
