#pragma once

// Hybrid encoder / quantum layer / decoder network with plain, sequential
// residual and nested residual wiring. Batches are column-major: one sample
// per column.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qopf/compact.hpp"
#include "qopf/dataset.hpp"
#include "qopf/qsim.hpp"

namespace qopf {

enum class Activation { relu, tanh_pi, tanh, identity };
enum class Topology { plain, sequential_residual, nested_residual };
enum class LatentKind { quantum, dense };
enum class Mode { train, eval };

std::string to_string(Activation a);
std::string to_string(Topology t);
std::string to_string(LatentKind k);
Topology topology_from_string(const std::string& s);

/// Index map of the output vector: [P_g, Q_g, |V|, angle, rho, mu].
struct OutSpec {
  int n_g = 0;
  int n_b = 0;
  int n_eq = 0;
  int n_ineq = 0;

  static OutSpec for_model(const CompactModel& m) { return {m.n_g, m.n_b, m.n_eq(), m.n_ineq()}; }
  int size() const { return 2 * n_g + 2 * n_b + n_eq + n_ineq; }
  int off_g() const { return 0; }
  int off_vmag() const { return 2 * n_g; }
  int off_vang() const { return 2 * n_g + n_b; }
  int off_rho() const { return 2 * n_g + 2 * n_b; }
  int off_mu() const { return 2 * n_g + 2 * n_b + n_eq; }
};

/// One output vector split into its named parts.
struct SplitOutput {
  Eigen::VectorXd g, vmag, vang, rho, mu;
};
SplitOutput unpack(const OutSpec& spec, const Eigen::VectorXd& y);
Eigen::VectorXd pack(const OutSpec& spec, const SplitOutput& s);

struct BatchNorm {
  Eigen::VectorXd gamma, beta, running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

struct DenseLayer {
  Eigen::MatrixXd w;
  Eigen::VectorXd b;
  Activation activation = Activation::identity;
  std::optional<BatchNorm> bn;

  int in() const { return static_cast<int>(w.cols()); }
  int out() const { return static_cast<int>(w.rows()); }
};

/// Residual shortcut: identity when widths agree, learned projection
/// (no bias) otherwise.
struct Shortcut {
  bool active = false;
  bool identity = false;
  Eigen::MatrixXd p;
};

struct ModelConfig {
  int n_in = 0;
  std::vector<int> encoder{64, 16, 4};  // last entry must equal qubits
  std::vector<int> decoder{64, 128};    // hidden widths; output layer appended
  OutSpec out;
  Topology topology = Topology::plain;
  LatentKind latent = LatentKind::quantum;
  int qubits = 4;
  int q_depth = 3;
  bool batchnorm = false;
  bool softplus_mu = true;
  /// Multiplies the initial output-layer weights and the projection feeding
  /// it, so a fresh model predicts close to its output bias.
  double head_init_scale = 0.01;

  int n_qubits() const { return qubits; }
  /// Throws ValidationError on inconsistent widths.
  void validate() const;
};

struct HybridModel {
  ModelConfig config;
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> decoder;
  std::vector<Shortcut> encoder_skip;  // sequential shortcuts per encoder layer
  std::vector<Shortcut> decoder_skip;  // sequential or nested shortcuts per decoder layer
  /// Sequential shortcut spanning the angle layer and the latent layer: from
  /// the input of the last encoder layer to the latent output.
  Shortcut latent_skip;
  CircuitSpec circuit;
  Eigen::VectorXd q_weights;
  DenseLayer latent_dense;  // used when config.latent == dense
  NormStats norm;           // input normalisation applied by predict_solution
  double dual_scale = 1.0;  // rho and mu outputs are in units of this
  std::uint64_t version = 0;

  /// Visits every trainable parameter block in a fixed order.
  template <class F>
  void for_each_param(F&& f);
  int n_params();
  /// Same structure with every parameter set to zero.
  HybridModel zeros_like() const;
};

/// He-uniform for ReLU layers, Glorot-uniform otherwise, quantum weights
/// uniform in [-pi, pi]. Deterministic per seed.
HybridModel init_model(const ModelConfig& cfg, std::uint64_t seed);

struct ForwardCache {
  std::uint64_t version = 0;
  Mode mode = Mode::eval;
  Eigen::MatrixXd x;
  std::vector<Eigen::MatrixXd> enc_in, enc_pre, enc_norm;  // enc_norm: BN-normalised r
  std::vector<Eigen::VectorXd> enc_mean, enc_istd;
  Eigen::MatrixXd angles, latent_out, latent_pre;
  std::vector<QuantumGradient> qgrads;
  std::vector<Eigen::MatrixXd> dec_in, dec_pre, dec_norm;
  std::vector<Eigen::VectorXd> dec_mean, dec_istd;
  Eigen::MatrixXd head_pre;  // final decoder output before the mu softplus
};

struct ForwardResult {
  Eigen::MatrixXd y;
  ForwardCache cache;
};

/// `noise` selects the density backend for the quantum layer. In train mode
/// the quantum Jacobians needed by backward are computed and batchnorm uses
/// (and updates) batch statistics.
ForwardResult forward(HybridModel& model, const Eigen::MatrixXd& x, Mode mode,
                      const std::optional<NoiseSpec>& noise = std::nullopt);
/// Eval-mode forward that leaves the model untouched.
Eigen::MatrixXd predict(const HybridModel& model, const Eigen::MatrixXd& x,
                        const std::optional<NoiseSpec>& noise = std::nullopt);

struct BackwardResult {
  HybridModel grad;
  Eigen::MatrixXd dx;
};

/// Reverse pass for a train-mode cache. Throws if the model changed since
/// the forward pass.
BackwardResult backward(const HybridModel& model, const ForwardCache& cache, const Eigen::MatrixXd& dy);

/// Normalises raw demand, runs eval-mode forward and maps the output to a
/// candidate solution in physical units (duals multiplied by dual_scale).
CandidateSolution predict_solution(const HybridModel& model, const Eigen::VectorXd& d_raw,
                                   const std::optional<NoiseSpec>& noise = std::nullopt);

/// Rectangular voltage from polar parts.
Eigen::VectorXd polar_to_rect(const Eigen::VectorXd& vmag, const Eigen::VectorXd& vang);

nlohmann::json to_json(const HybridModel& m);
HybridModel model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

template <class F>
void HybridModel::for_each_param(F&& f) {
  auto dense = [&](DenseLayer& l) {
    f(l.w.data(), l.w.size());
    f(l.b.data(), l.b.size());
    if (l.bn) {
      f(l.bn->gamma.data(), l.bn->gamma.size());
      f(l.bn->beta.data(), l.bn->beta.size());
    }
  };
  for (auto& l : encoder) dense(l);
  for (auto& s : encoder_skip) {
    if (s.active && !s.identity) f(s.p.data(), s.p.size());
  }
  if (latent_skip.active && !latent_skip.identity) f(latent_skip.p.data(), latent_skip.p.size());
  if (config.latent == LatentKind::quantum) {
    f(q_weights.data(), q_weights.size());
  } else {
    dense(latent_dense);
  }
  for (auto& l : decoder) dense(l);
  for (auto& s : decoder_skip) {
    if (s.active && !s.identity) f(s.p.data(), s.p.size());
  }
}

}  // namespace qopf
