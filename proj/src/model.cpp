#include "qopf/model.hpp"

#include <cmath>
#include <numbers>

#include "qopf/errors.hpp"
#include "qopf/rng.hpp"

namespace qopf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kPi = std::numbers::pi;

MatrixXd activate(Activation a, const MatrixXd& u) {
  switch (a) {
    case Activation::relu: return u.cwiseMax(0.0);
    case Activation::tanh_pi: return kPi * u.array().tanh().matrix();
    case Activation::tanh: return u.array().tanh().matrix();
    case Activation::identity: break;
  }
  return u;
}

MatrixXd activation_grad(Activation a, const MatrixXd& u, const MatrixXd& upstream) {
  switch (a) {
    case Activation::relu: return (u.array() > 0.0).select(upstream, 0.0);
    case Activation::tanh_pi:
      return (kPi * (1.0 - u.array().tanh().square()) * upstream.array()).matrix();
    case Activation::tanh: return ((1.0 - u.array().tanh().square()) * upstream.array()).matrix();
    case Activation::identity: break;
  }
  return upstream;
}

double softplus(double z) { return z > 30 ? z : std::log1p(std::exp(z)); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void fill_uniform(Rng& rng, double* p, Eigen::Index n, double limit) {
  for (Eigen::Index i = 0; i < n; ++i) p[i] = rng.uniform(-limit, limit);
}

DenseLayer make_layer(Rng& rng, int in, int out, Activation act, bool bn) {
  DenseLayer l;
  l.w.resize(out, in);
  l.b = VectorXd::Zero(out);
  l.activation = act;
  const double limit =
      act == Activation::relu ? std::sqrt(6.0 / in) : std::sqrt(6.0 / (in + out));
  fill_uniform(rng, l.w.data(), l.w.size(), limit);
  if (bn) {
    l.bn = BatchNorm{VectorXd::Ones(out), VectorXd::Zero(out), VectorXd::Zero(out), VectorXd::Ones(out)};
  }
  return l;
}

Shortcut make_skip(Rng& rng, int in, int out) {
  Shortcut s;
  s.active = true;
  s.identity = in == out;
  if (!s.identity) {
    s.p.resize(out, in);
    fill_uniform(rng, s.p.data(), s.p.size(), std::sqrt(6.0 / (in + out)));
  }
  return s;
}

MatrixXd apply_skip(const Shortcut& s, const MatrixXd& h) { return s.identity ? h : MatrixXd(s.p * h); }

// Encoder layer index whose input feeds decoder layer j in the nested wiring.
int mirror_of(int j, int n_enc) { return n_enc - 1 - j; }

struct LayerTrace {
  MatrixXd pre;
  MatrixXd rhat;
  VectorXd mean, istd;
};

// Affine map plus optional batchnorm; the shortcut is added by the caller.
LayerTrace affine(const DenseLayer& l, const MatrixXd& h, Mode mode) {
  LayerTrace t;
  MatrixXd r = l.w * h;
  r.colwise() += l.b;
  if (!l.bn) {
    t.pre = std::move(r);
    return t;
  }
  const BatchNorm& bn = *l.bn;
  const auto n = static_cast<double>(h.cols());
  if (mode == Mode::train && h.cols() > 1) {
    t.mean = r.rowwise().mean();
    const VectorXd var = (r.colwise() - t.mean).array().square().rowwise().sum().matrix() / n;
    t.istd = (var.array() + bn.eps).rsqrt().matrix();
  } else {
    t.mean = bn.running_mean;
    t.istd = (bn.running_var.array() + bn.eps).rsqrt().matrix();
  }
  t.rhat = (r.colwise() - t.mean).array().colwise() * t.istd.array();
  t.pre = (t.rhat.array().colwise() * bn.gamma.array()).matrix();
  t.pre.colwise() += bn.beta;
  return t;
}

void check_finite(const MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw NumericalError(std::string("non-finite values in ") + what);
}

ForwardResult forward_impl(const HybridModel& m, const MatrixXd& x, Mode mode,
                           const std::optional<NoiseSpec>& noise) {
  const ModelConfig& cfg = m.config;
  if (x.rows() != cfg.n_in) {
    throw DimensionError("model input has " + std::to_string(x.rows()) + " rows, expected " +
                         std::to_string(cfg.n_in));
  }
  ForwardResult res;
  ForwardCache& c = res.cache;
  c.version = m.version;
  c.mode = mode;
  c.x = x;
  const int n_enc = static_cast<int>(m.encoder.size());
  const int n_dec = static_cast<int>(m.decoder.size());

  MatrixXd h = x;
  for (int e = 0; e < n_enc; ++e) {
    const DenseLayer& l = m.encoder[e];
    LayerTrace t = affine(l, h, mode);
    if (m.encoder_skip[e].active) t.pre += apply_skip(m.encoder_skip[e], h);
    c.enc_in.push_back(h);
    h = activate(l.activation, t.pre);
    c.enc_pre.push_back(std::move(t.pre));
    c.enc_norm.push_back(std::move(t.rhat));
    c.enc_mean.push_back(std::move(t.mean));
    c.enc_istd.push_back(std::move(t.istd));
  }
  c.angles = h;

  const int nq = cfg.n_qubits();
  const Eigen::Index batch = x.cols();
  if (cfg.latent == LatentKind::quantum) {
    c.latent_out.resize(nq, batch);
    if (mode == Mode::train) c.qgrads.resize(batch);
    for (Eigen::Index i = 0; i < batch; ++i) {
      const VectorXd a = c.angles.col(i);
      if (mode == Mode::train) {
        c.qgrads[i] = param_shift_grad(m.circuit, a, m.q_weights, noise);
        c.latent_out.col(i) = c.qgrads[i].expectations;
      } else {
        c.latent_out.col(i) = noise ? run_density(m.circuit, a, m.q_weights, *noise)
                                    : run_statevector(m.circuit, a, m.q_weights);
      }
    }
  } else {
    c.latent_pre = m.latent_dense.w * c.angles;
    c.latent_pre.colwise() += m.latent_dense.b;
    c.latent_out = activate(m.latent_dense.activation, c.latent_pre);
  }
  MatrixXd g = c.latent_out;
  if (m.latent_skip.active) g += apply_skip(m.latent_skip, c.enc_in.back());

  for (int j = 0; j < n_dec; ++j) {
    const DenseLayer& l = m.decoder[j];
    LayerTrace t = affine(l, g, mode);
    const Shortcut& s = m.decoder_skip[j];
    if (s.active) {
      const bool nested = cfg.topology == Topology::nested_residual;
      t.pre += apply_skip(s, nested ? c.enc_in[mirror_of(j, n_enc)] : g);
    }
    c.dec_in.push_back(g);
    g = activate(l.activation, t.pre);
    c.dec_pre.push_back(std::move(t.pre));
    c.dec_norm.push_back(std::move(t.rhat));
    c.dec_mean.push_back(std::move(t.mean));
    c.dec_istd.push_back(std::move(t.istd));
  }
  c.head_pre = g;
  res.y = g;
  if (cfg.softplus_mu && cfg.out.n_ineq > 0) {
    auto mu = res.y.middleRows(cfg.out.off_mu(), cfg.out.n_ineq);
    mu = mu.unaryExpr([](double z) { return softplus(z); });
  }
  check_finite(res.y, "model output");
  return res;
}

void update_running(BatchNorm& bn, const VectorXd& mean, const VectorXd& istd) {
  const VectorXd var = istd.array().square().inverse().matrix() - VectorXd::Constant(istd.size(), bn.eps);
  bn.running_mean = (1 - bn.momentum) * bn.running_mean + bn.momentum * mean;
  bn.running_var = (1 - bn.momentum) * bn.running_var + bn.momentum * var;
}

// Gradient of a dense layer given d(pre) (before the shortcut split).
MatrixXd layer_backward(const DenseLayer& l, DenseLayer& gl, const MatrixXd& in, const MatrixXd& dpre,
                        const MatrixXd& rhat, const VectorXd& istd) {
  MatrixXd dr;
  if (l.bn) {
    const BatchNorm& bn = *l.bn;
    gl.bn->gamma += (dpre.array() * rhat.array()).rowwise().sum().matrix();
    gl.bn->beta += dpre.rowwise().sum();
    const MatrixXd drhat = dpre.array().colwise() * bn.gamma.array();
    const auto n = static_cast<double>(in.cols());
    if (in.cols() > 1) {
      const VectorXd s1 = drhat.rowwise().sum();
      const VectorXd s2 = (drhat.array() * rhat.array()).rowwise().sum();
      MatrixXd t = n * drhat;
      t.colwise() -= s1;
      t -= (rhat.array().colwise() * s2.array()).matrix();
      dr = (t.array().colwise() * (istd.array() / n)).matrix();
    } else {
      dr = drhat.array().colwise() * istd.array();
    }
  } else {
    dr = dpre;
  }
  gl.w += dr * in.transpose();
  gl.b += dr.rowwise().sum();
  return l.w.transpose() * dr;
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh_pi: return "tanh_pi";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

std::string to_string(Topology t) {
  switch (t) {
    case Topology::plain: return "plain";
    case Topology::sequential_residual: return "sequential_residual";
    case Topology::nested_residual: return "nested_residual";
  }
  return "?";
}

std::string to_string(LatentKind k) { return k == LatentKind::quantum ? "quantum" : "dense"; }

Topology topology_from_string(const std::string& s) {
  if (s == "plain") return Topology::plain;
  if (s == "sequential_residual" || s == "src") return Topology::sequential_residual;
  if (s == "nested_residual" || s == "nrc") return Topology::nested_residual;
  throw ValidationError("unknown topology '" + s + "'");
}

namespace {

Activation activation_from_string(const std::string& s) {
  for (auto a : {Activation::relu, Activation::tanh_pi, Activation::tanh, Activation::identity}) {
    if (to_string(a) == s) return a;
  }
  throw ValidationError("unknown activation '" + s + "'");
}

}  // namespace

SplitOutput unpack(const OutSpec& spec, const VectorXd& y) {
  if (y.size() != spec.size()) throw DimensionError("output vector size does not match out_spec");
  return {y.segment(spec.off_g(), 2 * spec.n_g), y.segment(spec.off_vmag(), spec.n_b),
          y.segment(spec.off_vang(), spec.n_b), y.segment(spec.off_rho(), spec.n_eq),
          y.segment(spec.off_mu(), spec.n_ineq)};
}

VectorXd pack(const OutSpec& spec, const SplitOutput& s) {
  if (s.g.size() != 2 * spec.n_g || s.vmag.size() != spec.n_b || s.vang.size() != spec.n_b ||
      s.rho.size() != spec.n_eq || s.mu.size() != spec.n_ineq) {
    throw DimensionError("output parts do not match out_spec");
  }
  VectorXd y(spec.size());
  y << s.g, s.vmag, s.vang, s.rho, s.mu;
  return y;
}

void ModelConfig::validate() const {
  if (n_in < 1) throw ValidationError("model: input width must be positive");
  if (encoder.empty()) throw ValidationError("model: encoder needs at least one layer");
  for (int w : encoder) {
    if (w < 1) throw ValidationError("model: encoder widths must be positive");
  }
  for (int w : decoder) {
    if (w < 1) throw ValidationError("model: decoder widths must be positive");
  }
  if (out.size() < 1) throw ValidationError("model: empty output");
  if (qubits < 1 || qubits > 8) throw ValidationError("model: qubit count must be in [1, 8]");
  if (encoder.back() != qubits) {
    throw ValidationError("model: encoder output width " + std::to_string(encoder.back()) +
                          " must equal the qubit count " + std::to_string(qubits));
  }
  if (q_depth < 0) throw ValidationError("model: quantum depth must be >= 0");
  if (!(head_init_scale >= 0.0)) throw ValidationError("model: head_init_scale must be non-negative");
}

HybridModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  HybridModel m;
  m.config = cfg;
  const bool seq = cfg.topology == Topology::sequential_residual;
  const bool nested = cfg.topology == Topology::nested_residual;

  std::vector<int> enc_w{cfg.n_in};
  enc_w.insert(enc_w.end(), cfg.encoder.begin(), cfg.encoder.end());
  const int n_enc = static_cast<int>(cfg.encoder.size());
  for (int e = 0; e < n_enc; ++e) {
    const bool head = e == n_enc - 1;
    m.encoder.push_back(make_layer(rng, enc_w[e], enc_w[e + 1], head ? Activation::tanh_pi : Activation::relu,
                                   cfg.batchnorm && !head));
  }
  m.encoder_skip.resize(n_enc);
  if (seq) {
    for (int e = 0; e + 1 < n_enc; ++e) m.encoder_skip[e] = make_skip(rng, enc_w[e], enc_w[e + 1]);
  }

  const int nq = cfg.n_qubits();
  if (cfg.latent == LatentKind::quantum) {
    m.circuit = default_circuit(nq, cfg.q_depth);
    m.q_weights.resize(m.circuit.n_weights());
    fill_uniform(rng, m.q_weights.data(), m.q_weights.size(), kPi);
  } else {
    m.latent_dense = make_layer(rng, nq, nq, Activation::tanh, false);
  }
  if (seq) m.latent_skip = make_skip(rng, enc_w[n_enc - 1], nq);

  std::vector<int> dec_w{nq};
  dec_w.insert(dec_w.end(), cfg.decoder.begin(), cfg.decoder.end());
  dec_w.push_back(cfg.out.size());
  const int n_dec = static_cast<int>(dec_w.size()) - 1;
  for (int j = 0; j < n_dec; ++j) {
    const bool last = j == n_dec - 1;
    m.decoder.push_back(make_layer(rng, dec_w[j], dec_w[j + 1], last ? Activation::identity : Activation::relu,
                                   cfg.batchnorm && !last));
  }
  m.decoder_skip.resize(n_dec);
  if (seq) {
    for (int j = 0; j + 1 < n_dec; ++j) m.decoder_skip[j] = make_skip(rng, dec_w[j], dec_w[j + 1]);
  } else if (nested) {
    for (int j = 0; j < n_dec; ++j) {
      const int e = mirror_of(j, n_enc);
      if (e < 0) break;
      m.decoder_skip[j] = make_skip(rng, enc_w[e], dec_w[j + 1]);
    }
  }
  m.decoder.back().w *= cfg.head_init_scale;
  Shortcut& last_skip = m.decoder_skip.back();
  if (last_skip.active && !last_skip.identity) last_skip.p *= cfg.head_init_scale;
  return m;
}

int HybridModel::n_params() {
  int n = 0;
  for_each_param([&](double*, Eigen::Index k) { n += static_cast<int>(k); });
  return n;
}

HybridModel HybridModel::zeros_like() const {
  HybridModel z = *this;
  z.for_each_param([](double* p, Eigen::Index k) { std::fill(p, p + k, 0.0); });
  return z;
}

ForwardResult forward(HybridModel& model, const MatrixXd& x, Mode mode, const std::optional<NoiseSpec>& noise) {
  ForwardResult r = forward_impl(model, x, mode, noise);
  if (mode == Mode::train && x.cols() > 1) {
    for (std::size_t e = 0; e < model.encoder.size(); ++e) {
      if (model.encoder[e].bn) update_running(*model.encoder[e].bn, r.cache.enc_mean[e], r.cache.enc_istd[e]);
    }
    for (std::size_t j = 0; j < model.decoder.size(); ++j) {
      if (model.decoder[j].bn) update_running(*model.decoder[j].bn, r.cache.dec_mean[j], r.cache.dec_istd[j]);
    }
  }
  return r;
}

MatrixXd predict(const HybridModel& model, const MatrixXd& x, const std::optional<NoiseSpec>& noise) {
  return forward_impl(model, x, Mode::eval, noise).y;
}

BackwardResult backward(const HybridModel& m, const ForwardCache& c, const MatrixXd& dy) {
  if (c.version != m.version) throw ValidationError("backward: cache is stale (model changed since forward)");
  if (c.mode != Mode::train) throw ValidationError("backward: needs a train-mode forward cache");
  if (dy.rows() != m.config.out.size() || dy.cols() != c.x.cols()) {
    throw DimensionError("backward: upstream gradient shape mismatch");
  }
  const ModelConfig& cfg = m.config;
  BackwardResult res{m.zeros_like(), MatrixXd()};
  HybridModel& gm = res.grad;
  const int n_enc = static_cast<int>(m.encoder.size());
  const int n_dec = static_cast<int>(m.decoder.size());
  const bool nested = cfg.topology == Topology::nested_residual;

  MatrixXd dg = dy;
  if (cfg.softplus_mu && cfg.out.n_ineq > 0) {
    auto rows = dg.middleRows(cfg.out.off_mu(), cfg.out.n_ineq);
    const auto pre = c.head_pre.middleRows(cfg.out.off_mu(), cfg.out.n_ineq);
    rows = rows.cwiseProduct(pre.unaryExpr([](double z) { return sigmoid(z); }));
  }

  std::vector<MatrixXd> enc_extra(n_enc);
  for (int j = n_dec - 1; j >= 0; --j) {
    const DenseLayer& l = m.decoder[j];
    const MatrixXd du = activation_grad(l.activation, c.dec_pre[j], dg);
    MatrixXd din = layer_backward(l, gm.decoder[j], c.dec_in[j], du, c.dec_norm[j], c.dec_istd[j]);
    const Shortcut& s = m.decoder_skip[j];
    if (s.active) {
      const MatrixXd& src = nested ? c.enc_in[mirror_of(j, n_enc)] : c.dec_in[j];
      MatrixXd dsrc = s.identity ? du : MatrixXd(s.p.transpose() * du);
      if (!s.identity) gm.decoder_skip[j].p += du * src.transpose();
      if (nested) {
        auto& acc = enc_extra[mirror_of(j, n_enc)];
        acc = acc.size() ? MatrixXd(acc + dsrc) : dsrc;
      } else {
        din += dsrc;
      }
    }
    dg = std::move(din);
  }

  if (m.latent_skip.active) {
    const Shortcut& s = m.latent_skip;
    if (!s.identity) gm.latent_skip.p += dg * c.enc_in.back().transpose();
    enc_extra.back() = s.identity ? dg : MatrixXd(s.p.transpose() * dg);
  }
  MatrixXd da = MatrixXd::Zero(c.angles.rows(), c.angles.cols());
  if (cfg.latent == LatentKind::quantum) {
    for (Eigen::Index i = 0; i < dg.cols(); ++i) {
      const QuantumGradient& q = c.qgrads[i];
      da.col(i) += q.d_features.transpose() * dg.col(i);
      gm.q_weights += q.d_weights.transpose() * dg.col(i);
    }
  } else {
    const MatrixXd dpre = activation_grad(m.latent_dense.activation, c.latent_pre, dg);
    gm.latent_dense.w += dpre * c.angles.transpose();
    gm.latent_dense.b += dpre.rowwise().sum();
    da += m.latent_dense.w.transpose() * dpre;
  }

  MatrixXd dh = std::move(da);
  for (int e = n_enc - 1; e >= 0; --e) {
    const DenseLayer& l = m.encoder[e];
    const MatrixXd du = activation_grad(l.activation, c.enc_pre[e], dh);
    MatrixXd din = layer_backward(l, gm.encoder[e], c.enc_in[e], du, c.enc_norm[e], c.enc_istd[e]);
    const Shortcut& s = m.encoder_skip[e];
    if (s.active) {
      if (s.identity) {
        din += du;
      } else {
        din += s.p.transpose() * du;
        gm.encoder_skip[e].p += du * c.enc_in[e].transpose();
      }
    }
    if (enc_extra[e].size()) din += enc_extra[e];
    dh = std::move(din);
  }
  res.dx = std::move(dh);
  return res;
}

VectorXd polar_to_rect(const VectorXd& vmag, const VectorXd& vang) {
  VectorXd v(2 * vmag.size());
  v << vmag.array() * vang.array().cos(), vmag.array() * vang.array().sin();
  return v;
}

CandidateSolution predict_solution(const HybridModel& model, const VectorXd& d_raw,
                                   const std::optional<NoiseSpec>& noise) {
  const VectorXd x = model.norm.empty() ? d_raw : model.norm.apply(d_raw);
  const VectorXd y = predict(model, x, noise).col(0);
  const SplitOutput s = unpack(model.config.out, y);
  return {s.g, polar_to_rect(s.vmag, s.vang), model.dual_scale * s.rho, model.dual_scale * s.mu};
}

namespace {

nlohmann::json mat_json(const MatrixXd& a) {
  std::vector<double> flat;
  flat.reserve(a.size());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index k = 0; k < a.cols(); ++k) flat.push_back(a(r, k));
  }
  return {{"rows", a.rows()}, {"cols", a.cols()}, {"data", flat}};
}

MatrixXd json_mat(const nlohmann::json& j) {
  const Eigen::Index rows = j.at("rows"), cols = j.at("cols");
  const auto flat = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) throw ValidationError("matrix data size mismatch");
  MatrixXd a(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index k = 0; k < cols; ++k) a(r, k) = flat[r * cols + k];
  }
  return a;
}

nlohmann::json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json layer_json(const DenseLayer& l) {
  nlohmann::json j{{"w", mat_json(l.w)}, {"b", vec_json(l.b)}, {"activation", to_string(l.activation)}};
  if (l.bn) {
    j["batchnorm"] = {{"gamma", vec_json(l.bn->gamma)},
                      {"beta", vec_json(l.bn->beta)},
                      {"running_mean", vec_json(l.bn->running_mean)},
                      {"running_var", vec_json(l.bn->running_var)},
                      {"momentum", l.bn->momentum},
                      {"eps", l.bn->eps}};
  }
  return j;
}

DenseLayer layer_from(const nlohmann::json& j) {
  DenseLayer l;
  l.w = json_mat(j.at("w"));
  l.b = json_vec(j.at("b"));
  l.activation = activation_from_string(j.at("activation"));
  if (j.contains("batchnorm")) {
    const auto& b = j["batchnorm"];
    l.bn = BatchNorm{json_vec(b.at("gamma")), json_vec(b.at("beta")), json_vec(b.at("running_mean")),
                     json_vec(b.at("running_var")), b.at("momentum"), b.at("eps")};
  }
  if (l.b.size() != l.w.rows()) throw ValidationError("layer bias size mismatch");
  return l;
}

nlohmann::json skip_json(const Shortcut& s) {
  nlohmann::json j{{"active", s.active}, {"identity", s.identity}};
  if (s.active && !s.identity) j["p"] = mat_json(s.p);
  return j;
}

Shortcut skip_from(const nlohmann::json& j) {
  Shortcut s;
  s.active = j.at("active");
  s.identity = j.at("identity");
  if (s.active && !s.identity) s.p = json_mat(j.at("p"));
  return s;
}

constexpr const char* kModelSchema = "qopf-model/1";

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  return {{"n_in", c.n_in},
          {"encoder", c.encoder},
          {"decoder", c.decoder},
          {"out_spec", {{"n_g", c.out.n_g}, {"n_b", c.out.n_b}, {"n_eq", c.out.n_eq}, {"n_ineq", c.out.n_ineq}}},
          {"topology", to_string(c.topology)},
          {"latent", to_string(c.latent)},
          {"qubits", c.qubits},
          {"q_depth", c.q_depth},
          {"batchnorm", c.batchnorm},
          {"softplus_mu", c.softplus_mu},
          {"head_init_scale", c.head_init_scale}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_in = j.at("n_in");
  c.encoder = j.at("encoder").get<std::vector<int>>();
  c.decoder = j.at("decoder").get<std::vector<int>>();
  const auto& o = j.at("out_spec");
  c.out = {o.at("n_g"), o.at("n_b"), o.at("n_eq"), o.at("n_ineq")};
  c.topology = topology_from_string(j.at("topology"));
  const std::string latent = j.value("latent", "quantum");
  if (latent == "quantum") c.latent = LatentKind::quantum;
  else if (latent == "dense") c.latent = LatentKind::dense;
  else throw ValidationError("unknown latent kind '" + latent + "'");
  c.qubits = j.value("qubits", 4);
  c.q_depth = j.value("q_depth", 3);
  c.batchnorm = j.value("batchnorm", false);
  c.softplus_mu = j.value("softplus_mu", true);
  c.head_init_scale = j.value("head_init_scale", c.head_init_scale);
  c.validate();
  return c;
}

nlohmann::json to_json(const HybridModel& m) {
  nlohmann::json j;
  j["schema"] = kModelSchema;
  j["config"] = to_json(m.config);
  for (const auto& l : m.encoder) j["encoder"].push_back(layer_json(l));
  for (const auto& l : m.decoder) j["decoder"].push_back(layer_json(l));
  for (const auto& s : m.encoder_skip) j["encoder_skip"].push_back(skip_json(s));
  for (const auto& s : m.decoder_skip) j["decoder_skip"].push_back(skip_json(s));
  j["latent_skip"] = skip_json(m.latent_skip);
  if (m.config.latent == LatentKind::quantum) {
    j["circuit"] = to_json(m.circuit);
    j["q_weights"] = vec_json(m.q_weights);
  } else {
    j["latent_dense"] = layer_json(m.latent_dense);
  }
  j["norm"] = {{"mean", vec_json(m.norm.mean)}, {"std", vec_json(m.norm.std)}};
  j["dual_scale"] = m.dual_scale;
  return j;
}

HybridModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema") != kModelSchema) throw ValidationError("unsupported model schema");
    HybridModel m;
    m.config = model_config_from_json(j.at("config"));
    for (const auto& l : j.at("encoder")) m.encoder.push_back(layer_from(l));
    for (const auto& l : j.at("decoder")) m.decoder.push_back(layer_from(l));
    for (const auto& s : j.at("encoder_skip")) m.encoder_skip.push_back(skip_from(s));
    for (const auto& s : j.at("decoder_skip")) m.decoder_skip.push_back(skip_from(s));
    m.latent_skip = skip_from(j.at("latent_skip"));
    if (m.config.latent == LatentKind::quantum) {
      m.circuit = circuit_from_json(j.at("circuit"));
      m.q_weights = json_vec(j.at("q_weights"));
      if (m.q_weights.size() != m.circuit.n_weights()) throw ValidationError("quantum weight count mismatch");
    } else {
      m.latent_dense = layer_from(j.at("latent_dense"));
    }
    m.norm = {json_vec(j.at("norm").at("mean")), json_vec(j.at("norm").at("std"))};
    m.dual_scale = j.at("dual_scale");
    if (m.encoder.size() != m.encoder_skip.size() || m.decoder.size() != m.decoder_skip.size()) {
      throw ValidationError("shortcut lists do not match layer lists");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model checkpoint: ") + e.what());
  }
}

}  // namespace qopf
