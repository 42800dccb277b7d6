#include "qopf/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "qopf/errors.hpp"
#include "qopf/io.hpp"
#include "qopf/rng.hpp"

namespace qopf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw ValidationError(std::string(what) + " must be finite");
}

// Mean |pred - target| over rows [off, off+len) of the labelled columns;
// writes the matching subgradient scaled by `weight`.
double l1_block(const MatrixXd& pred, const MatrixXd& target, const std::vector<char>* labeled, int off,
                int len, int n_lab, double weight, MatrixXd& grad) {
  if (len == 0 || n_lab == 0) return 0.0;
  const double count = static_cast<double>(len) * n_lab;
  double sum = 0.0;
  for (Eigen::Index j = 0; j < pred.cols(); ++j) {
    if (labeled && !(*labeled)[j]) continue;
    for (int r = off; r < off + len; ++r) {
      const double e = pred(r, j) - target(r, j);
      sum += std::abs(e);
      grad(r, j) += weight * sign_of(e) / count;
    }
  }
  return sum / count;
}

LossResult supervised_impl(const OutSpec& spec, const MatrixXd& pred, const MatrixXd& target,
                           const std::vector<char>* labeled, const LossWeights& w) {
  if (pred.rows() != spec.size() || target.rows() != pred.rows() || target.cols() != pred.cols()) {
    throw DimensionError("prediction and label batches are not aligned");
  }
  int n_lab = static_cast<int>(pred.cols());
  if (labeled) n_lab = static_cast<int>(std::count(labeled->begin(), labeled->end(), 1));
  LossResult res;
  res.grad = MatrixXd::Zero(pred.rows(), pred.cols());
  LossTerms& t = res.terms;
  t.n_labeled = n_lab;
  t.n_samples = static_cast<int>(pred.cols());
  t.mae_g = l1_block(pred, target, labeled, spec.off_g(), 2 * spec.n_g, n_lab, w.lambda_p, res.grad);
  t.mae_v = l1_block(pred, target, labeled, spec.off_vmag(), 2 * spec.n_b, n_lab, w.lambda_v, res.grad);
  t.mae_l = l1_block(pred, target, labeled, spec.off_rho(), spec.n_eq + spec.n_ineq, n_lab, w.lambda_l, res.grad);
  t.supervised = w.lambda_p * t.mae_g + w.lambda_v * t.mae_v + w.lambda_l * t.mae_l;
  t.total = t.supervised;
  return res;
}

}  // namespace

void LossWeights::validate() const {
  for (double x : {lambda_p, lambda_v, lambda_l, lambda_eps}) {
    require_finite(x, "loss weight");
    if (x < 0.0) throw ValidationError("loss weights must be non-negative");
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be at least 1");
  if (batches_per_epoch < 1) throw ValidationError("batches_per_epoch must be at least 1");
  require_finite(lr, "lr");
  if (lr < 0.0) throw ValidationError("lr must be non-negative");
  if (!(lr_final_ratio >= 0.0 && lr_final_ratio <= 1.0)) throw ValidationError("lr_final_ratio must lie in [0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ValidationError("adam_eps must be positive");
  if (!(mu_threshold >= 0.0)) throw ValidationError("mu_threshold must be non-negative");
  if (noise_in_training) noise_in_training->validate();
}

double TrainConfig::lr_at(std::int64_t step, std::int64_t total_steps) const {
  const double lo = lr * lr_final_ratio;
  if (total_steps <= 1) return lr;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps - 1));
  return lo + 0.5 * (lr - lo) * (1.0 + std::cos(M_PI * frac));
}

int TrainingData::n_labeled() const { return static_cast<int>(std::count(labeled.begin(), labeled.end(), 1)); }

VectorXd label_target(const OutSpec& spec, const OPFSolution& label, double dual_scale, double mu_threshold) {
  const CandidateSolution& s = label.candidate;
  if (s.g.size() != 2 * spec.n_g || s.v.size() != 2 * spec.n_b || s.rho.size() != spec.n_eq ||
      s.mu.size() != spec.n_ineq) {
    throw DimensionError("label does not match the output layout");
  }
  SplitOutput o;
  o.g = s.g;
  const VectorXd vr = s.v.head(spec.n_b), vi = s.v.tail(spec.n_b);
  o.vmag = (vr.array().square() + vi.array().square()).sqrt();
  o.vang = vi.binaryExpr(vr, [](double y, double x) { return std::atan2(y, x); });
  o.rho = s.rho / dual_scale;
  o.mu = s.mu.unaryExpr([&](double m) { return m < mu_threshold ? 0.0 : m; }) / dual_scale;
  return pack(spec, o);
}

TrainingData make_training_data(const Dataset& ds, const std::vector<int>& indices, const OutSpec& spec,
                                double dual_scale, double mu_threshold) {
  TrainingData t;
  const int n = static_cast<int>(indices.size());
  if (n == 0) return t;
  const int n_in = static_cast<int>(ds.samples.at(indices[0]).d.size());
  t.x.resize(n_in, n);
  t.demand.resize(n_in, n);
  t.target = MatrixXd::Zero(spec.size(), n);
  t.labeled.assign(n, 0);
  t.source = indices;
  for (int j = 0; j < n; ++j) {
    const DemandSample& s = ds.samples.at(indices[j]);
    t.demand.col(j) = s.d;
    t.x.col(j) = ds.norm.empty() ? s.d : ds.norm.apply(s.d);
    if (s.label) {
      t.target.col(j) = label_target(spec, *s.label, dual_scale, mu_threshold);
      t.labeled[j] = 1;
    }
  }
  return t;
}

double default_dual_scale(const CompactModel& m) {
  const double s = m.c.size() ? m.c.cwiseAbs().maxCoeff() : 0.0;
  return s > 0.0 ? s : 1.0;
}

LossResult supervised_loss(const OutSpec& spec, const MatrixXd& pred, const MatrixXd& target, const LossWeights& w) {
  return supervised_impl(spec, pred, target, nullptr, w);
}

LossResult physics_loss(const CompactModel& m, const OutSpec& spec, const MatrixXd& pred, const MatrixXd& demand,
                        double cost_scale) {
  if (pred.rows() != spec.size() || demand.cols() != pred.cols() || demand.rows() != m.n_v()) {
    throw DimensionError("prediction and demand batches are not aligned");
  }
  LossResult res;
  res.grad = MatrixXd::Zero(pred.rows(), pred.cols());
  LossTerms& t = res.terms;
  const Eigen::Index n = pred.cols();
  t.n_samples = static_cast<int>(n);
  if (n == 0) return res;
  const double inv = 1.0 / static_cast<double>(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const SplitOutput s = unpack(spec, pred.col(j));
    const VectorXd v = polar_to_rect(s.vmag, s.vang);
    const KKTGradient k =
        kkt_residuals_with_gradient(m, s.g, v, s.rho, s.mu, demand.col(j), cost_scale, StationarityMode::gradient);
    t.kkt.eps_stat += k.value.eps_stat * inv;
    t.kkt.eps_comp += k.value.eps_comp * inv;
    t.kkt.eps_dual += k.value.eps_dual * inv;
    t.kkt.eps_prim += k.value.eps_prim * inv;

    auto col = res.grad.col(j);
    col.segment(spec.off_g(), 2 * spec.n_g) = k.d_g * inv;
    for (int b = 0; b < spec.n_b; ++b) {
      const double c = std::cos(s.vang(b)), sn = std::sin(s.vang(b));
      const double dvr = k.d_v(b), dvi = k.d_v(spec.n_b + b);
      col(spec.off_vmag() + b) = (dvr * c + dvi * sn) * inv;
      col(spec.off_vang() + b) = s.vmag(b) * (-dvr * sn + dvi * c) * inv;
    }
    col.segment(spec.off_rho(), spec.n_eq) = k.d_rho * inv;
    col.segment(spec.off_mu(), spec.n_ineq) = k.d_mu * inv;
  }
  t.eps = t.kkt.total();
  t.total = t.eps;
  return res;
}

LossResult total_loss(const CompactModel& m, const OutSpec& spec, const MatrixXd& pred, const MatrixXd& target,
                      const std::vector<char>& labeled, const MatrixXd& demand, const LossWeights& w,
                      double cost_scale) {
  if (static_cast<Eigen::Index>(labeled.size()) != pred.cols()) {
    throw DimensionError("labelled mask does not match the batch");
  }
  LossResult res = supervised_impl(spec, pred, target, &labeled, w);
  if (w.lambda_eps > 0.0) {
    LossResult phys = physics_loss(m, spec, pred, demand, cost_scale);
    res.terms.kkt = phys.terms.kkt;
    res.terms.eps = phys.terms.eps;
    res.terms.total += w.lambda_eps * phys.terms.eps;
    res.grad += w.lambda_eps * phys.grad;
  }
  return res;
}

VectorXd flatten_params(HybridModel& model) {
  std::vector<double> flat;
  model.for_each_param([&](double* p, Eigen::Index n) { flat.insert(flat.end(), p, p + n); });
  return Eigen::Map<VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size()));
}

void assign_params(HybridModel& model, const VectorXd& flat) {
  Eigen::Index pos = 0;
  model.for_each_param([&](double* p, Eigen::Index n) {
    if (pos + n > flat.size()) throw DimensionError("parameter vector too short");
    std::copy(flat.data() + pos, flat.data() + pos + n, p);
    pos += n;
  });
  if (pos != flat.size()) throw DimensionError("parameter vector too long");
  ++model.version;
}

void adam_step(HybridModel& model, HybridModel& grad, AdamState& st, double lr, const TrainConfig& cfg) {
  const VectorXd g = flatten_params(grad);
  if (st.m.size() == 0) {
    st.m = VectorXd::Zero(g.size());
    st.v = VectorXd::Zero(g.size());
  }
  if (st.m.size() != g.size()) throw DimensionError("optimizer state does not match the model");
  ++st.step;
  st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * g;
  st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  Eigen::Index pos = 0;
  model.for_each_param([&](double* p, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i, ++pos) {
      const double mh = st.m(pos) / c1;
      const double vh = st.v(pos) / c2;
      p[i] -= lr * mh / (std::sqrt(vh) + cfg.adam_eps);
    }
  });
  ++model.version;
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,total,supervised,mae_g,mae_v,mae_l,eps,lr,seconds\n";
  for (const EpochRecord& r : epochs) {
    out += std::to_string(r.epoch);
    for (double x : {r.total, r.supervised, r.mae_g, r.mae_v, r.mae_l, r.eps, r.lr, r.seconds}) {
      out += ',';
      out += format_double(x);
    }
    out += '\n';
  }
  return out;
}

TrainHistory TrainHistory::from_csv(const std::string& text) {
  TrainHistory h;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError("bad history value '" + cell + "'", line_no);
      }
    }
    if (v.size() != 9) throw ParseError("history row needs 9 columns", line_no);
    h.epochs.push_back({static_cast<int>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]});
  }
  return h;
}

TrainHistory train(HybridModel& model, const Dataset& ds, const CompactModel& cm, const TrainConfig& cfg,
                   const LossWeights& w, TrainState& state, const EpochCallback& on_epoch) {
  cfg.validate();
  w.validate();
  if (ds.splits.train.empty()) throw ValidationError("training split is empty");
  const OutSpec& spec = model.config.out;

  std::vector<int> pool = ds.splits.train;
  pool.insert(pool.end(), ds.splits.collocation.begin(), ds.splits.collocation.end());
  const TrainingData data = make_training_data(ds, pool, spec, model.dual_scale, cfg.mu_threshold);
  if (data.n_labeled() != static_cast<int>(ds.splits.train.size())) {
    throw ValidationError("training samples must all carry labels");
  }
  const bool physics = w.lambda_eps > 0.0;
  const int n = data.size();
  const int n_batches = std::min(cfg.batches_per_epoch, n);
  const std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) * n_batches;

  for (int epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    const std::vector<int> order = rng.permutation(n);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cfg.lr_at(static_cast<std::int64_t>(epoch - 1) * n_batches, total_steps);
    double lab_total = 0.0, eps_count = 0.0;
    for (int b = 0; b < n_batches; ++b) {
      const int lo = static_cast<int>(static_cast<std::int64_t>(n) * b / n_batches);
      const int hi = static_cast<int>(static_cast<std::int64_t>(n) * (b + 1) / n_batches);
      std::vector<int> cols;
      for (int k = lo; k < hi; ++k) {
        const int c = order[k];
        if (physics || data.labeled[c]) cols.push_back(c);
      }
      const double lr = cfg.lr_at(static_cast<std::int64_t>(epoch - 1) * n_batches + b, total_steps);
      if (cols.empty()) continue;
      const int m = static_cast<int>(cols.size());
      MatrixXd x(data.x.rows(), m), y(data.target.rows(), m), d(data.demand.rows(), m);
      std::vector<char> lab(m);
      for (int k = 0; k < m; ++k) {
        x.col(k) = data.x.col(cols[k]);
        y.col(k) = data.target.col(cols[k]);
        d.col(k) = data.demand.col(cols[k]);
        lab[k] = data.labeled[cols[k]];
      }
      ForwardResult fr = forward(model, x, Mode::train, cfg.noise_in_training);
      const LossResult loss = total_loss(cm, spec, fr.y, y, lab, d, w, model.dual_scale);
      if (!std::isfinite(loss.terms.total) || !fr.y.allFinite()) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(b + 1));
      }
      BackwardResult br = backward(model, fr.cache, loss.grad);
      adam_step(model, br.grad, state.adam, lr, cfg);

      const double nl = loss.terms.n_labeled;
      rec.total += loss.terms.total / n_batches;
      rec.supervised += loss.terms.supervised * nl;
      rec.mae_g += loss.terms.mae_g * nl;
      rec.mae_v += loss.terms.mae_v * nl;
      rec.mae_l += loss.terms.mae_l * nl;
      rec.eps += loss.terms.eps * m;
      lab_total += nl;
      eps_count += m;
    }
    if (lab_total > 0) {
      rec.supervised /= lab_total;
      rec.mae_g /= lab_total;
      rec.mae_v /= lab_total;
      rec.mae_l /= lab_total;
    }
    if (physics && eps_count > 0) {
      rec.eps /= eps_count;
    } else {
      rec.eps = 0.0;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.history.epochs.push_back(rec);
    state.epoch = epoch;
    if (on_epoch) on_epoch(model, state);
  }
  return state.history;
}

TrainHistory train(HybridModel& model, const Dataset& ds, const CompactModel& cm, const TrainConfig& cfg,
                   const LossWeights& w) {
  TrainState state;
  return train(model, ds, cm, cfg, w, state);
}

void init_output_bias(HybridModel& model, const TrainingData& data) {
  const OutSpec& spec = model.config.out;
  const int n_lab = data.n_labeled();
  if (n_lab == 0) throw ValidationError("no labelled samples to initialise from");
  VectorXd mean = VectorXd::Zero(spec.size());
  for (int j = 0; j < data.size(); ++j) {
    if (data.labeled[j]) mean += data.target.col(j);
  }
  mean /= n_lab;
  if (model.config.softplus_mu) {
    for (int k = 0; k < spec.n_ineq; ++k) {
      double& b = mean(spec.off_mu() + k);
      b = inverse_softplus(std::max(b, 1e-3));
    }
  }
  DenseLayer& head = model.decoder.back();
  if (head.b.size() != mean.size()) throw DimensionError("output layer does not match the targets");
  head.b = mean;
  ++model.version;
}

EvalReport evaluate_predictions(const OutSpec& spec, const MatrixXd& pred, const MatrixXd& target) {
  if (pred.rows() != spec.size() || target.rows() != pred.rows() || target.cols() != pred.cols()) {
    throw DimensionError("prediction and label batches are not aligned");
  }
  EvalReport r;
  r.n = static_cast<int>(pred.cols());
  if (r.n == 0) return r;
  auto mae = [&](int off, int len) {
    if (len == 0) return 0.0;
    return (pred.middleRows(off, len) - target.middleRows(off, len)).cwiseAbs().sum() /
           (static_cast<double>(len) * r.n);
  };
  r.mae_p = mae(spec.off_g(), spec.n_g);
  r.mae_q = mae(spec.off_g() + spec.n_g, spec.n_g);
  r.mae_v = mae(spec.off_vmag(), spec.n_b);
  r.mae_theta = mae(spec.off_vang(), spec.n_b);
  return r;
}

EvalReport evaluate(const HybridModel& model, const Dataset& ds, const std::vector<int>& indices,
                    const CompactModel& cm, const std::optional<NoiseSpec>& noise) {
  if (indices.empty()) throw ValidationError("evaluation split is empty");
  for (int i : indices) {
    if (!ds.samples.at(i).label) throw ValidationError("evaluation split has unlabelled samples");
  }
  const OutSpec& spec = model.config.out;
  const TrainingData data = make_training_data(ds, indices, spec, model.dual_scale);
  const MatrixXd pred = predict(model, data.x, noise);
  EvalReport r = evaluate_predictions(spec, pred, data.target);
  const LossResult phys = physics_loss(cm, spec, pred, data.demand, model.dual_scale);
  r.kkt_means = phys.terms.kkt;
  return r;
}

nlohmann::json to_json(const LossWeights& w) {
  return {{"lambda_p", w.lambda_p}, {"lambda_v", w.lambda_v}, {"lambda_l", w.lambda_l}, {"lambda_eps", w.lambda_eps}};
}

LossWeights loss_weights_from_json(const nlohmann::json& j) {
  LossWeights w;
  w.lambda_p = j.value("lambda_p", w.lambda_p);
  w.lambda_v = j.value("lambda_v", w.lambda_v);
  w.lambda_l = j.value("lambda_l", w.lambda_l);
  w.lambda_eps = j.value("lambda_eps", w.lambda_eps);
  w.validate();
  return w;
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = {{"epochs", c.epochs},
                      {"batches_per_epoch", c.batches_per_epoch},
                      {"lr", c.lr},
                      {"lr_final_ratio", c.lr_final_ratio},
                      {"adam_betas", {c.beta1, c.beta2}},
                      {"adam_eps", c.adam_eps},
                      {"seed", c.seed},
                      {"mu_threshold", c.mu_threshold}};
  j["noise_in_training"] = c.noise_in_training ? to_json(*c.noise_in_training) : nlohmann::json();
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batches_per_epoch = j.value("batches_per_epoch", c.batches_per_epoch);
  c.lr = j.value("lr", c.lr);
  c.lr_final_ratio = j.value("lr_final_ratio", c.lr_final_ratio);
  if (j.contains("adam_betas")) {
    const auto& b = j.at("adam_betas");
    if (!b.is_array() || b.size() != 2) throw ValidationError("adam_betas must be a pair");
    c.beta1 = b[0].get<double>();
    c.beta2 = b[1].get<double>();
  }
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.seed = j.value("seed", c.seed);
  c.mu_threshold = j.value("mu_threshold", c.mu_threshold);
  if (j.contains("noise_in_training") && !j.at("noise_in_training").is_null()) {
    c.noise_in_training = noise_from_json(j.at("noise_in_training"));
  }
  c.validate();
  return c;
}

namespace {

nlohmann::json kkt_json(const KKTResiduals& k) {
  return {{"eps_stat", k.eps_stat}, {"eps_comp", k.eps_comp}, {"eps_dual", k.eps_dual}, {"eps_prim", k.eps_prim}};
}

KKTResiduals kkt_from_json(const nlohmann::json& j) {
  return {j.at("eps_stat").get<double>(), j.at("eps_comp").get<double>(), j.at("eps_dual").get<double>(),
          j.at("eps_prim").get<double>()};
}

nlohmann::json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
  return {{"n", r.n},         {"mae_p", r.mae_p},         {"mae_q", r.mae_q},
          {"mae_v", r.mae_v}, {"mae_theta", r.mae_theta}, {"total_mae", r.total_mae()},
          {"kkt_means", kkt_json(r.kkt_means)}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.n = j.at("n");
  r.mae_p = j.at("mae_p");
  r.mae_q = j.at("mae_q");
  r.mae_v = j.at("mae_v");
  r.mae_theta = j.at("mae_theta");
  r.kkt_means = kkt_from_json(j.at("kkt_means"));
  return r;
}

nlohmann::json to_json(const Checkpoint& c) {
  nlohmann::json hist = nlohmann::json::array();
  for (const EpochRecord& r : c.state.history.epochs) {
    hist.push_back({r.epoch, r.total, r.supervised, r.mae_g, r.mae_v, r.mae_l, r.eps, r.lr, r.seconds});
  }
  return {{"schema", "qopf-checkpoint/1"},
          {"model", to_json(c.model)},
          {"config", to_json(c.config)},
          {"weights", to_json(c.weights)},
          {"state",
           {{"epoch", c.state.epoch},
            {"adam_step", c.state.adam.step},
            {"adam_m", vec_json(c.state.adam.m)},
            {"adam_v", vec_json(c.state.adam.v)},
            {"history", hist}}}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != "qopf-checkpoint/1") throw ValidationError("not a qopf checkpoint");
  Checkpoint c;
  c.model = model_from_json(j.at("model"));
  c.config = train_config_from_json(j.at("config"));
  c.weights = loss_weights_from_json(j.at("weights"));
  const auto& s = j.at("state");
  c.state.epoch = s.at("epoch");
  c.state.adam.step = s.at("adam_step");
  c.state.adam.m = json_vec(s.at("adam_m"));
  c.state.adam.v = json_vec(s.at("adam_v"));
  for (const auto& r : s.at("history")) {
    const auto v = r.get<std::vector<double>>();
    if (v.size() != 9) throw ValidationError("history record needs 9 fields");
    c.state.history.epochs.push_back({static_cast<int>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]});
  }
  if (c.state.adam.m.size() != c.state.adam.v.size() ||
      (c.state.adam.m.size() != 0 && c.state.adam.m.size() != c.model.n_params())) {
    throw ValidationError("optimizer state does not match the model");
  }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) { write_file_atomic(path, to_json(c).dump()); }

Checkpoint load_checkpoint(const std::string& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  try {
    return checkpoint_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace qopf
