#include "qopf/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "qopf/errors.hpp"
#include "qopf/io.hpp"
#include "qopf/rng.hpp"

namespace qopf {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::nn_only: return "nn_only";
    case Variant::pinn: return "pinn";
    case Variant::plain_hybrid: return "plain_hybrid";
    case Variant::qnn_src: return "qnn_src";
    case Variant::qnn_nrc: return "qnn_nrc";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  for (Variant v : all_variants()) {
    if (to_string(v) == s) return v;
  }
  throw ValidationError("unknown model variant '" + s + "'");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::nn_only, Variant::pinn, Variant::plain_hybrid, Variant::qnn_src,
                                      Variant::qnn_nrc};
  return v;
}

bool has_quantum_layer(Variant v) { return v != Variant::nn_only && v != Variant::pinn; }

bool uses_physics_loss(Variant v) { return v != Variant::nn_only && v != Variant::plain_hybrid; }

nlohmann::json to_json(const ModelDims& d) {
  return {{"encoder", d.encoder}, {"decoder", d.decoder}, {"qubits", d.qubits}, {"q_depth", d.q_depth}, {"batchnorm", d.batchnorm}};
}

ModelDims model_dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  d.encoder = j.value("encoder", d.encoder);
  d.decoder = j.value("decoder", d.decoder);
  d.qubits = j.value("qubits", d.qubits);
  d.q_depth = j.value("q_depth", d.q_depth);
  d.batchnorm = j.value("batchnorm", d.batchnorm);
  return d;
}

ModelConfig variant_config(Variant v, const CompactModel& m, const ModelDims& dims) {
  ModelConfig c;
  c.n_in = m.n_v();
  c.encoder = dims.encoder;
  c.decoder = dims.decoder;
  c.out = OutSpec::for_model(m);
  c.q_depth = dims.q_depth;
  c.batchnorm = dims.batchnorm;
  c.qubits = dims.qubits;
  c.latent = has_quantum_layer(v) ? LatentKind::quantum : LatentKind::dense;
  switch (v) {
    case Variant::qnn_src: c.topology = Topology::sequential_residual; break;
    case Variant::qnn_nrc: c.topology = Topology::nested_residual; break;
    default: c.topology = Topology::plain; break;
  }
  c.validate();
  return c;
}

LossWeights variant_weights(Variant v, const LossWeights& base) {
  LossWeights w = base;
  if (!uses_physics_loss(v)) w.lambda_eps = 0.0;
  return w;
}

HybridModel make_model(Variant v, const CompactModel& m, const Dataset& ds, const ModelDims& dims,
                       std::uint64_t seed) {
  HybridModel model = init_model(variant_config(v, m, dims), seed);
  model.norm = ds.norm;
  model.dual_scale = default_dual_scale(m);
  init_output_bias(model, make_training_data(ds, ds.splits.train, model.config.out, model.dual_scale));
  return model;
}

}  // namespace qopf

namespace qopf {

namespace fs = std::filesystem;

namespace {

std::string fmt(double x, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

std::optional<RunId> parse_run_name(const std::string& name) {
  const auto pos = name.rfind("-s");
  if (pos == std::string::npos) return std::nullopt;
  try {
    RunId id{variant_from_string(name.substr(0, pos)), std::stoull(name.substr(pos + 2))};
    if (id.name() != name) return std::nullopt;
    return id;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::vector<std::string> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() == directories) out.push_back(e.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (case_path.empty()) throw ValidationError("config: case path is required");
  if (!fs::exists(case_path)) throw ValidationError("config: case file '" + case_path + "' does not exist");
  if (dataset.n < 1) throw ValidationError("config: dataset.n must be positive");
  if (dataset.threads < 1) throw ValidationError("config: dataset.threads must be positive");
  if (!(dataset.lo_frac >= 0.0 && dataset.lo_frac <= dataset.hi_frac)) {
    throw ValidationError("config: dataset bounds need 0 <= lo_frac <= hi_frac");
  }
  double fsum = 0.0;
  for (double f : dataset.fractions) {
    if (!(f >= 0.0)) throw ValidationError("config: split fractions must be non-negative");
    fsum += f;
  }
  if (std::abs(fsum - 1.0) > 1e-9) throw ValidationError("config: split fractions must sum to 1");
  train.validate();
  weights.validate();
  if (variants.empty()) throw ValidationError("config: no model variants selected");
  if (seeds.empty()) throw ValidationError("config: no seeds selected");
  for (double e : noise_levels) {
    if (!(e > 0.0 && e < 1.0)) throw ValidationError("config: noise levels must lie in (0, 1)");
  }
  if (jobs < 1) throw ValidationError("config: jobs must be positive");
  if (checkpoint_every < 0) throw ValidationError("config: checkpoint_every must be non-negative");
  if (output.empty()) throw ValidationError("config: output directory is required");
}

nlohmann::json to_json(const ExperimentConfig& c) {
  std::vector<std::string> variants;
  for (Variant v : c.variants) variants.push_back(to_string(v));
  return {{"case", c.case_path},
          {"dataset",
           {{"n", c.dataset.n},
            {"seed", c.dataset.seed},
            {"lo_frac", c.dataset.lo_frac},
            {"hi_frac", c.dataset.hi_frac},
            {"fractions", c.dataset.fractions},
            {"threads", c.dataset.threads}}},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"weights", to_json(c.weights)},
          {"variants", variants},
          {"seeds", c.seeds},
          {"noise_levels", c.noise_levels},
          {"output", c.output},
          {"jobs", c.jobs},
          {"checkpoint_every", c.checkpoint_every}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::string& base_dir) {
  static const std::set<std::string> known{"case",  "dataset", "model",        "train",  "weights",         "variants",
                                           "seeds", "noise_levels", "output", "jobs", "checkpoint_every"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ValidationError("config: unknown key '" + key + "'");
  }
  ExperimentConfig c;
  try {
    c.case_path = resolve(base_dir, j.value("case", std::string()));
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      c.dataset.n = d.value("n", c.dataset.n);
      c.dataset.seed = d.value("seed", c.dataset.seed);
      c.dataset.lo_frac = d.value("lo_frac", c.dataset.lo_frac);
      c.dataset.hi_frac = d.value("hi_frac", c.dataset.hi_frac);
      if (d.contains("fractions")) c.dataset.fractions = d.at("fractions").get<SplitFractions>();
      c.dataset.threads = d.value("threads", c.dataset.threads);
    }
    if (j.contains("model")) c.model = model_dims_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("weights")) c.weights = loss_weights_from_json(j.at("weights"));
    if (j.contains("variants")) {
      c.variants.clear();
      for (const auto& v : j.at("variants")) c.variants.push_back(variant_from_string(v.get<std::string>()));
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("noise_levels")) c.noise_levels = j.at("noise_levels").get<std::vector<double>>();
    c.output = resolve(base_dir, j.value("output", c.output));
    c.jobs = j.value("jobs", c.jobs);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  return experiment_config_from_json(j, fs::path(path).parent_path().string());
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' needs key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  nlohmann::json* node = &j;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) (*node)[parts[i]] = nlohmann::json::object();
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

std::string RunId::name() const { return to_string(variant) + "-s" + std::to_string(seed); }

std::vector<RunId> run_ids(const ExperimentConfig& cfg) {
  std::vector<RunId> ids;
  for (Variant v : cfg.variants) {
    for (std::uint64_t s : cfg.seeds) ids.push_back({v, s});
  }
  return ids;
}

DatasetOutcome prepare_dataset(const ExperimentConfig& cfg, const NetworkCase& c, const CompactModel& m,
                               const RunLayout& layout) {
  const std::string case_hash = git_blob_sha1(read_text_file(cfg.case_path));
  GenerateOptions o;
  o.n = cfg.dataset.n;
  o.seed = cfg.dataset.seed;
  o.lo_frac = cfg.dataset.lo_frac;
  o.hi_frac = cfg.dataset.hi_frac;
  o.fractions = cfg.dataset.fractions;
  o.threads = cfg.dataset.threads;

  std::optional<Dataset> previous;
  if (fs::exists(fs::path(layout.dataset_dir()) / "manifest.json")) {
    try {
      previous = load_dataset(layout.dataset_dir());
    } catch (const std::exception&) {
      previous.reset();  // unreadable leftovers are regenerated
    }
  }
  GenerateResult r = generate_dataset(c, case_hash, o, previous ? &*previous : nullptr);
  save_dataset(layout.dataset_dir(), r.dataset, m);
  return {std::move(r.dataset), r.reused, static_cast<int>(r.dropped.size())};
}

Dataset load_experiment_dataset(const RunLayout& layout, const std::string& case_hash) {
  if (!fs::exists(fs::path(layout.dataset_dir()) / "manifest.json")) {
    throw IoError("no dataset in '" + layout.dataset_dir() + "'; run gen-data first");
  }
  Dataset ds = load_dataset(layout.dataset_dir());
  if (ds.case_hash != case_hash) throw ValidationError("dataset was generated from a different case file");
  return ds;
}

TrainOutcome train_run(const ExperimentConfig& cfg, const CompactModel& m, const Dataset& ds, const RunId& id,
                       const RunLayout& layout, bool resume) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(layout.run_dir(id));
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.train.seed, 100 + id.seed);
  const LossWeights w = variant_weights(id.variant, cfg.weights);

  Checkpoint ck;
  if (resume && fs::exists(layout.checkpoint(id))) {
    ck = load_checkpoint(layout.checkpoint(id));
    if (ck.model.config.n_in != m.n_v() || ck.model.config.out.size() != OutSpec::for_model(m).size()) {
      throw ValidationError("checkpoint " + layout.checkpoint(id) + " does not match the case");
    }
  } else {
    ck.model = make_model(id.variant, m, ds, cfg.model, id.seed);
  }
  ck.config = tc;
  ck.weights = w;

  auto save = [&](const HybridModel& model, const TrainState& st) {
    Checkpoint out{model, st, tc, w};
    save_checkpoint(layout.checkpoint(id), out);
    write_file_atomic(layout.history(id), st.history.to_csv());
  };
  TrainOutcome out;
  out.id = id;
  try {
    train(ck.model, ds, m, tc, w, ck.state, [&](const HybridModel& model, const TrainState& st) {
      if (cfg.checkpoint_every > 0 && st.epoch % cfg.checkpoint_every == 0) save(model, st);
    });
  } catch (const NumericalError& e) {
    out.status = std::string("diverged: ") + e.what();
  }
  save(ck.model, ck.state);
  out.history = ck.state.history;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::vector<TrainOutcome> train_runs(const ExperimentConfig& cfg, const CompactModel& m, const Dataset& ds,
                                     const std::vector<RunId>& ids, const RunLayout& layout, bool resume) {
  std::vector<TrainOutcome> out(ids.size());
  std::vector<std::exception_ptr> errors(ids.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < ids.size(); i = next++) {
      try {
        out[i] = train_run(cfg, m, ds, ids[i], layout, resume);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(ids.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<SweepRow> noise_sweep(const HybridModel& model, const RunId& id, const Dataset& ds,
                                  const CompactModel& m, const std::vector<double>& levels) {
  if (model.config.latent != LatentKind::quantum) {
    throw ValidationError("run " + id.name() + " has no quantum layer to perturb");
  }
  const double base = evaluate(model, ds, ds.splits.test, m).total_mae();
  std::vector<SweepRow> rows;
  std::vector<double> all{0.0};
  all.insert(all.end(), levels.begin(), levels.end());
  for (double e : all) {
    const double t = evaluate(model, ds, ds.splits.test, m, NoiseSpec::from_level(e)).total_mae();
    rows.push_back({id, e, t, base > 0.0 ? t / base : 1.0});
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string s = "run,variant,seed,level,total_mae,ratio\n";
  for (const SweepRow& r : rows) {
    s += r.id.name() + "," + to_string(r.id.variant) + "," + std::to_string(r.id.seed) + "," + format_double(r.level) +
         "," + format_double(r.total_mae) + "," + format_double(r.ratio) + "\n";
  }
  return s;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double median_final(const std::vector<TrainHistory>& runs, const std::string& field) {
  std::vector<double> v;
  for (const TrainHistory& h : runs) {
    if (h.epochs.empty()) continue;
    const EpochRecord& r = h.epochs.back();
    if (field == "total") {
      v.push_back(r.total);
    } else if (field == "supervised") {
      v.push_back(r.supervised);
    } else {
      throw ValidationError("unknown history field '" + field + "'");
    }
  }
  return median(v);
}

Report build_report(const std::string& root) {
  Report rep;
  const fs::path base(root);

  std::map<Variant, std::vector<EvalReport>> evals;
  for (const std::string& f : sorted_entries(base / "eval", false)) {
    if (fs::path(f).extension() != ".json") continue;
    const auto id = parse_run_name(fs::path(f).stem().string());
    if (!id) continue;
    try {
      evals[id->variant].push_back(eval_report_from_json(nlohmann::json::parse(read_text_file((base / "eval" / f).string()))));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("eval/" + f + ": " + e.what());
    }
  }

  std::map<Variant, std::vector<TrainHistory>> hist;
  rep.convergence_csv = "variant,seed,epoch,total,supervised,mae_g,mae_v,mae_l,eps\n";
  for (const std::string& d : sorted_entries(base / "runs", true)) {
    const auto id = parse_run_name(d);
    const fs::path h = base / "runs" / d / "history.csv";
    if (!id || !fs::exists(h)) continue;
    TrainHistory th = TrainHistory::from_csv(read_text_file(h.string()));
    for (const EpochRecord& r : th.epochs) {
      rep.convergence_csv += to_string(id->variant) + "," + std::to_string(id->seed) + "," + std::to_string(r.epoch);
      for (double x : {r.total, r.supervised, r.mae_g, r.mae_v, r.mae_l, r.eps}) rep.convergence_csv += "," + format_double(x);
      rep.convergence_csv += "\n";
    }
    hist[id->variant].push_back(std::move(th));
  }

  std::map<Variant, std::map<double, std::vector<double>>> sweep;
  const fs::path sweep_path = base / "sweep.csv";
  if (fs::exists(sweep_path)) {
    std::istringstream in(read_text_file(sweep_path.string()));
    std::string line;
    std::getline(in, line);
    int line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto cells = split_csv_line(line);
      if (cells.size() != 6) throw ParseError("sweep.csv: expected 6 columns", line_no);
      try {
        sweep[variant_from_string(cells[1])][std::stod(cells[3])].push_back(std::stod(cells[5]));
      } catch (const std::invalid_argument&) {
        throw ParseError("sweep.csv: bad number", line_no);
      }
    }
  }

  std::string& md = rep.markdown;
  md = "# Experiment report\n\n## Test-set MAE\n\nMean over seeds. P, Q and |V| in p.u., angle in radians.\n\n";
  md += "| Model | Runs | MAE(P) | MAE(Q) | MAE(V) | MAE(theta) | Total |\n|---|---|---|---|---|---|---|\n";
  rep.table_csv = "model,runs,mae_p,mae_q,mae_v,mae_theta,total_mae\n";
  for (Variant v : all_variants()) {
    const auto it = evals.find(v);
    if (it == evals.end()) continue;
    EvalReport mean;
    for (const EvalReport& e : it->second) {
      mean.mae_p += e.mae_p / it->second.size();
      mean.mae_q += e.mae_q / it->second.size();
      mean.mae_v += e.mae_v / it->second.size();
      mean.mae_theta += e.mae_theta / it->second.size();
    }
    const std::string runs = std::to_string(it->second.size());
    md += "| " + to_string(v) + " | " + runs + " | " + fmt(mean.mae_p) + " | " + fmt(mean.mae_q) + " | " +
          fmt(mean.mae_v) + " | " + fmt(mean.mae_theta) + " | " + fmt(mean.total_mae()) + " |\n";
    rep.table_csv += to_string(v) + "," + runs + "," + format_double(mean.mae_p) + "," + format_double(mean.mae_q) + "," +
                     format_double(mean.mae_v) + "," + format_double(mean.mae_theta) + "," +
                     format_double(mean.total_mae()) + "\n";
  }
  if (evals.empty()) md += "\n(no evaluations found)\n";

  md += "\n## Final training loss\n\nMedian over seeds of the last epoch.\n\n";
  md += "| Model | Runs | Epochs | Total | Supervised |\n|---|---|---|---|---|\n";
  for (Variant v : all_variants()) {
    const auto it = hist.find(v);
    if (it == hist.end()) continue;
    int epochs = 0;
    for (const auto& h : it->second) epochs = std::max(epochs, static_cast<int>(h.epochs.size()));
    md += "| " + to_string(v) + " | " + std::to_string(it->second.size()) + " | " + std::to_string(epochs) + " | " +
          fmt(median_final(it->second, "total")) + " | " + fmt(median_final(it->second, "supervised")) + " |\n";
  }
  if (hist.empty()) md += "\n(no training histories found)\n";

  if (!sweep.empty()) {
    std::set<double> levels;
    for (const auto& [v, m] : sweep) {
      for (const auto& [e, r] : m) levels.insert(e);
    }
    md += "\n## Noise sweep\n\nMedian over seeds of total test MAE divided by the noiseless value.\n\n| Model |";
    std::string sep = "|---|";
    for (double e : levels) {
      md += " e=" + fmt(e, "%.2f") + " |";
      sep += "---|";
    }
    md += "\n" + sep + "\n";
    for (Variant v : all_variants()) {
      const auto it = sweep.find(v);
      if (it == sweep.end()) continue;
      md += "| " + to_string(v) + " |";
      for (double e : levels) {
        const auto jt = it->second.find(e);
        md += " " + (jt == it->second.end() ? std::string("-") : fmt(median(jt->second), "%.4f")) + " |";
      }
      md += "\n";
    }
  }
  return rep;
}

}  // namespace qopf
