#include "qopf/cli.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "qopf/checks.hpp"
#include "qopf/compact.hpp"
#include "qopf/errors.hpp"
#include "qopf/experiment.hpp"
#include "qopf/grid.hpp"
#include "qopf/io.hpp"
#include "qopf/opf_solver.hpp"

namespace qopf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json host_info() {
  char name[256] = {0};
  gethostname(name, sizeof name - 1);
  return {{"hostname", name},
          {"hardware_concurrency", std::thread::hardware_concurrency()},
          {"compiler", __VERSION__}};
}

json file_hash(const std::string& path) { return {{"path", path}, {"git_sha1", git_blob_sha1(read_text_file(path))}}; }

/// RunManifest: written before any result, rewritten with the outcome.
class Manifest {
 public:
  Manifest(const RunLayout& layout, const std::string& command, const ExperimentConfig& cfg, json inputs)
      : path_(layout.manifest(command)), start_(std::chrono::steady_clock::now()) {
    fs::create_directories(fs::path(path_).parent_path());
    const json config = to_json(cfg);
    std::vector<std::uint64_t> seeds = cfg.seeds;
    doc_ = {{"tool", "qopf"},
            {"tool_version", kToolVersion},
            {"command", command},
            {"config", config},
            {"config_hash", git_blob_sha1(config.dump())},
            {"inputs", std::move(inputs)},
            {"seeds", {{"dataset", cfg.dataset.seed}, {"train", cfg.train.seed}, {"runs", seeds}}},
            {"started_utc", utc_now()},
            {"host", host_info()},
            {"status", "running"}};
    write();
  }

  json& doc() { return doc_; }

  void finish(const std::string& status) {
    doc_["status"] = status;
    doc_["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write();
  }

 private:
  void write() const { write_file_atomic(path_, doc_.dump(2) + "\n"); }

  std::string path_;
  std::chrono::steady_clock::time_point start_;
  json doc_;
};

/// Options shared by the experiment commands.
struct ConfigOptions {
  std::string path;
  std::vector<std::string> sets;
  std::string out;
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  int epochs = 0;
  int jobs = 0;

  void add_to(CLI::App* app, bool training) {
    app->add_option("-c,--config", path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override a config key, e.g. train.lr=0.002");
    app->add_option("-o,--out", out, "Output directory (overrides config)");
    app->add_option("--variants", variants, "Model variants (overrides config)")->delimiter(',');
    app->add_option("--seeds", seeds, "Seeds (overrides config)")->delimiter(',');
    if (training) {
      app->add_option("--epochs", epochs, "Training epochs (overrides config)");
      app->add_option("--jobs", jobs, "Parallel training runs (overrides config)");
    }
  }

  ExperimentConfig load() const {
    json j;
    try {
      j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("config: top level must be an object");
    for (const std::string& s : sets) apply_override(j, s);
    if (!variants.empty()) j["variants"] = variants;
    if (!seeds.empty()) j["seeds"] = seeds;
    if (epochs > 0) j["train"]["epochs"] = epochs;
    if (jobs > 0) j["jobs"] = jobs;
    const std::string base = fs::path(path).parent_path().string();
    if (!out.empty()) j["output"] = fs::absolute(out).string();
    return experiment_config_from_json(j, base.empty() ? "." : base);
  }
};

json case_summary(const std::string& path) {
  std::vector<std::string> warnings;
  const NetworkCase c = load_case_file(path, &warnings);
  const CompactModel m = build_compact(c);
  int rated = 0;
  for (const auto& b : c.branches) rated += b.flow_limit > 0.0;
  const Eigen::VectorXd d = c.demand();
  return {{"path", path},
          {"git_sha1", git_blob_sha1(read_text_file(path))},
          {"base_mva", c.base_mva},
          {"n_bus", c.n_bus()},
          {"n_gen", c.n_gen()},
          {"n_branch", c.n_branch()},
          {"rated_lines", rated},
          {"slack_bus", c.buses[c.slack_index()].id},
          {"total_p_demand", d.head(c.n_bus()).sum()},
          {"total_q_demand", d.tail(c.n_bus()).sum()},
          {"compact", {{"n_eq", m.n_eq()}, {"n_ineq", m.n_ineq()}, {"n_v", m.n_v()}, {"n_gvars", m.n_gvars()}}},
          {"warnings", warnings}};
}

std::vector<double> vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

int cmd_solve(const std::string& path, double scale, const std::string& objective, int max_iter,
              const std::string& out_path, std::ostream& out) {
  const NetworkCase c = load_case_file(path);
  const CompactModel m = build_compact(c);
  SolverOptions opts;
  opts.max_iter = max_iter;
  if (objective == "quadratic") {
    opts.objective = CostModel::quadratic;
  } else if (objective != "linear") {
    throw ValidationError("objective must be linear or quadratic");
  }
  const Eigen::VectorXd d = scale * c.demand();
  const OPFSolution sol = solve_acopf(m, d, std::nullopt, opts);
  const VerifyReport rep = verify_solution(m, sol, d);
  const int nb = c.n_bus(), ng = c.n_gen();
  Eigen::VectorXd vm(nb), va(nb);
  for (int i = 0; i < nb; ++i) {
    vm(i) = std::hypot(sol.candidate.v(i), sol.candidate.v(nb + i));
    va(i) = std::atan2(sol.candidate.v(nb + i), sol.candidate.v(i));
  }
  const json j = {{"status", to_string(sol.status)},
                  {"objective", sol.objective},
                  {"iterations", sol.iterations},
                  {"demand_scale", scale},
                  {"verify",
                   {{"feasible", rep.feasible},
                    {"max_eq", rep.max_eq},
                    {"max_ineq", rep.max_ineq},
                    {"eps_stat", rep.kkt.eps_stat},
                    {"eps_comp", rep.kkt.eps_comp},
                    {"eps_dual", rep.kkt.eps_dual},
                    {"eps_prim", rep.kkt.eps_prim}}},
                  {"pg", vec(sol.candidate.g.head(ng))},
                  {"qg", vec(sol.candidate.g.tail(ng))},
                  {"vm", vec(vm)},
                  {"va", vec(va)},
                  {"rho", vec(sol.candidate.rho)},
                  {"mu", vec(sol.candidate.mu)}};
  if (!out_path.empty()) {
    write_file_atomic(out_path, j.dump(2) + "\n");
  } else {
    out << j.dump(2) << "\n";
  }
  return sol.status == SolveStatus::converged ? 0 : 3;
}

struct Loaded {
  ExperimentConfig cfg;
  RunLayout layout;
  NetworkCase net;
  CompactModel model;
  std::string case_hash;
};

Loaded load_experiment(const ConfigOptions& o) {
  Loaded l;
  l.cfg = o.load();
  l.layout.root = l.cfg.output;
  l.net = load_case_file(l.cfg.case_path);
  l.model = build_compact(l.net);
  l.case_hash = git_blob_sha1(read_text_file(l.cfg.case_path));
  return l;
}

json dataset_inputs(const Loaded& l) {
  json j = {{"case", file_hash(l.cfg.case_path)}};
  for (const char* f : {"manifest.json", "demands.csv", "labels.csv"}) {
    const fs::path p = fs::path(l.layout.dataset_dir()) / f;
    if (fs::exists(p)) j[std::string("dataset/") + f] = file_hash(p.string());
  }
  return j;
}

int cmd_gen_data(const ConfigOptions& o, std::ostream& out) {
  Loaded l = load_experiment(o);
  Manifest man(l.layout, "gen-data", l.cfg, {{"case", file_hash(l.cfg.case_path)}});
  const DatasetOutcome r = prepare_dataset(l.cfg, l.net, l.model, l.layout);
  const Splits& s = r.dataset.splits;
  const json j = {{"dataset", l.layout.dataset_dir()},
                  {"n", r.dataset.size()},
                  {"split_sizes", {{"collocation", s.collocation.size()}, {"train", s.train.size()}, {"test", s.test.size()}}},
                  {"dropped", r.dropped},
                  {"reused_labels", r.reused}};
  man.doc()["result"] = j;
  man.finish("complete");
  out << j.dump(2) << "\n";
  return 0;
}

int cmd_train(const ConfigOptions& o, bool resume, int checkpoint_every, std::ostream& out) {
  Loaded l = load_experiment(o);
  if (checkpoint_every > 0) l.cfg.checkpoint_every = checkpoint_every;
  const Dataset ds = load_experiment_dataset(l.layout, l.case_hash);
  Manifest man(l.layout, "train", l.cfg, dataset_inputs(l));
  const std::vector<RunId> ids = run_ids(l.cfg);
  const std::vector<TrainOutcome> res = train_runs(l.cfg, l.model, ds, ids, l.layout, resume);
  bool diverged = false;
  json runs = json::array();
  for (const TrainOutcome& r : res) {
    const EpochRecord last = r.history.epochs.empty() ? EpochRecord{} : r.history.epochs.back();
    const json summary = {{"run", r.id.name()},
                          {"variant", to_string(r.id.variant)},
                          {"seed", r.id.seed},
                          {"status", r.status},
                          {"epochs", static_cast<int>(r.history.epochs.size())},
                          {"final_total", last.total},
                          {"final_supervised", last.supervised},
                          {"seconds", r.seconds}};
    write_file_atomic(l.layout.run_dir(r.id) + "/summary.json", summary.dump(2) + "\n");
    runs.push_back(summary);
    diverged = diverged || r.status != "complete";
    out << r.id.name() << ": " << r.status << ", epochs " << r.history.epochs.size() << ", final loss "
        << last.total << " (supervised " << last.supervised << ")\n";
  }
  man.doc()["runs"] = runs;
  man.finish(diverged ? "diverged" : "complete");
  return diverged ? 3 : 0;
}

std::string eval_csv_row(const RunId& id, const EvalReport& r) {
  std::string s = id.name() + "," + to_string(id.variant) + "," + std::to_string(id.seed) + "," + std::to_string(r.n);
  for (double x : {r.mae_p, r.mae_q, r.mae_v, r.mae_theta, r.total_mae(), r.kkt_means.eps_stat,
                   r.kkt_means.eps_comp, r.kkt_means.eps_dual, r.kkt_means.eps_prim}) {
    s += "," + format_double(x);
  }
  return s + "\n";
}

int cmd_eval(const ConfigOptions& o, std::optional<double> level, std::ostream& out) {
  Loaded l = load_experiment(o);
  const Dataset ds = load_experiment_dataset(l.layout, l.case_hash);
  Manifest man(l.layout, level ? "eval-noise" : "eval", l.cfg, dataset_inputs(l));
  const std::optional<NoiseSpec> noise =
      level ? std::optional<NoiseSpec>(NoiseSpec::from_level(*level)) : std::nullopt;
  const std::string dir =
      level ? l.layout.root + "/eval/noise-" + format_double(*level) : l.layout.root + "/eval";
  fs::create_directories(dir);
  std::string csv = "run,variant,seed,n,mae_p,mae_q,mae_v,mae_theta,total_mae,eps_stat,eps_comp,eps_dual,eps_prim\n";
  for (const RunId& id : run_ids(l.cfg)) {
    if (!fs::exists(l.layout.checkpoint(id))) throw IoError("missing checkpoint " + l.layout.checkpoint(id));
    if (noise && !has_quantum_layer(id.variant)) continue;
    const Checkpoint ck = load_checkpoint(l.layout.checkpoint(id));
    const EvalReport r = evaluate(ck.model, ds, ds.splits.test, l.model, noise);
    write_file_atomic(dir + "/" + id.name() + ".json", to_json(r).dump(2) + "\n");
    csv += eval_csv_row(id, r);
    out << id.name() << ": MAE(P) " << r.mae_p << "  MAE(Q) " << r.mae_q << "  MAE(V) " << r.mae_v
        << "  MAE(theta) " << r.mae_theta << "\n";
  }
  write_file_atomic(dir + "/eval.csv", csv);
  man.finish("complete");
  return 0;
}

int cmd_noise_sweep(const ConfigOptions& o, const std::vector<double>& levels_flag, std::ostream& out) {
  Loaded l = load_experiment(o);
  if (!levels_flag.empty()) {
    for (double e : levels_flag) {
      if (!(e > 0.0 && e < 1.0)) throw ValidationError("noise levels must lie in (0, 1)");
    }
    l.cfg.noise_levels = levels_flag;
  }
  for (Variant v : l.cfg.variants) {
    if (!has_quantum_layer(v) && !o.variants.empty()) {
      throw ValidationError("variant " + to_string(v) + " has no quantum layer to sweep");
    }
  }
  const Dataset ds = load_experiment_dataset(l.layout, l.case_hash);
  Manifest man(l.layout, "noise-sweep", l.cfg, dataset_inputs(l));
  std::vector<SweepRow> rows;
  for (const RunId& id : run_ids(l.cfg)) {
    if (!has_quantum_layer(id.variant)) continue;
    if (!fs::exists(l.layout.checkpoint(id))) throw IoError("missing checkpoint " + l.layout.checkpoint(id));
    const Checkpoint ck = load_checkpoint(l.layout.checkpoint(id));
    const auto r = noise_sweep(ck.model, id, ds, l.model, l.cfg.noise_levels);
    for (const SweepRow& row : r) {
      out << id.name() << "  e=" << row.level << "  ratio " << row.ratio << "\n";
    }
    rows.insert(rows.end(), r.begin(), r.end());
  }
  if (rows.empty()) throw ValidationError("no quantum-layer runs selected for the sweep");
  write_file_atomic(l.layout.root + "/sweep.csv", sweep_csv(rows));
  man.finish("complete");
  return 0;
}

int cmd_report(const std::string& root, std::ostream& out) {
  if (!fs::is_directory(root)) throw IoError("run directory '" + root + "' does not exist");
  const Report r = build_report(root);
  write_file_atomic(root + "/report.md", r.markdown);
  write_file_atomic(root + "/report_table.csv", r.table_csv);
  write_file_atomic(root + "/convergence.csv", r.convergence_csv);
  out << r.markdown;
  return 0;
}

int cmd_qsim_check(int circuits, int channels, std::uint64_t seed, double level, std::ostream& out) {
  if (circuits < 1 || channels < 1) throw ValidationError("circuit and channel counts must be positive");
  const QsimCheckReport r = qsim_self_check(circuits, channels, seed, level);
  const bool ok = r.kraus_completeness <= 1e-14 && r.channel_trace <= 1e-12 && r.channel_hermitian <= 1e-12 &&
                  r.channel_min_eigenvalue >= -1e-12 && r.density_vs_statevector <= 1e-12 &&
                  r.shift_vs_fd_noiseless <= 1e-6 && r.shift_vs_fd_noisy <= 1e-6;
  json j = to_json(r);
  j["pass"] = ok;
  out << j.dump(2) << "\n";
  return ok ? 0 : 3;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hybrid quantum-classical AC-OPF toolkit", "qopf"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::string case_path, out_path, objective = "linear", run_dir;
  double scale = 1.0, level = -1.0, check_level = 0.05;
  int max_iter = 200, checkpoint_every = 0, circuits = 100, channels = 1000;
  std::uint64_t check_seed = 0;
  bool resume = false;
  std::vector<double> levels;
  ConfigOptions gen_opts, train_opts, eval_opts, sweep_opts;

  auto* case_cmd = app.add_subcommand("case", "Network case utilities")->require_subcommand(1);
  auto* inspect = case_cmd->add_subcommand("inspect", "Summarise a MATPOWER case");
  inspect->add_option("case", case_path, "Case file")->required()->check(CLI::ExistingFile);

  auto* compact_cmd = app.add_subcommand("compact", "Compact AC-OPF utilities")->require_subcommand(1);
  auto* dump = compact_cmd->add_subcommand("dump", "Write the compact model as JSON");
  dump->add_option("case", case_path, "Case file")->required()->check(CLI::ExistingFile);
  dump->add_option("-o,--out", out_path, "Output file (stdout if omitted)");

  auto* solve = app.add_subcommand("solve", "Solve the AC-OPF at scaled nominal demand");
  solve->add_option("case", case_path, "Case file")->required()->check(CLI::ExistingFile);
  solve->add_option("--scale", scale, "Demand scale factor");
  solve->add_option("--objective", objective, "linear or quadratic")->check(CLI::IsMember({"linear", "quadratic"}));
  solve->add_option("--max-iter", max_iter, "Iteration limit");
  solve->add_option("-o,--out", out_path, "Output file (stdout if omitted)");

  auto* gen = app.add_subcommand("gen-data", "Sample demands and label them (resumable)");
  gen_opts.add_to(gen, false);

  auto* train_cmd = app.add_subcommand("train", "Train every configured variant and seed");
  train_opts.add_to(train_cmd, true);
  train_cmd->add_flag("--resume", resume, "Continue from existing checkpoints");
  train_cmd->add_option("--checkpoint-every", checkpoint_every, "Checkpoint period in epochs");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate trained runs on the test split");
  eval_opts.add_to(eval_cmd, false);
  eval_cmd->add_option("--noise", level, "Scalar noise level for the quantum layer");

  auto* sweep = app.add_subcommand("noise-sweep", "MAE ratio of quantum runs across noise levels");
  sweep_opts.add_to(sweep, false);
  sweep->add_option("--levels", levels, "Noise levels (overrides config)")->delimiter(',');

  auto* report = app.add_subcommand("report", "Summarise a run directory as Markdown and CSV");
  report->add_option("run_dir", run_dir, "Experiment output directory")->required();

  auto* qsim_cmd = app.add_subcommand("qsim", "Quantum simulator utilities")->require_subcommand(1);
  auto* check = qsim_cmd->add_subcommand("check", "Randomised channel and gradient self-check");
  check->add_option("--circuits", circuits, "Random circuits");
  check->add_option("--channels", channels, "Random channel applications");
  check->add_option("--seed", check_seed, "Seed");
  check->add_option("--level", check_level, "Noise level for the noisy gradient check");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*inspect) {
      out << case_summary(case_path).dump(2) << "\n";
      return 0;
    }
    if (*dump) {
      const std::string text = to_json(build_compact(load_case_file(case_path))).dump(1) + "\n";
      if (out_path.empty()) {
        out << text;
      } else {
        write_file_atomic(out_path, text);
      }
      return 0;
    }
    if (*solve) return cmd_solve(case_path, scale, objective, max_iter, out_path, out);
    if (*gen) return cmd_gen_data(gen_opts, out);
    if (*train_cmd) return cmd_train(train_opts, resume, checkpoint_every, out);
    if (*eval_cmd) {
      if (eval_cmd->count("--noise") && !(level >= 0.0 && level < 1.0)) {
        throw ValidationError("--noise must lie in [0, 1)");
      }
      return cmd_eval(eval_opts, eval_cmd->count("--noise") ? std::optional<double>(level) : std::nullopt, out);
    }
    if (*sweep) return cmd_noise_sweep(sweep_opts, levels, out);
    if (*report) return cmd_report(run_dir, out);
    if (*check) return cmd_qsim_check(circuits, channels, check_seed, check_level, out);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  err << app.help();
  return 1;
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace qopf
