#pragma once

// Model variants compared in the experiments and the shared setup used by
// the command-line drivers.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "qopf/compact.hpp"
#include "qopf/dataset.hpp"
#include "qopf/grid.hpp"
#include "qopf/model.hpp"
#include "qopf/train.hpp"

namespace qopf {

/// nn_only and pinn swap the quantum layer for a dense layer of the same
/// width. pinn, qnn_src and qnn_nrc train with the KKT loss.
enum class Variant { nn_only, pinn, plain_hybrid, qnn_src, qnn_nrc };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
const std::vector<Variant>& all_variants();
bool has_quantum_layer(Variant v);
bool uses_physics_loss(Variant v);

struct ModelDims {
  std::vector<int> encoder{64, 16, 4};
  std::vector<int> decoder{64, 128};
  int qubits = 4;  // must equal encoder.back()
  int q_depth = 3;
  bool batchnorm = false;
};

nlohmann::json to_json(const ModelDims& d);
ModelDims model_dims_from_json(const nlohmann::json& j);

ModelConfig variant_config(Variant v, const CompactModel& m, const ModelDims& dims);

/// `base` with lambda_eps zeroed for the variants without a physics loss.
LossWeights variant_weights(Variant v, const LossWeights& base);

/// Initialised model carrying the dataset's normalisation, the dual unit of
/// `m` and output biases at the training-label means.
HybridModel make_model(Variant v, const CompactModel& m, const Dataset& ds, const ModelDims& dims,
                       std::uint64_t seed);

struct DatasetParams {
  int n = 10000;
  std::uint64_t seed = 0;
  double lo_frac = 0.6;
  double hi_frac = 1.0;
  SplitFractions fractions = kDefaultFractions;
  int threads = 1;
};

/// One experiment: case, data protocol, models, training and sweep levels.
/// Relative paths are resolved against the directory of the config file.
struct ExperimentConfig {
  std::string case_path;
  DatasetParams dataset;
  ModelDims model;
  TrainConfig train;
  LossWeights weights;
  std::vector<Variant> variants = all_variants();
  std::vector<std::uint64_t> seeds{0};
  std::vector<double> noise_levels{0.02, 0.04, 0.06, 0.08, 0.10};
  std::string output = "run";
  int jobs = 1;
  int checkpoint_every = 0;  // 0: only at the end of training

  /// Throws ValidationError; checks the case file exists.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Keys absent from `j` keep their defaults.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::string& base_dir = ".");
ExperimentConfig load_experiment_config(const std::string& path);

/// Applies "a.b.c=value" overrides to a config document. The value is parsed
/// as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

struct RunId {
  Variant variant = Variant::qnn_src;
  std::uint64_t seed = 0;

  std::string name() const;  // e.g. "qnn_src-s0"
};

/// Directory layout of an experiment output folder.
struct RunLayout {
  std::string root;

  std::string dataset_dir() const { return root + "/dataset"; }
  std::string run_dir(const RunId& r) const { return root + "/runs/" + r.name(); }
  std::string checkpoint(const RunId& r) const { return run_dir(r) + "/checkpoint.json"; }
  std::string history(const RunId& r) const { return run_dir(r) + "/history.csv"; }
  std::string eval_json(const RunId& r) const { return root + "/eval/" + r.name() + ".json"; }
  std::string manifest(const std::string& command) const { return root + "/manifests/" + command + ".json"; }
};

/// Loads the case and builds or resumes the dataset in layout.dataset_dir().
struct DatasetOutcome {
  Dataset dataset;
  int reused = 0;
  int dropped = 0;
};
DatasetOutcome prepare_dataset(const ExperimentConfig& cfg, const NetworkCase& c, const CompactModel& m,
                               const RunLayout& layout);

/// Dataset from disk, checked against the case it was generated from.
Dataset load_experiment_dataset(const RunLayout& layout, const std::string& case_hash);

struct TrainOutcome {
  RunId id;
  std::string status = "complete";  // or "diverged: ..."
  TrainHistory history;
  double seconds = 0.0;
};

/// Trains one (variant, seed) run, resuming from its checkpoint when asked
/// and one exists. Writes checkpoint.json and history.csv.
TrainOutcome train_run(const ExperimentConfig& cfg, const CompactModel& m, const Dataset& ds, const RunId& id,
                       const RunLayout& layout, bool resume);

/// Runs `ids` on a pool of cfg.jobs threads; outcomes keep the order of ids.
std::vector<TrainOutcome> train_runs(const ExperimentConfig& cfg, const CompactModel& m, const Dataset& ds,
                                     const std::vector<RunId>& ids, const RunLayout& layout, bool resume);

/// Cartesian product of cfg.variants and cfg.seeds.
std::vector<RunId> run_ids(const ExperimentConfig& cfg);

struct SweepRow {
  RunId id;
  double level = 0.0;
  double total_mae = 0.0;
  double ratio = 1.0;  // total_mae / noiseless total_mae
};

/// Noise sweep on the test split for one trained model, including a level-0
/// row evaluated on the density backend.
std::vector<SweepRow> noise_sweep(const HybridModel& model, const RunId& id, const Dataset& ds,
                                  const CompactModel& m, const std::vector<double>& levels);

std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Markdown and CSV summaries built only from files under `root`.
struct Report {
  std::string markdown;
  std::string table_csv;
  std::string convergence_csv;
};
Report build_report(const std::string& root);

/// Median of the final-epoch value of `field` ("total" or "supervised")
/// across histories.
double median_final(const std::vector<TrainHistory>& runs, const std::string& field);
double median(std::vector<double> v);

}  // namespace qopf
