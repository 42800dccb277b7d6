#pragma once

// Supervised and KKT losses, Adam, the epoch loop and evaluation metrics.
// Predictions are model outputs in the OutSpec layout: [P_g, Q_g, |V|,
// angle, rho, mu] with duals in units of HybridModel::dual_scale.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qopf/compact.hpp"
#include "qopf/dataset.hpp"
#include "qopf/model.hpp"
#include "qopf/qsim.hpp"

namespace qopf {

struct LossWeights {
  double lambda_p = 1.0;
  double lambda_v = 1.0;
  double lambda_l = 1.0;
  double lambda_eps = 0.1;

  void validate() const;
};

struct TrainConfig {
  int epochs = 1000;
  int batches_per_epoch = 50;
  double lr = 1e-3;
  double lr_final_ratio = 0.1;  // cosine decay ends at lr * ratio
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::optional<NoiseSpec> noise_in_training;
  double mu_threshold = 1e-8;  // physical units; smaller label duals become 0

  void validate() const;
  /// Cosine schedule value at optimizer step `step` of `total_steps`.
  double lr_at(std::int64_t step, std::int64_t total_steps) const;
};

/// Training targets and inputs, one column per sample.
struct TrainingData {
  Eigen::MatrixXd x;       // normalised inputs
  Eigen::MatrixXd demand;  // raw demands
  Eigen::MatrixXd target;  // zero columns where unlabelled
  std::vector<char> labeled;
  std::vector<int> source;  // dataset index of each column

  int size() const { return static_cast<int>(labeled.size()); }
  int n_labeled() const;
};

/// Target vector of one solver label: rectangular V converted to polar,
/// duals divided by `dual_scale` after zeroing mu below `mu_threshold`.
Eigen::VectorXd label_target(const OutSpec& spec, const OPFSolution& label, double dual_scale,
                             double mu_threshold = 1e-8);

TrainingData make_training_data(const Dataset& ds, const std::vector<int>& indices, const OutSpec& spec,
                                double dual_scale, double mu_threshold = 1e-8);

/// max |c|, the unit used for dual outputs.
double default_dual_scale(const CompactModel& m);

struct LossTerms {
  double mae_g = 0.0;  // unweighted means over labelled entries
  double mae_v = 0.0;
  double mae_l = 0.0;
  double supervised = 0.0;  // lambda-weighted sum of the three
  KKTResiduals kkt;         // means over every sample in the batch
  double eps = 0.0;         // kkt.total()
  double total = 0.0;
  int n_labeled = 0;
  int n_samples = 0;
};

struct LossResult {
  LossTerms terms;
  Eigen::MatrixXd grad;  // d loss / d prediction
};

/// lambda_P mean|G^ - G| + lambda_V mean|V^ - V| + lambda_L mean|L^ - L|,
/// means taken over every entry of the batch.
LossResult supervised_loss(const OutSpec& spec, const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target,
                           const LossWeights& w);

/// Mean over the batch of the summed KKT residuals, with duals divided
/// through by `cost_scale`.
LossResult physics_loss(const CompactModel& m, const OutSpec& spec, const Eigen::MatrixXd& pred,
                        const Eigen::MatrixXd& demand, double cost_scale = 1.0);

/// (1/N_t) sum over labelled columns of the supervised terms plus
/// lambda_eps/(N_t + N_c) times the summed KKT residuals of all columns.
/// The physics part is skipped entirely when lambda_eps is zero.
LossResult total_loss(const CompactModel& m, const OutSpec& spec, const Eigen::MatrixXd& pred,
                      const Eigen::MatrixXd& target, const std::vector<char>& labeled,
                      const Eigen::MatrixXd& demand, const LossWeights& w, double cost_scale = 1.0);

struct AdamState {
  std::int64_t step = 0;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
};

/// Flattened parameter vector in for_each_param order.
Eigen::VectorXd flatten_params(HybridModel& model);
void assign_params(HybridModel& model, const Eigen::VectorXd& flat);

/// One bias-corrected Adam update. Bumps model.version.
void adam_step(HybridModel& model, HybridModel& grad, AdamState& state, double lr, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double total = 0.0;
  double supervised = 0.0;
  double mae_g = 0.0;
  double mae_v = 0.0;
  double mae_l = 0.0;
  double eps = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  std::string to_csv() const;
  static TrainHistory from_csv(const std::string& text);
};

struct TrainState {
  int epoch = 0;  // completed epochs
  AdamState adam;
  TrainHistory history;
};

using EpochCallback = std::function<void(const HybridModel&, const TrainState&)>;

/// Runs epochs state.epoch+1 .. cfg.epochs. Each epoch jointly shuffles the
/// train and collocation samples and cuts them into batches_per_epoch
/// batches. Throws NumericalError when a batch loss is not finite.
TrainHistory train(HybridModel& model, const Dataset& ds, const CompactModel& cm, const TrainConfig& cfg,
                   const LossWeights& w, TrainState& state, const EpochCallback& on_epoch = {});
TrainHistory train(HybridModel& model, const Dataset& ds, const CompactModel& cm, const TrainConfig& cfg,
                   const LossWeights& w);

/// Sets the output-layer bias to the mean labelled target (through the
/// inverse softplus for mu) so training starts from the label mean.
void init_output_bias(HybridModel& model, const TrainingData& data);

struct EvalReport {
  int n = 0;
  double mae_p = 0.0;      // p.u.
  double mae_q = 0.0;      // p.u.
  double mae_v = 0.0;      // |V| in p.u.
  double mae_theta = 0.0;  // radians
  KKTResiduals kkt_means;  // duals in dual_scale units

  double total_mae() const { return mae_p + mae_q + mae_v + mae_theta; }
};

/// Metrics of prediction columns against target columns.
EvalReport evaluate_predictions(const OutSpec& spec, const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);

/// Evaluates on dataset samples `indices`; every one must be labelled.
EvalReport evaluate(const HybridModel& model, const Dataset& ds, const std::vector<int>& indices,
                    const CompactModel& cm, const std::optional<NoiseSpec>& noise = std::nullopt);

nlohmann::json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

/// Model plus optimizer state and history, enough to resume training.
struct Checkpoint {
  HybridModel model;
  TrainState state;
  TrainConfig config;
  LossWeights weights;
};

nlohmann::json to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace qopf
