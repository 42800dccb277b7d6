#pragma once

// Demand sampling, OPF labelling, split/normalisation and on-disk layout.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qopf/compact.hpp"
#include "qopf/grid.hpp"
#include "qopf/opf_solver.hpp"

namespace qopf {

struct DemandBounds {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

/// [lo_frac, hi_frac] times each nominal entry. Zero-load entries stay zero.
DemandBounds scaled_bounds(const NetworkCase& c, double lo_frac = 0.6, double hi_frac = 1.0);

/// Latin hypercube: each dimension is cut into n equal strata, one point per
/// stratum, with an independent seeded stratum order per dimension.
std::vector<Eigen::VectorXd> lhs_sample(int n, const DemandBounds& bounds, std::uint64_t seed);

struct DemandSample {
  Eigen::VectorXd d;
  std::optional<OPFSolution> label;
};

struct DroppedSample {
  int index;
  std::string reason;
};

struct LabelOutcome {
  std::vector<DemandSample> samples;  // input order, failures removed
  std::vector<int> source;            // input position of each kept sample
  std::vector<DroppedSample> dropped;
};

/// Solves every demand; a failed solve is retried once at 0.95x demand and
/// dropped if that also fails. Results do not depend on `threads`.
LabelOutcome label_samples(const NetworkCase& c, const std::vector<Eigen::VectorXd>& demands,
                           const SolverOptions& opts = {}, int threads = 1);

struct NormStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  Eigen::VectorXd invert(const Eigen::VectorXd& z) const;
  bool empty() const { return mean.size() == 0; }
};

/// Population mean/std over `rows`; zero-spread dimensions get std = 1.
NormStats compute_norm(const std::vector<Eigen::VectorXd>& rows);

struct Splits {
  std::vector<int> collocation;
  std::vector<int> train;
  std::vector<int> test;
  std::vector<int> dropped;  // labelling failed; in no split
};

using SplitFractions = std::array<double, 3>;  // collocation, train, test
inline constexpr SplitFractions kDefaultFractions{0.5, 0.2, 0.3};

/// Seeded shuffle then contiguous cut. Sizes are floor(f*n) for train and
/// test, with the remainder going to collocation.
Splits split_indices(int n, const SplitFractions& f, std::uint64_t seed);

struct Dataset {
  std::vector<DemandSample> samples;  // every drawn demand
  Splits splits;
  NormStats norm;
  std::uint64_t seed = 0;
  DemandBounds bounds;
  std::string case_hash;
  SplitFractions fractions = kDefaultFractions;

  int size() const { return static_cast<int>(samples.size()); }
  Eigen::VectorXd normalized_input(int i) const { return norm.apply(samples[i].d); }
};

/// Assigns splits and removes labels from collocation samples.
Dataset split(Dataset ds, const SplitFractions& f, std::uint64_t seed);

/// Stores train-split statistics in `norm`. Samples keep raw demands;
/// normalised inputs come from Dataset::normalized_input.
Dataset normalize(Dataset ds);

struct GenerateOptions {
  int n = 100;
  std::uint64_t seed = 0;
  double lo_frac = 0.6;
  double hi_frac = 1.0;
  SplitFractions fractions = kDefaultFractions;
  SolverOptions solver;
  int threads = 1;
};

struct GenerateResult {
  Dataset dataset;
  std::vector<DroppedSample> dropped;  // indices into dataset.samples
  int reused = 0;                      // labels taken from `previous`
};

/// Full pipeline: LHS draw, split, label train and test samples, normalise.
/// Labels present in `previous` for the same demand vector are reused.
GenerateResult generate_dataset(const NetworkCase& c, const std::string& case_hash,
                                const GenerateOptions& opts, const Dataset* previous = nullptr);

/// Writes manifest.json, demands.csv and labels.csv into `dir` (created if
/// missing). Every file is replaced atomically.
void save_dataset(const std::string& dir, const Dataset& ds, const CompactModel& m);
Dataset load_dataset(const std::string& dir);

/// Convenience: input/label layout used by labels.csv.
std::vector<std::string> label_columns(const CompactModel& m);

}  // namespace qopf
