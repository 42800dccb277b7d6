#include "qopf/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "qopf/errors.hpp"
#include "qopf/io.hpp"
#include "qopf/rng.hpp"

namespace qopf {

namespace fs = std::filesystem;
using Eigen::VectorXd;

DemandBounds scaled_bounds(const NetworkCase& c, double lo_frac, double hi_frac) {
  if (!(lo_frac <= hi_frac)) throw ValidationError("demand bounds: lo_frac > hi_frac");
  const VectorXd nominal = c.demand();
  DemandBounds b{lo_frac * nominal, hi_frac * nominal};
  // Negative nominal entries flip the ordering.
  for (int i = 0; i < nominal.size(); ++i) {
    if (b.lo(i) > b.hi(i)) std::swap(b.lo(i), b.hi(i));
  }
  return b;
}

std::vector<VectorXd> lhs_sample(int n, const DemandBounds& bounds, std::uint64_t seed) {
  if (n < 1) throw ValidationError("lhs_sample: n must be >= 1");
  const int dim = static_cast<int>(bounds.lo.size());
  if (bounds.hi.size() != dim) throw DimensionError("lhs_sample: bounds size mismatch");
  for (int j = 0; j < dim; ++j) {
    if (bounds.lo(j) > bounds.hi(j)) throw ValidationError("lhs_sample: lo > hi");
  }
  Rng rng(seed);
  std::vector<VectorXd> out(n, VectorXd(dim));
  for (int j = 0; j < dim; ++j) {
    const std::vector<int> strata = rng.permutation(n);
    const double width = bounds.hi(j) - bounds.lo(j);
    for (int i = 0; i < n; ++i) {
      const double u = (strata[i] + rng.uniform()) / n;
      out[i](j) = bounds.lo(j) + width * u;
    }
  }
  return out;
}

LabelOutcome label_samples(const NetworkCase& c, const std::vector<VectorXd>& demands,
                           const SolverOptions& opts, int threads) {
  const CompactModel model = build_compact(c);
  const int n = static_cast<int>(demands.size());
  struct Slot {
    VectorXd d;
    std::optional<OPFSolution> sol;
    std::string reason;
  };
  std::vector<Slot> slots(n);

  auto work = [&](int i) {
    Slot& s = slots[i];
    s.d = demands[i];
    OPFSolution sol = solve_acopf(model, s.d, std::nullopt, opts);
    if (sol.status == SolveStatus::converged) {
      s.sol = std::move(sol);
      return;
    }
    const std::string first = to_string(sol.status);
    const VectorXd retry = 0.95 * demands[i];
    OPFSolution again = solve_acopf(model, retry, std::nullopt, opts);
    if (again.status == SolveStatus::converged) {
      s.d = retry;
      s.sol = std::move(again);
      return;
    }
    s.reason = first + "; retry at 0.95x: " + to_string(again.status);
  };

  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) work(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (int i = next++; i < n; i = next++) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  LabelOutcome out;
  for (int i = 0; i < n; ++i) {
    if (slots[i].sol) {
      out.samples.push_back({std::move(slots[i].d), std::move(slots[i].sol)});
      out.source.push_back(i);
    } else {
      out.dropped.push_back({i, slots[i].reason});
    }
  }
  return out;
}

VectorXd NormStats::apply(const VectorXd& x) const {
  if (x.size() != mean.size()) throw DimensionError("normalize: input size mismatch");
  return (x - mean).cwiseQuotient(std);
}

VectorXd NormStats::invert(const VectorXd& z) const {
  if (z.size() != mean.size()) throw DimensionError("denormalize: input size mismatch");
  return z.cwiseProduct(std) + mean;
}

NormStats compute_norm(const std::vector<VectorXd>& rows) {
  if (rows.empty()) throw ValidationError("normalization needs at least one sample");
  const int dim = static_cast<int>(rows[0].size());
  NormStats s{VectorXd::Zero(dim), VectorXd::Zero(dim)};
  for (const auto& r : rows) s.mean += r;
  s.mean /= static_cast<double>(rows.size());
  for (const auto& r : rows) s.std += (r - s.mean).cwiseAbs2();
  s.std = (s.std / static_cast<double>(rows.size())).cwiseSqrt();
  for (int j = 0; j < dim; ++j) {
    // Relative guard: spreads at rounding level count as constant.
    const double scale = std::max(1.0, std::abs(s.mean(j)));
    if (!(s.std(j) > 1e-12 * scale)) s.std(j) = 1.0;
  }
  return s;
}

Splits split_indices(int n, const SplitFractions& f, std::uint64_t seed) {
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9 || f[0] < 0 || f[1] < 0 || f[2] < 0) {
    throw ValidationError("split fractions must be non-negative and sum to 1");
  }
  Rng rng(seed);
  const std::vector<int> perm = rng.permutation(n);
  const int n_train = static_cast<int>(std::llround(f[1] * n));
  const int n_test = std::min(n - n_train, static_cast<int>(std::llround(f[2] * n)));
  const int n_col = n - n_train - n_test;
  Splits s;
  s.collocation.assign(perm.begin(), perm.begin() + n_col);
  s.train.assign(perm.begin() + n_col, perm.begin() + n_col + n_train);
  s.test.assign(perm.begin() + n_col + n_train, perm.end());
  return s;
}

Dataset split(Dataset ds, const SplitFractions& f, std::uint64_t seed) {
  ds.splits = split_indices(ds.size(), f, seed);
  ds.fractions = f;
  for (int i : ds.splits.collocation) ds.samples[i].label.reset();
  return ds;
}

Dataset normalize(Dataset ds) {
  std::vector<VectorXd> rows;
  rows.reserve(ds.splits.train.size());
  for (int i : ds.splits.train) rows.push_back(ds.samples[i].d);
  if (rows.size() < 2) throw ValidationError("normalization needs at least two train samples");
  ds.norm = compute_norm(rows);
  return ds;
}

GenerateResult generate_dataset(const NetworkCase& c, const std::string& case_hash,
                                const GenerateOptions& opts, const Dataset* previous) {
  GenerateResult res;
  Dataset& ds = res.dataset;
  ds.seed = opts.seed;
  ds.case_hash = case_hash;
  ds.bounds = scaled_bounds(c, opts.lo_frac, opts.hi_frac);
  for (auto& d : lhs_sample(opts.n, ds.bounds, derive_seed(opts.seed, 0))) {
    ds.samples.push_back({std::move(d), std::nullopt});
  }
  ds = split(std::move(ds), opts.fractions, derive_seed(opts.seed, 1));

  std::vector<int> to_label;
  for (const auto* part : {&ds.splits.train, &ds.splits.test}) {
    to_label.insert(to_label.end(), part->begin(), part->end());
  }
  std::sort(to_label.begin(), to_label.end());

  const bool can_reuse = previous && previous->size() == ds.size() &&
                         previous->case_hash == case_hash;
  std::vector<int> pending;
  std::vector<VectorXd> demands;
  for (int i : to_label) {
    if (can_reuse && previous->samples[i].label &&
        previous->samples[i].d.size() == ds.samples[i].d.size()) {
      const VectorXd& prev_d = previous->samples[i].d;
      const bool same = prev_d == ds.samples[i].d || prev_d == 0.95 * ds.samples[i].d;
      if (same) {
        ds.samples[i] = previous->samples[i];
        ++res.reused;
        continue;
      }
    }
    pending.push_back(i);
    demands.push_back(ds.samples[i].d);
  }

  LabelOutcome lab = label_samples(c, demands, opts.solver, opts.threads);
  for (std::size_t k = 0; k < lab.samples.size(); ++k) {
    ds.samples[pending[lab.source[k]]] = std::move(lab.samples[k]);
  }
  std::vector<int> failed;
  for (const auto& d : lab.dropped) {
    const int idx = pending[d.index];
    failed.push_back(idx);
    res.dropped.push_back({idx, d.reason});
  }
  std::sort(failed.begin(), failed.end());
  auto prune = [&](std::vector<int>& part) {
    std::erase_if(part, [&](int i) { return std::binary_search(failed.begin(), failed.end(), i); });
  };
  prune(ds.splits.train);
  prune(ds.splits.test);
  ds.splits.dropped = failed;
  res.dataset = normalize(std::move(ds));
  return res;
}

std::vector<std::string> label_columns(const CompactModel& m) {
  std::vector<std::string> cols{"index"};
  for (int k = 0; k < m.n_g; ++k) cols.push_back("pg" + std::to_string(k));
  for (int k = 0; k < m.n_g; ++k) cols.push_back("qg" + std::to_string(k));
  for (int i = 0; i < m.n_b; ++i) cols.push_back("vr" + std::to_string(i));
  for (int i = 0; i < m.n_b; ++i) cols.push_back("vi" + std::to_string(i));
  for (int k = 0; k < m.n_eq(); ++k) cols.push_back("rho" + std::to_string(k));
  for (int k = 0; k < m.n_ineq(); ++k) cols.push_back("mu" + std::to_string(k));
  cols.push_back("objective");
  return cols;
}

namespace {

nlohmann::json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void append_row(std::string& out, const VectorXd& v) {
  for (int j = 0; j < v.size(); ++j) {
    if (j) out += ',';
    out += format_double(v(j));
  }
}

std::vector<double> parse_csv_row(const std::string& line, const std::string& file, int lineno) {
  std::vector<double> vals;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      vals.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw ParseError(file + ": bad number '" + cell + "'", lineno);
    }
  }
  return vals;
}

constexpr int kFormatVersion = 1;

}  // namespace

void save_dataset(const std::string& dir, const Dataset& ds, const CompactModel& m) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create dataset directory " + dir);

  const int dim = 2 * m.n_b;
  std::string demands;
  for (int i = 0; i < m.n_b; ++i) demands += (i ? ",pd" : "pd") + std::to_string(i);
  for (int i = 0; i < m.n_b; ++i) demands += ",qd" + std::to_string(i);
  demands += '\n';
  for (const auto& s : ds.samples) {
    if (s.d.size() != dim) throw DimensionError("save_dataset: demand size does not match model");
    append_row(demands, s.d);
    demands += '\n';
  }

  const auto cols = label_columns(m);
  std::string labels;
  for (std::size_t k = 0; k < cols.size(); ++k) labels += (k ? "," : "") + cols[k];
  labels += '\n';
  for (int i = 0; i < ds.size(); ++i) {
    const auto& lab = ds.samples[i].label;
    if (!lab) continue;
    const auto& cand = lab->candidate;
    VectorXd row(static_cast<Eigen::Index>(cols.size()) - 1);
    row << cand.g, cand.v, cand.rho, cand.mu, lab->objective;
    labels += std::to_string(i) + ',';
    append_row(labels, row);
    labels += '\n';
  }

  nlohmann::json man;
  man["format_version"] = kFormatVersion;
  man["case_hash"] = ds.case_hash;
  man["seed"] = ds.seed;
  man["n"] = ds.size();
  man["dims"] = {{"n_bus", m.n_b}, {"n_gen", m.n_g}, {"n_eq", m.n_eq()}, {"n_ineq", m.n_ineq()}};
  man["bounds"] = {{"lo", vec_json(ds.bounds.lo)}, {"hi", vec_json(ds.bounds.hi)}};
  man["fractions"] = ds.fractions;
  man["norm"] = {{"mean", vec_json(ds.norm.mean)}, {"std", vec_json(ds.norm.std)}};
  man["splits"] = {{"collocation", ds.splits.collocation},
                   {"train", ds.splits.train},
                   {"test", ds.splits.test},
                   {"dropped", ds.splits.dropped}};
  man["split_sizes"] = {{"collocation", ds.splits.collocation.size()},
                        {"train", ds.splits.train.size()},
                        {"test", ds.splits.test.size()}};

  write_file_atomic(dir + "/demands.csv", demands);
  write_file_atomic(dir + "/labels.csv", labels);
  write_file_atomic(dir + "/manifest.json", man.dump(2) + "\n");
}

Dataset load_dataset(const std::string& dir) {
  nlohmann::json man;
  try {
    man = nlohmann::json::parse(read_text_file(dir + "/manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(dir + "/manifest.json: " + e.what());
  }
  Dataset ds;
  try {
    if (man.at("format_version").get<int>() != kFormatVersion) {
      throw ValidationError("unsupported dataset format version");
    }
    ds.case_hash = man.at("case_hash").get<std::string>();
    ds.seed = man.at("seed").get<std::uint64_t>();
    ds.bounds = {json_vec(man.at("bounds").at("lo")), json_vec(man.at("bounds").at("hi"))};
    ds.fractions = man.at("fractions").get<SplitFractions>();
    ds.norm = {json_vec(man.at("norm").at("mean")), json_vec(man.at("norm").at("std"))};
    const auto& sp = man.at("splits");
    ds.splits.collocation = sp.at("collocation").get<std::vector<int>>();
    ds.splits.train = sp.at("train").get<std::vector<int>>();
    ds.splits.test = sp.at("test").get<std::vector<int>>();
    ds.splits.dropped = sp.at("dropped").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(dir + "/manifest.json: " + e.what());
  }
  const auto& dims = man.at("dims");
  const int nb = dims.at("n_bus"), ng = dims.at("n_gen"), neq = dims.at("n_eq"),
            nin = dims.at("n_ineq");
  const int n = man.at("n");

  std::stringstream dem(read_text_file(dir + "/demands.csv"));
  std::string line;
  std::getline(dem, line);
  int lineno = 1;
  while (std::getline(dem, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto vals = parse_csv_row(line, "demands.csv", lineno);
    if (static_cast<int>(vals.size()) != 2 * nb) {
      throw ParseError("demands.csv: expected " + std::to_string(2 * nb) + " columns", lineno);
    }
    ds.samples.push_back({Eigen::Map<const VectorXd>(vals.data(), 2 * nb), std::nullopt});
  }
  if (ds.size() != n) throw ValidationError("demands.csv row count disagrees with manifest");

  std::stringstream lab(read_text_file(dir + "/labels.csv"));
  std::getline(lab, line);
  lineno = 1;
  const int width = 1 + 2 * ng + 2 * nb + neq + nin + 1;
  while (std::getline(lab, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto vals = parse_csv_row(line, "labels.csv", lineno);
    if (static_cast<int>(vals.size()) != width) {
      throw ParseError("labels.csv: expected " + std::to_string(width) + " columns", lineno);
    }
    const int idx = static_cast<int>(vals[0]);
    if (idx < 0 || idx >= n) throw ParseError("labels.csv: index out of range", lineno);
    OPFSolution sol;
    const double* p = vals.data() + 1;
    sol.candidate.g = Eigen::Map<const VectorXd>(p, 2 * ng);
    p += 2 * ng;
    sol.candidate.v = Eigen::Map<const VectorXd>(p, 2 * nb);
    p += 2 * nb;
    sol.candidate.rho = Eigen::Map<const VectorXd>(p, neq);
    p += neq;
    sol.candidate.mu = Eigen::Map<const VectorXd>(p, nin);
    p += nin;
    sol.objective = *p;
    sol.status = SolveStatus::converged;
    ds.samples[idx].label = std::move(sol);
  }
  for (const auto* part : {&ds.splits.train, &ds.splits.test}) {
    for (int i : *part) {
      if (i < 0 || i >= n || !ds.samples[i].label) {
        throw ValidationError("dataset sample " + std::to_string(i) + " has no label");
      }
    }
  }
  return ds;
}

}  // namespace qopf
