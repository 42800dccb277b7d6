#pragma once

// Compact quadratic-form AC-OPF:
//
//   min  c'G
//   s.t. V'L_l V = a_l'G + b_l'D                 (power balance, angle reference)
//        V'M_m V + g_m'G <= d_m'D + f_m          (generator, voltage, line limits)
//
// with V = [V_real; V_imag], G = [P_g; Q_g], D = [P_d; Q_d]. Generator bounds
// carry M_m = 0 and a unit selector in g_m.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include <json.hpp>

#include "qopf/grid.hpp"

namespace qopf {

/// Symmetric sparse matrix stored as its full list of nonzeros (both
/// triangles), used for V'MV products.
class QuadForm {
 public:
  struct Entry {
    int row;
    int col;
    double value;
  };

  QuadForm() = default;
  explicit QuadForm(std::vector<Entry> entries) : entries_(std::move(entries)) {}

  /// Builds (A + A')/2 from an arbitrary list of (possibly repeated) entries.
  static QuadForm symmetrized(const std::vector<Entry>& raw);

  const std::vector<Entry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  double eval(const Eigen::VectorXd& v) const;
  /// out += weight * M v
  void add_product(const Eigen::VectorXd& v, double weight, Eigen::VectorXd& out) const;
  /// out += weight * M
  void add_to(Eigen::MatrixXd& out, double weight) const;
  /// sum_ij M_ij * w_ij
  double dot(const Eigen::MatrixXd& w) const;
  Eigen::MatrixXd dense(int n) const;

 private:
  std::vector<Entry> entries_;
};

enum class ConstraintKind {
  bus_p,
  bus_q,
  angle_ref,
  gen_p_max,
  gen_p_min,
  gen_q_max,
  gen_q_min,
  v_max,
  v_min,
  line_from,
  line_to,
};

std::string to_string(ConstraintKind k);

struct ConstraintLabel {
  ConstraintKind kind;
  int index;  // bus, generator or branch position
};

struct EqualityForm {
  QuadForm L;
  Eigen::VectorXd a;  // 2 n_g
  Eigen::VectorXd b;  // 2 n_b
  ConstraintLabel label;
};

struct InequalityForm {
  QuadForm M;
  Eigen::VectorXd g;  // 2 n_g
  Eigen::VectorXd d;  // 2 n_b
  double f = 0.0;
  ConstraintLabel label;
};

struct CompactOptions {
  /// Enforce line limits at both branch ends (two rows per rated line).
  bool line_limits_both_ends = false;
};

struct CompactModel {
  int n_b = 0;
  int n_g = 0;
  int n_l = 0;  // in-service branches
  int slack = 0;
  Eigen::VectorXd c;            // linear cost, 2 n_g (Q entries zero)
  Eigen::VectorXd c_quadratic;  // diagonal quadratic cost, 2 n_g (solver objective only)
  std::vector<EqualityForm> eq_forms;
  std::vector<InequalityForm> ineq_forms;

  int n_eq() const { return static_cast<int>(eq_forms.size()); }
  int n_ineq() const { return static_cast<int>(ineq_forms.size()); }
  int n_v() const { return 2 * n_b; }
  int n_gvars() const { return 2 * n_g; }
  /// Row of the angle-reference equality.
  int angle_row() const { return 2 * n_b; }
};

struct CandidateSolution {
  Eigen::VectorXd g;    // [P_g; Q_g]
  Eigen::VectorXd v;    // [V_real; V_imag]
  Eigen::VectorXd rho;  // equality duals
  Eigen::VectorXd mu;   // inequality duals
};

struct ConstraintValues {
  Eigen::VectorXd eq_residuals;
  Eigen::VectorXd ineq_slacks;  // <= 0 feasible
};

struct KKTResiduals {
  double eps_stat = 0.0;
  double eps_comp = 0.0;
  double eps_dual = 0.0;
  double eps_prim = 0.0;

  double total() const { return eps_stat + eps_comp + eps_dual + eps_prim; }
  double max() const;
};

/// `gradient`: ||c - sum rho a + sum mu g||_1 + ||2 (sum rho L + sum mu M) V||_1.
/// `matrix`: ||c - sum rho a||_1 + entrywise ||sum rho L + sum mu M||_1.
enum class StationarityMode { gradient, matrix };

CompactModel build_compact(const NetworkCase& c, const CompactOptions& opts = {});

ConstraintValues eval_constraints(const CompactModel& m, const CandidateSolution& sol,
                                  const Eigen::VectorXd& d);

KKTResiduals kkt_residuals(const CompactModel& m, const CandidateSolution& sol,
                           const Eigen::VectorXd& d,
                           StationarityMode mode = StationarityMode::gradient);

/// KKT residuals plus a subgradient of their sum with respect to every
/// argument. The cost vector is divided by `cost_scale`, so duals passed in
/// are expected in the same units (residuals are homogeneous in (c, rho, mu)).
struct KKTGradient {
  KKTResiduals value;
  Eigen::VectorXd d_g;
  Eigen::VectorXd d_v;
  Eigen::VectorXd d_rho;
  Eigen::VectorXd d_mu;
};

KKTGradient kkt_residuals_with_gradient(const CompactModel& m, const Eigen::VectorXd& g,
                                        const Eigen::VectorXd& v, const Eigen::VectorXd& rho,
                                        const Eigen::VectorXd& mu, const Eigen::VectorXd& d,
                                        double cost_scale = 1.0,
                                        StationarityMode mode = StationarityMode::gradient);

/// Dense JSON dump (debugging aid).
nlohmann::json to_json(const CompactModel& m);

}  // namespace qopf
