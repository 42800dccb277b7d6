#pragma once

// Primal-dual interior-point solver for the compact AC-OPF. Produces the
// primal setpoints and the dual vectors used as training labels.

#include <Eigen/Dense>

#include <optional>
#include <string>

#include "qopf/compact.hpp"

namespace qopf {

enum class SolveStatus { converged, iteration_limit, infeasible };
std::string to_string(SolveStatus s);

/// Objective used by the solver. `linear` is c'G exactly as in the compact
/// model; `quadratic` adds the case's quadratic active-power costs.
enum class CostModel { linear, quadratic };

struct SolverOptions {
  double tol = 1e-8;
  int max_iter = 200;
  double barrier_init = 0.1;
  double step_shrink = 0.995;
  double sigma = 0.2;  // barrier reduction per iteration
  CostModel objective = CostModel::linear;

  void validate() const;
};

struct OPFSolution {
  CandidateSolution candidate;
  double objective = 0.0;  // $/h
  SolveStatus status = SolveStatus::iteration_limit;
  int iterations = 0;
};

/// Solves from a flat start (V = 1 + j0, G at the middle of its bounds) or
/// from `warm`. The returned rho has one entry per compact equality row;
/// mu >= 0.
OPFSolution solve_acopf(const CompactModel& model, const Eigen::VectorXd& demand,
                        const std::optional<CandidateSolution>& warm = std::nullopt,
                        const SolverOptions& opts = {});

struct VerifyReport {
  bool feasible = false;
  double max_eq = 0.0;    // max |equality residual|
  double max_ineq = 0.0;  // max inequality violation (0 when all satisfied)
  KKTResiduals kkt;
};

/// Re-evaluates a solution through the compact model. `feasible` uses
/// `tol` on both max_eq and max_ineq.
VerifyReport verify_solution(const CompactModel& model, const OPFSolution& sol,
                             const Eigen::VectorXd& demand, double tol = 1e-6);

}  // namespace qopf
