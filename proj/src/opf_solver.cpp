#include "qopf/opf_solver.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "qopf/errors.hpp"

namespace qopf {

namespace {

// The solver works on x = [G; V] with costs divided by `cost_scale`, so the
// multipliers it iterates on are O(1). The angle-reference row is replaced by
// the linear pin V_imag(slack) = 0; its multiplier is reported as the dual of
// the compact angle row (the quadratic row has zero gradient there).
class InteriorPoint {
 public:
  InteriorPoint(const CompactModel& m, const Eigen::VectorXd& d, const SolverOptions& opts)
      : m_(m), d_(d), opts_(opts) {
    ngv_ = m.n_gvars();
    nv_ = m.n_v();
    nx_ = ngv_ + nv_;
    neq_ = m.n_eq();  // 2 n_b balance rows + pin
    niq_ = m.n_ineq();
    cost_scale_ = std::max(1.0, m.c.cwiseAbs().maxCoeff());
    if (opts.objective == CostModel::quadratic) {
      cost_scale_ = std::max(cost_scale_, m.c_quadratic.cwiseAbs().maxCoeff());
    }
    c_ = m.c / cost_scale_;
    cq_ = opts.objective == CostModel::quadratic ? Eigen::VectorXd(m.c_quadratic / cost_scale_)
                                                  : Eigen::VectorXd::Zero(ngv_);
    demand_term_eq_.resize(neq_);
    for (int l = 0; l < neq_; ++l) demand_term_eq_(l) = m.eq_forms[l].b.dot(d);
    demand_term_iq_.resize(niq_);
    for (int k = 0; k < niq_; ++k) demand_term_iq_(k) = m.ineq_forms[k].d.dot(d) + m.ineq_forms[k].f;
  }

  OPFSolution run(const std::optional<CandidateSolution>& warm) {
    Eigen::VectorXd x(nx_);
    Eigen::VectorXd lam = Eigen::VectorXd::Zero(neq_);
    Eigen::VectorXd mu(niq_), z(niq_);
    double gamma = opts_.barrier_init;

    if (warm) {
      if (warm->g.size() != ngv_ || warm->v.size() != nv_) {
        throw DimensionError("warm start does not match the compact model");
      }
      x << warm->g, warm->v;
    } else {
      x = flat_start();
    }
    evaluate(x);
    if (warm && warm->rho.size() == neq_ && warm->mu.size() == niq_) {
      lam = warm->rho / cost_scale_;
      mu = (warm->mu / cost_scale_).cwiseMax(1e-14);
      z = (-g_).cwiseMax(1e-10);
      gamma = opts_.sigma * z.dot(mu) / std::max(1, niq_);
    } else {
      z = (-g_).cwiseMax(1.0);
      mu = Eigen::VectorXd::Ones(niq_);
    }

    OPFSolution out;
    out.status = SolveStatus::iteration_limit;
    for (int it = 0; it <= opts_.max_iter; ++it) {
      out.iterations = it;
      const CandidateSolution cand = candidate(x, lam, mu);
      if (converged(cand)) {
        out.status = SolveStatus::converged;
        break;
      }
      if (it == opts_.max_iter) break;

      // Newton step on the perturbed KKT system (slacks eliminated).
      const Eigen::MatrixXd lxx = lagrangian_hessian(lam, mu);
      const Eigen::VectorXd lx = grad_f_ + dh_.transpose() * lam + dg_.transpose() * mu;
      const Eigen::VectorXd zinv = z.cwiseInverse();
      const Eigen::MatrixXd dg_scaled = (mu.cwiseProduct(zinv)).asDiagonal() * dg_;
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nx_ + neq_, nx_ + neq_);
      kkt.topLeftCorner(nx_, nx_) = lxx + dg_.transpose() * dg_scaled;
      kkt.topRightCorner(nx_, neq_) = dh_.transpose();
      kkt.bottomLeftCorner(neq_, nx_) = dh_;
      Eigen::VectorXd rhs(nx_ + neq_);
      rhs.head(nx_) =
          -(lx + dg_.transpose() * (zinv.cwiseProduct(mu.cwiseProduct(g_) +
                                                       Eigen::VectorXd::Constant(niq_, gamma))));
      rhs.tail(neq_) = -h_;
      Eigen::VectorXd step;
      if (!solve_symmetric(kkt, rhs, step)) {
        out.status = SolveStatus::infeasible;
        break;
      }
      const Eigen::VectorXd dx = step.head(nx_);
      const Eigen::VectorXd dlam = step.tail(neq_);
      const Eigen::VectorXd dz = -g_ - z - dg_ * dx;
      const Eigen::VectorXd dmu =
          -mu + zinv.cwiseProduct(Eigen::VectorXd::Constant(niq_, gamma) - mu.cwiseProduct(dz));

      const double alpha_p = step_length(z, dz);
      const double alpha_d = step_length(mu, dmu);
      x += alpha_p * dx;
      z += alpha_p * dz;
      lam += alpha_d * dlam;
      mu += alpha_d * dmu;
      if (!x.allFinite() || !mu.allFinite() || x.cwiseAbs().maxCoeff() > 1e6) {
        out.status = SolveStatus::infeasible;
        break;
      }
      evaluate(x);
      gamma = niq_ > 0 ? opts_.sigma * z.dot(mu) / niq_ : 0.0;
    }

    out.candidate = candidate(x, lam, mu);
    out.objective = m_.c.dot(x.head(ngv_));
    if (opts_.objective == CostModel::quadratic) {
      out.objective += x.head(ngv_).cwiseAbs2().dot(m_.c_quadratic);
    }
    return out;
  }

 private:
  Eigen::VectorXd flat_start() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(nx_);
    // Generator midpoints come from the paired max/min bound rows.
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(ngv_, -std::numeric_limits<double>::infinity());
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(ngv_, std::numeric_limits<double>::infinity());
    for (const auto& q : m_.ineq_forms) {
      if (!q.M.empty()) continue;
      for (int i = 0; i < ngv_; ++i) {
        if (q.g(i) > 0) hi(i) = q.f / q.g(i);
        if (q.g(i) < 0) lo(i) = q.f / q.g(i);
      }
    }
    for (int i = 0; i < ngv_; ++i) {
      if (std::isfinite(lo(i)) && std::isfinite(hi(i))) x(i) = 0.5 * (lo(i) + hi(i));
    }
    x.segment(ngv_, m_.n_b).setOnes();
    return x;
  }

  void evaluate(const Eigen::VectorXd& x) {
    const Eigen::VectorXd gen = x.head(ngv_);
    const Eigen::VectorXd v = x.tail(nv_);
    grad_f_ = Eigen::VectorXd::Zero(nx_);
    grad_f_.head(ngv_) = c_ + 2.0 * cq_.cwiseProduct(gen);

    h_.resize(neq_);
    dh_ = Eigen::MatrixXd::Zero(neq_, nx_);
    const int pin = m_.angle_row();
    for (int l = 0; l < neq_; ++l) {
      if (l == pin) {
        h_(l) = v(m_.n_b + m_.slack);
        dh_(l, ngv_ + m_.n_b + m_.slack) = 1.0;
        continue;
      }
      const auto& e = m_.eq_forms[l];
      Eigen::VectorXd lv = Eigen::VectorXd::Zero(nv_);
      e.L.add_product(v, 1.0, lv);
      h_(l) = v.dot(lv) - e.a.dot(gen) - demand_term_eq_(l);
      dh_.row(l).head(ngv_) = -e.a.transpose();
      dh_.row(l).tail(nv_) = 2.0 * lv.transpose();
    }
    g_.resize(niq_);
    dg_ = Eigen::MatrixXd::Zero(niq_, nx_);
    for (int k = 0; k < niq_; ++k) {
      const auto& q = m_.ineq_forms[k];
      Eigen::VectorXd mv = Eigen::VectorXd::Zero(nv_);
      q.M.add_product(v, 1.0, mv);
      g_(k) = v.dot(mv) + q.g.dot(gen) - demand_term_iq_(k);
      dg_.row(k).head(ngv_) = q.g.transpose();
      dg_.row(k).tail(nv_) = 2.0 * mv.transpose();
    }
  }

  Eigen::MatrixXd lagrangian_hessian(const Eigen::VectorXd& lam, const Eigen::VectorXd& mu) const {
    Eigen::MatrixXd hv = Eigen::MatrixXd::Zero(nv_, nv_);
    for (int l = 0; l < neq_; ++l) {
      if (l != m_.angle_row()) m_.eq_forms[l].L.add_to(hv, 2.0 * lam(l));
    }
    for (int k = 0; k < niq_; ++k) m_.ineq_forms[k].M.add_to(hv, 2.0 * mu(k));
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(nx_, nx_);
    out.topLeftCorner(ngv_, ngv_) = (2.0 * cq_).asDiagonal();
    out.bottomRightCorner(nv_, nv_) = hv;
    return out;
  }

  bool solve_symmetric(Eigen::MatrixXd a, const Eigen::VectorXd& rhs, Eigen::VectorXd& out) const {
    const lapack_int n = static_cast<lapack_int>(a.rows());
    out = rhs;
    std::vector<lapack_int> ipiv(n);
    const lapack_int info =
        LAPACKE_dsysv(LAPACK_COL_MAJOR, 'L', n, 1, a.data(), n, ipiv.data(), out.data(), n);
    return info == 0 && out.allFinite();
  }

  double step_length(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) const {
    double alpha = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (dv(i) < 0.0) alpha = std::min(alpha, opts_.step_shrink * v(i) / -dv(i));
    }
    return alpha;
  }

  CandidateSolution candidate(const Eigen::VectorXd& x, const Eigen::VectorXd& lam,
                              const Eigen::VectorXd& mu) const {
    CandidateSolution s;
    s.g = x.head(ngv_);
    s.v = x.tail(nv_);
    s.rho = lam * cost_scale_;
    s.mu = mu * cost_scale_;
    return s;
  }

  bool converged(const CandidateSolution& s) const {
    const double tol = opts_.tol;
    const ConstraintValues cv = eval_constraints(m_, s, d_);
    if (cv.eq_residuals.cwiseAbs().maxCoeff() > tol) return false;
    if (niq_ > 0 && cv.ineq_slacks.maxCoeff() > tol) return false;
    const KKTResiduals r = kkt_objective_residuals(s);
    return r.eps_stat <= 10 * tol && r.eps_comp <= 10 * tol && r.eps_dual <= 10 * tol &&
           r.eps_prim <= 10 * tol;
  }

  // KKT residuals of the objective actually being solved (linear or quadratic).
  KKTResiduals kkt_objective_residuals(const CandidateSolution& s) const {
    if (opts_.objective == CostModel::linear) return kkt_residuals(m_, s, d_);
    CompactModel shifted = m_;
    shifted.c = m_.c + 2.0 * m_.c_quadratic.cwiseProduct(s.g);
    return kkt_residuals(shifted, s, d_);
  }

  const CompactModel& m_;
  Eigen::VectorXd d_;
  SolverOptions opts_;
  int ngv_ = 0, nv_ = 0, nx_ = 0, neq_ = 0, niq_ = 0;
  double cost_scale_ = 1.0;
  Eigen::VectorXd c_, cq_;
  Eigen::VectorXd demand_term_eq_, demand_term_iq_;

  Eigen::VectorXd grad_f_, h_, g_;
  Eigen::MatrixXd dh_, dg_;
};

}  // namespace

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::iteration_limit: return "iteration_limit";
    case SolveStatus::infeasible: return "infeasible";
  }
  return "unknown";
}

void SolverOptions::validate() const {
  if (!(tol > 0.0)) throw ValidationError("solver tol must be > 0");
  if (!(step_shrink > 0.0 && step_shrink < 1.0)) {
    throw ValidationError("solver step_shrink must lie in (0, 1)");
  }
  if (max_iter < 0) throw ValidationError("solver max_iter must be >= 0");
  if (!(sigma > 0.0 && sigma < 1.0)) throw ValidationError("solver sigma must lie in (0, 1)");
  if (!(barrier_init > 0.0)) throw ValidationError("solver barrier_init must be > 0");
}

OPFSolution solve_acopf(const CompactModel& model, const Eigen::VectorXd& demand,
                        const std::optional<CandidateSolution>& warm, const SolverOptions& opts) {
  opts.validate();
  if (demand.size() != 2 * model.n_b) {
    throw DimensionError("demand vector has length " + std::to_string(demand.size()) +
                         ", expected " + std::to_string(2 * model.n_b));
  }
  return InteriorPoint(model, demand, opts).run(warm);
}

VerifyReport verify_solution(const CompactModel& model, const OPFSolution& sol,
                             const Eigen::VectorXd& demand, double tol) {
  VerifyReport r;
  const ConstraintValues cv = eval_constraints(model, sol.candidate, demand);
  r.max_eq = cv.eq_residuals.size() ? cv.eq_residuals.cwiseAbs().maxCoeff() : 0.0;
  r.max_ineq = cv.ineq_slacks.size() ? std::max(0.0, cv.ineq_slacks.maxCoeff()) : 0.0;
  r.kkt = kkt_residuals(model, sol.candidate, demand);
  r.feasible = r.max_eq <= tol && r.max_ineq <= tol;
  return r;
}

}  // namespace qopf
