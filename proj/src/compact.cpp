#include "qopf/compact.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "qopf/errors.hpp"

namespace qopf {

namespace {

double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void check_dims(const CompactModel& m, const Eigen::VectorXd& g, const Eigen::VectorXd& v,
                const Eigen::VectorXd& rho, const Eigen::VectorXd& mu, const Eigen::VectorXd& d) {
  auto expect = [](const char* what, Eigen::Index got, int want) {
    if (got != want) {
      throw DimensionError(std::string(what) + " has length " + std::to_string(got) +
                           ", expected " + std::to_string(want));
    }
  };
  expect("g", g.size(), m.n_gvars());
  expect("v", v.size(), m.n_v());
  expect("rho", rho.size(), m.n_eq());
  expect("mu", mu.size(), m.n_ineq());
  expect("d", d.size(), 2 * m.n_b);
}

// Row vectors of the real and imaginary parts of y1 V_i + y2 V_j in terms of
// the stacked [V_real; V_imag].
void current_rows(int nb, int i, int j, std::complex<double> y1, std::complex<double> y2,
                  std::vector<QuadForm::Entry>& re, std::vector<QuadForm::Entry>& im) {
  re = {{0, i, y1.real()}, {0, nb + i, -y1.imag()}, {0, j, y2.real()}, {0, nb + j, -y2.imag()}};
  im = {{0, i, y1.imag()}, {0, nb + i, y1.real()}, {0, j, y2.imag()}, {0, nb + j, y2.real()}};
}

QuadForm outer_sum(const std::vector<QuadForm::Entry>& u, const std::vector<QuadForm::Entry>& w) {
  std::vector<QuadForm::Entry> raw;
  for (const auto* vec : {&u, &w}) {
    for (const auto& p : *vec) {
      for (const auto& q : *vec) raw.push_back({p.col, q.col, p.value * q.value});
    }
  }
  return QuadForm::symmetrized(raw);
}

}  // namespace

QuadForm QuadForm::symmetrized(const std::vector<Entry>& raw) {
  std::map<std::pair<int, int>, double> acc;
  for (const auto& e : raw) {
    acc[{e.row, e.col}] += 0.5 * e.value;
    acc[{e.col, e.row}] += 0.5 * e.value;
  }
  // Mirror the upper triangle so symmetric pairs are bit-identical.
  std::vector<Entry> out;
  out.reserve(acc.size());
  for (const auto& [rc, val] : acc) {
    const auto [r, c] = rc;
    if (r > c || val == 0.0) continue;
    out.push_back({r, c, val});
    if (r != c) out.push_back({c, r, val});
  }
  return QuadForm(std::move(out));
}

double QuadForm::eval(const Eigen::VectorXd& v) const {
  double s = 0.0;
  for (const auto& e : entries_) s += v(e.row) * e.value * v(e.col);
  return s;
}

void QuadForm::add_product(const Eigen::VectorXd& v, double weight, Eigen::VectorXd& out) const {
  for (const auto& e : entries_) out(e.row) += weight * e.value * v(e.col);
}

void QuadForm::add_to(Eigen::MatrixXd& out, double weight) const {
  for (const auto& e : entries_) out(e.row, e.col) += weight * e.value;
}

double QuadForm::dot(const Eigen::MatrixXd& w) const {
  double s = 0.0;
  for (const auto& e : entries_) s += e.value * w(e.row, e.col);
  return s;
}

Eigen::MatrixXd QuadForm::dense(int n) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  add_to(out, 1.0);
  return out;
}

std::string to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::bus_p: return "bus_p";
    case ConstraintKind::bus_q: return "bus_q";
    case ConstraintKind::angle_ref: return "angle_ref";
    case ConstraintKind::gen_p_max: return "gen_p_max";
    case ConstraintKind::gen_p_min: return "gen_p_min";
    case ConstraintKind::gen_q_max: return "gen_q_max";
    case ConstraintKind::gen_q_min: return "gen_q_min";
    case ConstraintKind::v_max: return "v_max";
    case ConstraintKind::v_min: return "v_min";
    case ConstraintKind::line_from: return "line_from";
    case ConstraintKind::line_to: return "line_to";
  }
  return "unknown";
}

double KKTResiduals::max() const { return std::max({eps_stat, eps_comp, eps_dual, eps_prim}); }

CompactModel build_compact(const NetworkCase& c, const CompactOptions& opts) {
  validate_case(c);
  const AdmittanceMatrix ybus = build_ybus(c);
  const int nb = c.n_bus();
  const int ng = c.n_gen();
  const Eigen::MatrixXd G = ybus.g();
  const Eigen::MatrixXd B = ybus.b();

  CompactModel m;
  m.n_b = nb;
  m.n_g = ng;
  m.n_l = c.n_branch();
  m.slack = c.slack_index();
  m.c = Eigen::VectorXd::Zero(2 * ng);
  m.c_quadratic = Eigen::VectorXd::Zero(2 * ng);
  for (int k = 0; k < ng; ++k) {
    m.c(k) = c.gens[k].cost_linear;
    m.c_quadratic(k) = c.gens[k].cost_quadratic;
  }

  std::vector<int> gen_bus(ng);
  for (int k = 0; k < ng; ++k) gen_bus[k] = c.bus_index(c.gens[k].bus);

  // Power balance rows: P rows for every bus, then Q rows.
  for (int part = 0; part < 2; ++part) {
    for (int i = 0; i < nb; ++i) {
      std::vector<QuadForm::Entry> raw;
      for (int j = 0; j < nb; ++j) {
        const double gij = G(i, j);
        const double bij = B(i, j);
        if (gij == 0.0 && bij == 0.0) continue;
        if (part == 0) {
          raw.push_back({i, j, gij});
          raw.push_back({i, nb + j, -bij});
          raw.push_back({nb + i, j, bij});
          raw.push_back({nb + i, nb + j, gij});
        } else {
          raw.push_back({nb + i, j, gij});
          raw.push_back({nb + i, nb + j, -bij});
          raw.push_back({i, j, -bij});
          raw.push_back({i, nb + j, -gij});
        }
      }
      EqualityForm row;
      row.L = QuadForm::symmetrized(raw);
      row.a = Eigen::VectorXd::Zero(2 * ng);
      row.b = Eigen::VectorXd::Zero(2 * nb);
      for (int k = 0; k < ng; ++k) {
        if (gen_bus[k] == i) row.a(part * ng + k) = 1.0;
      }
      row.b(part * nb + i) = -1.0;
      row.label = {part == 0 ? ConstraintKind::bus_p : ConstraintKind::bus_q, i};
      m.eq_forms.push_back(std::move(row));
    }
  }
  {
    EqualityForm ref;
    ref.L = QuadForm({{nb + m.slack, nb + m.slack, 1.0}});
    ref.a = Eigen::VectorXd::Zero(2 * ng);
    ref.b = Eigen::VectorXd::Zero(2 * nb);
    ref.label = {ConstraintKind::angle_ref, m.slack};
    m.eq_forms.push_back(std::move(ref));
  }

  auto gen_row = [&](ConstraintKind kind, int k, int offset, double sign, double bound) {
    InequalityForm row;
    row.g = Eigen::VectorXd::Zero(2 * ng);
    row.g(offset + k) = sign;
    row.d = Eigen::VectorXd::Zero(2 * nb);
    row.f = sign * bound;
    row.label = {kind, k};
    m.ineq_forms.push_back(std::move(row));
  };
  for (int k = 0; k < ng; ++k) gen_row(ConstraintKind::gen_p_max, k, 0, 1.0, c.gens[k].p_max);
  for (int k = 0; k < ng; ++k) gen_row(ConstraintKind::gen_p_min, k, 0, -1.0, c.gens[k].p_min);
  for (int k = 0; k < ng; ++k) gen_row(ConstraintKind::gen_q_max, k, ng, 1.0, c.gens[k].q_max);
  for (int k = 0; k < ng; ++k) gen_row(ConstraintKind::gen_q_min, k, ng, -1.0, c.gens[k].q_min);

  for (int s = 0; s < 2; ++s) {
    const double sign = s == 0 ? 1.0 : -1.0;
    for (int i = 0; i < nb; ++i) {
      InequalityForm row;
      row.M = QuadForm({{i, i, sign}, {nb + i, nb + i, sign}});
      row.g = Eigen::VectorXd::Zero(2 * ng);
      row.d = Eigen::VectorXd::Zero(2 * nb);
      const double bound = s == 0 ? c.buses[i].v_max : c.buses[i].v_min;
      row.f = sign * bound * bound;
      row.label = {s == 0 ? ConstraintKind::v_max : ConstraintKind::v_min, i};
      m.ineq_forms.push_back(std::move(row));
    }
  }

  for (int l = 0; l < c.n_branch(); ++l) {
    const BranchRecord& br = c.branches[l];
    if (br.flow_limit <= 0.0) continue;
    const int f = c.bus_index(br.from_bus);
    const int t = c.bus_index(br.to_bus);
    const BranchAdmittance y = branch_admittance(br);
    std::vector<QuadForm::Entry> re, im;
    for (int end = 0; end < (opts.line_limits_both_ends ? 2 : 1); ++end) {
      if (end == 0) {
        current_rows(nb, f, t, y.yff, y.yft, re, im);
      } else {
        current_rows(nb, t, f, y.ytt, y.ytf, re, im);
      }
      InequalityForm row;
      row.M = outer_sum(re, im);
      row.g = Eigen::VectorXd::Zero(2 * ng);
      row.d = Eigen::VectorXd::Zero(2 * nb);
      row.f = br.flow_limit * br.flow_limit;
      row.label = {end == 0 ? ConstraintKind::line_from : ConstraintKind::line_to, l};
      m.ineq_forms.push_back(std::move(row));
    }
  }
  return m;
}

ConstraintValues eval_constraints(const CompactModel& m, const CandidateSolution& sol,
                                  const Eigen::VectorXd& d) {
  if (sol.g.size() != m.n_gvars() || sol.v.size() != m.n_v() || d.size() != 2 * m.n_b) {
    throw DimensionError("candidate solution does not match the compact model");
  }
  ConstraintValues out;
  out.eq_residuals.resize(m.n_eq());
  out.ineq_slacks.resize(m.n_ineq());
  for (int l = 0; l < m.n_eq(); ++l) {
    const auto& e = m.eq_forms[l];
    out.eq_residuals(l) = e.L.eval(sol.v) - e.a.dot(sol.g) - e.b.dot(d);
  }
  for (int k = 0; k < m.n_ineq(); ++k) {
    const auto& q = m.ineq_forms[k];
    out.ineq_slacks(k) = q.M.eval(sol.v) + q.g.dot(sol.g) - q.d.dot(d) - q.f;
  }
  return out;
}

KKTResiduals kkt_residuals(const CompactModel& m, const CandidateSolution& sol,
                           const Eigen::VectorXd& d, StationarityMode mode) {
  return kkt_residuals_with_gradient(m, sol.g, sol.v, sol.rho, sol.mu, d, 1.0, mode).value;
}

KKTGradient kkt_residuals_with_gradient(const CompactModel& m, const Eigen::VectorXd& g,
                                        const Eigen::VectorXd& v, const Eigen::VectorXd& rho,
                                        const Eigen::VectorXd& mu, const Eigen::VectorXd& d,
                                        double cost_scale, StationarityMode mode) {
  check_dims(m, g, v, rho, mu, d);
  const int nv = m.n_v();
  const int ngv = m.n_gvars();
  const bool literal = mode == StationarityMode::matrix;

  KKTGradient out;
  out.d_g = Eigen::VectorXd::Zero(ngv);
  out.d_v = Eigen::VectorXd::Zero(nv);
  out.d_rho = Eigen::VectorXd::Zero(m.n_eq());
  out.d_mu = Eigen::VectorXd::Zero(m.n_ineq());

  // M V products are reused by every residual.
  std::vector<Eigen::VectorXd> eq_mv(m.n_eq()), ineq_mv(m.n_ineq());
  Eigen::VectorXd s_gen = m.c / cost_scale;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(nv);
  Eigen::VectorXd eq_res(m.n_eq()), slack(m.n_ineq());

  for (int l = 0; l < m.n_eq(); ++l) {
    const auto& e = m.eq_forms[l];
    eq_mv[l] = Eigen::VectorXd::Zero(nv);
    e.L.add_product(v, 1.0, eq_mv[l]);
    eq_res(l) = v.dot(eq_mv[l]) - e.a.dot(g) - e.b.dot(d);
    s_gen -= rho(l) * e.a;
    w += 2.0 * rho(l) * eq_mv[l];
  }
  for (int k = 0; k < m.n_ineq(); ++k) {
    const auto& q = m.ineq_forms[k];
    ineq_mv[k] = Eigen::VectorXd::Zero(nv);
    q.M.add_product(v, 1.0, ineq_mv[k]);
    slack(k) = v.dot(ineq_mv[k]) + q.g.dot(g) - q.d.dot(d) - q.f;
    if (!literal) s_gen += mu(k) * q.g;
    w += 2.0 * mu(k) * ineq_mv[k];
  }

  KKTResiduals& r = out.value;
  const Eigen::VectorXd sg = s_gen.unaryExpr(&sign_of);
  r.eps_stat = s_gen.lpNorm<1>();
  for (int l = 0; l < m.n_eq(); ++l) out.d_rho(l) -= sg.dot(m.eq_forms[l].a);
  if (!literal) {
    for (int k = 0; k < m.n_ineq(); ++k) out.d_mu(k) += sg.dot(m.ineq_forms[k].g);
  }

  if (!literal) {
    r.eps_stat += w.lpNorm<1>();
    const Eigen::VectorXd sw = w.unaryExpr(&sign_of);
    // d/dV ||2 A V||_1 = 2 A sw with A = sum rho L + sum mu M (symmetric)
    for (int l = 0; l < m.n_eq(); ++l) {
      if (m.eq_forms[l].L.empty()) continue;
      out.d_rho(l) += 2.0 * sw.dot(eq_mv[l]);
      m.eq_forms[l].L.add_product(sw, 2.0 * rho(l), out.d_v);
    }
    for (int k = 0; k < m.n_ineq(); ++k) {
      if (m.ineq_forms[k].M.empty()) continue;
      out.d_mu(k) += 2.0 * sw.dot(ineq_mv[k]);
      m.ineq_forms[k].M.add_product(sw, 2.0 * mu(k), out.d_v);
    }
  } else {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(nv, nv);
    for (int l = 0; l < m.n_eq(); ++l) m.eq_forms[l].L.add_to(a, rho(l));
    for (int k = 0; k < m.n_ineq(); ++k) m.ineq_forms[k].M.add_to(a, mu(k));
    r.eps_stat += a.cwiseAbs().sum();
    const Eigen::MatrixXd sa = a.unaryExpr(&sign_of);
    for (int l = 0; l < m.n_eq(); ++l) out.d_rho(l) += m.eq_forms[l].L.dot(sa);
    for (int k = 0; k < m.n_ineq(); ++k) out.d_mu(k) += m.ineq_forms[k].M.dot(sa);
  }

  for (int k = 0; k < m.n_ineq(); ++k) {
    const double t = mu(k) * slack(k);
    r.eps_comp += std::abs(t);
    const double st = sign_of(t);
    if (st != 0.0) {
      out.d_mu(k) += st * slack(k);
      out.d_v += (2.0 * st * mu(k)) * ineq_mv[k];
      out.d_g += (st * mu(k)) * m.ineq_forms[k].g;
    }
    if (mu(k) < 0.0) {
      r.eps_dual -= mu(k);
      out.d_mu(k) -= 1.0;
    }
  }

  for (int l = 0; l < m.n_eq(); ++l) {
    r.eps_prim += std::abs(eq_res(l));
    const double se = sign_of(eq_res(l));
    if (se != 0.0) {
      out.d_v += (2.0 * se) * eq_mv[l];
      out.d_g -= se * m.eq_forms[l].a;
    }
  }
  return out;
}

nlohmann::json to_json(const CompactModel& m) {
  using nlohmann::json;
  auto vec = [](const Eigen::VectorXd& x) { return std::vector<double>(x.data(), x.data() + x.size()); };
  auto mat = [&](const QuadForm& q) {
    const Eigen::MatrixXd dm = q.dense(m.n_v());
    json rows = json::array();
    for (int i = 0; i < dm.rows(); ++i) rows.push_back(vec(dm.row(i).transpose()));
    return rows;
  };
  json j;
  j["n_b"] = m.n_b;
  j["n_g"] = m.n_g;
  j["n_l"] = m.n_l;
  j["slack"] = m.slack;
  j["c"] = vec(m.c);
  j["eq_forms"] = json::array();
  for (const auto& e : m.eq_forms) {
    j["eq_forms"].push_back({{"label", to_string(e.label.kind)},
                             {"index", e.label.index},
                             {"L", mat(e.L)},
                             {"a", vec(e.a)},
                             {"b", vec(e.b)}});
  }
  j["ineq_forms"] = json::array();
  for (const auto& q : m.ineq_forms) {
    j["ineq_forms"].push_back({{"label", to_string(q.label.kind)},
                               {"index", q.label.index},
                               {"M", mat(q.M)},
                               {"g", vec(q.g)},
                               {"d", vec(q.d)},
                               {"f", q.f}});
  }
  return j;
}

}  // namespace qopf
