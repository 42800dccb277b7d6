#pragma once

// MATPOWER-style case files and the bus admittance matrix.

#include <Eigen/Dense>

#include <complex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace qopf {

enum class BusKind { pq = 1, pv = 2, slack = 3 };

/// One bus, per unit on the case base.
struct BusRecord {
  int id = 0;
  BusKind kind = BusKind::pq;
  double p_demand = 0.0;
  double q_demand = 0.0;
  double g_shunt = 0.0;
  double b_shunt = 0.0;
  double v_min = 0.9;
  double v_max = 1.1;
};

struct BranchRecord {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;
  double b_charging = 0.0;
  double flow_limit = 0.0;  // 0 = unlimited
  double tap_ratio = 1.0;
  double phase_shift = 0.0;  // radians
};

struct GenRecord {
  int bus = 0;
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double cost_linear = 0.0;     // $/(p.u. h)
  double cost_quadratic = 0.0;  // $/(p.u.^2 h)
};

struct NetworkCase {
  double base_mva = 100.0;
  std::vector<BusRecord> buses;
  std::vector<BranchRecord> branches;
  std::vector<GenRecord> gens;

  int n_bus() const { return static_cast<int>(buses.size()); }
  int n_gen() const { return static_cast<int>(gens.size()); }
  int n_branch() const { return static_cast<int>(branches.size()); }

  /// Position of bus `id` in `buses`; throws ValidationError if absent.
  int bus_index(int id) const;
  int slack_index() const;
  /// Nominal demand stacked as [P_d; Q_d].
  Eigen::VectorXd demand() const;
};

struct AdmittanceMatrix {
  Eigen::MatrixXcd y;

  Eigen::MatrixXd g() const { return y.real(); }
  Eigen::MatrixXd b() const { return y.imag(); }
};

/// Parses the MATPOWER subset (`mpc.baseMVA`, `mpc.bus`, `mpc.gen`,
/// `mpc.branch`, `mpc.gencost`) and converts to per unit. Non-fatal notes
/// (ignored columns, dropped out-of-service elements) go to `warnings`.
NetworkCase parse_case(std::string_view text, std::vector<std::string>* warnings = nullptr);
NetworkCase load_case_file(const std::string& path, std::vector<std::string>* warnings = nullptr);

/// Checks every NetworkCase invariant; throws ValidationError naming the first violation.
void validate_case(const NetworkCase& c);

/// Writes the case back out as MATPOWER text in physical units. Parsing the
/// result reproduces `c`.
std::string format_case(const NetworkCase& c);

AdmittanceMatrix build_ybus(const NetworkCase& c);

/// Series and shunt terms of one branch's two-port admittance.
struct BranchAdmittance {
  std::complex<double> yff, yft, ytf, ytt;
};
BranchAdmittance branch_admittance(const BranchRecord& br);

nlohmann::json to_json(const NetworkCase& c);

}  // namespace qopf
