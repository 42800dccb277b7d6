#include "qopf/grid.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <queue>
#include <set>
#include <sstream>

#include "qopf/errors.hpp"

namespace qopf {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

struct MatrixBlock {
  std::vector<std::vector<double>> rows;
  std::vector<int> row_lines;
};

struct RawCase {
  std::optional<double> base_mva;
  std::map<std::string, MatrixBlock> blocks;
};

// Minimal scanner for the MATPOWER subset. Comments start with '%' and run to
// end of line; fields other than the five we need are skipped.
class CaseScanner {
 public:
  explicit CaseScanner(std::string_view text) : text_(text) {}

  RawCase run() {
    RawCase out;
    while (skip_space()) {
      if (!starts_with("mpc.")) {
        skip_line();
        continue;
      }
      pos_ += 4;
      const std::string name = identifier();
      skip_space();
      if (peek() != '=') throw ParseError("expected '=' after mpc." + name, line_);
      ++pos_;
      skip_space();
      if (peek() == '[') {
        ++pos_;
        MatrixBlock block = matrix(name);
        out.blocks[name] = std::move(block);
      } else if (peek() == '{') {
        skip_balanced('{', '}');
      } else {
        const int value_line = line_;
        std::string value = until_statement_end();
        if (name == "baseMVA") {
          char* end = nullptr;
          const double v = std::strtod(value.c_str(), &end);
          if (end == value.c_str() || !only_space(end)) {
            throw ParseError("mpc.baseMVA is not a number: '" + value + "'", value_line);
          }
          out.base_mva = v;
        }
      }
    }
    return out;
  }

 private:
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  bool starts_with(std::string_view s) const { return text_.substr(pos_, s.size()) == s; }

  static bool only_space(const char* p) {
    while (*p) {
      if (!std::isspace(static_cast<unsigned char>(*p))) return false;
      ++p;
    }
    return true;
  }

  void skip_comment() {
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
  }

  // Skips whitespace and comments; returns false at end of input.
  bool skip_space() {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '%') {
        skip_comment();
      } else if (c == '\n') {
        ++line_;
        ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return true;
      }
    }
    return false;
  }

  void skip_line() {
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
  }

  std::string identifier() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
      ++pos_;
    }
    if (start == pos_) throw ParseError("expected field name after 'mpc.'", line_);
    return std::string(text_.substr(start, pos_ - start));
  }

  std::string until_statement_end() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != ';' && text_[pos_] != '\n' &&
           text_[pos_] != '%') {
      ++pos_;
    }
    std::string value(text_.substr(start, pos_ - start));
    if (peek() == ';') ++pos_;
    return value;
  }

  void skip_balanced(char open, char close) {
    const int start_line = line_;
    int depth = 0;
    while (pos_ < text_.size()) {
      const char c = text_[pos_++];
      if (c == '\n') ++line_;
      if (c == open) ++depth;
      if (c == close && --depth == 0) return;
    }
    throw ParseError(std::string("unterminated '") + open + "' block", start_line);
  }

  MatrixBlock matrix(const std::string& name) {
    MatrixBlock block;
    std::vector<double> row;
    int row_line = line_;
    auto flush = [&] {
      if (!row.empty()) {
        block.rows.push_back(std::move(row));
        block.row_lines.push_back(row_line);
        row.clear();
      }
    };
    const int start_line = line_;
    while (true) {
      if (pos_ >= text_.size()) throw ParseError("unterminated matrix mpc." + name, start_line);
      const char c = text_[pos_];
      if (c == ']') {
        ++pos_;
        flush();
        break;
      }
      if (c == '%') {
        skip_comment();
      } else if (c == '\n') {
        flush();
        ++line_;
        ++pos_;
      } else if (c == ';') {
        flush();
        ++pos_;
      } else if (c == ',' || std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else if (starts_with("...")) {
        // line continuation
        skip_comment();
        if (peek() == '\n') {
          ++line_;
          ++pos_;
        }
      } else {
        if (row.empty()) row_line = line_;
        const std::string tok = token();
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0') {
          throw ParseError("invalid number '" + tok + "' in mpc." + name, line_);
        }
        row.push_back(v);
      }
    }
    if (peek() == ';') ++pos_;
    return block;
  }

  std::string token() {
    const std::size_t start = pos_;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (std::isspace(static_cast<unsigned char>(c)) || c == ',' || c == ';' || c == ']' ||
          c == '%') {
        break;
      }
      ++pos_;
    }
    return std::string(text_.substr(start, pos_ - start));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

const MatrixBlock& require_block(const RawCase& raw, const std::string& name) {
  auto it = raw.blocks.find(name);
  if (it == raw.blocks.end()) throw ParseError("missing block mpc." + name);
  return it->second;
}

void check_columns(const MatrixBlock& block, const std::string& name, std::size_t min_cols,
                   std::size_t known_cols, std::vector<std::string>* warnings) {
  bool warned = false;
  for (std::size_t i = 0; i < block.rows.size(); ++i) {
    const auto& row = block.rows[i];
    if (row.size() < min_cols) {
      throw ParseError("mpc." + name + " row has " + std::to_string(row.size()) +
                           " columns, need at least " + std::to_string(min_cols),
                       block.row_lines[i]);
    }
    if (row.size() != block.rows.front().size()) {
      throw ParseError("mpc." + name + " rows have inconsistent column counts", block.row_lines[i]);
    }
    if (row.size() > known_cols && !warned && warnings) {
      warnings->push_back("mpc." + name + ": ignoring " + std::to_string(row.size() - known_cols) +
                          " extra column(s)");
      warned = true;
    }
  }
}

BusKind bus_kind(double code, int line) {
  switch (static_cast<int>(code)) {
    case 1: return BusKind::pq;
    case 2: return BusKind::pv;
    case 3: return BusKind::slack;
    default:
      throw ParseError("unsupported bus type " + std::to_string(static_cast<int>(code)), line);
  }
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

int NetworkCase::bus_index(int id) const {
  for (int i = 0; i < n_bus(); ++i) {
    if (buses[i].id == id) return i;
  }
  throw ValidationError("reference to unknown bus id " + std::to_string(id));
}

int NetworkCase::slack_index() const {
  for (int i = 0; i < n_bus(); ++i) {
    if (buses[i].kind == BusKind::slack) return i;
  }
  throw ValidationError("no slack bus");
}

Eigen::VectorXd NetworkCase::demand() const {
  const int nb = n_bus();
  Eigen::VectorXd d(2 * nb);
  for (int i = 0; i < nb; ++i) {
    d(i) = buses[i].p_demand;
    d(nb + i) = buses[i].q_demand;
  }
  return d;
}

NetworkCase parse_case(std::string_view text, std::vector<std::string>* warnings) {
  const RawCase raw = CaseScanner(text).run();
  if (!raw.base_mva) throw ParseError("missing block mpc.baseMVA");
  const double base = *raw.base_mva;
  if (!(base > 0.0)) throw ValidationError("baseMVA must be positive");

  const MatrixBlock& bus = require_block(raw, "bus");
  const MatrixBlock& gen = require_block(raw, "gen");
  const MatrixBlock& branch = require_block(raw, "branch");
  const MatrixBlock& gencost = require_block(raw, "gencost");
  check_columns(bus, "bus", 13, 13, warnings);
  check_columns(gen, "gen", 10, 21, warnings);
  check_columns(branch, "branch", 11, 13, warnings);

  NetworkCase c;
  c.base_mva = base;
  for (std::size_t i = 0; i < bus.rows.size(); ++i) {
    const auto& r = bus.rows[i];
    BusRecord b;
    b.id = static_cast<int>(r[0]);
    b.kind = bus_kind(r[1], bus.row_lines[i]);
    b.p_demand = r[2] / base;
    b.q_demand = r[3] / base;
    b.g_shunt = r[4] / base;
    b.b_shunt = r[5] / base;
    b.v_max = r[11];
    b.v_min = r[12];
    c.buses.push_back(b);
  }

  if (gencost.rows.size() < gen.rows.size()) {
    throw ParseError("mpc.gencost has fewer rows than mpc.gen");
  }
  if (gencost.rows.size() > gen.rows.size() && warnings) {
    warnings->push_back("mpc.gencost: ignoring reactive-power cost rows");
  }
  for (std::size_t i = 0; i < gen.rows.size(); ++i) {
    const auto& r = gen.rows[i];
    const auto& cr = gencost.rows[i];
    const int cost_line = gencost.row_lines[i];
    if (cr.size() < 4) throw ParseError("mpc.gencost row needs at least 4 columns", cost_line);
    if (static_cast<int>(cr[0]) != 2) {
      throw ParseError("only polynomial gencost (model 2) is supported", cost_line);
    }
    const int ncoef = static_cast<int>(cr[3]);
    if (ncoef < 1 || ncoef > 3 || cr.size() < static_cast<std::size_t>(4 + ncoef)) {
      throw ParseError("mpc.gencost polynomial must have 1 to 3 coefficients", cost_line);
    }
    if (r[7] <= 0.0) {
      if (warnings) warnings->push_back("dropping out-of-service generator at bus " +
                                        std::to_string(static_cast<int>(r[0])));
      continue;
    }
    GenRecord g;
    g.bus = static_cast<int>(r[0]);
    g.q_max = r[3] / base;
    g.q_min = r[4] / base;
    g.p_max = r[8] / base;
    g.p_min = r[9] / base;
    // coefficients are listed highest order first
    const double* coef = cr.data() + 4;
    if (ncoef == 3) {
      g.cost_quadratic = coef[0] * base * base;
      g.cost_linear = coef[1] * base;
    } else if (ncoef == 2) {
      g.cost_linear = coef[0] * base;
    }
    c.gens.push_back(g);
  }

  for (std::size_t i = 0; i < branch.rows.size(); ++i) {
    const auto& r = branch.rows[i];
    if (r[10] <= 0.0) {
      if (warnings) warnings->push_back("dropping out-of-service branch " +
                                        std::to_string(static_cast<int>(r[0])) + "-" +
                                        std::to_string(static_cast<int>(r[1])));
      continue;
    }
    BranchRecord br;
    br.from_bus = static_cast<int>(r[0]);
    br.to_bus = static_cast<int>(r[1]);
    br.r = r[2];
    br.x = r[3];
    br.b_charging = r[4];
    br.flow_limit = r[5] / base;
    br.tap_ratio = r[8] == 0.0 ? 1.0 : r[8];
    br.phase_shift = r[9] * kDegToRad;
    c.branches.push_back(br);
  }

  validate_case(c);
  return c;
}

NetworkCase load_case_file(const std::string& path, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open case file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_case(ss.str(), warnings);
}

void validate_case(const NetworkCase& c) {
  if (c.buses.empty()) throw ValidationError("case has no buses");
  std::set<int> ids;
  int slack_count = 0;
  for (const auto& b : c.buses) {
    if (!ids.insert(b.id).second) {
      throw ValidationError("duplicate bus id " + std::to_string(b.id));
    }
    if (!(b.v_min > 0.0)) throw ValidationError("bus " + std::to_string(b.id) + ": v_min must be > 0");
    if (b.v_min > b.v_max) {
      throw ValidationError("bus " + std::to_string(b.id) + ": v_min exceeds v_max");
    }
    if (b.kind == BusKind::slack) ++slack_count;
  }
  if (slack_count == 0) throw ValidationError("no slack bus");
  if (slack_count > 1) throw ValidationError("more than one slack bus");

  std::vector<std::vector<int>> adj(c.buses.size());
  for (const auto& br : c.branches) {
    if (!ids.count(br.from_bus) || !ids.count(br.to_bus)) {
      throw ValidationError("branch " + std::to_string(br.from_bus) + "-" +
                            std::to_string(br.to_bus) + " references a missing bus");
    }
    if (br.from_bus == br.to_bus) {
      throw ValidationError("branch connects bus " + std::to_string(br.from_bus) + " to itself");
    }
    if (br.r == 0.0 && br.x == 0.0) {
      throw ValidationError("singular branch " + std::to_string(br.from_bus) + "-" +
                            std::to_string(br.to_bus) + " (r = x = 0)");
    }
    const int f = c.bus_index(br.from_bus);
    const int t = c.bus_index(br.to_bus);
    adj[f].push_back(t);
    adj[t].push_back(f);
  }
  for (const auto& g : c.gens) {
    if (!ids.count(g.bus)) {
      throw ValidationError("generator references missing bus " + std::to_string(g.bus));
    }
    if (g.p_min > g.p_max) throw ValidationError("generator at bus " + std::to_string(g.bus) + ": p_min exceeds p_max");
    if (g.q_min > g.q_max) throw ValidationError("generator at bus " + std::to_string(g.bus) + ": q_min exceeds q_max");
    if (g.cost_linear < 0.0) {
      throw ValidationError("generator at bus " + std::to_string(g.bus) + ": negative linear cost");
    }
  }

  std::vector<bool> seen(c.buses.size(), false);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = true;
  std::size_t reached = 1;
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = true;
        ++reached;
        frontier.push(v);
      }
    }
  }
  if (reached != c.buses.size()) throw ValidationError("bus graph is disconnected");
}

std::string format_case(const NetworkCase& c) {
  const double base = c.base_mva;
  std::ostringstream os;
  os << "function mpc = qopf_case\n";
  os << "mpc.version = '2';\n";
  os << "mpc.baseMVA = " << fmt_double(base) << ";\n\n";
  os << "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin\nmpc.bus = [\n";
  for (const auto& b : c.buses) {
    os << '\t' << b.id << '\t' << static_cast<int>(b.kind) << '\t' << fmt_double(b.p_demand * base)
       << '\t' << fmt_double(b.q_demand * base) << '\t' << fmt_double(b.g_shunt * base) << '\t'
       << fmt_double(b.b_shunt * base) << "\t1\t1\t0\t0\t1\t" << fmt_double(b.v_max) << '\t'
       << fmt_double(b.v_min) << ";\n";
  }
  os << "];\n\n%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin\nmpc.gen = [\n";
  for (const auto& g : c.gens) {
    os << '\t' << g.bus << "\t0\t0\t" << fmt_double(g.q_max * base) << '\t'
       << fmt_double(g.q_min * base) << "\t1\t" << fmt_double(base) << "\t1\t"
       << fmt_double(g.p_max * base) << '\t' << fmt_double(g.p_min * base) << ";\n";
  }
  os << "];\n\n%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax\nmpc.branch = [\n";
  for (const auto& br : c.branches) {
    const std::string rate = fmt_double(br.flow_limit * base);
    os << '\t' << br.from_bus << '\t' << br.to_bus << '\t' << fmt_double(br.r) << '\t'
       << fmt_double(br.x) << '\t' << fmt_double(br.b_charging) << '\t' << rate << '\t' << rate
       << '\t' << rate << '\t' << fmt_double(br.tap_ratio) << '\t'
       << fmt_double(br.phase_shift / kDegToRad) << "\t1\t-360\t360;\n";
  }
  os << "];\n\n%% 2 startup shutdown n c2 c1 c0\nmpc.gencost = [\n";
  for (const auto& g : c.gens) {
    os << "\t2\t0\t0\t3\t" << fmt_double(g.cost_quadratic / (base * base)) << '\t'
       << fmt_double(g.cost_linear / base) << "\t0;\n";
  }
  os << "];\n";
  return os.str();
}

BranchAdmittance branch_admittance(const BranchRecord& br) {
  using cd = std::complex<double>;
  if (br.r == 0.0 && br.x == 0.0) {
    throw ValidationError("singular branch " + std::to_string(br.from_bus) + "-" +
                          std::to_string(br.to_bus) + " (r = x = 0)");
  }
  const cd ys = 1.0 / cd(br.r, br.x);
  const cd tap = std::polar(br.tap_ratio, br.phase_shift);
  const cd ytt = ys + cd(0.0, br.b_charging / 2.0);
  BranchAdmittance a;
  a.ytt = ytt;
  a.yff = ytt / (tap * std::conj(tap));
  a.yft = -ys / std::conj(tap);
  a.ytf = -ys / tap;
  return a;
}

AdmittanceMatrix build_ybus(const NetworkCase& c) {
  const int nb = c.n_bus();
  AdmittanceMatrix out;
  out.y = Eigen::MatrixXcd::Zero(nb, nb);
  for (const auto& br : c.branches) {
    const int f = c.bus_index(br.from_bus);
    const int t = c.bus_index(br.to_bus);
    const BranchAdmittance a = branch_admittance(br);
    out.y(f, f) += a.yff;
    out.y(f, t) += a.yft;
    out.y(t, f) += a.ytf;
    out.y(t, t) += a.ytt;
  }
  for (int i = 0; i < nb; ++i) {
    out.y(i, i) += std::complex<double>(c.buses[i].g_shunt, c.buses[i].b_shunt);
  }
  return out;
}

nlohmann::json to_json(const NetworkCase& c) {
  using nlohmann::json;
  json j;
  j["base_mva"] = c.base_mva;
  j["buses"] = json::array();
  for (const auto& b : c.buses) {
    const char* kind = b.kind == BusKind::slack ? "slack" : b.kind == BusKind::pv ? "PV" : "PQ";
    j["buses"].push_back({{"id", b.id},
                          {"kind", kind},
                          {"p_demand", b.p_demand},
                          {"q_demand", b.q_demand},
                          {"g_shunt", b.g_shunt},
                          {"b_shunt", b.b_shunt},
                          {"v_min", b.v_min},
                          {"v_max", b.v_max}});
  }
  j["branches"] = json::array();
  for (const auto& br : c.branches) {
    j["branches"].push_back({{"from_bus", br.from_bus},
                             {"to_bus", br.to_bus},
                             {"r", br.r},
                             {"x", br.x},
                             {"b_charging", br.b_charging},
                             {"flow_limit", br.flow_limit},
                             {"tap_ratio", br.tap_ratio},
                             {"phase_shift", br.phase_shift}});
  }
  j["gens"] = json::array();
  for (const auto& g : c.gens) {
    j["gens"].push_back({{"bus", g.bus},
                         {"p_min", g.p_min},
                         {"p_max", g.p_max},
                         {"q_min", g.q_min},
                         {"q_max", g.q_max},
                         {"cost_linear", g.cost_linear},
                         {"cost_quadratic", g.cost_quadratic}});
  }
  return j;
}

}  // namespace qopf
