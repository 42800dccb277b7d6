#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "qopf/errors.hpp"
#include "qopf/grid.hpp"
#include "test_util.hpp"

using namespace qopf;
using namespace std::complex_literals;

namespace {

const char* kTwoBus = R"(
function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0  0  0 0 1 1 0 0 1 1.1 0.9;
  2 1 50 10 0 0 1 1 0 0 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 200 0;
];
mpc.branch = [
  1 2 0 0.1 0 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
  2 0 0 2 0.1 0;
];
)";

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  REQUIRE(pos != std::string::npos);
  return s.replace(pos, from.size(), to);
}

void check_same_case(const NetworkCase& a, const NetworkCase& b) {
  REQUIRE(a.n_bus() == b.n_bus());
  REQUIRE(a.n_gen() == b.n_gen());
  REQUIRE(a.n_branch() == b.n_branch());
  CHECK(a.base_mva == doctest::Approx(b.base_mva).epsilon(1e-12));
  const double tol = 1e-12;
  for (int i = 0; i < a.n_bus(); ++i) {
    const auto &x = a.buses[i], &y = b.buses[i];
    CHECK(x.id == y.id);
    CHECK(x.kind == y.kind);
    CHECK(std::abs(x.p_demand - y.p_demand) <= tol);
    CHECK(std::abs(x.q_demand - y.q_demand) <= tol);
    CHECK(std::abs(x.g_shunt - y.g_shunt) <= tol);
    CHECK(std::abs(x.b_shunt - y.b_shunt) <= tol);
    CHECK(std::abs(x.v_min - y.v_min) <= tol);
    CHECK(std::abs(x.v_max - y.v_max) <= tol);
  }
  for (int k = 0; k < a.n_gen(); ++k) {
    const auto &x = a.gens[k], &y = b.gens[k];
    CHECK(x.bus == y.bus);
    CHECK(std::abs(x.p_min - y.p_min) <= tol);
    CHECK(std::abs(x.p_max - y.p_max) <= tol);
    CHECK(std::abs(x.q_min - y.q_min) <= tol);
    CHECK(std::abs(x.q_max - y.q_max) <= tol);
    CHECK(std::abs(x.cost_linear - y.cost_linear) <= tol * std::max(1.0, x.cost_linear));
    CHECK(std::abs(x.cost_quadratic - y.cost_quadratic) <= tol * std::max(1.0, x.cost_quadratic));
  }
  for (int l = 0; l < a.n_branch(); ++l) {
    const auto &x = a.branches[l], &y = b.branches[l];
    CHECK(x.from_bus == y.from_bus);
    CHECK(x.to_bus == y.to_bus);
    CHECK(std::abs(x.r - y.r) <= tol);
    CHECK(std::abs(x.x - y.x) <= tol);
    CHECK(std::abs(x.b_charging - y.b_charging) <= tol);
    CHECK(std::abs(x.flow_limit - y.flow_limit) <= tol);
    CHECK(std::abs(x.tap_ratio - y.tap_ratio) <= tol);
    CHECK(std::abs(x.phase_shift - y.phase_shift) <= tol);
  }
}

}  // namespace

TEST_CASE("parse_case: smallest legal case") {
  const NetworkCase c = parse_case(kTwoBus);
  CHECK(c.n_bus() == 2);
  CHECK(c.n_gen() == 1);
  CHECK(c.n_branch() == 1);
  CHECK(c.buses[1].p_demand == doctest::Approx(0.5));
  CHECK(c.buses[1].q_demand == doctest::Approx(0.1));
  CHECK(c.gens[0].p_max == doctest::Approx(2.0));
  CHECK(c.gens[0].cost_linear == doctest::Approx(10.0));
  CHECK(c.slack_index() == 0);
}

TEST_CASE("parse_case: IEEE 14-bus counts") {
  const NetworkCase c = testing::case14();
  CHECK(c.n_bus() == 14);
  CHECK(c.n_gen() == 5);
  CHECK(c.n_branch() == 20);
  CHECK(c.buses[8].b_shunt == doctest::Approx(0.19));
  CHECK(c.branches[7].tap_ratio == doctest::Approx(0.978));
  CHECK(c.gens[0].cost_linear == doctest::Approx(2000.0));
  CHECK(c.gens[0].cost_quadratic == doctest::Approx(430.292599));
}

TEST_CASE("parse_case: IEEE 39-bus counts") {
  const NetworkCase c = testing::case39();
  CHECK(c.n_bus() == 39);
  CHECK(c.n_gen() == 10);
  CHECK(c.n_branch() == 46);
  CHECK(c.buses[c.slack_index()].id == 31);
  CHECK(c.branches[0].flow_limit == doctest::Approx(6.0));
}

TEST_CASE("parse_case: rejection cases") {
  SUBCASE("missing baseMVA names the block") {
    const std::string text = replace(kTwoBus, "mpc.baseMVA = 100;", "");
    try {
      parse_case(text);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("mpc.baseMVA") != std::string::npos);
    }
  }
  SUBCASE("missing branch block") {
    const std::string text = replace(kTwoBus, "mpc.branch", "mpc.branches");
    CHECK_THROWS_WITH_AS(parse_case(text), doctest::Contains("mpc.branch"), ParseError);
  }
  SUBCASE("bad number reports its line") {
    const std::string text = replace(kTwoBus, "2 1 50 10", "2 1 5x0 10");
    try {
      parse_case(text);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 6);
    }
  }
  SUBCASE("short rows") {
    const std::string text = replace(kTwoBus, "1 3 0  0  0 0 1 1 0 0 1 1.1 0.9;", "1 3 0 0;");
    CHECK_THROWS_AS(parse_case(text), ParseError);
  }
  SUBCASE("duplicate bus id") {
    const std::string text = replace(kTwoBus, "2 1 50 10", "1 1 50 10");
    CHECK_THROWS_WITH_AS(parse_case(text), doctest::Contains("duplicate bus id"), ValidationError);
  }
  SUBCASE("no slack") {
    const std::string text = replace(kTwoBus, "1 3 0  0", "1 2 0  0");
    CHECK_THROWS_WITH_AS(parse_case(text), doctest::Contains("no slack"), ValidationError);
  }
  SUBCASE("disconnected graph") {
    std::string text = replace(kTwoBus, "];\nmpc.gen", "  3 1 1 1 0 0 1 1 0 0 1 1.1 0.9;\n];\nmpc.gen");
    CHECK_THROWS_WITH_AS(parse_case(text), doctest::Contains("disconnected"), ValidationError);
  }
  SUBCASE("singular branch") {
    const std::string text = replace(kTwoBus, "1 2 0 0.1 0", "1 2 0 0 0");
    CHECK_THROWS_WITH_AS(parse_case(text), doctest::Contains("singular"), ValidationError);
  }
  SUBCASE("inverted voltage bounds") {
    const std::string text = replace(kTwoBus, "1 1.1 0.9;\n  2", "1 0.9 1.1;\n  2");
    CHECK_THROWS_WITH_AS(parse_case(text), doctest::Contains("v_min exceeds v_max"), ValidationError);
  }
}

TEST_CASE("parse_case: extra columns and out-of-service elements") {
  std::vector<std::string> warnings;
  std::string text = replace(kTwoBus, "1 0 0 100 -100 1 100 1 200 0;",
                             "1 0 0 100 -100 1 100 1 200 0 0 0 0 0 0 0 0 0 0 0 0 7 7;\n"
                             "  2 0 0 10 -10 1 100 0 20 0 0 0 0 0 0 0 0 0 0 0 0 7 7;");
  text = replace(text, "2 0 0 2 0.1 0;", "2 0 0 2 0.1 0;\n  2 0 0 2 0.2 0;");
  const NetworkCase c = parse_case(text, &warnings);
  CHECK(c.n_gen() == 1);
  CHECK(warnings.size() == 2);
}

TEST_CASE("parse_case: per-unit conversion is base independent") {
  const NetworkCase a = parse_case(kTwoBus);
  std::string text = replace(kTwoBus, "mpc.baseMVA = 100;", "mpc.baseMVA = 200;");
  text = replace(text, "2 1 50 10", "2 1 100 20");
  const NetworkCase b = parse_case(text);
  CHECK(a.buses[1].p_demand == b.buses[1].p_demand);
  CHECK(a.buses[1].q_demand == b.buses[1].q_demand);
}

TEST_CASE("format_case round trip") {
  for (const NetworkCase& original : {testing::case14(), testing::case39(), testing::toy2()}) {
    const NetworkCase again = parse_case(format_case(original));
    check_same_case(original, again);
  }
  // perturbed values exercise full-precision formatting
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  NetworkCase c = testing::case14();
  for (auto& b : c.buses) b.p_demand *= u(rng);
  for (auto& br : c.branches) {
    br.x *= u(rng);
    br.phase_shift = (u(rng) - 1.0) * 0.1;
  }
  check_same_case(c, parse_case(format_case(c)));
}

TEST_CASE("build_ybus: single lossless branch") {
  NetworkCase c = parse_case(kTwoBus);
  AdmittanceMatrix y = build_ybus(c);
  CHECK(std::abs(y.y(0, 0) - (-10.0i)) < 1e-12);
  CHECK(std::abs(y.y(1, 1) - (-10.0i)) < 1e-12);
  CHECK(std::abs(y.y(0, 1) - (10.0i)) < 1e-12);
  CHECK(std::abs(y.y(1, 0) - (10.0i)) < 1e-12);

  c.branches[0].b_charging = 0.2;
  y = build_ybus(c);
  CHECK(std::abs(y.y(0, 0) - (-9.9i)) < 1e-12);
  CHECK(std::abs(y.y(1, 1) - (-9.9i)) < 1e-12);
  CHECK(std::abs(y.y(0, 1) - (10.0i)) < 1e-12);
}

TEST_CASE("build_ybus: IEEE 14-bus row sums equal shunt terms") {
  const NetworkCase c = testing::case14();
  const AdmittanceMatrix y = build_ybus(c);
  std::set<int> tapped;
  for (const auto& br : c.branches) {
    if (br.tap_ratio != 1.0 || br.phase_shift != 0.0) {
      tapped.insert(c.bus_index(br.from_bus));
      tapped.insert(c.bus_index(br.to_bus));
    }
  }
  int checked = 0;
  for (int i = 0; i < c.n_bus(); ++i) {
    if (tapped.count(i)) continue;
    std::complex<double> shunt(c.buses[i].g_shunt, c.buses[i].b_shunt);
    for (const auto& br : c.branches) {
      if (c.bus_index(br.from_bus) == i || c.bus_index(br.to_bus) == i) {
        shunt += std::complex<double>(0.0, br.b_charging / 2.0);
      }
    }
    CHECK(std::abs(y.y.row(i).sum() - shunt) <= 1e-12);
    ++checked;
  }
  CHECK(checked >= 8);
}

TEST_CASE("build_ybus: zero charging and shunts give zero row sums") {
  NetworkCase c = testing::case14();
  for (auto& b : c.buses) b.g_shunt = b.b_shunt = 0.0;
  for (auto& br : c.branches) {
    br.b_charging = 0.0;
    br.tap_ratio = 1.0;
  }
  const AdmittanceMatrix y = build_ybus(c);
  for (int i = 0; i < c.n_bus(); ++i) CHECK(std::abs(y.y.row(i).sum()) <= 1e-12);
  CHECK((y.y - y.y.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("case JSON dump") {
  const auto j = to_json(testing::case14());
  CHECK(j["buses"].size() == 14);
  CHECK(j["buses"][0]["kind"] == "slack");
  CHECK(j["gens"].size() == 5);
}
