#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "qopf/cli.hpp"
#include "qopf/experiment.hpp"
#include "qopf/io.hpp"
#include "test_util.hpp"

using namespace qopf;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("qopf_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

/// Small experiment config in `dir`; outputs go to dir/run.
std::string write_config(const fs::path& dir, int n = 100) {
  const json j = {{"case", testing::data_path("case14.m")},
                  {"dataset", {{"n", n}, {"seed", 3}}},
                  {"model", {{"encoder", {16, 4}}, {"decoder", {16}}, {"qubits", 4}, {"q_depth", 1}}},
                  {"train", {{"epochs", 2}, {"batches_per_epoch", 4}, {"seed", 5}}},
                  {"seeds", {0}},
                  {"noise_levels", {0.1}},
                  {"output", "run"}};
  const std::string path = (dir / "config.json").string();
  write_file_atomic(path, j.dump(2));
  return path;
}

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

/// History CSV without the wall-clock column.
std::string history_without_time(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

}  // namespace

TEST_CASE("usage and data errors map to exit codes") {
  CHECK(cli({}).code == 1);
  CHECK(cli({"bogus"}).code == 1);
  CHECK(cli({"--version"}).code == 0);
  CHECK(cli({"solve"}).code == 1);
  CHECK(cli({"case", "inspect", "/nonexistent/case.m"}).code == 1);

  const fs::path dir = fresh_dir("errors");
  write_file_atomic((dir / "bad.m").string(), "function mpc = bad\nmpc.bus = [1 2;\n");
  CHECK(cli({"case", "inspect", (dir / "bad.m").string()}).code == 2);

  write_file_atomic((dir / "cfg.json").string(), R"({"no_such_key": 1})");
  CHECK(cli({"gen-data", "-c", (dir / "cfg.json").string()}).code == 2);
  write_file_atomic((dir / "broken.json").string(), "{");
  CHECK(cli({"gen-data", "-c", (dir / "broken.json").string()}).code == 2);

  // Training before data generation.
  CHECK(cli({"train", "-c", write_config(dir)}).code == 2);
}

TEST_CASE("case inspect and solve report the 14-bus case") {
  const CliResult r = cli({"case", "inspect", testing::data_path("case14.m")});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["n_bus"] == 14);
  CHECK(j["n_gen"] == 5);
  CHECK(j["n_branch"] == 20);

  const CliResult s = cli({"solve", testing::data_path("case14.m"), "--scale", "0.8"});
  REQUIRE(s.code == 0);
  const json sol = json::parse(s.out);
  CHECK(sol["status"] == "converged");
  CHECK(sol["verify"]["max_eq"].get<double>() <= 1e-8);
  CHECK(sol["pg"].size() == 5);
  CHECK(sol["vm"].size() == 14);
}

TEST_CASE("compact dump writes the model as JSON") {
  const fs::path dir = fresh_dir("compact");
  const std::string out = (dir / "compact.json").string();
  REQUIRE(cli({"compact", "dump", testing::data_path("case2_toy.m"), "-o", out}).code == 0);
  CHECK(json::parse(slurp(out)).is_object());
}

TEST_CASE("gen-data splits and reruns byte-identically") {
  const fs::path a = fresh_dir("gen_a");
  const fs::path b = fresh_dir("gen_b");
  const CliResult ra = cli({"gen-data", "-c", write_config(a)});
  REQUIRE(ra.code == 0);
  const json summary = json::parse(ra.out);
  CHECK(summary["split_sizes"]["collocation"] == 50);
  CHECK(summary["split_sizes"]["train"] == 20);
  CHECK(summary["split_sizes"]["test"] == 30);
  REQUIRE(cli({"gen-data", "-c", write_config(b)}).code == 0);

  for (const char* f : {"demands.csv", "labels.csv", "manifest.json"}) {
    CAPTURE(f);
    CHECK(slurp(a / "run/dataset" / f) == slurp(b / "run/dataset" / f));
  }
  const json man = json::parse(slurp(a / "run/manifests/gen-data.json"));
  CHECK(man["status"] == "complete");
  CHECK(man["config_hash"].get<std::string>().size() == 40);
  CHECK(man.contains("wall_seconds"));

  // A rerun in place reuses every solved label and leaves the files unchanged.
  const std::string labels = slurp(a / "run/dataset/labels.csv");
  const CliResult again = cli({"gen-data", "-c", (a / "config.json").string()});
  REQUIRE(again.code == 0);
  CHECK(json::parse(again.out)["reused_labels"] == 50);
  CHECK(slurp(a / "run/dataset/labels.csv") == labels);
}

TEST_CASE("train, eval, sweep and report over all variants") {
  const fs::path dir = fresh_dir("pipeline");
  const std::string cfg = write_config(dir);
  REQUIRE(cli({"gen-data", "-c", cfg}).code == 0);

  REQUIRE(cli({"train", "-c", cfg, "--seeds", "0,1,2"}).code == 0);
  int histories = 0;
  for (const auto& e : fs::directory_iterator(dir / "run/runs")) {
    if (!fs::exists(e.path() / "history.csv")) continue;
    ++histories;
    CHECK(TrainHistory::from_csv(slurp(e.path() / "history.csv")).epochs.size() == 2);
    CHECK(fs::exists(e.path() / "checkpoint.json"));
  }
  CHECK(histories == 15);
  CHECK(json::parse(slurp(dir / "run/manifests/train.json"))["runs"].size() == 15);

  REQUIRE(cli({"eval", "-c", cfg}).code == 0);
  CHECK(fs::exists(dir / "run/eval/qnn_nrc-s0.json"));
  CHECK(fs::exists(dir / "run/eval/eval.csv"));

  const CliResult sweep = cli({"noise-sweep", "-c", cfg, "--variants", "plain_hybrid,qnn_src,qnn_nrc", "--seeds", "0,1,2"});
  REQUIRE(sweep.code == 0);
  const auto rows = csv_rows(dir / "run/sweep.csv");
  REQUIRE(!rows.empty());
  CHECK(rows[0] == std::vector<std::string>{"run", "variant", "seed", "level", "total_mae", "ratio"});
  const int n_rows = static_cast<int>(rows.size()) - 1;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    REQUIRE(rows[k].size() == 6);
    if (std::stod(rows[k][3]) == 0.0) CHECK(std::abs(std::stod(rows[k][5]) - 1.0) <= 1e-12);
  }
  CHECK(n_rows == 3 * 3 * 2);

  CHECK(cli({"noise-sweep", "-c", cfg, "--variants", "nn_only"}).code == 2);
  CHECK(cli({"noise-sweep", "-c", cfg, "--variants", "pinn,qnn_src"}).code == 2);

  const CliResult rep1 = cli({"report", (dir / "run").string()});
  REQUIRE(rep1.code == 0);
  const std::string md = slurp(dir / "run/report.md");
  const std::string table = slurp(dir / "run/report_table.csv");
  CHECK(md.find("qnn_src") != std::string::npos);
  REQUIRE(cli({"report", (dir / "run").string()}).code == 0);
  CHECK(slurp(dir / "run/report.md") == md);
  CHECK(slurp(dir / "run/report_table.csv") == table);
}

TEST_CASE("sweep rows at zero noise have ratio one") {
  const fs::path dir = fresh_dir("sweep_zero");
  const std::string cfg = write_config(dir);
  REQUIRE(cli({"gen-data", "-c", cfg}).code == 0);
  REQUIRE(cli({"train", "-c", cfg, "--variants", "qnn_src"}).code == 0);
  REQUIRE(cli({"noise-sweep", "-c", cfg, "--variants", "qnn_src", "--levels", "0.05,0.1"}).code == 0);
  auto cells = csv_rows(dir / "run/sweep.csv");
  cells.erase(cells.begin());
  REQUIRE(cells.size() == 3);
  CHECK(std::stod(cells[0][3]) == 0.0);
  CHECK(std::abs(std::stod(cells[0][5]) - 1.0) <= 1e-12);
  CHECK(std::stod(cells[2][3]) == doctest::Approx(0.1));
}

TEST_CASE("pinn without physics weight equals nn_only bitwise") {
  const fs::path dir = fresh_dir("pinn_nn");
  const std::string cfg = write_config(dir);
  REQUIRE(cli({"gen-data", "-c", cfg}).code == 0);
  REQUIRE(cli({"train", "-c", cfg, "--variants", "nn_only,pinn", "--set", "weights.lambda_eps=0"}).code == 0);
  const fs::path runs = dir / "run/runs";
  CHECK(history_without_time(runs / "nn_only-s0/history.csv") == history_without_time(runs / "pinn-s0/history.csv"));
  const json a = json::parse(slurp(runs / "nn_only-s0/checkpoint.json"));
  const json b = json::parse(slurp(runs / "pinn-s0/checkpoint.json"));
  CHECK(a["model"] == b["model"]);
}

TEST_CASE("resume continues the epoch numbering") {
  const fs::path dir = fresh_dir("resume");
  const std::string cfg = write_config(dir);
  REQUIRE(cli({"gen-data", "-c", cfg}).code == 0);
  REQUIRE(cli({"train", "-c", cfg, "--variants", "plain_hybrid", "--epochs", "2"}).code == 0);
  REQUIRE(cli({"train", "-c", cfg, "--variants", "plain_hybrid", "--epochs", "4", "--resume"}).code == 0);
  const TrainHistory h = TrainHistory::from_csv(slurp(dir / "run/runs/plain_hybrid-s0/history.csv"));
  REQUIRE(h.epochs.size() == 4);
  for (int k = 0; k < 4; ++k) CHECK(h.epochs[k].epoch == k + 1);

  // Resuming a finished run changes nothing.
  const std::string before = slurp(dir / "run/runs/plain_hybrid-s0/checkpoint.json");
  REQUIRE(cli({"train", "-c", cfg, "--variants", "plain_hybrid", "--epochs", "4", "--resume"}).code == 0);
  CHECK(slurp(dir / "run/runs/plain_hybrid-s0/checkpoint.json") == before);
  CHECK(TrainHistory::from_csv(slurp(dir / "run/runs/plain_hybrid-s0/history.csv")).epochs.size() == 4);
}

TEST_CASE("report of a zero stub is an all-zero table") {
  const fs::path dir = fresh_dir("report_stub");
  fs::create_directories(dir / "eval");
  fs::create_directories(dir / "runs/nn_only-s0");
  write_file_atomic((dir / "eval/nn_only-s0.json").string(), to_json(EvalReport{}).dump());
  TrainHistory h;
  h.epochs.push_back(EpochRecord{});
  h.epochs.back().epoch = 1;
  write_file_atomic((dir / "runs/nn_only-s0/history.csv").string(), h.to_csv());

  REQUIRE(cli({"report", dir.string()}).code == 0);
  std::istringstream table(slurp(dir / "report_table.csv"));
  std::string header, row;
  std::getline(table, header);
  std::getline(table, row);
  CHECK(row == "nn_only,1,0,0,0,0,0");
  const std::string first = slurp(dir / "report.md");
  REQUIRE(cli({"report", dir.string()}).code == 0);
  CHECK(slurp(dir / "report.md") == first);

  CHECK(cli({"report", (dir / "missing").string()}).code == 2);
}

TEST_CASE("qsim check passes on a small sample") {
  const CliResult r = cli({"qsim", "check", "--circuits", "5", "--channels", "100", "--seed", "2"});
  CHECK(r.code == 0);
  CHECK(json::parse(r.out)["pass"] == true);
}
