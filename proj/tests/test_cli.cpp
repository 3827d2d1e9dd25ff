#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "robosynth/problem.hpp"

using namespace robosynth;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;

  bool contains(const std::string& s) const {
    return out.find(s) != std::string::npos;
  }
};

RunResult run_cli(const std::string& args) {
  const std::string cmd =
      std::string("\"") + ROBOSYNTH_CLI_PATH + "\" " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  RunResult r;
  char buf[512];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

double grab(const RunResult& r, const std::string& key) {
  const std::string tag = key + " = ";
  const auto pos = r.out.find(tag);
  REQUIRE(pos != std::string::npos);
  return std::stod(r.out.substr(pos + tag.size()));
}

fs::path scratch_root() {
  static const fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "robosynth_cli_scratch";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = scratch_root() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

json scalar_spec(double wbound, double eps) {
  return json{{"A", {{0.5}}},        {"B", {{1.0}}},
              {"Q", {{1.0}}},        {"R", {{1.0}}},
              {"P", {{1.0}}},        {"G", {{1.0}}},
              {"N", 2},              {"state_box", {1.0}},
              {"control_box", {1.0}}, {"dist_box", {wbound}},
              {"eps", eps}};
}

fs::path write_spec(const std::string& name, const json& j) {
  fs::path p = scratch_root() / name;
  write_text_file(p.string(), j.dump(2) + "\n");
  return p;
}

std::string secondorder() {
  return q(fs::path(ROBOSYNTH_CONFIG_DIR) / "secondorder.json");
}

/// Shared small pipeline on the disturbed scalar problem; built once on
/// first use so later cases stay order independent.
struct Pipeline {
  fs::path spec, dir, dataset, quifs_model, nn_model;
  std::string datagen_out;
};

const Pipeline& pipeline() {
  static const Pipeline p = [] {
    Pipeline pl;
    pl.spec = write_spec("toy_disturbed.json", scalar_spec(0.05, 0.12));
    pl.dir = fresh_dir("pipeline");
    pl.dataset = pl.dir / "dataset.csv";
    pl.quifs_model = pl.dir / "quifs_model.json";
    pl.nn_model = pl.dir / "nn_model.json";

    auto dg = run_cli("datagen --spec " + q(pl.spec) +
                      " --h 0.1 --iters 40 --workers 2 --out " + q(pl.dir));
    REQUIRE(dg.code == 0);
    pl.datagen_out = dg.out;

    auto lq = run_cli("learn quifs --spec " + q(pl.spec) + " --dataset " +
                      q(pl.dataset) + " --eps 0.12 --out " + q(pl.dir));
    REQUIRE(lq.code == 0);
    REQUIRE(lq.contains("margin = met"));

    auto tn = run_cli("train nn --spec " + q(pl.spec) + " --dataset " +
                      q(pl.dataset) +
                      " --width 8 --depth 2 --lr 0.05 --epochs 300 --batch 8 "
                      "--eps 0.12 --seed 1 --report-certified-depth --out " +
                      q(pl.dir));
    REQUIRE(tn.code == 0);
    return pl;
  }();
  return p;
}

}  // namespace

TEST_CASE("spec validate reports the problem fingerprint") {
  auto r = run_cli("spec validate --spec " + secondorder());
  CHECK(r.code == 0);
  CHECK(r.contains("valid = true"));
  CHECK(r.contains("d = 2, m = 1, nw = 2, N = 5"));
  CHECK(r.contains("hash = "));

  auto missing = run_cli("spec validate --spec /nonexistent/problem.json");
  CHECK(missing.code == 1);
  CHECK(missing.contains("error:"));
}

TEST_CASE("solve exit codes cover feasible, infeasible and usage errors") {
  const auto spec0 = write_spec("toy_nominal.json", scalar_spec(0.0, 0.0));
  const auto out = fresh_dir("solve0");
  auto ok = run_cli("solve --spec " + q(spec0) + " --x0 0 --iters 5 --out " +
                    q(out));
  CHECK(ok.code == 0);
  CHECK(ok.contains("feasible = true"));
  CHECK(std::abs(grab(ok, "value")) < 1e-3);

  auto corner = run_cli("solve --spec " + secondorder() +
                        " --x0 1.5,1.5 --iters 5 --out " +
                        q(fresh_dir("solve_corner")));
  CHECK(corner.code == 2);
  CHECK(corner.contains("feasible = false"));

  auto bad = run_cli("solve --spec " + q(spec0) + " --x0 nope --out " +
                     q(fresh_dir("solve_bad")));
  CHECK(bad.code == 1);
  CHECK(bad.contains("usage"));

  auto short_x = run_cli("solve --spec " + secondorder() + " --x0 0.5 --out " +
                         q(fresh_dir("solve_short")));
  CHECK(short_x.code == 1);
  CHECK(short_x.contains("2 components"));
}

TEST_CASE("solve writes a nondecreasing incumbent history and a manifest") {
  const auto& pl = pipeline();
  const auto out = fresh_dir("solve_hist");
  auto r = run_cli("solve --spec " + q(pl.spec) +
                   " --x0 0.3 --iters 30 --seed 2 --out " + q(out));
  REQUIRE(r.code == 0);

  std::ifstream hist(out / "sa_history.csv");
  REQUIRE(hist.good());
  std::string line;
  std::getline(hist, line);
  CHECK(line == "iteration,incumbent");
  double prev = -1e300;
  int rows = 0;
  while (std::getline(hist, line)) {
    const auto comma = line.find(',');
    REQUIRE(comma != std::string::npos);
    const double v = std::stod(line.substr(comma + 1));
    CHECK(v >= prev - 1e-12);
    prev = v;
    ++rows;
  }
  CHECK(rows == 31);

  const json m = json::parse(read_text_file((out / "solve_manifest.json").string()));
  CHECK(m["command"] == "solve");
  CHECK(m["outputs"].contains((out / "sa_history.csv").string()));
  CHECK(m["spec_hash"] == spec_hash(load_spec(pl.spec.string())));
}

TEST_CASE("pipeline artifacts evaluate and reject foreign problems") {
  const auto& pl = pipeline();

  auto qe = run_cli("policy eval --spec " + q(pl.spec) + " --model " +
                    q(pl.quifs_model) + " --x 0.3 --out " +
                    q(fresh_dir("pe_q")));
  CHECK(qe.code == 0);
  CHECK(qe.contains("kind = quifs"));
  CHECK(std::abs(grab(qe, "u")) < 1.0);

  auto ne = run_cli("policy eval --spec " + q(pl.spec) + " --model " +
                    q(pl.nn_model) + " --x 0.3 --out " + q(fresh_dir("pe_n")));
  CHECK(ne.code == 0);
  CHECK(ne.contains("kind = nn"));

  auto foreign = run_cli("policy eval --spec " + secondorder() + " --model " +
                         q(pl.quifs_model) + " --x 0.3,0.1 --out " +
                         q(fresh_dir("pe_f")));
  CHECK(foreign.code == 1);
  CHECK(foreign.contains("fingerprint mismatch"));

  auto fds = run_cli("learn quifs --spec " + secondorder() + " --dataset " +
                     q(pl.dataset) + " --out " + q(fresh_dir("lq_f")));
  CHECK(fds.code == 1);
  CHECK(fds.contains("fingerprint mismatch"));
}

TEST_CASE("simulate keeps a certified policy inside the constraints") {
  const auto& pl = pipeline();
  const auto out = fresh_dir("sim_q");
  auto r = run_cli("simulate --spec " + q(pl.spec) + " --policy " +
                   q(pl.quifs_model) +
                   " --x0 0.4 --steps 12 --dist uniform --seed 7 --out " +
                   q(out));
  CHECK(r.code == 0);
  CHECK(r.contains("violations = 0"));
  CHECK(r.contains("coverage_exit = false"));
  CHECK(fs::exists(out / "trace.csv"));

  std::ifstream trace(out / "trace.csv");
  std::string header;
  std::getline(trace, header);
  CHECK(header == "t,x_1,u_1,w_1,violation_count");
  int rows = 0;
  for (std::string line; std::getline(trace, line);) ++rows;
  CHECK(rows == 13);
}

TEST_CASE("simulate with the online baseline reports descent slack") {
  const auto& pl = pipeline();
  auto r = run_cli("simulate --spec " + q(pl.spec) +
                   " --rhc --iters 25 --x0 0.5 --steps 5 --dist zero --out " +
                   q(fresh_dir("sim_rhc")));
  CHECK(r.code == 0);
  CHECK(r.contains("kind = rhc"));
  CHECK(r.contains("max_descent_slack = "));
  CHECK(grab(r, "violations") == 0);

  auto both = run_cli("simulate --spec " + q(pl.spec) + " --rhc --policy " +
                      q(pl.quifs_model) + " --x0 0.1 --out " +
                      q(fresh_dir("sim_both")));
  CHECK(both.code == 1);
  CHECK(both.contains("choose exactly one"));
}

TEST_CASE("train nn prints the certified depth beside the trained depth") {
  const auto& pl = pipeline();
  auto tn = run_cli("train nn --spec " + q(pl.spec) + " --dataset " +
                    q(pl.dataset) +
                    " --width 8 --depth 2 --lr 0.05 --epochs 300 --batch 8 "
                    "--eps 0.12 --seed 1 --report-certified-depth --out " +
                    q(fresh_dir("tn_report")));
  REQUIRE(tn.code == 0);
  CHECK(tn.contains("trained_depth = 2"));
  CHECK(tn.contains("certified_depth = "));
  CHECK(grab(tn, "certified_depth") > grab(tn, "trained_depth"));
  CHECK(grab(tn, "uniform_err_train") < 0.12);

  auto gated = run_cli("train nn --spec " + q(pl.spec) + " --dataset " +
                       q(pl.dataset) +
                       " --width 4 --depth 1 --lr 0.05 --epochs 3 --batch 8 "
                       "--max-uniform-err 1e-9 --out " +
                       q(fresh_dir("tn_gate")));
  CHECK(gated.code == 3);
  CHECK(gated.contains("margin = failed"));
}

TEST_CASE("identical reruns produce byte-identical artifacts and manifests") {
  const auto& pl = pipeline();
  const auto out = fresh_dir("rerun");
  const std::string args = "datagen --spec " + q(pl.spec) +
                           " --h 0.2 --iters 30 --workers 2 --out " + q(out);
  REQUIRE(run_cli(args).code == 0);
  const std::string data1 = read_text_file((out / "dataset.csv").string());
  const std::string meta1 =
      read_text_file((out / "dataset.csv.meta.json").string());
  const std::string man1 =
      read_text_file((out / "datagen_manifest.json").string());
  REQUIRE(run_cli(args).code == 0);
  CHECK(read_text_file((out / "dataset.csv").string()) == data1);
  CHECK(read_text_file((out / "dataset.csv.meta.json").string()) == meta1);
  CHECK(read_text_file((out / "datagen_manifest.json").string()) == man1);
}

TEST_CASE("dataset dependency errors name the required file") {
  const auto& pl = pipeline();
  auto missing = run_cli("learn quifs --spec " + q(pl.spec) +
                         " --dataset /nonexistent/dataset.csv --out " +
                         q(fresh_dir("lq_missing")));
  CHECK(missing.code == 1);
  CHECK(missing.contains("missing required dataset"));
  CHECK(missing.contains("/nonexistent/dataset.csv"));

  const auto dir = fresh_dir("lq_empty");
  const auto empty = dir / "dataset.csv";
  {
    std::ifstream in(pl.dataset);
    std::string header;
    std::getline(in, header);
    write_text_file(empty.string(), header + "\n");
  }
  fs::copy_file(pl.dir / "dataset.csv.meta.json", dir / "dataset.csv.meta.json");
  auto r = run_cli("learn quifs --spec " + q(pl.spec) + " --dataset " +
                   q(empty) + " --out " + q(dir));
  CHECK(r.code == 1);
  CHECK(r.contains("feasible record"));
}

TEST_CASE("config files merge beneath command-line flags") {
  const auto& pl = pipeline();
  const auto out = fresh_dir("cfg");
  const json cfg{{"spec_path", pl.spec.string()},
                 {"seed", 5},
                 {"workers", 2},
                 {"sa", {{"iters", 30}}},
                 {"grid", {{"h", 0.2}}}};
  const auto cfg_path = scratch_root() / "run.json";
  write_text_file(cfg_path.string(), cfg.dump(2) + "\n");

  auto from_cfg = run_cli("datagen --config " + q(cfg_path) + " --out " + q(out));
  REQUIRE(from_cfg.code == 0);
  json man = json::parse(
      read_text_file((out / "datagen_manifest.json").string()));
  CHECK(man["config"]["grid"]["h"] == doctest::Approx(0.2));
  CHECK(man["config"]["sa"]["iters"] == 30);
  CHECK(man["config"]["sa"]["seed"] == 5);

  auto override_h = run_cli("datagen --config " + q(cfg_path) +
                            " --h 0.5 --iters 10 --out " + q(out));
  REQUIRE(override_h.code == 0);
  man = json::parse(read_text_file((out / "datagen_manifest.json").string()));
  CHECK(man["config"]["grid"]["h"] == doctest::Approx(0.5));
  CHECK(man["config"]["sa"]["iters"] == 10);
}

TEST_CASE("roa emits nested masks and a grid csv") {
  const auto& pl = pipeline();
  const auto out = fresh_dir("roa");
  auto r = run_cli("roa --spec " + q(pl.spec) +
                   " --h 0.25 --iters 25 --workers 2 --out " + q(out));
  REQUIRE(r.code == 0);
  const int points = int(grab(r, "points"));
  const int exact = int(grab(r, "exact_feasible"));
  const int base = int(grab(r, "baseline_feasible"));
  CHECK(points == 9);
  CHECK(base <= exact);

  std::ifstream csv(out / "roa.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "x_1,exact,baseline");
  int rows = 0, exact_rows = 0, base_rows = 0;
  for (std::string line; std::getline(csv, line); ++rows) {
    const auto c1 = line.find(','), c2 = line.rfind(',');
    REQUIRE(c1 != std::string::npos);
    REQUIRE(c2 > c1);
    const int e = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
    const int b = std::stoi(line.substr(c2 + 1));
    if (b == 1) CHECK(e == 1);
    exact_rows += e;
    base_rows += b;
  }
  CHECK(rows == points);
  CHECK(exact_rows == exact);
  CHECK(base_rows == base);
}

TEST_CASE("validate writes a report and enforces the threshold") {
  const auto& pl = pipeline();
  const auto out = fresh_dir("val");
  auto r = run_cli("validate --spec " + q(pl.spec) + " --policy " +
                   q(pl.quifs_model) +
                   " --p 40 --steps 8 --rollouts 3 --mu-crit 0.5 --seed 3 "
                   "--workers 2 --out " +
                   q(out));
  CHECK(r.code == 0);
  CHECK(r.contains("pass = true"));

  const json rep = json::parse(
      read_text_file((out / "validation.json").string()));
  CHECK(rep["p"] == 40);
  CHECK(rep["mu_tilde"].get<double>() == doctest::Approx(grab(r, "mu_tilde")));
  CHECK(rep["pass"] == true);
  CHECK(rep["T"] == 8);

  auto strict = run_cli("validate --spec " + q(pl.spec) + " --policy " +
                        q(pl.quifs_model) +
                        " --p 40 --steps 8 --rollouts 2 --mu-crit 0.999 "
                        "--seed 3 --out " +
                        q(fresh_dir("val_strict")));
  CHECK(strict.code == 3);
  CHECK(strict.contains("pass = false"));
}
