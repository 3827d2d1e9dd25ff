#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "robosynth/cloop.hpp"

using namespace robosynth;

namespace {

std::string tmp_file(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

nnfs::ReluNet zero_policy(int d, int m) { return nnfs::make_net(d, m, 4, 1); }

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("online baseline keeps the origin fixed without disturbances") {
  auto spec = fixtures::scalar_toy(2, 0.5, 1.0, 0.0, 0.0);
  cloop::RhcPolicy pol;
  pol.cfg = msa::SAConfig::desk(3);
  pol.cfg.iters = 8;
  cloop::DisturbanceSampler dist;
  dist.mode = cloop::DistMode::Zero;
  auto trace = cloop::simulate(spec, pol, VectorXd::Zero(1), 5, dist, 0);
  REQUIRE(trace.states.size() == 6);
  CHECK(!trace.coverage_exit);
  CHECK(trace.violations.empty());
  CHECK(trace.values.size() == 5);
  for (const auto& x : trace.states) CHECK(x.norm() <= 1e-5);
}

TEST_CASE("certified lattice policy holds a neighborhood of the origin") {
  auto spec = fixtures::scalar_toy(2, 0.5, 1.0, 0.0, 0.0);
  auto cfg = msa::SAConfig::desk(1);
  cfg.iters = 8;
  auto ds = datagen::generate_grid(spec, 0.4, cfg, 1);
  REQUIRE(ds.feasible_count() == int(ds.records.size()));
  auto md = quifs::learn(ds, 0.1);
  cloop::DisturbanceSampler dist;
  dist.mode = cloop::DistMode::Zero;
  auto trace = cloop::simulate(spec, md, VectorXd::Zero(1), 10, dist, 0);
  CHECK(!trace.coverage_exit);
  CHECK(trace.violations.empty());
  for (const auto& x : trace.states) CHECK(x.norm() <= 0.25);
}

TEST_CASE("stored rollouts replay the dynamics bitwise") {
  auto spec = fixtures::second_order();
  auto pol = zero_policy(2, 1);
  VectorXd x0(2);
  x0 << 1.0, -0.5;
  auto trace = cloop::simulate(spec, pol, x0, 20, {}, 5);
  REQUIRE(trace.states.size() == 21);
  CHECK(cloop::replay_matches(spec, trace));

  auto broken = trace;
  broken.states[7][0] += 1e-12;
  CHECK(!cloop::replay_matches(spec, broken));

  int recount = 0;
  for (std::size_t t = 0; t < trace.states.size(); ++t) {
    const VectorXd margin = spec.X.H * trace.states[t] - spec.X.k;
    for (Eigen::Index i = 0; i < margin.size(); ++i) recount += margin[i] > 1e-9;
  }
  for (std::size_t t = 0; t < trace.controls.size(); ++t) {
    const VectorXd margin = spec.U.H * trace.controls[t] - spec.U.k;
    for (Eigen::Index i = 0; i < margin.size(); ++i) recount += margin[i] > 1e-9;
  }
  CHECK(recount == int(trace.violations.size()));
}

TEST_CASE("disturbance modes are deterministic and bounded") {
  auto spec = fixtures::second_order();
  auto pol = zero_policy(2, 1);
  VectorXd x0 = VectorXd::Zero(2);

  cloop::DisturbanceSampler zero;
  zero.mode = cloop::DistMode::Zero;
  auto tz = cloop::simulate(spec, pol, x0, 6, zero, 9);
  for (const auto& w : tz.disturbances) CHECK(w.norm() == 0.0);

  cloop::DisturbanceSampler vertex;
  vertex.mode = cloop::DistMode::Vertex;
  auto tv = cloop::simulate(spec, pol, x0, 8, vertex, 9);
  for (int t = 0; t < 8; ++t) {
    const int idx = t % 4;
    CHECK(tv.disturbances[std::size_t(t)][0] ==
          ((idx & 1) ? -spec.w_half[0] : spec.w_half[0]));
    CHECK(tv.disturbances[std::size_t(t)][1] ==
          ((idx & 2) ? -spec.w_half[1] : spec.w_half[1]));
  }

  auto ta = cloop::simulate(spec, pol, x0, 10, {}, 42);
  auto tb = cloop::simulate(spec, pol, x0, 10, {}, 42);
  auto tc = cloop::simulate(spec, pol, x0, 10, {}, 43);
  bool differs = false;
  for (int t = 0; t < 10; ++t) {
    CHECK((ta.disturbances[std::size_t(t)] - tb.disturbances[std::size_t(t)]).norm() == 0.0);
    CHECK((ta.disturbances[std::size_t(t)].cwiseAbs().array() <=
           spec.w_half.array() + 1e-15)
              .all());
    differs |= (ta.disturbances[std::size_t(t)] - tc.disturbances[std::size_t(t)]).norm() != 0.0;
  }
  CHECK(differs);
}

TEST_CASE("leaving the certified lattice truncates the trace with a marker") {
  auto train_spec = fixtures::scalar_toy(2, 0.5, 1.0, 0.0, 0.0);
  auto cfg = msa::SAConfig::desk(1);
  cfg.iters = 8;
  auto ds = datagen::generate_grid(train_spec, 0.4, cfg, 1);
  auto md = quifs::learn(ds, 0.1);

  auto spec = train_spec;
  spec.A << 3.0;  // blow the state past the learned lattice in one step
  cloop::DisturbanceSampler dist;
  dist.mode = cloop::DistMode::Zero;
  auto trace = cloop::simulate(spec, md, VectorXd::Constant(1, 0.8), 10, dist, 0);
  CHECK(trace.coverage_exit);
  REQUIRE(trace.exit_time >= 1);
  CHECK(trace.states.size() == std::size_t(trace.exit_time) + 1);
  CHECK(trace.controls.size() == std::size_t(trace.exit_time));
  bool at_exit = false;
  for (const auto& v : trace.violations) at_exit |= v.t == trace.exit_time;
  CHECK(at_exit);
}

TEST_CASE("policy and problem shapes must agree before a rollout") {
  auto spec = fixtures::second_order();
  CHECK_THROWS_WITH_AS(
      cloop::simulate(spec, zero_policy(3, 1), VectorXd::Zero(2), 3, {}, 0),
      doctest::Contains("policy dimensions"), SpecError);
  CHECK_THROWS_WITH_AS(
      cloop::simulate(spec, zero_policy(2, 1), VectorXd::Zero(3), 3, {}, 0),
      doctest::Contains("initial state dimension"), SpecError);
  CHECK_THROWS_WITH_AS(
      cloop::simulate(spec, zero_policy(2, 1), VectorXd::Zero(2), -1, {}, 0),
      doctest::Contains("cannot be negative"), SpecError);
}

TEST_CASE("one baseline step regulates the origin and rejects exterior states") {
  auto spec = fixtures::scalar_toy(2, 0.5, 1.0, 0.0, 0.0);
  auto cfg = msa::SAConfig::desk(2);
  cfg.iters = 8;
  CHECK(cloop::rhc_step(spec, VectorXd::Zero(1), cfg).norm() <= 1e-6);

  auto tight = fixtures::scalar_toy(2, 0.5, 1.0, 0.8, 0.0);
  tight.U = Polytope::box(VectorXd::Constant(1, 0.01));
  CHECK_THROWS_WITH_AS(cloop::rhc_step(tight, VectorXd::Constant(1, 1.0), cfg),
                       doctest::Contains("X_N"), SpecError);
  CHECK_THROWS_WITH_AS(cloop::rhc_step(spec, VectorXd::Constant(1, 5.0), cfg),
                       doctest::Contains("X_N"), SpecError);
}

TEST_CASE("one baseline step reproduces the dataset action at a grid state") {
  auto spec = fixtures::scalar_toy();
  auto cfg = msa::SAConfig::desk(9);
  cfg.iters = 12;
  auto states = datagen::grid_states(spec.X, 0.5);
  auto ds = datagen::generate(spec, states, cfg, 1);
  REQUIRE(ds.records.size() == 5);
  REQUIRE(ds.records[3].feasible);
  auto lookup = cfg;
  lookup.seed = cfg.seed ^ splitmix64(3);
  const VectorXd u = cloop::rhc_step(spec, states[3], lookup);
  CHECK((u - ds.records[3].u0).norm() == 0.0);
}

TEST_CASE("open-loop baseline region is contained in the exact region") {
  auto spec = fixtures::second_order();
  auto states = datagen::grid_states(spec.X, 0.75);
  REQUIRE(states.size() == 25);
  auto cfg = msa::SAConfig::desk(3);
  cfg.iters = 60;
  auto roa = cloop::region_of_attraction(spec, states, cfg, 2);
  REQUIRE(roa.exact_mask.size() == 25);
  for (std::size_t i = 0; i < states.size(); ++i)
    if (roa.baseline_mask[i]) CHECK(roa.exact_mask[i]);
  CHECK(roa.exact_feasible() >= roa.baseline_feasible());
  MESSAGE("exact feasible: ", roa.exact_feasible(),
          ", open-loop baseline: ", roa.baseline_feasible());
}

TEST_CASE("a loosely constrained toy is feasible everywhere") {
  auto spec = fixtures::scalar_toy(2, 0.5, 1.0, 0.05, 0.0);
  spec.X = Polytope::box(VectorXd::Constant(1, 10.0));
  spec.U = Polytope::box(VectorXd::Constant(1, 10.0));
  auto states = datagen::grid_states(spec.X, 5.0);
  auto cfg = msa::SAConfig::desk(4);
  cfg.iters = 10;
  auto roa = cloop::region_of_attraction(spec, states, cfg, 1);
  for (std::size_t i = 0; i < states.size(); ++i) {
    CHECK(roa.exact_mask[i]);
    CHECK(roa.baseline_mask[i]);
  }
}

TEST_CASE("validation reports the exact Hoeffding deviation and passes a safe toy") {
  auto spec = fixtures::scalar_toy(2, 0.5, 1.0, 0.05, 0.0);
  spec.X = Polytope::box(VectorXd::Constant(1, 5.0));
  spec.U = Polytope::box(VectorXd::Constant(1, 5.0));
  auto rep = cloop::validate(spec, zero_policy(1, 1), 40, 0.01, 10, 7, 3, 0.7);
  CHECK(rep.p == 40);
  CHECK(rep.eps_h == doctest::Approx(std::sqrt(std::log(200.0) / 80.0)).epsilon(1e-15));
  CHECK(rep.mu_tilde == 1.0);
  CHECK(1.0 - rep.eps_h > 0.7);  // any threshold below 1 - eps_h must pass
  CHECK(rep.pass);

  auto again = cloop::validate(spec, zero_policy(1, 1), 40, 0.01, 10, 7, 3, 0.7);
  CHECK(again.mu_tilde == rep.mu_tilde);

  const auto j = cloop::to_json(rep);
  CHECK(j.at("pass").get<bool>());
  CHECK(j.at("mu_tilde").get<double>() == 1.0);
}

TEST_CASE("a saturated policy fails validation outright") {
  auto spec = fixtures::scalar_toy(2, 0.5, 1.0, 0.05, 0.0);
  spec.X = Polytope::box(VectorXd::Constant(1, 5.0));
  auto bad = nnfs::make_net(1, 1, 2, 1);
  bad.bias[1][0] = 10.0;  // constant control far outside U
  auto rep = cloop::validate(spec, bad, 25, 0.01, 5, 3, 2, 0.5);
  CHECK(rep.mu_tilde == 0.0);
  CHECK(!rep.pass);
  CHECK_THROWS_WITH_AS(cloop::validate(spec, bad, 0, 0.01, 5, 3),
                       doctest::Contains("p must be"), SpecError);
}

TEST_CASE("stability proxy is self-consistent on a contracting rollout") {
  auto spec = fixtures::second_order();
  VectorXd x0(2);
  x0 << 1.2, -0.9;
  auto trace = cloop::simulate(spec, zero_policy(2, 1), x0, 60, {}, 11);
  auto rep = cloop::iss_report(trace);
  REQUIRE(rep.entry_time >= 0);
  const int n = int(trace.states.size());
  std::vector<double> tail(static_cast<std::size_t>(n));
  double running = 0.0;
  for (int t = n - 1; t >= 0; --t) {
    running = std::max(running, trace.states[std::size_t(t)].norm());
    tail[std::size_t(t)] = running;
  }
  CHECK(rep.gamma_hat == tail[std::size_t(rep.entry_time)]);
  for (int t = rep.entry_time; t < n; ++t)
    CHECK(trace.states[std::size_t(t)].norm() <= rep.gamma_hat + 1e-15);
  if (rep.entry_time > 0)
    CHECK(tail[std::size_t(rep.entry_time - 1)] >
          1.05 * tail[std::size_t(n / 2)] + 1e-12);
  CHECK(rep.entry_time < n / 2 + 1);
}

TEST_CASE("value descent monitor runs along the online baseline") {
  auto spec = fixtures::scalar_toy();
  cloop::RhcPolicy pol;
  pol.cfg = msa::SAConfig::desk(5);
  pol.cfg.iters = 30;
  cloop::DisturbanceSampler dist;
  dist.mode = cloop::DistMode::Zero;
  auto trace = cloop::simulate(spec, pol, VectorXd::Constant(1, 0.6), 6, dist, 1);
  REQUIRE(!trace.coverage_exit);
  REQUIRE(trace.values.size() == 6);
  auto rep = cloop::descent_report(spec, trace);
  CHECK(rep.slack.size() == 5);
  for (double s : rep.slack) CHECK(std::isfinite(s));
  CHECK(rep.max_slack ==
        *std::max_element(rep.slack.begin(), rep.slack.end()));

  auto plain = cloop::simulate(spec, zero_policy(1, 1), VectorXd::Zero(1), 4, dist, 0);
  CHECK_THROWS_WITH_AS(cloop::descent_report(spec, plain),
                       doctest::Contains("online-baseline"), SpecError);
}

TEST_CASE("trace files carry the fixed layout with empty trailing cells") {
  auto spec = fixtures::second_order();
  VectorXd x0(2);
  x0 << 0.7, 0.2;
  auto trace = cloop::simulate(spec, zero_policy(2, 1), x0, 3, {}, 2);
  const std::string path = tmp_file("cloop_trace.csv");
  cloop::save_trace(spec, trace, path);
  auto lines = read_lines(path);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "t,x_1,x_2,u_1,w_1,w_2,violation_count");
  const auto last = split_csv_line(lines[4]);
  REQUIRE(last.size() == 7);
  CHECK(last[0] == "3");
  CHECK(last[3].empty());
  CHECK(last[4].empty());
  CHECK(last[5].empty());
  CHECK(last[6] == "0");
  const auto first = split_csv_line(lines[1]);
  CHECK(std::stod(first[1]) == x0[0]);
  CHECK(std::stod(first[2]) == x0[1]);
  int total = 0;
  for (std::size_t r = 1; r < lines.size(); ++r)
    total += std::stoi(split_csv_line(lines[r]).back());
  CHECK(total == int(trace.violations.size()));
}

TEST_CASE("certified policies keep every audited rollout violation-free") {
  auto spec = fixtures::scalar_toy(2, 0.5, 1.0, 0.05, 0.12);
  auto cfg = msa::SAConfig::desk(1);
  cfg.iters = 40;
  auto ds = datagen::generate_grid(spec, 0.1, cfg, 2);
  REQUIRE(ds.feasible_count() >= 15);
  auto md = quifs::learn(ds, 0.12);

  int rollouts = 0, tainted = 0, exits = 0;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    if (!ds.records[i].feasible) continue;
    for (int j = 0; j < 5; ++j) {
      auto trace = cloop::simulate(spec, md, ds.records[i].x, 15, {},
                                   splitmix64(91 + i) + std::uint64_t(j));
      ++rollouts;
      tainted += !trace.violations.empty();
      exits += trace.coverage_exit;
    }
  }
  CHECK(rollouts >= 75);
  CHECK(tainted == 0);
  CHECK(exits == 0);
}
