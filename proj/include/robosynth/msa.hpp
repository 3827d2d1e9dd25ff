#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "robosynth/sip.hpp"
#include "robosynth/util.hpp"

namespace robosynth::msa {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SAConfig {
  double T0 = 10.0;
  double decay = 0.99;
  int iters = 200;
  // Equal to T0 so the proposal deviation tracks the temperature itself
  // (annealing-fast law); clipping to [-1,1] bounds the early global moves.
  double step_scale = 10.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(T0 > 0)) throw SpecError("SAConfig: T0 must be positive");
    if (!(decay > 0 && decay < 1)) throw SpecError("SAConfig: decay must lie in (0,1)");
    if (iters < 1) throw SpecError("SAConfig: iters must be >= 1");
    if (!(step_scale > 0)) throw SpecError("SAConfig: step_scale must be positive");
  }

  static SAConfig desk(std::uint64_t seed = 0) {
    SAConfig c;
    c.iters = 200;
    c.seed = seed;
    return c;
  }

  /// Published benchmark schedule: T0=10, decay 0.99, 1500 iterations.
  static SAConfig paper(std::uint64_t seed = 0) {
    SAConfig c;
    c.iters = 1500;
    c.seed = seed;
    return c;
  }
};

/// Raised when the annealing chain cannot be started or continued because an
/// inner solve neither converged nor produced an infeasibility certificate.
struct SolverStall : SpecError {
  sip::ScenarioTuple tuple;
  explicit SolverStall(sip::ScenarioTuple t)
      : SpecError("inner solve stalled on the initial tuple"), tuple(std::move(t)) {}
};

struct ExactSolveResult {
  double value = std::numeric_limits<double>::quiet_NaN();
  sip::DFPolicy policy;
  bool feasible = false;
  std::vector<double> history;  // incumbent per iteration, entry 0 = initial
  int inner_solves = 0;
  int stalls = 0;
  int accepted = 0;
};

/// Gaussian move over every coefficient with clipping back into [-1,1]; the
/// step shrinks proportionally to the temperature below T0.
inline sip::ScenarioTuple sa_propose(const sip::ScenarioTuple& current, double T,
                                     const SAConfig& cfg, std::mt19937_64& rng,
                                     std::normal_distribution<double>& gauss) {
  const double sd = cfg.step_scale * std::min(1.0, T / cfg.T0);
  sip::ScenarioTuple next = current;
  for (auto& xi : next.xi)
    for (int c = 0; c < xi.cols(); ++c)
      for (int r = 0; r < xi.rows(); ++r)
        xi(r, c) = std::clamp(xi(r, c) + sd * gauss(rng), -1.0, 1.0);
  return next;
}

inline sip::ScenarioTuple sa_propose(const sip::ScenarioTuple& current, double T,
                                     const SAConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  return sa_propose(current, T, cfg, rng, gauss);
}

/// Simulated annealing over scenario tuples; maximizes the inner relaxation
/// value. Worse moves are accepted with the standard annealing probability
/// 1/(1+exp(|delta|/T)); improving moves are always accepted.
inline ExactSolveResult exact_solve(const sip::Transcription& tr, const VectorXd& x0,
                                    const SAConfig& cfg) {
  cfg.validate();
  if (!tr.spec.X.contains(x0))
    throw SpecError("exact_solve: initial state lies outside the state set");

  const int count = n_z(tr.spec);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  conic::ConicProblem scratch;
  ExactSolveResult out;

  auto tuple = sip::ScenarioTuple::zeros(count, tr.wt.coeff_dim(), tr.spec.N);
  auto base = sip::solve_inner(tr, x0, tuple, {}, &scratch);
  out.inner_solves = 1;
  if (base.status == sip::InnerStatus::Infeasible) return out;  // x0 not in X_N
  if (base.status == sip::InnerStatus::Stall) throw SolverStall(tuple);

  out.feasible = true;
  double g_cur = base.value;
  out.value = g_cur;
  out.policy = base.policy;
  out.history.reserve(cfg.iters + 1);
  out.history.push_back(out.value);

  for (int it = 1; it <= cfg.iters; ++it) {
    const double T = cfg.T0 * std::pow(cfg.decay, it);
    auto prop = sa_propose(tuple, T, cfg, rng, gauss);
    auto res = sip::solve_inner(tr, x0, prop, {}, &scratch);
    ++out.inner_solves;
    const double u = uni(rng);  // always drawn: fixed per-iteration consumption

    if (res.status == sip::InnerStatus::Infeasible) {
      out.feasible = false;  // certifies x0 outside the feasible region
      out.value = std::numeric_limits<double>::quiet_NaN();
      out.policy = sip::DFPolicy{};
      return out;
    }
    if (res.status == sip::InnerStatus::Stall) {
      ++out.stalls;
      out.history.push_back(out.value);
      continue;
    }

    const double delta = res.value - g_cur;
    if (delta >= 0 || u < 1.0 / (1.0 + std::exp(-delta / T))) {
      tuple = std::move(prop);
      g_cur = res.value;
      ++out.accepted;
      if (res.value >= out.value) {
        out.value = res.value;
        out.policy = res.policy;
      }
    }
    out.history.push_back(out.value);
  }
  return out;
}

inline ExactSolveResult exact_solve(const ProblemSpec& spec, const VectorXd& x0,
                                    const SAConfig& cfg) {
  auto tr = sip::make_transcription(spec);
  return exact_solve(tr, x0, cfg);
}

/// History export: iteration, temperature, incumbent value.
inline std::string history_csv(const ExactSolveResult& res, const SAConfig& cfg) {
  std::string s = "iteration,temperature,incumbent\n";
  for (std::size_t i = 0; i < res.history.size(); ++i) {
    double T = cfg.T0 * std::pow(cfg.decay, double(i));
    s += std::to_string(i) + ',' + format_double(T) + ',' +
         format_double(res.history[i]) + '\n';
  }
  return s;
}

}  // namespace robosynth::msa
