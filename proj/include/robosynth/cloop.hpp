#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "robosynth/msa.hpp"
#include "robosynth/nnfs.hpp"
#include "robosynth/quifs.hpp"

namespace robosynth {
namespace cloop {

/// Online receding-horizon baseline: a fresh exact solve at every step.
struct RhcPolicy {
  msa::SAConfig cfg;
};

using PolicyModel = std::variant<quifs::Model, nnfs::ReluNet, RhcPolicy>;

struct Violation {
  int t = 0;
  int row = 0;  // state rows first, then control rows
  double margin = 0.0;
};

struct Trace {
  std::vector<VectorXd> states;        // T+1 entries unless truncated
  std::vector<VectorXd> controls;      // T entries
  std::vector<VectorXd> disturbances;  // T entries
  std::vector<Violation> violations;
  std::vector<double> values;  // per-step certified value when the baseline runs
  bool coverage_exit = false;
  int exit_time = -1;

  int steps() const { return int(controls.size()); }
};

enum class DistMode { Zero, Uniform, Vertex };

/// Stateless disturbance law. Uniform consumes one counter tick per channel;
/// Vertex cycles the 2^nw sign patterns of the box and Zero swallows nothing,
/// so traces are reproducible from the seed alone in every mode.
struct DisturbanceSampler {
  DistMode mode = DistMode::Uniform;

  VectorXd draw(const ProblemSpec& spec, int t, std::uint64_t& ctr) const {
    const int nw = spec.nw();
    VectorXd w = VectorXd::Zero(nw);
    if (mode == DistMode::Zero) return w;
    if (mode == DistMode::Vertex) {
      const std::uint64_t period = std::uint64_t(1) << std::min(nw, 62);
      const std::uint64_t idx = std::uint64_t(t) % period;
      for (int j = 0; j < nw; ++j)
        w[j] = ((idx >> j) & 1u) ? -spec.w_half[j] : spec.w_half[j];
      return w;
    }
    for (int j = 0; j < nw; ++j) {
      const double u01 = double(splitmix64(ctr++) >> 11) * 0x1.0p-53;
      w[j] = spec.w_half[j] * (2.0 * u01 - 1.0);
    }
    return w;
  }
};

namespace detail {

inline void record_violations(const Polytope& set, const VectorXd& v, int t,
                              int row_offset, std::vector<Violation>& out) {
  const VectorXd margin = set.H * v - set.k;
  for (Eigen::Index i = 0; i < margin.size(); ++i)
    if (margin[i] > 1e-9) out.push_back({t, row_offset + int(i), margin[i]});
}

struct EvalOutcome {
  VectorXd u;
  double value = std::numeric_limits<double>::quiet_NaN();
  bool missed = false;  // evaluation left the certified domain
};

inline EvalOutcome eval_policy(const sip::Transcription* tr,
                               const PolicyModel& policy, const VectorXd& x,
                               int t) {
  EvalOutcome out;
  try {
    if (const auto* qi = std::get_if<quifs::Model>(&policy)) {
      out.u = quifs::eval(*qi, x);
    } else if (const auto* nn = std::get_if<nnfs::ReluNet>(&policy)) {
      out.u = nnfs::nn_eval(*nn, x);
    } else {
      const auto& rhc = std::get<RhcPolicy>(policy);
      msa::SAConfig cfg = rhc.cfg;
      cfg.seed = rhc.cfg.seed ^ splitmix64(std::uint64_t(t));
      auto res = msa::exact_solve(*tr, x, cfg);
      if (!res.feasible)
        throw SpecError("state left the feasible region X_N");
      out.value = res.value;
      out.u = res.policy.eta.head(res.policy.m);
    }
  } catch (const SpecError&) {
    out.missed = true;
  }
  return out;
}

}  // namespace detail

/// Closed-loop rollout x+ = A x + B mu(x) + G w. Every state and control is
/// checked against the physical constraint sets and violations are recorded;
/// a policy evaluation outside its certified domain (coverage miss, or an
/// infeasible state for the online baseline) truncates the trace with the
/// coverage_exit marker instead of extrapolating.
inline Trace simulate(const ProblemSpec& spec, const PolicyModel& policy,
                      const VectorXd& x0, int T,
                      const DisturbanceSampler& dist = {},
                      std::uint64_t seed = 0) {
  if (T < 0) throw SpecError("simulate: the step count cannot be negative");
  if (int(x0.size()) != spec.d())
    throw SpecError("simulate: initial state dimension mismatch");
  if (const auto* qi = std::get_if<quifs::Model>(&policy)) {
    if (qi->d != spec.d() || qi->m != spec.m())
      throw SpecError("simulate: policy dimensions do not match the problem");
  } else if (const auto* nn = std::get_if<nnfs::ReluNet>(&policy)) {
    if (nn->input_dim() != spec.d() || nn->output_dim() != spec.m())
      throw SpecError("simulate: policy dimensions do not match the problem");
  }

  sip::Transcription tr;
  const bool online = std::holds_alternative<RhcPolicy>(policy);
  if (online) tr = sip::make_transcription(spec);

  Trace out;
  out.states.push_back(x0);
  std::uint64_t ctr = seed;
  const int urows = int(spec.X.H.rows());
  for (int t = 0; t < T; ++t) {
    const VectorXd& x = out.states.back();
    detail::record_violations(spec.X, x, t, 0, out.violations);
    auto ev = detail::eval_policy(online ? &tr : nullptr, policy, x, t);
    if (ev.missed) {
      out.coverage_exit = true;
      out.exit_time = t;
      return out;
    }
    if (int(ev.u.size()) != spec.m())
      throw SpecError("simulate: policy output dimension mismatch");
    detail::record_violations(spec.U, ev.u, t, urows, out.violations);
    if (online) out.values.push_back(ev.value);
    const VectorXd w = dist.draw(spec, t, ctr);
    out.controls.push_back(ev.u);
    out.disturbances.push_back(w);
    out.states.push_back(spec.A * x + spec.B * ev.u + spec.G * w);
  }
  detail::record_violations(spec.X, out.states.back(), T, 0, out.violations);
  return out;
}

/// Replays the dynamics from the recorded controls and disturbances; a stored
/// trace is internally consistent iff every recomputed state matches bitwise.
inline bool replay_matches(const ProblemSpec& spec, const Trace& trace) {
  if (trace.states.empty()) return false;
  VectorXd x = trace.states.front();
  for (int t = 0; t < trace.steps(); ++t) {
    x = (spec.A * x + spec.B * trace.controls[std::size_t(t)] +
         spec.G * trace.disturbances[std::size_t(t)])
            .eval();
    const VectorXd& stored = trace.states[std::size_t(t) + 1];
    if (x.size() != stored.size() || (x.array() != stored.array()).any())
      return false;
  }
  return true;
}

/// One step of the online baseline.
inline VectorXd rhc_step(const ProblemSpec& spec, const VectorXd& x,
                         const msa::SAConfig& cfg) {
  if (!spec.X.contains(x))
    throw SpecError("rhc_step: state lies outside the feasible region X_N");
  auto tr = sip::make_transcription(spec);
  auto res = msa::exact_solve(tr, x, cfg);
  if (!res.feasible)
    throw SpecError("rhc_step: state lies outside the feasible region X_N");
  return res.policy.eta.head(spec.m());
}

/// Robust feasibility of the open-loop restriction (zero feedback gains) via
/// exact support-function offsets of the aggregate disturbance set. This is
/// the conservative comparator for the region-of-attraction study: a feasible
/// certificate here exhibits an admissible policy, so the mask is provably
/// contained in X_N.
inline bool open_loop_feasible(const sip::Transcription& tr, const VectorXd& x0) {
  const int d = tr.d(), m = tr.m(), N = tr.N();
  const auto& X = tr.spec.X;
  const auto& Xf = tr.spec.terminal_set();
  const int n = m * N + 1;  // stacked controls plus the feasibility gap s
  const int srow = n - 1;
  const int state_rows = int(X.rows()) * (N - 1) + int(Xf.rows());
  const int rows = state_rows + int(tr.spec.U.rows()) * N + 1;

  conic::ConicProblem lp;
  lp.n = n;
  lp.f = VectorXd::Zero(n);
  lp.f[srow] = 1.0;
  lp.A = MatrixXd::Zero(rows, n);
  lp.b = VectorXd::Zero(rows);

  int row = 0;
  auto add_state_rows = [&](const Polytope& set, int t) {
    for (Eigen::Index i = 0; i < set.H.rows(); ++i) {
      const VectorXd h = set.H.row(i).transpose();
      lp.A.block(row, 0, 1, m * N) =
          h.transpose() * tr.Gu.middleRows(t * d, d);
      lp.A(row, srow) = -1.0;
      double offset = 0.0;
      for (int j = 0; j < t; ++j)
        offset += tr.wt.support(tr.Gw.block(t * d, j * d, d, d).transpose() * h);
      lp.b[row] = set.k[i] - h.dot(tr.Phi.middleRows(t * d, d) * x0) - offset;
      ++row;
    }
  };
  for (int t = 1; t < N; ++t) add_state_rows(X, t);
  add_state_rows(Xf, N);
  for (int t = 0; t < N; ++t) {
    lp.A.block(row, t * m, int(tr.spec.U.rows()), m) = tr.spec.U.H;
    lp.A.block(row, srow, int(tr.spec.U.rows()), 1).setConstant(-1.0);
    lp.b.segment(row, tr.spec.U.rows()) = tr.ku_tight;
    row += int(tr.spec.U.rows());
  }
  lp.A(row, srow) = -1.0;  // cap the gap below so the LP stays bounded
  lp.b[row] = 1.0;

  VectorXd start = VectorXd::Zero(n);
  start[srow] = std::max(1.0, (-lp.b.head(rows - 1)).maxCoeff() + 1.0);
  auto sol = conic::solve(lp, {}, &start);
  return sol.status == conic::SolveStatus::Optimal && sol.obj <= 1e-7;
}

struct RoaResult {
  std::vector<VectorXd> states;
  std::vector<char> exact_mask;     // certified feasibility from the exact solver
  std::vector<char> baseline_mask;  // open-loop robust restriction

  int exact_feasible() const {
    int c = 0;
    for (char f : exact_mask) c += f != 0;
    return c;
  }
  int baseline_feasible() const {
    int c = 0;
    for (char f : baseline_mask) c += f != 0;
    return c;
  }
};

inline RoaResult region_of_attraction(const ProblemSpec& spec,
                                      const std::vector<VectorXd>& states,
                                      const msa::SAConfig& cfg, int workers = 1) {
  cfg.validate();
  const auto tr = sip::make_transcription(spec);
  RoaResult out;
  out.states = states;
  out.exact_mask.assign(states.size(), 0);
  out.baseline_mask.assign(states.size(), 0);
  parallel_for(states.size(), workers, [&](std::size_t i) {
    const VectorXd& x = states[i];
    if (!spec.X.contains(x)) return;
    const bool base = open_loop_feasible(tr, x);
    out.baseline_mask[i] = base ? 1 : 0;
    msa::SAConfig c = cfg;
    c.seed = cfg.seed ^ splitmix64(std::uint64_t(i));
    try {
      out.exact_mask[i] = msa::exact_solve(tr, x, c).feasible ? 1 : 0;
    } catch (const msa::SolverStall&) {
      // unresolved point: the open-loop certificate is still a sound answer
      out.exact_mask[i] = out.baseline_mask[i];
    }
  });
  return out;
}

struct ValidationReport {
  int p = 0;
  double delta_h = 0.0;
  double eps_h = 0.0;
  double mu_tilde = 0.0;
  double mu_crit = 0.0;
  bool pass = false;
};

inline json to_json(const ValidationReport& r) {
  return json{{"p", r.p},           {"delta_h", r.delta_h},
              {"eps_h", r.eps_h},   {"mu_tilde", r.mu_tilde},
              {"mu_crit", r.mu_crit}, {"pass", r.pass}};
}

/// Probabilistic post-hoc validation: p initial states sampled uniformly from
/// the policy's evaluable portion of X, several independent disturbance
/// rollouts per state, and a state counts as a success only when every one of
/// its rollouts stays violation-free inside the certified domain. The
/// two-sided Hoeffding deviation turns the empirical rate into a confidence
/// statement.
inline ValidationReport validate(const ProblemSpec& spec,
                                 const PolicyModel& policy, int p,
                                 double delta_h, int T, std::uint64_t seed,
                                 int rollouts_per_state = 5,
                                 double mu_crit = 0.98,
                                 const DisturbanceSampler& dist = {},
                                 int workers = 1) {
  if (p < 1) throw SpecError("validate: p must be at least 1");
  if (!(delta_h > 0 && delta_h < 1))
    throw SpecError("validate: delta_h must lie in (0,1)");
  if (T < 1 || rollouts_per_state < 1)
    throw SpecError("validate: rollout shape must be positive");

  sip::Transcription tr;
  if (std::holds_alternative<RhcPolicy>(policy))
    tr = sip::make_transcription(spec);
  const sip::Transcription* trp =
      std::holds_alternative<RhcPolicy>(policy) ? &tr : nullptr;

  const int d = spec.d();
  VectorXd lo(d), hi(d);
  for (int j = 0; j < d; ++j) {
    VectorXd e = VectorXd::Zero(d);
    e[j] = 1.0;
    hi[j] = support(spec.X, e);
    lo[j] = -support(spec.X, VectorXd(-e));
  }
  std::vector<VectorXd> starts;
  starts.reserve(std::size_t(p));
  std::uint64_t ctr = splitmix64(seed);
  const long long cap = 10000LL * p;
  for (long long attempt = 0; int(starts.size()) < p; ++attempt) {
    if (attempt >= cap)
      throw SpecError("validate: could not sample enough evaluable states");
    VectorXd x(d);
    for (int j = 0; j < d; ++j) {
      const double u01 = double(splitmix64(ctr++) >> 11) * 0x1.0p-53;
      x[j] = lo[j] + (hi[j] - lo[j]) * u01;
    }
    if (!spec.X.contains(x)) continue;
    if (detail::eval_policy(trp, policy, x, 0).missed) continue;
    starts.push_back(std::move(x));
  }

  std::vector<char> success(std::size_t(p), 0);
  parallel_for(std::size_t(p), workers, [&](std::size_t i) {
    const std::uint64_t state_seed = seed ^ splitmix64(std::uint64_t(i));
    bool ok = true;
    for (int j = 0; ok && j < rollouts_per_state; ++j) {
      const auto tr_out = simulate(spec, policy, starts[i], T, dist,
                                   state_seed ^ splitmix64(~std::uint64_t(j)));
      ok = tr_out.violations.empty() && !tr_out.coverage_exit;
    }
    success[i] = ok ? 1 : 0;
  });

  ValidationReport rep;
  rep.p = p;
  rep.delta_h = delta_h;
  rep.eps_h = std::sqrt(std::log(2.0 / delta_h) / (2.0 * p));
  int wins = 0;
  for (char s : success) wins += s != 0;
  rep.mu_tilde = double(wins) / double(p);
  rep.mu_crit = mu_crit;
  rep.pass = rep.mu_tilde - rep.eps_h > mu_crit;
  return rep;
}

struct IssReport {
  double gamma_hat = std::numeric_limits<double>::quiet_NaN();
  int entry_time = -1;
};

/// Empirical stability proxy: the smallest time after which the state norm
/// never exceeds (within a 5% halo) the level it sustains over the tail of
/// the rollout, together with that post-entry level. Reporting only; no
/// comparison-function construction is attempted.
inline IssReport iss_report(const Trace& trace) {
  const int n = int(trace.states.size());
  if (n == 0) throw SpecError("iss_report: empty trace");
  std::vector<double> tail(static_cast<std::size_t>(n));
  double running = 0.0;
  for (int t = n - 1; t >= 0; --t) {
    running = std::max(running, trace.states[std::size_t(t)].norm());
    tail[std::size_t(t)] = running;
  }
  const double level = tail[std::size_t(n / 2)];
  IssReport rep;
  for (int t = 0; t < n; ++t) {
    if (tail[std::size_t(t)] <= 1.05 * level + 1e-12) {
      rep.entry_time = t;
      rep.gamma_hat = tail[std::size_t(t)];
      break;
    }
  }
  return rep;
}

struct DescentReport {
  std::vector<double> slack;  // value recursion residual per step
  double max_slack = -std::numeric_limits<double>::infinity();
};

/// Monitors the value recursion J(x+) - J(x) <= -c(x,u) + slack along an
/// online-baseline trace. The certified values are stored in norm scale, so
/// they are squared before differencing. Reporting only.
inline DescentReport descent_report(const ProblemSpec& spec, const Trace& trace) {
  if (trace.values.size() < 2)
    throw SpecError("descent monitoring needs an online-baseline trace");
  DescentReport rep;
  for (std::size_t t = 0; t + 1 < trace.values.size(); ++t) {
    const VectorXd& x = trace.states[t];
    const VectorXd& u = trace.controls[t];
    const double stage = x.dot(spec.Q * x) + u.dot(spec.R * u);
    const double jt = trace.values[t] * trace.values[t];
    const double jn = trace.values[t + 1] * trace.values[t + 1];
    rep.slack.push_back(jn - jt + stage);
    rep.max_slack = std::max(rep.max_slack, rep.slack.back());
  }
  return rep;
}

/// Plot-ready rollout file: one row per recorded state; control and
/// disturbance cells are empty on the final (or truncated) row.
inline void save_trace(const ProblemSpec& spec, const Trace& trace,
                       const std::string& path) {
  std::string body = "t";
  for (int j = 1; j <= spec.d(); ++j) body += ",x_" + std::to_string(j);
  for (int j = 1; j <= spec.m(); ++j) body += ",u_" + std::to_string(j);
  for (int j = 1; j <= spec.nw(); ++j) body += ",w_" + std::to_string(j);
  body += ",violation_count\n";
  for (std::size_t t = 0; t < trace.states.size(); ++t) {
    body += std::to_string(t);
    for (Eigen::Index j = 0; j < trace.states[t].size(); ++j)
      body += "," + format_double(trace.states[t][j]);
    const bool has_step = t < trace.controls.size();
    for (int j = 0; j < spec.m(); ++j)
      body += has_step ? "," + format_double(trace.controls[t][j]) : ",";
    for (int j = 0; j < spec.nw(); ++j)
      body += has_step ? "," + format_double(trace.disturbances[t][j]) : ",";
    int count = 0;
    for (const auto& v : trace.violations) count += v.t == int(t);
    body += "," + std::to_string(count) + "\n";
  }
  write_text_file(path, body);
}

}  // namespace cloop
}  // namespace robosynth
