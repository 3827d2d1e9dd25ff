#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <vector>

#include "robosynth/conic.hpp"
#include "robosynth/problem.hpp"

namespace robosynth::sip {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Disturbance-feedback policy: u_t = eta_t + sum_{i<t} Theta_{t,i} w_i.
/// Theta is stored as the full horizon block matrix; blocks with i >= t are
/// structurally zero (the controller cannot react to disturbances it has not
/// seen).
struct DFPolicy {
  int N = 0, m = 0, d = 0;
  MatrixXd theta;  // mN x dN, strictly lower block triangular
  VectorXd eta;    // mN
  double r = 0.0;  // certified worst-case value bound, norm scale

  /// Scalar decision count of the (theta, eta, r) parameterization.
  int param_count() const { return int(theta.size() + eta.size()) + 1; }

  /// Control at time t given the realized disturbance prefix (d x >=t).
  VectorXd control(int t, const MatrixXd& w_prefix) const {
    VectorXd u = eta.segment(t * m, m);
    for (int i = 0; i < t; ++i)
      u.noalias() += theta.block(t * m, i * d, m, d) * w_prefix.col(i);
    return u;
  }
};

/// Relaxation scenarios in generator-coefficient space: xi[i] is coeff_dim x N
/// with entries in [-1, 1]; column t realizes the disturbance at step t.
struct ScenarioTuple {
  std::vector<MatrixXd> xi;

  static ScenarioTuple zeros(int count, int coeff_dim, int N) {
    ScenarioTuple t;
    t.xi.assign(count, MatrixXd::Zero(coeff_dim, N));
    return t;
  }

  int scenarios() const { return int(xi.size()); }
  int horizon() const { return xi.empty() ? 0 : int(xi[0].cols()); }

  /// d x N realized disturbance sequence of scenario i.
  MatrixXd realized(int i, const Zonotope& w) const { return w.gen * xi[i]; }
};

/// Precomputed horizon maps shared by every inner solve of one problem.
struct Transcription {
  ProblemSpec spec;
  Zonotope wt;

  MatrixXd Phi;        // (N+1)d x d
  MatrixXd Gu;         // (N+1)d x mN
  MatrixXd Gw;         // (N+1)d x dN
  MatrixXd Qbar_sqrt;  // (N+1)d x (N+1)d
  MatrixXd Rbar_sqrt;  // mN x mN
  VectorXd ku_tight;   // control bounds tightened by eps * l1 norms of rows

  struct ThetaEntry {
    int t, i, row, col;
  };
  std::vector<ThetaEntry> theta_map;  // free feedback entries, fixed order
  int n_free = 0;                     // theta_map.size() + mN + 1

  int d() const { return spec.d(); }
  int m() const { return spec.m(); }
  int N() const { return spec.N; }
  int r_index() const { return n_free - 1; }
  int eta_index(int t, int q) const { return int(theta_map.size()) + t * m() + q; }
  int rows_per_scenario() const {
    return spec.X.rows() * (N() - 1) + spec.terminal_set().rows() + spec.U.rows() * N();
  }
};

namespace detail {

inline MatrixXd sqrt_psd(const MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
  VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

inline Transcription make_transcription(const ProblemSpec& spec) {
  Transcription tr;
  tr.spec = spec;
  tr.wt = aggregate_disturbance(spec);
  const int d = spec.d(), m = spec.m(), N = spec.N;

  tr.Phi.resize((N + 1) * d, d);
  tr.Gu = MatrixXd::Zero((N + 1) * d, N * m);
  tr.Gw = MatrixXd::Zero((N + 1) * d, N * d);
  std::vector<MatrixXd> Apow(N + 1);
  Apow[0] = MatrixXd::Identity(d, d);
  for (int t = 1; t <= N; ++t) Apow[t] = spec.A * Apow[t - 1];
  for (int t = 0; t <= N; ++t) {
    tr.Phi.block(t * d, 0, d, d) = Apow[t];
    for (int j = 0; j < t; ++j) {
      tr.Gu.block(t * d, j * m, d, m) = Apow[t - 1 - j] * spec.B;
      tr.Gw.block(t * d, j * d, d, d) = Apow[t - 1 - j];
    }
  }

  tr.Qbar_sqrt = MatrixXd::Zero((N + 1) * d, (N + 1) * d);
  MatrixXd Qs = detail::sqrt_psd(spec.Q);
  MatrixXd Ps = detail::sqrt_psd(spec.P);
  for (int t = 0; t < N; ++t) tr.Qbar_sqrt.block(t * d, t * d, d, d) = Qs;
  tr.Qbar_sqrt.block(N * d, N * d, d, d) = Ps;
  tr.Rbar_sqrt = MatrixXd::Zero(N * m, N * m);
  MatrixXd Rs = detail::sqrt_psd(spec.R);
  for (int t = 0; t < N; ++t) tr.Rbar_sqrt.block(t * m, t * m, m, m) = Rs;

  tr.ku_tight = spec.U.k - spec.eps * spec.U.H.cwiseAbs().rowwise().sum();

  for (int t = 1; t < N; ++t)
    for (int i = 0; i < t; ++i)
      for (int q = 0; q < m; ++q)
        for (int p = 0; p < d; ++p) tr.theta_map.push_back({t, i, q, p});
  tr.n_free = int(tr.theta_map.size()) + N * m + 1;
  return tr;
}

/// Stacked control map of one scenario: u = Umap z (no constant part).
inline void control_map(const Transcription& tr, const MatrixXd& w, MatrixXd& Umap) {
  const int m = tr.m(), N = tr.N();
  Umap.setZero(N * m, tr.n_free);
  for (std::size_t k = 0; k < tr.theta_map.size(); ++k) {
    const auto& e = tr.theta_map[k];
    Umap(e.t * m + e.row, int(k)) = w(e.col, e.i);
  }
  const int base = int(tr.theta_map.size());
  for (int j = 0; j < N * m; ++j) Umap(j, base + j) = 1.0;
}

/// Assembles the scenario relaxation as a conic program in the free decision
/// coordinates (causal feedback entries, affine terms, epigraph scalar).
inline void build_inner(const Transcription& tr, const VectorXd& x0,
                        const ScenarioTuple& tuple, conic::ConicProblem& out) {
  const int d = tr.d(), m = tr.m(), N = tr.N();
  const int S = tuple.scenarios();
  const int rps = tr.rows_per_scenario();
  const auto& X = tr.spec.X;
  const auto& U = tr.spec.U;
  const auto& Xf = tr.spec.terminal_set();

  out.n = tr.n_free;
  out.f = VectorXd::Zero(tr.n_free);
  out.f[tr.r_index()] = 1.0;
  out.A.resize(S * rps + 1, tr.n_free);
  out.b.resize(S * rps + 1);
  out.quads.resize(S);

  MatrixXd Umap, Xlin, w, Mq;
  VectorXd wstack(N * d), xc((N + 1) * d), cq;

  for (int s = 0; s < S; ++s) {
    w = tuple.realized(s, tr.wt);
    for (int t = 0; t < N; ++t) wstack.segment(t * d, d) = w.col(t);
    control_map(tr, w, Umap);
    Xlin.noalias() = tr.Gu * Umap;
    xc.noalias() = tr.Phi * x0;
    xc.noalias() += tr.Gw * wstack;

    auto& q = out.quads[s];
    q.M.resize((N + 1) * d + N * m, tr.n_free);
    q.M.topRows((N + 1) * d).noalias() = tr.Qbar_sqrt * Xlin;
    q.M.bottomRows(N * m).noalias() = tr.Rbar_sqrt * Umap;
    q.c.resize((N + 1) * d + N * m);
    q.c.head((N + 1) * d).noalias() = tr.Qbar_sqrt * xc;
    q.c.tail(N * m).setZero();
    q.r_index = tr.r_index();

    int row = s * rps;
    for (int t = 1; t < N; ++t) {
      out.A.middleRows(row, X.rows()).noalias() = X.H * Xlin.middleRows(t * d, d);
      out.b.segment(row, X.rows()) = X.k - X.H * xc.segment(t * d, d);
      row += X.rows();
    }
    out.A.middleRows(row, Xf.rows()).noalias() = Xf.H * Xlin.middleRows(N * d, d);
    out.b.segment(row, Xf.rows()) = Xf.k - Xf.H * xc.segment(N * d, d);
    row += Xf.rows();
    for (int t = 0; t < N; ++t) {
      out.A.middleRows(row, U.rows()).noalias() = U.H * Umap.middleRows(t * m, m);
      out.b.segment(row, U.rows()) = tr.ku_tight;
      row += U.rows();
    }
  }
  out.A.row(S * rps).setZero();
  out.A(S * rps, tr.r_index()) = -1.0;  // the certified bound is nonnegative
  out.b[S * rps] = 0.0;
}

inline conic::ConicProblem build_inner(const Transcription& tr, const VectorXd& x0,
                                       const ScenarioTuple& tuple) {
  conic::ConicProblem p;
  build_inner(tr, x0, tuple, p);
  return p;
}

enum class InnerStatus { Feasible, Infeasible, Stall };

struct InnerResult {
  InnerStatus status = InnerStatus::Stall;
  double value = std::numeric_limits<double>::quiet_NaN();
  DFPolicy policy;
  double primal_residual = std::numeric_limits<double>::quiet_NaN();
  double dual_residual = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
};

inline DFPolicy policy_from_z(const Transcription& tr, const VectorXd& z) {
  DFPolicy pol;
  pol.N = tr.N();
  pol.m = tr.m();
  pol.d = tr.d();
  pol.theta = MatrixXd::Zero(pol.m * pol.N, pol.d * pol.N);
  for (std::size_t k = 0; k < tr.theta_map.size(); ++k) {
    const auto& e = tr.theta_map[k];
    pol.theta(e.t * pol.m + e.row, e.i * pol.d + e.col) = z[int(k)];
  }
  pol.eta = z.segment(int(tr.theta_map.size()), pol.m * pol.N);
  pol.r = z[tr.r_index()];
  return pol;
}

/// Solves the scenario relaxation. A strictly feasible start is synthesized
/// directly (zero policy with a lifted epigraph) whenever the zero policy has
/// slack on every hard constraint; otherwise the solver runs its phase I.
inline InnerResult solve_inner(const Transcription& tr, const VectorXd& x0,
                               const ScenarioTuple& tuple,
                               const conic::ConicOptions& opts = {},
                               conic::ConicProblem* scratch = nullptr) {
  conic::ConicProblem local;
  conic::ConicProblem& p = scratch ? *scratch : local;
  build_inner(tr, x0, tuple, p);

  InnerResult res;
  conic::ConicSolution sol;
  const int nrows = int(p.b.size());
  double min_slack = p.b.head(nrows - 1).minCoeff();
  if (min_slack > 1e-3) {
    // zero policy with a well-centered epigraph lift
    VectorXd z0 = VectorXd::Zero(p.n);
    double jmax = 0.0;
    for (const auto& q : p.quads) jmax = std::max(jmax, q.c.squaredNorm());
    z0[tr.r_index()] = jmax + 1.0 + 0.1 * jmax;
    sol = conic::solve(p, opts, &z0);
  } else {
    sol = conic::solve(p, opts);
  }

  res.primal_residual = sol.primal_residual;
  res.dual_residual = sol.dual_residual;
  res.iterations = sol.iterations;
  switch (sol.status) {
    case conic::SolveStatus::Optimal:
      res.status = InnerStatus::Feasible;
      res.value = std::sqrt(std::max(0.0, sol.obj));
      res.policy = policy_from_z(tr, sol.z);
      res.policy.r = res.value;
      break;
    case conic::SolveStatus::Infeasible:
      res.status = InnerStatus::Infeasible;
      break;
    case conic::SolveStatus::MaxIter:
      res.status = InnerStatus::Stall;
      break;
  }
  return res;
}

struct RolloutResult {
  MatrixXd states;    // d x (N+1)
  MatrixXd controls;  // m x N
};

/// Applies the policy against a realized aggregate-disturbance sequence.
inline RolloutResult rollout(const ProblemSpec& spec, const DFPolicy& pol,
                             const VectorXd& x0, const MatrixXd& w_seq) {
  const int d = spec.d(), N = spec.N;
  RolloutResult rr;
  rr.states.resize(d, N + 1);
  rr.controls.resize(spec.m(), N);
  rr.states.col(0) = x0;
  for (int t = 0; t < N; ++t) {
    VectorXd u = pol.control(t, w_seq);
    rr.controls.col(t) = u;
    rr.states.col(t + 1) = spec.A * rr.states.col(t) + spec.B * u + w_seq.col(t);
  }
  return rr;
}

inline double cost(const ProblemSpec& spec, const RolloutResult& rr) {
  double c = 0.0;
  for (int t = 0; t < spec.N; ++t) {
    c += rr.states.col(t).dot(spec.Q * rr.states.col(t));
    c += rr.controls.col(t).dot(spec.R * rr.controls.col(t));
  }
  c += rr.states.col(spec.N).dot(spec.P * rr.states.col(spec.N));
  return c;
}

}  // namespace robosynth::sip
