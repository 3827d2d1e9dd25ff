#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

namespace robosynth::conic {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class SolveStatus { Optimal, Infeasible, MaxIter };

/// ||M z + c||^2 <= z[r_index]
struct QuadConstraint {
  MatrixXd M;
  VectorXd c;
  int r_index = -1;
};

/// minimize f'z  subject to  A z <= b  and the quadratic epigraph rows.
struct ConicProblem {
  int n = 0;
  VectorXd f;
  MatrixXd A;  // may have zero rows
  VectorXd b;
  std::vector<QuadConstraint> quads;
};

struct ConicOptions {
  double tol_feas = 1e-8;
  double tol_opt = 1e-8;
  int max_iter = 200;
  double mu = 10.0;    // surrogate-gap reduction per centering step
  double beta = 0.5;   // backtracking factor
  double armijo = 0.01;
  double reg = 1e-11;  // Tikhonov floor on the reduced Hessian
  // Accepted when double precision is exhausted before tol_opt is met: the
  // surrogate gap still certifies |obj - optimum| within this relative bound.
  double tol_acceptable = 1e-6;
  int verbose = 0;  // 1: per-iteration trace on stderr
};

struct ConicSolution {
  SolveStatus status = SolveStatus::MaxIter;
  VectorXd z;
  double obj = std::numeric_limits<double>::quiet_NaN();
  double primal_residual = std::numeric_limits<double>::quiet_NaN();
  double dual_residual = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
};

struct Phase1Result {
  bool feasible = false;
  VectorXd z;
  double max_violation = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
};

namespace detail {

// Internal normal form: g_i(z) = ||M_i z + c_i||^2 + a_i'z - d_i with M possibly
// empty, plus a dense affine block. The phase-I slack is appended as an extra
// coordinate with a = -e_s on every row.
struct Quad {
  const MatrixXd* M;
  const VectorXd* c;
  VectorXd a;   // linear part (epigraph column and, in phase I, slack column)
  MatrixXd gram;  // 2 M'M padded to the working dimension
};

struct Workspace {
  int n = 0;
  VectorXd f;
  MatrixXd A;  // affine rows in the working dimension
  VectorXd b;
  std::vector<Quad> quads;

  // g values for all rows; returns overall max
  double eval_g(const VectorXd& z, VectorXd& g) const {
    const int ml = int(A.rows());
    const int mq = int(quads.size());
    g.resize(ml + mq);
    if (ml > 0) g.head(ml).noalias() = A * z - b;
    for (int i = 0; i < mq; ++i) {
      const Quad& q = quads[i];
      double v = q.a.dot(z);
      if (q.M->rows() > 0) v += ((*q.M) * z + *q.c).squaredNorm();
      g[ml + i] = v;
    }
    return g.size() > 0 ? g.maxCoeff() : -std::numeric_limits<double>::infinity();
  }
};

inline double residual_norm(const Workspace& w, const VectorXd& z,
                            const VectorXd& lam, const VectorXd& g,
                            const MatrixXd& Dgq, double t, int ml, int mq) {
  VectorXd rd = w.f;
  if (ml > 0) rd.noalias() += w.A.transpose() * lam.head(ml);
  if (mq > 0) rd.noalias() += Dgq.transpose() * lam.tail(mq);
  double s = rd.squaredNorm();
  for (int i = 0; i < ml + mq; ++i) {
    double rc = -lam[i] * g[i] - 1.0 / t;
    s += rc * rc;
  }
  return std::sqrt(s);
}

struct CoreResult {
  SolveStatus status = SolveStatus::MaxIter;
  VectorXd z;
  VectorXd g;
  double obj = std::numeric_limits<double>::quiet_NaN();
  double dual_residual = std::numeric_limits<double>::quiet_NaN();
  double gap = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;

  bool certificate_within(double tol, double dscale) const {
    return dual_residual <= tol * dscale &&
           gap <= tol * std::max(1.0, std::abs(obj));
  }
};

/// Barrier-method primal-dual loop; z0 must be strictly feasible.
/// early_exit_obj: stop as soon as f'z drops below it (used by phase I).
inline CoreResult pd_core(const Workspace& w, const VectorXd& z0,
                          const ConicOptions& opt,
                          double early_exit_obj = -std::numeric_limits<double>::infinity()) {
  const int n = w.n;
  const int ml = int(w.A.rows());
  const int mq = int(w.quads.size());
  const int m = ml + mq;

  CoreResult res;
  res.z = z0;

  VectorXd g;
  w.eval_g(res.z, g);
  if (m == 0) {  // unconstrained: only sensible if f == 0
    res.status = SolveStatus::Optimal;
    res.obj = w.f.dot(res.z);
    res.gap = 0;
    res.dual_residual = w.f.lpNorm<Eigen::Infinity>();
    return res;
  }
  if (g.maxCoeff() >= 0) return res;  // not strictly feasible: caller bug

  VectorXd lam = (-g).cwiseInverse();
  MatrixXd Dgq(mq, n);  // quad gradients, one row per constraint
  VectorXd vtmp, gtrial;
  MatrixXd H(n, n);
  MatrixXd B;  // scaled affine rows
  VectorXd rdual(n), rhs(n);

  const double dscale = std::max(1.0, w.f.lpNorm<Eigen::Infinity>());
  double t = 1.0;

  for (int it = 0; it < opt.max_iter; ++it) {
    res.iterations = it + 1;

    // gradients of quadratic rows at z
    for (int i = 0; i < mq; ++i) {
      const Quad& q = w.quads[i];
      Dgq.row(i) = q.a;
      if (q.M->rows() > 0) {
        vtmp.noalias() = (*q.M) * res.z + (*q.c);
        Dgq.row(i).noalias() += 2.0 * (vtmp.transpose() * (*q.M));
      }
    }

    double eta = -(g.head(ml).dot(lam.head(ml)) + g.tail(mq).dot(lam.tail(mq)));
    t = opt.mu * m / std::max(eta, 1e-300);

    rdual = w.f;
    if (ml > 0) rdual.noalias() += w.A.transpose() * lam.head(ml);
    if (mq > 0) rdual.noalias() += Dgq.transpose() * lam.tail(mq);

    const double obj = w.f.dot(res.z);
    res.obj = obj;
    res.gap = eta;
    res.dual_residual = rdual.lpNorm<Eigen::Infinity>();

    if (res.certificate_within(opt.tol_opt, dscale)) {
      res.status = SolveStatus::Optimal;
      res.g = g;
      return res;
    }
    if (obj <= early_exit_obj) {
      res.status = SolveStatus::Optimal;  // good enough for the caller
      res.g = g;
      return res;
    }

    // reduced Newton system
    H.setZero();
    H.diagonal().array() += opt.reg;
    if (ml > 0) {
      VectorXd wlin = lam.head(ml).cwiseQuotient(-g.head(ml));
      B = w.A;
      B.array().colwise() *= wlin.array().sqrt();
      H.selfadjointView<Eigen::Lower>().rankUpdate(B.transpose());
    }
    for (int i = 0; i < mq; ++i) {
      H.triangularView<Eigen::Lower>() += lam[ml + i] * w.quads[i].gram;
      double wq = lam[ml + i] / (-g[ml + i]);
      H.selfadjointView<Eigen::Lower>().rankUpdate(Dgq.row(i).transpose(), wq);
    }

    rhs = -w.f;
    if (ml > 0) rhs.noalias() += w.A.transpose() * (g.head(ml).cwiseInverse() / t);
    if (mq > 0) rhs.noalias() += Dgq.transpose() * (g.tail(mq).cwiseInverse() / t);

    Eigen::LDLT<MatrixXd, Eigen::Lower> ldlt(H);
    VectorXd dz = ldlt.solve(rhs);
    if (!dz.allFinite()) {
      H.diagonal().array() += 1e-8;
      ldlt.compute(H);
      dz = ldlt.solve(rhs);
      if (!dz.allFinite()) return res;  // MaxIter
    }

    // dual step from the eliminated block
    VectorXd dg(m);
    if (ml > 0) dg.head(ml).noalias() = w.A * dz;
    for (int i = 0; i < mq; ++i) dg[ml + i] = Dgq.row(i).dot(dz);
    VectorXd dlam(m);
    for (int i = 0; i < m; ++i)
      dlam[i] = -lam[i] - 1.0 / (t * g[i]) - lam[i] / g[i] * dg[i];

    // fraction-to-boundary limit over duals, linear rows and quadratic rows;
    // keeps every margin strictly positive so the barrier weights stay sane
    auto step_limit = [&](const VectorXd& dzv, const VectorXd& dgv,
                          const VectorXd& dlv) {
      double a = 1.0 / 0.99;
      for (int i = 0; i < m; ++i)
        if (dlv[i] < 0) a = std::min(a, -lam[i] / dlv[i]);
      for (int i = 0; i < ml; ++i)
        if (dgv[i] > 0) a = std::min(a, -g[i] / dgv[i]);
      for (int i = 0; i < mq; ++i) {
        const Quad& q = w.quads[i];
        // g(z+a*dz) = g + a*(grad.dz) + a^2*||M dz||^2
        double qa = q.M->rows() > 0 ? ((*q.M) * dzv).squaredNorm() : 0.0;
        double qb = dgv[ml + i];
        double qc = g[ml + i];
        if (qa > 1e-300) {
          double disc = qb * qb - 4.0 * qa * qc;  // qc<0 => disc >= qb^2
          double root = (-qb + std::sqrt(std::max(0.0, disc))) / (2.0 * qa);
          if (root > 0) a = std::min(a, root);
        } else if (qb > 0) {
          a = std::min(a, -qc / qb);
        }
      }
      return a;
    };

    // second-order corrector: fold the predicted complementarity error
    // lam*dg + dlam*(dg+q) + q-curvature back into the rhs and re-solve
    // with the factorization already at hand; kept only when it does not
    // crush the achievable step
    const double amax_aff = step_limit(dz, dg, dlam);
    VectorXd dz_aff, dg_aff, dlam_aff;
    bool used_corr = false;
    {
      VectorXd corr(m);
      for (int i = 0; i < ml; ++i) corr[i] = dlam[i] * dg[i];
      for (int i = 0; i < mq; ++i) {
        const Quad& q = w.quads[i];
        double qa = 0.0;
        if (q.M->rows() > 0) qa = ((*q.M) * dz).squaredNorm();
        corr[ml + i] = dlam[ml + i] * (dg[ml + i] + qa) + lam[ml + i] * qa;
      }
      VectorXd rhs2 = rhs;
      if (ml > 0)
        rhs2.noalias() += w.A.transpose() * corr.head(ml).cwiseQuotient(g.head(ml));
      if (mq > 0)
        rhs2.noalias() += Dgq.transpose() * corr.tail(mq).cwiseQuotient(g.tail(mq));
      VectorXd dz2 = ldlt.solve(rhs2);
      if (dz2.allFinite()) {
        VectorXd dg2(m);
        if (ml > 0) dg2.head(ml).noalias() = w.A * dz2;
        for (int i = 0; i < mq; ++i) dg2[ml + i] = Dgq.row(i).dot(dz2);
        VectorXd dlam2(m);
        for (int i = 0; i < m; ++i)
          dlam2[i] = -lam[i] - 1.0 / (t * g[i]) -
                     (lam[i] * dg2[i] + corr[i]) / g[i];
        if (step_limit(dz2, dg2, dlam2) >= 0.05 * amax_aff) {
          dz_aff = std::move(dz);
          dg_aff = std::move(dg);
          dlam_aff = std::move(dlam);
          dz = std::move(dz2);
          dg = std::move(dg2);
          dlam = std::move(dlam2);
          used_corr = true;
        }
      }
    }

    // step selection: exact limit to the boundary, then a backtracking
    // line search on the KKT residual norm. The corrected direction can
    // fail the descent test outright (the corrector shifts the centrality
    // rows by a fixed amount), so on rejection retry with the plain
    // Newton direction, which always admits descent.
    const double rnorm0 = residual_norm(w, res.z, lam, g, Dgq, t, ml, mq);
    VectorXd ztrial, ltrial;
    double alpha = 0.0, alpha_feas = 0.0, amax = 0.0;
    auto try_step = [&](const VectorXd& dzv, const VectorXd& dgv,
                        const VectorXd& dlv) -> bool {
      amax = step_limit(dzv, dgv, dlv);
      alpha = 0.99 * amax;
      // the limit is exact; this loop is a numerical safety net only
      for (;;) {
        ztrial = res.z + alpha * dzv;
        if (w.eval_g(ztrial, gtrial) < 0) break;
        alpha *= opt.beta;
        if (alpha < 1e-13) return false;
      }
      alpha_feas = alpha;
      for (;;) {
        ltrial = lam + alpha * dlv;
        MatrixXd Dgq_t(mq, n);
        for (int i = 0; i < mq; ++i) {
          const Quad& q = w.quads[i];
          Dgq_t.row(i) = q.a;
          if (q.M->rows() > 0) {
            vtmp.noalias() = (*q.M) * ztrial + (*q.c);
            Dgq_t.row(i).noalias() += 2.0 * (vtmp.transpose() * (*q.M));
          }
        }
        double rn = residual_norm(w, ztrial, ltrial, gtrial, Dgq_t, t, ml, mq);
        if (rn <= (1.0 - opt.armijo * alpha) * rnorm0) return true;
        alpha *= opt.beta;
        if (alpha < 1e-13) return false;
        ztrial = res.z + alpha * dzv;
        w.eval_g(ztrial, gtrial);
      }
    };
    bool stepped = try_step(dz, dg, dlam);
    if (!stepped && used_corr) stepped = try_step(dz_aff, dg_aff, dlam_aff);
    if (opt.verbose)
      std::fprintf(stderr,
                   "[pd] it=%3d obj=%+.6e eta=%.3e t=%.3e rdual=%.3e amax=%.3e afeas=%.3e a=%.3e\n",
                   it, obj, eta, t, res.dual_residual, amax, alpha_feas, alpha);
    if (!stepped) {  // no progress possible at this precision
      res.g = g;
      if (res.certificate_within(opt.tol_acceptable, dscale))
        res.status = SolveStatus::Optimal;
      return res;
    }
    lam = ltrial;
    res.z = ztrial;
    g = gtrial;
  }

  // budget exhausted: recompute a fresh certificate at the final iterate
  for (int i = 0; i < mq; ++i) {
    const Quad& q = w.quads[i];
    Dgq.row(i) = q.a;
    if (q.M->rows() > 0) {
      vtmp.noalias() = (*q.M) * res.z + (*q.c);
      Dgq.row(i).noalias() += 2.0 * (vtmp.transpose() * (*q.M));
    }
  }
  rdual = w.f;
  if (ml > 0) rdual.noalias() += w.A.transpose() * lam.head(ml);
  if (mq > 0) rdual.noalias() += Dgq.transpose() * lam.tail(mq);
  res.obj = w.f.dot(res.z);
  res.gap = -(g.head(ml).dot(lam.head(ml)) + g.tail(mq).dot(lam.tail(mq)));
  res.dual_residual = rdual.lpNorm<Eigen::Infinity>();
  res.g = g;
  if (res.certificate_within(opt.tol_opt, dscale) ||
      res.certificate_within(opt.tol_acceptable, dscale))
    res.status = SolveStatus::Optimal;
  return res;
}

inline Workspace make_workspace(const ConicProblem& p) {
  Workspace w;
  w.n = p.n;
  w.f = p.f;
  w.A = p.A;
  w.b = p.b;
  w.quads.reserve(p.quads.size());
  for (const auto& q : p.quads) {
    Quad iq;
    iq.M = &q.M;
    iq.c = &q.c;
    iq.a = VectorXd::Zero(p.n);
    iq.a[q.r_index] = -1.0;
    iq.gram.noalias() = 2.0 * q.M.transpose() * q.M;
    w.quads.push_back(std::move(iq));
  }
  return w;
}

// Phase-I workspace: one extra slack coordinate, minimize it.
inline Workspace make_phase1(const Workspace& w0, std::vector<MatrixXd>& mstore) {
  Workspace w;
  w.n = w0.n + 1;
  w.f = VectorXd::Zero(w.n);
  w.f[w0.n] = 1.0;
  w.A.resize(w0.A.rows(), w.n);
  if (w0.A.rows() > 0) {
    w.A.leftCols(w0.n) = w0.A;
    w.A.col(w0.n).setConstant(-1.0);
  }
  w.b = w0.b;
  mstore.clear();
  mstore.reserve(w0.quads.size());
  for (const auto& q : w0.quads) {
    MatrixXd Mp(q.M->rows(), w.n);
    if (q.M->rows() > 0) {
      Mp.leftCols(w0.n) = *q.M;
      Mp.col(w0.n).setZero();
    }
    mstore.push_back(std::move(Mp));
  }
  for (std::size_t i = 0; i < w0.quads.size(); ++i) {
    Quad iq;
    iq.M = &mstore[i];
    iq.c = w0.quads[i].c;
    iq.a = VectorXd::Zero(w.n);
    iq.a.head(w0.n) = w0.quads[i].a;
    iq.a[w0.n] = -1.0;
    iq.gram.noalias() = 2.0 * mstore[i].transpose() * mstore[i];
    w.quads.push_back(std::move(iq));
  }
  return w;
}

}  // namespace detail

/// Minimizes the phase-I slack; feasible iff the optimum slack is <= tol_feas.
inline Phase1Result phase1_feasibility(const ConicProblem& p,
                                       const ConicOptions& opt = {},
                                       const VectorXd* z_init = nullptr) {
  detail::Workspace w0 = detail::make_workspace(p);
  std::vector<MatrixXd> mstore;
  detail::Workspace w1 = detail::make_phase1(w0, mstore);

  VectorXd z0 = VectorXd::Zero(w1.n);
  if (z_init) z0.head(p.n) = *z_init;
  VectorXd g0;
  double maxg = w0.eval_g(z0.head(p.n), g0);
  if (!std::isfinite(maxg)) maxg = 0.0;
  z0[p.n] = maxg + std::max(1.0, 1e-3 * std::abs(maxg));

  // Stop as soon as the slack is comfortably negative; otherwise run to
  // optimality to certify infeasibility.
  ConicOptions o1 = opt;
  o1.tol_opt = std::max(opt.tol_opt, 0.1 * opt.tol_feas);
  double exit_at = -std::max(1e-4, 0.05 * std::max(z0[p.n], 0.0));
  detail::CoreResult r = detail::pd_core(w1, z0, o1, exit_at);

  Phase1Result out;
  out.iterations = r.iterations;
  out.z = r.z.head(p.n);
  VectorXd gf;
  out.max_violation = w0.eval_g(out.z, gf);
  out.feasible = (r.status == SolveStatus::Optimal)
                     ? (r.obj <= opt.tol_feas || out.max_violation <= opt.tol_feas)
                     : (out.max_violation <= opt.tol_feas);
  return out;
}

/// Full solve: phase I (skipped when a strictly feasible start is supplied),
/// then the primal-dual barrier loop.
inline ConicSolution solve(const ConicProblem& p, const ConicOptions& opt = {},
                           const VectorXd* strictly_feasible_start = nullptr) {
  detail::Workspace w = detail::make_workspace(p);
  ConicSolution sol;

  VectorXd z0;
  VectorXd g0;
  bool have_start = false;
  if (strictly_feasible_start) {
    z0 = *strictly_feasible_start;
    if (w.eval_g(z0, g0) < 0) have_start = true;
  }
  int p1_iters = 0;
  if (!have_start) {
    Phase1Result p1 = phase1_feasibility(p, opt, strictly_feasible_start);
    p1_iters = p1.iterations;
    if (!p1.feasible) {
      sol.status = SolveStatus::Infeasible;
      sol.z = p1.z;
      sol.primal_residual = p1.max_violation;
      sol.iterations = p1_iters;
      return sol;
    }
    z0 = p1.z;
    if (w.eval_g(z0, g0) >= 0) {
      // feasible but not strictly: the barrier cannot start
      sol.status = SolveStatus::MaxIter;
      sol.z = z0;
      sol.primal_residual = g0.size() ? g0.maxCoeff() : 0.0;
      sol.iterations = p1_iters;
      return sol;
    }
  }

  detail::CoreResult r = detail::pd_core(w, z0, opt);
  sol.status = r.status;
  sol.z = r.z;
  sol.obj = w.f.dot(r.z);
  VectorXd gf;
  double mx = w.eval_g(r.z, gf);
  sol.primal_residual = std::max(0.0, mx);
  sol.dual_residual = std::max(r.dual_residual, r.gap);
  sol.iterations = p1_iters + r.iterations;
  if (sol.status == SolveStatus::Optimal && sol.primal_residual > opt.tol_feas)
    sol.status = SolveStatus::MaxIter;
  return sol;
}

}  // namespace robosynth::conic
