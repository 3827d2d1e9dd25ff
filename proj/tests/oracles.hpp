#pragma once

// Independent reference computations used by the tests. These deliberately
// avoid the library's own solver paths: brute-force search, direct recursions
// and quadrature only.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracles {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Minimizes fn over a box by iteratively refined dense grid search.
/// Intended for convex fn; `pts` grid nodes per axis and `rounds` zoom levels.
inline double grid_min(const VectorXd& lo, const VectorXd& hi,
                       const std::function<double(const VectorXd&)>& fn,
                       int pts = 13, int rounds = 10, VectorXd* argmin = nullptr) {
  const int d = int(lo.size());
  VectorXd cur_lo = lo, cur_hi = hi;
  VectorXd best_x = 0.5 * (lo + hi);
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < rounds; ++r) {
    std::vector<int> idx(d, 0);
    VectorXd x(d);
    for (;;) {
      for (int j = 0; j < d; ++j)
        x[j] = cur_lo[j] + (cur_hi[j] - cur_lo[j]) * idx[j] / double(pts - 1);
      double v = fn(x);
      if (v < best) {
        best = v;
        best_x = x;
      }
      int j = 0;
      while (j < d && ++idx[j] == pts) idx[j++] = 0;
      if (j == d) break;
    }
    VectorXd span = (cur_hi - cur_lo) * 0.4;
    for (int j = 0; j < d; ++j) {
      double sp = std::max(span[j], 4.0 * (cur_hi[j] - cur_lo[j]) / (pts - 1));
      cur_lo[j] = std::max(lo[j], best_x[j] - 0.5 * sp);
      cur_hi[j] = std::min(hi[j], best_x[j] + 0.5 * sp);
    }
  }
  if (argmin) *argmin = best_x;
  return best;
}

/// Zonotope membership via least squares + ell-infinity minimization over the
/// kernel: w is a member iff min ||xi||_inf s.t. G xi = w is <= 1.
inline bool zonotope_member(const MatrixXd& gen, const VectorXd& w, double tol = 1e-7) {
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(gen);
  VectorXd xi0 = cod.solve(w);
  if ((gen * xi0 - w).lpNorm<Eigen::Infinity>() > tol) return false;
  // kernel basis via full SVD
  Eigen::JacobiSVD<MatrixXd> svd(gen, Eigen::ComputeFullV);
  int rank = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()[i] > 1e-12 * svd.singularValues()[0]) ++rank;
  MatrixXd K = svd.matrixV().rightCols(gen.cols() - rank);
  if (K.cols() == 0) return xi0.lpNorm<Eigen::Infinity>() <= 1.0 + tol;
  VectorXd klo = VectorXd::Constant(K.cols(), -2.0);
  VectorXd khi = VectorXd::Constant(K.cols(), 2.0);
  double v = grid_min(klo, khi, [&](const VectorXd& y) {
    return (xi0 + K * y).lpNorm<Eigen::Infinity>();
  });
  return v <= 1.0 + 1e-4;
}

}  // namespace oracles
