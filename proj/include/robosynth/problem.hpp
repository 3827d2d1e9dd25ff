#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "robosynth/conic.hpp"
#include "robosynth/util.hpp"

namespace robosynth {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

/// H x <= k
struct Polytope {
  MatrixXd H;
  VectorXd k;

  static Polytope box(const VectorXd& halfwidth) {
    const int d = int(halfwidth.size());
    Polytope p;
    p.H.resize(2 * d, d);
    p.H << MatrixXd::Identity(d, d), -MatrixXd::Identity(d, d);
    p.k.resize(2 * d);
    p.k << halfwidth, halfwidth;
    return p;
  }

  int dim() const { return int(H.cols()); }
  int rows() const { return int(H.rows()); }

  bool contains(const VectorXd& x, double tol = 1e-9) const {
    return ((H * x - k).array() <= tol).all();
  }
};

/// { G xi : ||xi||_inf <= 1 }
struct Zonotope {
  MatrixXd gen;

  int dim() const { return int(gen.rows()); }
  int coeff_dim() const { return int(gen.cols()); }

  VectorXd realize(const VectorXd& xi) const { return gen * xi; }

  double support(const VectorXd& a) const {
    return (gen.transpose() * a).cwiseAbs().sum();
  }
};

/// Robust regulation problem over a finite horizon: dynamics, quadratic
/// stage/terminal weights, state/control/disturbance sets and the policy
/// approximation tolerance folded into the disturbance model.
struct ProblemSpec {
  MatrixXd A, B, G;
  MatrixXd Q, R, P;
  int N = 0;
  Polytope X, U;
  VectorXd w_half;  // disturbance box half-widths, one per disturbance channel
  Polytope Xf;
  bool has_terminal_set = false;
  double eps = 0.0;

  int d() const { return int(A.rows()); }
  int m() const { return int(B.cols()); }
  int nw() const { return int(G.cols()); }

  const Polytope& terminal_set() const { return has_terminal_set ? Xf : X; }
};

/// Decision-space dimension of the slack-form program: the full feedback
/// block matrix (mN x dN), the affine term (mN) and the epigraph scalar.
inline int n_z(const ProblemSpec& s) {
  return s.m() * s.N * s.d() * s.N + s.m() * s.N + 1;
}

/// Aggregate disturbance set: the image of the physical box under G, dilated
/// by the approximation ball pushed through B.
inline Zonotope aggregate_disturbance(const ProblemSpec& s) {
  Zonotope z;
  z.gen.resize(s.d(), s.nw() + s.m());
  z.gen.leftCols(s.nw()) = s.G * s.w_half.asDiagonal();
  z.gen.rightCols(s.m()) = s.eps * s.B;
  return z;
}

namespace detail {

inline bool is_symmetric(const MatrixXd& M, double tol = 1e-9) {
  return (M - M.transpose()).lpNorm<Eigen::Infinity>() <= tol;
}

inline double min_eigenvalue(const MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
  return es.eigenvalues().minCoeff();
}

}  // namespace detail

/// max a'x over the polytope, via the conic LP path.
inline double support(const Polytope& p, const VectorXd& a) {
  conic::ConicProblem lp;
  lp.n = p.dim();
  lp.f = -a;
  lp.A = p.H;
  lp.b = p.k;
  auto sol = conic::solve(lp);
  if (sol.status == conic::SolveStatus::Infeasible)
    throw SpecError("support query on an empty polytope");
  if (sol.status != conic::SolveStatus::Optimal || -sol.obj > 1e12)
    throw SpecError("support query unbounded; polytope is not compact");
  return -sol.obj;
}

inline void validate(const ProblemSpec& s) {
  const int d = s.d(), m = s.m(), nw = s.nw();
  auto req = [](bool ok, const std::string& why) {
    if (!ok) throw SpecError(why);
  };
  req(d > 0 && m > 0, "empty state or input dimension");
  req(s.A.rows() == d && s.A.cols() == d, "A must be square d x d");
  req(s.B.rows() == d, "B row count must match the state dimension");
  req(s.G.rows() == d, "G row count must match the state dimension");
  req(nw > 0, "G must have at least one disturbance channel");
  req(s.w_half.size() == nw, "dist_box size must match the columns of G");
  req(s.N >= 1, "horizon must be at least 1");
  req(s.eps >= 0.0, "approximation tolerance must be nonnegative");

  req(s.Q.rows() == d && s.Q.cols() == d, "Q must be d x d");
  req(s.P.rows() == d && s.P.cols() == d, "P must be d x d");
  req(s.R.rows() == m && s.R.cols() == m, "R must be m x m");
  req(detail::is_symmetric(s.Q), "Q must be symmetric");
  req(detail::is_symmetric(s.P), "P must be symmetric");
  req(detail::is_symmetric(s.R), "R must be symmetric");
  req(detail::min_eigenvalue(s.Q) >= -1e-9, "Q must be positive semidefinite");
  req(detail::min_eigenvalue(s.P) >= -1e-9, "P must be positive semidefinite");
  req(detail::min_eigenvalue(s.R) > 1e-12, "R must be positive definite");

  req(s.X.dim() == d, "state set lives in the wrong dimension");
  req(s.U.dim() == m, "control set lives in the wrong dimension");
  req((s.X.k.array() > 0).all(), "state set must contain the origin strictly");
  req((s.U.k.array() > 0).all(), "control set must contain the origin strictly");
  req((s.w_half.array() >= 0).all(), "disturbance box widths must be nonnegative");

  // compactness of X and U: finite support in every coordinate direction
  for (int j = 0; j < d; ++j) {
    VectorXd e = VectorXd::Unit(d, j);
    support(s.X, e);
    support(s.X, VectorXd(-e));
  }
  for (int j = 0; j < m; ++j) {
    VectorXd e = VectorXd::Unit(m, j);
    support(s.U, e);
    support(s.U, VectorXd(-e));
  }

  if (s.has_terminal_set) {
    req(s.Xf.dim() == d, "terminal set lives in the wrong dimension");
    req((s.Xf.k.array() > 0).all(), "terminal set must contain the origin strictly");
    for (int i = 0; i < s.X.rows(); ++i) {
      double h = support(s.Xf, VectorXd(s.X.H.row(i).transpose()));
      req(h <= s.X.k[i] + 1e-9, "terminal set must be contained in the state set");
    }
  }
}

// ---------------------------------------------------------------------------
// JSON interface. Unknown fields are rejected so that typos cannot silently
// change a run.
// ---------------------------------------------------------------------------

namespace detail {

inline MatrixXd parse_matrix(const json& j, const std::string& name) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw SpecError(name + " must be a non-empty nested array (row-major)");
  const std::size_t rows = j.size(), cols = j[0].size();
  MatrixXd M(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols)
      throw SpecError(name + " has ragged rows");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[i][c].is_number()) throw SpecError(name + " has a non-numeric entry");
      M(i, c) = j[i][c].get<double>();
    }
  }
  return M;
}

inline VectorXd parse_vector(const json& j, const std::string& name) {
  if (!j.is_array() || j.empty())
    throw SpecError(name + " must be a non-empty array");
  VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw SpecError(name + " has a non-numeric entry");
    v[i] = j[i].get<double>();
  }
  return v;
}

inline json dump_matrix(const MatrixXd& M) {
  json rows = json::array();
  for (int i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (int c = 0; c < M.cols(); ++c) row.push_back(M(i, c));
    rows.push_back(row);
  }
  return rows;
}

inline json dump_vector(const VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Polytope parse_polytope(const json& j, const std::string& name) {
  if (!j.is_object() || !j.contains("H") || !j.contains("k") || j.size() != 2)
    throw SpecError(name + " must be an object with exactly H and k");
  Polytope p;
  p.H = parse_matrix(j["H"], name + ".H");
  p.k = parse_vector(j["k"], name + ".k");
  if (p.k.size() != p.H.rows()) throw SpecError(name + ": k length must match rows of H");
  return p;
}

}  // namespace detail

inline ProblemSpec spec_from_json(const json& j) {
  static const std::vector<std::string> known = {
      "A", "B", "G", "Q", "R", "P", "N", "state_box", "state_polytope",
      "control_box", "control_polytope", "dist_box", "terminal_box", "eps"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : known) ok = ok || (it.key() == k);
    if (!ok) throw SpecError("unknown field in problem description: " + it.key());
  }
  auto need = [&](const char* k) -> const json& {
    if (!j.contains(k)) throw SpecError(std::string("missing field: ") + k);
    return j.at(k);
  };

  ProblemSpec s;
  s.A = detail::parse_matrix(need("A"), "A");
  s.B = detail::parse_matrix(need("B"), "B");
  s.Q = detail::parse_matrix(need("Q"), "Q");
  s.R = detail::parse_matrix(need("R"), "R");
  s.P = detail::parse_matrix(need("P"), "P");
  if (!need("N").is_number_integer()) throw SpecError("N must be an integer");
  s.N = need("N").get<int>();
  if (!need("eps").is_number()) throw SpecError("eps must be a number");
  s.eps = need("eps").get<double>();

  if (j.contains("G"))
    s.G = detail::parse_matrix(j["G"], "G");
  else
    s.G = MatrixXd::Identity(s.A.rows(), s.A.rows());
  s.w_half = detail::parse_vector(need("dist_box"), "dist_box");

  if (j.contains("state_box") == j.contains("state_polytope"))
    throw SpecError("exactly one of state_box / state_polytope is required");
  if (j.contains("state_box"))
    s.X = Polytope::box(detail::parse_vector(j["state_box"], "state_box"));
  else
    s.X = detail::parse_polytope(j["state_polytope"], "state_polytope");

  if (j.contains("control_box") == j.contains("control_polytope"))
    throw SpecError("exactly one of control_box / control_polytope is required");
  if (j.contains("control_box"))
    s.U = Polytope::box(detail::parse_vector(j["control_box"], "control_box"));
  else
    s.U = detail::parse_polytope(j["control_polytope"], "control_polytope");

  if (j.contains("terminal_box")) {
    s.Xf = Polytope::box(detail::parse_vector(j["terminal_box"], "terminal_box"));
    s.has_terminal_set = true;
  }
  return s;
}

inline ProblemSpec load_spec(const std::string& path) {
  json j = json::parse(read_text_file(path));
  return spec_from_json(j);
}

/// Canonical serialization: every resolved field in key-sorted order. The
/// fingerprint of this string ties datasets and models to the exact problem.
inline json spec_to_canonical_json(const ProblemSpec& s) {
  json j;
  j["A"] = detail::dump_matrix(s.A);
  j["B"] = detail::dump_matrix(s.B);
  j["G"] = detail::dump_matrix(s.G);
  j["Q"] = detail::dump_matrix(s.Q);
  j["R"] = detail::dump_matrix(s.R);
  j["P"] = detail::dump_matrix(s.P);
  j["N"] = s.N;
  j["eps"] = s.eps;
  j["state_polytope"] = {{"H", detail::dump_matrix(s.X.H)}, {"k", detail::dump_vector(s.X.k)}};
  j["control_polytope"] = {{"H", detail::dump_matrix(s.U.H)}, {"k", detail::dump_vector(s.U.k)}};
  j["dist_box"] = detail::dump_vector(s.w_half);
  j["terminal_polytope"] = {{"H", detail::dump_matrix(s.terminal_set().H)},
                            {"k", detail::dump_vector(s.terminal_set().k)}};
  return j;
}

inline std::string spec_hash(const ProblemSpec& s) {
  return sha256_hex(spec_to_canonical_json(s).dump());
}

}  // namespace robosynth
