#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "robosynth/datagen.hpp"

namespace robosynth {
namespace quifs {

using Index = std::vector<int>;

// ---------------------------------------------------------------------------
// Sixth-order Laguerre-Gaussian generator. The radial polynomial is the
// generalized Laguerre polynomial L2^(d/2), which makes every monomial
// moment of order 1..5 vanish while the mass stays 1; the d=2 instance is
// (3 - 3t + t^2/2) e^{-t} / pi on t = ||y||^2.
// ---------------------------------------------------------------------------

inline double psi_lg6_r2(double r2, int d) {
  const double alpha = 0.5 * d;
  const double a0 = 0.5 * (alpha + 1.0) * (alpha + 2.0);
  const double a1 = -(alpha + 2.0);
  const double a2 = 0.5;
  return std::pow(M_PI, -0.5 * d) * (a0 + (a1 + a2 * r2) * r2) * std::exp(-r2);
}

inline double psi_lg6(const VectorXd& y) {
  return psi_lg6_r2(y.squaredNorm(), int(y.size()));
}

/// Moment order of the built-in generator.
constexpr int kMomentOrder = 6;

inline double c_gamma(int M = kMomentOrder) {
  return M * std::tgamma(double(M)) / std::tgamma(double(M) + 2.0);
}

// ---------------------------------------------------------------------------
// Empirical kernel budgets. Both quantities live on the unit lattice (the
// grid step cancels), so they are measured once per (d, D) pair: the
// saturation error is the deviation of the full lattice sum from 1, the
// truncation tail is everything the radius-r0 ball drops. Probes cover the
// unit cell; the lattice sum is cut where the Gaussian tail is below 1e-16.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<VectorXd> unit_cell_probes(int d, int count, std::uint64_t seed) {
  std::vector<VectorXd> probes;
  probes.push_back(VectorXd::Zero(d));
  probes.push_back(VectorXd::Constant(d, 0.5));
  std::uint64_t ctr = seed;
  for (int i = 0; i < count; ++i) {
    VectorXd u(d);
    for (int j = 0; j < d; ++j)
      u[j] = double(splitmix64(ctr++) >> 11) * 0x1.0p-53;
    probes.push_back(u);
  }
  return probes;
}

inline int tail_radius(double D) {
  return int(std::ceil(std::sqrt(38.0 * D))) + 1;
}

/// Visits every lattice offset within r_big of u and hands (|u-m|^2, weight)
/// to the sink.
template <class Sink>
void lattice_scan(const VectorXd& u, double D, int r_big, Sink&& sink) {
  const int d = int(u.size());
  const double scale = std::pow(D, -0.5 * d);
  std::vector<int> lo(d), hi(d), c(d);
  for (int j = 0; j < d; ++j) {
    lo[j] = int(std::ceil(u[j] - r_big));
    hi[j] = int(std::floor(u[j] + r_big));
    c[j] = lo[j];
  }
  for (;;) {
    double r2 = 0;
    for (int j = 0; j < d; ++j) {
      double t = u[j] - c[j];
      r2 += t * t;
    }
    if (r2 <= double(r_big) * r_big)
      sink(r2, scale * psi_lg6_r2(r2 / D, d));
    int j = d - 1;
    while (j >= 0 && c[j] == hi[j]) {
      c[j] = lo[j];
      --j;
    }
    if (j < 0) break;
    ++c[j];
  }
}

}  // namespace detail

/// Max deviation of the lattice kernel sum from 1 over unit-cell probes.
inline double measure_saturation(int d, double D) {
  double worst = 0;
  const int r_big = detail::tail_radius(D);
  for (const auto& u : detail::unit_cell_probes(d, 200, 0x5a7u)) {
    double s = 0;
    detail::lattice_scan(u, D, r_big, [&](double, double w) { s += w; });
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

/// tau[r] = worst absolute kernel mass outside the radius-r lattice ball,
/// for r = 0..r_max; multiply by the sup norm of the data for the
/// truncation budget.
inline std::vector<double> measure_truncation(int d, double D, int r_max) {
  const int r_big = std::max(detail::tail_radius(D), r_max + 1);
  std::vector<double> tau(std::size_t(r_max) + 1, 0.0);
  for (const auto& u : detail::unit_cell_probes(d, 200, 0x9d3u)) {
    std::vector<double> shell(std::size_t(r_big) + 2, 0.0);
    detail::lattice_scan(u, D, r_big, [&](double r2, double w) {
      shell[std::size_t(std::min(double(r_big + 1), std::floor(std::sqrt(r2))))] +=
          std::abs(w);
    });
    double suffix = 0;
    std::vector<double> tail(shell.size() + 1, 0.0);
    for (std::size_t k = shell.size(); k-- > 0;) {
      suffix += shell[k];
      tail[k] = suffix;
    }
    // mass with distance > r lives in shells floor(dist) >= r
    for (int r = 0; r <= r_max; ++r)
      tau[std::size_t(r)] = std::max(tau[std::size_t(r)], tail[std::size_t(r)]);
  }
  return tau;
}

// ---------------------------------------------------------------------------
// Closed-form parameter selection for a preassigned uniform margin eps,
// split evenly across the interpolation, saturation and truncation terms.
// ---------------------------------------------------------------------------

struct Params {
  double h = 0;
  double D = 2;
  int r0 = 4;
  double C_gamma = 1.0 / 7.0;
  double saturation = 0;   // measured at the selected D
  double truncation = 0;   // measured tail mass at r0 (unit data)
};

inline Params select_params(double eps, double L0, double sup_norm, int d) {
  if (!(eps > 0) || !(L0 > 0)) throw SpecError("eps and L0 must be positive");
  if (d < 1 || d > 5) throw SpecError("generator is scoped to 1 <= d <= 5");
  Params p;
  p.C_gamma = c_gamma();
  p.D = 2.0;
  for (;;) {
    p.saturation = measure_saturation(d, p.D);
    if (p.saturation <= eps / 3 || p.D >= 64.0) break;
    p.D *= 1.5;
  }
  if (p.saturation > eps / 3)
    throw SpecError("no shape parameter met the saturation budget");
  p.h = eps / (3.0 * p.C_gamma * L0 * std::sqrt(p.D));
  const double B = std::max(sup_norm, 1e-12);
  auto tau = measure_truncation(d, p.D, 16);
  int r0 = -1;
  for (int r = 1; r <= 16; ++r)
    if (tau[std::size_t(r)] * B <= eps / 3) {
      r0 = r;
      break;
    }
  if (r0 < 0) throw SpecError("no truncation radius met the tail budget");
  p.r0 = r0;
  p.truncation = tau[std::size_t(r0)] * B;
  return p;
}

// ---------------------------------------------------------------------------
// Lipschitz extension of the gridded policy: component-wise infimum of
// value + L0 * distance over the feasible net.
// ---------------------------------------------------------------------------

inline VectorXd extend(const datagen::Dataset& ds, double L0, const VectorXd& x) {
  if (!(L0 > 0)) throw SpecError("extension needs a positive Lipschitz rank");
  VectorXd best;
  for (const auto& r : ds.records) {
    if (!r.feasible) continue;
    VectorXd cand = r.u0;
    cand.array() += L0 * (x - r.x).norm();
    best = best.size() == 0 ? cand : best.cwiseMin(cand).eval();
  }
  if (best.size() == 0)
    throw SpecError("extension undefined: dataset has no feasible record");
  return best;
}

// ---------------------------------------------------------------------------
// The interpolation model: extended policy values on the lattice covering
// the feasible mask plus a guard ring, with the kernel parameters and the
// measured error budgets baked in.
// ---------------------------------------------------------------------------

struct Model {
  int d = 0, m = 0, M = kMomentOrder;
  double h = 0, D = 2, L0 = 0, eps = 0;
  int r0 = 4;
  VectorXd origin;  // lattice origin; zero for grid datasets
  std::map<Index, VectorXd> grid_values;
  std::set<Index> mask;  // feasible lattice indices
  double budget_saturation = 0, budget_truncation = 0, budget_interp = 0;
  json meta;

  bool covered(const Index& idx) const { return grid_values.count(idx) != 0; }
};

namespace detail {

inline Index lattice_index(const VectorXd& x, double h, const char* what) {
  Index idx(std::size_t(x.size()));
  for (int j = 0; j < x.size(); ++j) {
    double v = x[j] / h;
    int i = int(std::lround(v));
    if (std::abs(v - i) > 1e-6)
      throw SpecError(std::string(what) + ": state is off the lattice");
    idx[std::size_t(j)] = i;
  }
  return idx;
}

inline std::string index_name(const Index& idx) {
  std::string s = "(";
  for (std::size_t j = 0; j < idx.size(); ++j)
    s += (j ? "," : "") + std::to_string(idx[j]);
  return s + ")";
}

}  // namespace detail

/// Conservative Lipschitz rank from the data: the largest adjacent-node
/// slope over the feasible mask, inflated by 25%.
inline double estimate_l0(const datagen::Dataset& ds) {
  if (!ds.meta.contains("grid_h"))
    throw SpecError("Lipschitz estimation needs a uniform grid dataset");
  const double h = ds.meta["grid_h"].get<double>();
  std::map<Index, const datagen::DataRecord*> nodes;
  for (const auto& r : ds.records)
    if (r.feasible)
      nodes[detail::lattice_index(r.x, h, "estimate_l0")] = &r;
  if (nodes.size() < 2)
    throw SpecError("Lipschitz estimation needs at least two feasible nodes");
  double slope = 0;
  for (const auto& [idx, rec] : nodes) {
    for (std::size_t j = 0; j < idx.size(); ++j) {
      Index nb = idx;
      ++nb[j];
      auto it = nodes.find(nb);
      if (it == nodes.end()) continue;
      slope = std::max(slope,
                       (it->second->u0 - rec->u0).cwiseAbs().maxCoeff() / h);
    }
  }
  if (slope == 0)
    throw SpecError("Lipschitz estimation found no adjacent feasible pair");
  return 1.25 * slope;
}

/// Builds the model from a grid dataset: feasible nodes keep their actions
/// verbatim, a guard ring wide enough for every radius-r0 ball around the
/// mask is filled with the Lipschitz extension.
inline Model learn(const datagen::Dataset& ds, double eps, double L0 = 0,
                   int workers = 1) {
  if (!ds.meta.contains("grid_h"))
    throw SpecError("interpolation needs a uniform grid dataset");
  if (ds.feasible_count() == 0)
    throw SpecError("interpolation undefined: dataset has no feasible record");
  Model md;
  md.d = ds.d;
  md.m = ds.m;
  md.h = ds.meta["grid_h"].get<double>();
  md.eps = eps;
  md.origin = VectorXd::Zero(ds.d);
  if (md.d > 5) throw SpecError("generator is scoped to 1 <= d <= 5");
  md.L0 = L0 > 0 ? L0 : estimate_l0(ds);

  double sup_norm = 0;
  for (const auto& r : ds.records)
    if (r.feasible) sup_norm = std::max(sup_norm, r.u0.cwiseAbs().maxCoeff());
  Params p = select_params(eps, md.L0, sup_norm, md.d);
  md.D = p.D;
  md.r0 = p.r0;
  md.budget_saturation = p.saturation;
  md.budget_truncation = p.truncation;
  md.budget_interp = p.C_gamma * md.L0 * md.h * std::sqrt(md.D);

  for (const auto& r : ds.records)
    if (r.feasible) {
      Index idx = detail::lattice_index(r.x, md.h, "learn");
      md.mask.insert(idx);
      md.grid_values.emplace(std::move(idx), r.u0);
    }

  // ring: everything a radius-r0 ball around any admissible state can touch;
  // the extra ceil(sqrt(d)) + 1 cells absorb off-node query centers
  const int ring = md.r0 + int(std::ceil(std::sqrt(double(md.d)))) + 1;
  std::set<Index> missing;
  std::vector<int> off(std::size_t(md.d), -ring);
  for (const auto& idx : md.mask) {
    std::fill(off.begin(), off.end(), -ring);
    for (;;) {
      long r2 = 0;
      for (int j = 0; j < md.d; ++j) r2 += long(off[std::size_t(j)]) * off[std::size_t(j)];
      if (r2 <= long(ring) * ring) {
        Index nb(std::size_t(md.d));
        for (int j = 0; j < md.d; ++j) nb[std::size_t(j)] = idx[std::size_t(j)] + off[std::size_t(j)];
        if (!md.grid_values.count(nb)) missing.insert(std::move(nb));
      }
      int j = md.d - 1;
      while (j >= 0 && off[std::size_t(j)] == ring) {
        off[std::size_t(j)] = -ring;
        --j;
      }
      if (j < 0) break;
      ++off[std::size_t(j)];
    }
  }

  std::vector<Index> ring_nodes(missing.begin(), missing.end());
  std::vector<VectorXd> ring_values(ring_nodes.size());
  parallel_for(ring_nodes.size(), workers, [&](std::size_t i) {
    VectorXd x(md.d);
    for (int j = 0; j < md.d; ++j) x[j] = ring_nodes[i][std::size_t(j)] * md.h;
    ring_values[i] = extend(ds, md.L0, x);
  });
  for (std::size_t i = 0; i < ring_nodes.size(); ++i)
    md.grid_values.emplace(std::move(ring_nodes[i]), std::move(ring_values[i]));
  return md;
}

/// Truncated lattice-sum evaluation; the visit count is O((2 r0 + 1)^d).
inline VectorXd eval(const Model& md, const VectorXd& x) {
  if (int(x.size()) != md.d) throw SpecError("eval: dimension mismatch");
  const double scale = std::pow(md.D, -0.5 * md.d);
  VectorXd acc = VectorXd::Zero(md.m);
  std::vector<double> u(std::size_t(md.d));
  std::vector<int> lo(std::size_t(md.d)), hi(std::size_t(md.d)), c(std::size_t(md.d));
  for (int j = 0; j < md.d; ++j) {
    u[std::size_t(j)] = x[j] / md.h;
    lo[std::size_t(j)] = int(std::ceil(u[std::size_t(j)] - md.r0 - 1e-9));
    hi[std::size_t(j)] = int(std::floor(u[std::size_t(j)] + md.r0 + 1e-9));
    c[std::size_t(j)] = lo[std::size_t(j)];
  }
  const double r2cap = double(md.r0) * md.r0 * (1.0 + 1e-12) + 1e-12;
  Index idx(std::size_t(md.d));
  for (;;) {
    double r2 = 0;
    for (int j = 0; j < md.d; ++j) {
      double t = u[std::size_t(j)] - c[std::size_t(j)];
      r2 += t * t;
    }
    if (r2 <= r2cap) {
      for (int j = 0; j < md.d; ++j) idx[std::size_t(j)] = c[std::size_t(j)];
      auto it = md.grid_values.find(idx);
      if (it == md.grid_values.end())
        throw SpecError("coverage miss at lattice index " + detail::index_name(idx));
      acc.noalias() += (scale * psi_lg6_r2(r2 / md.D, md.d)) * it->second;
    }
    int j = md.d - 1;
    while (j >= 0 && c[std::size_t(j)] == hi[std::size_t(j)]) {
      c[std::size_t(j)] = lo[std::size_t(j)];
      --j;
    }
    if (j < 0) break;
    ++c[std::size_t(j)];
  }
  return acc;
}

struct VerifyResult {
  double max_err = 0;
  VectorXd argmax;
  bool pass = true;
};

/// Exact maximum infinity-norm deviation from the oracle over the probes.
template <class Oracle>
VerifyResult verify_uniform(const Model& md, const std::vector<VectorXd>& probes,
                            Oracle&& oracle) {
  if (probes.empty()) throw SpecError("verify_uniform needs at least one probe");
  VerifyResult out;
  out.argmax = probes.front();
  for (const auto& x : probes) {
    const VectorXd diff = eval(md, x) - oracle(x);
    const double e = diff.lpNorm<Eigen::Infinity>();
    if (e > out.max_err) {
      out.max_err = e;
      out.argmax = x;
    }
  }
  out.pass = out.max_err <= md.eps;
  return out;
}

// ---------------------------------------------------------------------------
// Serialization.
// ---------------------------------------------------------------------------

inline void save_model(const Model& md, const std::string& path) {
  json rows = json::array();
  for (const auto& [idx, u] : md.grid_values) {
    json row = json::array();
    for (int v : idx) row.push_back(v);
    for (int j = 0; j < md.m; ++j) row.push_back(u[j]);
    rows.push_back(std::move(row));
  }
  json mrows = json::array();
  for (const auto& idx : md.mask) {
    json row = json::array();
    for (int v : idx) row.push_back(v);
    mrows.push_back(std::move(row));
  }
  json origin = json::array();
  for (int j = 0; j < md.d; ++j) origin.push_back(md.origin[j]);
  json j{{"h", md.h},
         {"D", md.D},
         {"r0", md.r0},
         {"L0", md.L0},
         {"M", md.M},
         {"eps", md.eps},
         {"lattice_origin", origin},
         {"d", md.d},
         {"m", md.m},
         {"values", std::move(rows)},
         {"mask", std::move(mrows)},
         {"budgets",
          {{"saturation", md.budget_saturation},
           {"truncation", md.budget_truncation},
           {"interp", md.budget_interp}}},
         {"meta", md.meta.is_null() ? json::object() : md.meta}};
  write_text_file(path, j.dump() + "\n");
}

inline Model load_model(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw SpecError(path + ": " + e.what());
  }
  for (const char* k : {"h", "D", "r0", "L0", "M", "eps", "lattice_origin", "d",
                        "m", "values", "mask"})
    if (!j.contains(k))
      throw SpecError(path + ": missing model field: " + std::string(k));
  Model md;
  md.d = j["d"].get<int>();
  md.m = j["m"].get<int>();
  md.M = j["M"].get<int>();
  md.h = j["h"].get<double>();
  md.D = j["D"].get<double>();
  md.r0 = j["r0"].get<int>();
  md.L0 = j["L0"].get<double>();
  md.eps = j["eps"].get<double>();
  if (md.d < 1 || md.m < 1 || !(md.h > 0) || !(md.D > 0) || md.r0 < 1)
    throw SpecError(path + ": malformed model header");
  md.origin = VectorXd::Zero(md.d);
  for (int k = 0; k < md.d; ++k)
    md.origin[k] = j["lattice_origin"].at(std::size_t(k)).get<double>();
  if (j.contains("budgets")) {
    md.budget_saturation = j["budgets"].value("saturation", 0.0);
    md.budget_truncation = j["budgets"].value("truncation", 0.0);
    md.budget_interp = j["budgets"].value("interp", 0.0);
  }
  md.meta = j.value("meta", json::object());
  for (const auto& row : j["values"]) {
    if (int(row.size()) != md.d + md.m)
      throw SpecError(path + ": values row has the wrong arity");
    Index idx(std::size_t(md.d));
    for (int k = 0; k < md.d; ++k) idx[std::size_t(k)] = row.at(std::size_t(k)).get<int>();
    VectorXd u(md.m);
    for (int k = 0; k < md.m; ++k) u[k] = row.at(std::size_t(md.d + k)).get<double>();
    if (!md.grid_values.emplace(std::move(idx), std::move(u)).second)
      throw SpecError(path + ": duplicate lattice index in values");
  }
  for (const auto& row : j["mask"]) {
    if (int(row.size()) != md.d)
      throw SpecError(path + ": mask row has the wrong arity");
    Index idx(std::size_t(md.d));
    for (int k = 0; k < md.d; ++k) idx[std::size_t(k)] = row.at(std::size_t(k)).get<int>();
    if (!md.grid_values.count(idx))
      throw SpecError(path + ": mask index missing from values");
    md.mask.insert(std::move(idx));
  }
  return md;
}

}  // namespace quifs
}  // namespace robosynth
