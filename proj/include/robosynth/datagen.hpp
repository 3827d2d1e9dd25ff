#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <unordered_set>
#include <vector>

#include "robosynth/msa.hpp"

namespace robosynth {
namespace datagen {

/// One solved initial state. Infeasible states keep NaN in u0 and value.
/// iters is the number of annealing iterations completed: the full budget on
/// success, the iteration at which infeasibility was certified otherwise,
/// and -1 when the solver stalled on the initial tuple.
struct DataRecord {
  VectorXd x;
  VectorXd u0;
  double value = std::numeric_limits<double>::quiet_NaN();
  bool feasible = false;
  std::uint64_t seed = 0;
  int iters = 0;
};

struct Dataset {
  int d = 0, m = 0;
  std::vector<DataRecord> records;
  json meta;

  std::size_t size() const { return records.size(); }
  std::size_t feasible_count() const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.feasible ? 1 : 0;
    return n;
  }
};

namespace detail {

inline std::string state_key(const VectorXd& x) {
  std::string key(sizeof(double) * x.size(), '\0');
  std::memcpy(key.data(), x.data(), key.size());
  return key;
}

inline void check_unique(const std::vector<DataRecord>& records) {
  std::unordered_set<std::string> seen;
  seen.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    if (!seen.insert(state_key(records[i].x)).second)
      throw SpecError("dataset holds a duplicate state at record " +
                      std::to_string(i));
}

}  // namespace detail

/// All lattice points m*h (m integer) inside the polytope, ordered
/// lexicographically in m with the first coordinate most significant. The
/// integer ranges come from support queries on the bounding box, padded by
/// a solver-tolerance margin; the membership filter makes the cut exact.
inline std::vector<VectorXd> grid_states(const Polytope& X, double h) {
  if (!(h > 0)) throw SpecError("grid step must be positive");
  const int d = X.dim();
  std::vector<long> lo(d), hi(d);
  for (int j = 0; j < d; ++j) {
    VectorXd e = VectorXd::Unit(d, j);
    double up = support(X, e) / h;
    double dn = -support(X, VectorXd(-e)) / h;
    hi[j] = long(std::floor(up + 1e-6 * std::max(1.0, std::abs(up))));
    lo[j] = long(std::ceil(dn - 1e-6 * std::max(1.0, std::abs(dn))));
    if (lo[j] > hi[j]) return {};
  }
  std::vector<VectorXd> out;
  std::vector<long> c(lo);
  VectorXd x(d);
  for (;;) {
    for (int j = 0; j < d; ++j) x[j] = double(c[j]) * h;
    if (X.contains(x)) out.push_back(x);
    int j = d - 1;
    while (j >= 0 && c[j] == hi[j]) {
      c[j] = lo[j];
      --j;
    }
    if (j < 0) break;
    ++c[std::size_t(j)];
  }
  return out;
}

/// n points drawn uniformly from the polytope by rejection from its bounding
/// box; fully determined by the seed.
inline std::vector<VectorXd> sample_states(const Polytope& X, std::size_t n,
                                           std::uint64_t seed) {
  const int d = X.dim();
  VectorXd lo(d), hi(d);
  for (int j = 0; j < d; ++j) {
    VectorXd e = VectorXd::Unit(d, j);
    hi[j] = support(X, e);
    lo[j] = -support(X, VectorXd(-e));
  }
  std::vector<VectorXd> out;
  out.reserve(n);
  std::uint64_t ctr = seed;
  VectorXd x(d);
  std::size_t attempts = 0, cap = 10000 * std::max<std::size_t>(n, 1);
  while (out.size() < n) {
    for (int j = 0; j < d; ++j) {
      double u = double(splitmix64(ctr++) >> 11) * 0x1.0p-53;
      x[j] = lo[j] + u * (hi[j] - lo[j]);
    }
    if (X.contains(x)) out.push_back(x);
    if (++attempts > cap)
      throw SpecError("rejection sampling failed; polytope volume too small");
  }
  return out;
}

/// Solves the sampled states independently. Each record's chain seed is
/// cfg.seed xor splitmix64(state index), so the dataset does not depend on
/// how states are scheduled across workers.
inline Dataset generate(const ProblemSpec& spec, const std::vector<VectorXd>& states,
                        const msa::SAConfig& cfg, int workers) {
  cfg.validate();
  const sip::Transcription tr = sip::make_transcription(spec);
  Dataset ds;
  ds.d = spec.d();
  ds.m = spec.m();
  ds.records.resize(states.size());
  parallel_for(states.size(), workers, [&](std::size_t i) {
    DataRecord& r = ds.records[i];
    r.x = states[i];
    msa::SAConfig c = cfg;
    c.seed = cfg.seed ^ splitmix64(std::uint64_t(i));
    r.seed = c.seed;
    r.u0 = VectorXd::Constant(ds.m, std::numeric_limits<double>::quiet_NaN());
    if (!spec.X.contains(r.x)) return;
    try {
      auto res = msa::exact_solve(tr, r.x, c);
      r.feasible = res.feasible;
      if (res.feasible) {
        r.value = res.value;
        r.u0 = res.policy.eta.head(ds.m);
        r.iters = cfg.iters;
      } else {
        r.iters = std::max<int>(0, int(res.history.size()) - 1);
      }
    } catch (const msa::SolverStall&) {
      r.iters = -1;
    }
  });
  detail::check_unique(ds.records);
  ds.meta = json{{"spec_hash", spec_hash(spec)},
                 {"records", states.size()},
                 {"sa",
                  {{"T0", cfg.T0},
                   {"decay", cfg.decay},
                   {"iters", cfg.iters},
                   {"step_scale", cfg.step_scale},
                   {"seed", cfg.seed}}}};
  return ds;
}

inline Dataset generate_grid(const ProblemSpec& spec, double h,
                             const msa::SAConfig& cfg, int workers) {
  Dataset ds = generate(spec, grid_states(spec.X, h), cfg, workers);
  ds.meta["grid_h"] = h;
  return ds;
}

namespace detail {

inline std::string csv_header(int d, int m) {
  std::string s;
  for (int j = 1; j <= d; ++j) s += "x_" + std::to_string(j) + ",";
  for (int j = 1; j <= m; ++j) s += "u_" + std::to_string(j) + ",";
  return s + "value,feasible,seed,iters";
}

inline std::string field(double v) {
  return std::isnan(v) ? std::string() : format_double(v);
}

[[noreturn]] inline void bad_record(const std::string& path, std::size_t rec,
                                    const std::string& why) {
  throw SpecError(path + ":" + std::to_string(rec + 2) + ": record " +
                  std::to_string(rec) + ": " + why);
}

inline double parse_field(const std::string& path, std::size_t rec,
                          const std::string& name, const std::string& text) {
  if (text.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size())
    bad_record(path, rec, "field " + name + ": not a number: '" + text + "'");
  return v;
}

}  // namespace detail

inline std::string meta_path(const std::string& path) {
  return path + ".meta.json";
}

/// CSV with one row per record plus a JSON sidecar holding the metadata.
/// NaN fields are written empty; doubles round-trip exactly.
inline void save(const Dataset& ds, const std::string& path) {
  detail::check_unique(ds.records);
  std::string body = detail::csv_header(ds.d, ds.m) + "\n";
  for (const auto& r : ds.records) {
    for (int j = 0; j < ds.d; ++j) body += format_double(r.x[j]) + ",";
    for (int j = 0; j < ds.m; ++j) body += detail::field(r.u0[j]) + ",";
    body += detail::field(r.value) + ",";
    body += r.feasible ? "1," : "0,";
    body += std::to_string(r.seed) + ",";
    body += std::to_string(r.iters) + "\n";
  }
  write_text_file(path, body);
  write_text_file(meta_path(path), ds.meta.dump(2) + "\n");
}

inline Dataset load(const std::string& path) {
  const std::string body = read_text_file(path);
  std::vector<std::string> lines;
  std::string cur;
  for (char ch : body) {
    if (ch == '\n') {
      lines.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) lines.push_back(cur);
  if (lines.empty()) throw SpecError(path + ":1: missing header");

  auto cols = split_csv_line(lines[0]);
  int d = 0, m = 0;
  std::size_t p = 0;
  while (p < cols.size() && cols[p] == "x_" + std::to_string(p + 1)) ++p, ++d;
  while (p < cols.size() && cols[p] == "u_" + std::to_string(p - d + 1)) ++p, ++m;
  if (d == 0 || m == 0 || lines[0] != detail::csv_header(d, m))
    throw SpecError(path + ":1: malformed header: '" + lines[0] + "'");
  const std::size_t ncol = std::size_t(d + m) + 4;

  Dataset ds;
  ds.d = d;
  ds.m = m;
  ds.records.reserve(lines.size() - 1);
  for (std::size_t rec = 0; rec + 1 < lines.size(); ++rec) {
    if (lines[rec + 1].empty()) continue;
    auto f = split_csv_line(lines[rec + 1]);
    if (f.size() != ncol)
      detail::bad_record(path, rec, "expected " + std::to_string(ncol) +
                                        " fields, got " + std::to_string(f.size()));
    DataRecord r;
    r.x.resize(d);
    r.u0.resize(m);
    for (int j = 0; j < d; ++j) {
      r.x[j] = detail::parse_field(path, rec, "x_" + std::to_string(j + 1), f[j]);
      if (std::isnan(r.x[j])) detail::bad_record(path, rec, "state entry is empty");
    }
    for (int j = 0; j < m; ++j)
      r.u0[j] = detail::parse_field(path, rec, "u_" + std::to_string(j + 1), f[d + j]);
    r.value = detail::parse_field(path, rec, "value", f[d + m]);
    const std::string& fe = f[d + m + 1];
    if (fe != "0" && fe != "1")
      detail::bad_record(path, rec, "feasible flag must be 0 or 1, got '" + fe + "'");
    r.feasible = fe == "1";
    try {
      r.seed = std::stoull(f[d + m + 2]);
      r.iters = std::stoi(f[d + m + 3]);
    } catch (const std::exception&) {
      detail::bad_record(path, rec, "malformed seed/iters");
    }
    int nan_u = 0;
    for (int j = 0; j < m; ++j) nan_u += std::isnan(r.u0[j]) ? 1 : 0;
    const bool ok = r.feasible ? (nan_u == 0 && !std::isnan(r.value))
                               : (nan_u == m && std::isnan(r.value));
    if (!ok)
      detail::bad_record(path, rec, "feasible flag inconsistent with NaN tagging");
    ds.records.push_back(std::move(r));
  }
  detail::check_unique(ds.records);
  if (std::filesystem::exists(meta_path(path))) {
    try {
      ds.meta = json::parse(read_text_file(meta_path(path)));
    } catch (const json::parse_error& e) {
      throw SpecError(meta_path(path) + ": " + e.what());
    }
  }
  return ds;
}

}  // namespace datagen
}  // namespace robosynth
