#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "robosynth/datagen.hpp"

namespace robosynth {
namespace nnfs {

// ---------------------------------------------------------------------------
// Certified sizing. The approximation bound for an L0-Lipschitz target is
//   err(W, L) = 131 sqrt(d) L0 (Wt^2 Lt^2 log3(Wt + 2))^(-1/d),
// on the normalized sizes Wt = W / (3^(d+5) d) and Lt = (L - 18 - 2d) / 22,
// valid above the floors W >= 3^(d+4) d and L >= 29 + 2d. Fixing one side
// and solving err <= eps for the other gives the closed forms below. The
// fixed-depth solution grows like 3^(eps^(-d/3)); everything is certified in
// log space so the astronomically wide nets still get exact arithmetic.
// ---------------------------------------------------------------------------

struct NNSizing {
  int d = 0;
  double L0 = 0, eps = 0;
  bool fixed_width = true;  // which of W, L was preassigned
  double W = 0, L = 0;      // resulting sizes (integer-valued, maybe inf)
  double W_tilde = 0, L_tilde = 0;
  double W_tilde_log3 = 0;  // log3(W_tilde + 1), finite even when W overflows
  double ln_bound = 0;      // ln err at the returned sizes

  bool certified() const { return ln_bound <= std::log(eps) + 1e-9; }
};

namespace detail {

inline double width_floor(int d) { return std::pow(3.0, d + 4) * d; }
inline double depth_floor(int d) { return 29.0 + 2.0 * d; }
inline double width_scale(int d) { return std::pow(3.0, d + 5) * d; }

/// ln of the bound at normalized sizes given by ln(Wt), ln(Lt) and
/// log3(Wt + 2).
inline double ln_bound_at(int d, double L0, double ln_Wt, double ln_Lt,
                          double log3_Wt_p2) {
  return std::log(131.0 * std::sqrt(double(d)) * L0) -
         (2.0 * ln_Wt + 2.0 * ln_Lt + std::log(log3_Wt_p2)) / d;
}

inline void check_pos(double eps, double L0) {
  if (!(eps > 0) || !(L0 > 0)) throw SpecError("eps and L0 must be positive");
}

}  // namespace detail

/// Depth needed at a preassigned width. The width may sit below the theorem
/// floor (the reference experiments do exactly that); the certificate then
/// reads as the bound evaluated at the returned sizes.
inline NNSizing size_for_width(int d, double L0, double eps, double W0) {
  detail::check_pos(eps, L0);
  if (d < 1 || W0 < 1) throw SpecError("dimension and width must be at least 1");
  NNSizing s;
  s.d = d;
  s.L0 = L0;
  s.eps = eps;
  s.fixed_width = true;
  s.W = W0;
  s.W_tilde = W0 / detail::width_scale(d);
  s.W_tilde_log3 = std::log(s.W_tilde + 1.0) / std::log(3.0);
  const double c = 131.0 * std::sqrt(double(d)) * L0;
  const double log3_Wt_p2 = std::log(s.W_tilde + 2.0) / std::log(3.0);
  s.L_tilde = std::sqrt(std::pow(c / eps, double(d)) /
                        (s.W_tilde * s.W_tilde * log3_Wt_p2));
  s.L = std::max(std::ceil(22.0 * s.L_tilde + 18.0 + 2.0 * d),
                 detail::depth_floor(d));
  const double Lt_eff = (s.L - 18.0 - 2.0 * d) / 22.0;
  s.ln_bound = detail::ln_bound_at(d, L0, std::log(s.W_tilde), std::log(Lt_eff),
                                   log3_Wt_p2);
  return s;
}

/// Width needed at a preassigned depth, which must respect the theorem floor.
inline NNSizing size_for_depth(int d, double L0, double eps, double Ld0) {
  detail::check_pos(eps, L0);
  if (d < 1) throw SpecError("dimension must be at least 1");
  if (Ld0 < detail::depth_floor(d))
    throw SpecError("depth below the certified floor 29 + 2d");
  NNSizing s;
  s.d = d;
  s.L0 = L0;
  s.eps = eps;
  s.fixed_width = false;
  s.L = Ld0;
  s.L_tilde = (Ld0 - 18.0 - 2.0 * d) / 22.0;
  const double c = 131.0 * std::sqrt(double(d)) * L0;
  // t = log3(Wt + 1) from Wt = 3^t - 1
  const double ln3 = std::log(3.0);
  const double t = std::exp((d * std::log(c / eps) - 2.0 * std::log(s.L_tilde)) / 3.0);
  s.W_tilde_log3 = t;
  s.W_tilde = std::expm1(t * ln3);  // inf for huge t; the log form stays exact
  s.W = std::max(std::ceil(detail::width_scale(d) * s.W_tilde),
                 detail::width_floor(d));
  // floor clamp can only raise Wt above 1/3
  const double t_eff = std::max(t, std::log1p(1.0 / 3.0) / ln3);
  const double ln_Wt = t_eff * ln3 + std::log1p(-std::exp(-t_eff * ln3));
  const double log3_Wt_p2 = t_eff + std::log1p(std::exp(-t_eff * ln3)) / ln3;
  s.ln_bound = detail::ln_bound_at(d, L0, ln_Wt, std::log(s.L_tilde), log3_Wt_p2);
  return s;
}

// ---------------------------------------------------------------------------
// ReLU multilayer perceptron: affine layers with ReLU on every hidden layer
// and identity output.
// ---------------------------------------------------------------------------

struct ReluNet {
  std::vector<int> dims;        // [d, W, ..., W, m]
  std::vector<MatrixXd> weight; // weight[l]: dims[l+1] x dims[l]
  std::vector<VectorXd> bias;
  json meta;

  int input_dim() const { return dims.empty() ? 0 : dims.front(); }
  int output_dim() const { return dims.empty() ? 0 : dims.back(); }
  int layers() const { return int(weight.size()); }

  void check_shapes() const {
    if (dims.size() < 2 || weight.size() != dims.size() - 1 ||
        bias.size() != weight.size())
      throw SpecError("network shape bookkeeping is inconsistent");
    for (std::size_t l = 0; l < weight.size(); ++l)
      if (weight[l].rows() != dims[l + 1] || weight[l].cols() != dims[l] ||
          bias[l].size() != dims[l + 1])
        throw SpecError("network layer " + std::to_string(l) +
                        " has the wrong shape");
  }
};

/// [d, W repeated L times, m]; zero weights until initialized.
inline ReluNet make_net(int d, int m, int W, int L) {
  if (d < 1 || m < 1 || W < 1 || L < 0) throw SpecError("bad network shape");
  ReluNet net;
  net.dims.push_back(d);
  for (int l = 0; l < L; ++l) net.dims.push_back(W);
  net.dims.push_back(m);
  for (std::size_t l = 0; l + 1 < net.dims.size(); ++l) {
    net.weight.emplace_back(MatrixXd::Zero(net.dims[l + 1], net.dims[l]));
    net.bias.emplace_back(VectorXd::Zero(net.dims[l + 1]));
  }
  return net;
}

/// Deterministic He-style fan-in uniform initialization.
inline void init_net(ReluNet& net, std::uint64_t seed) {
  std::uint64_t ctr = seed;
  auto uni = [&] { return 2.0 * (double(splitmix64(ctr++) >> 11) * 0x1.0p-53) - 1.0; };
  for (std::size_t l = 0; l < net.weight.size(); ++l) {
    const double limit = std::sqrt(6.0 / double(net.dims[l]));
    for (Eigen::Index i = 0; i < net.weight[l].rows(); ++i)
      for (Eigen::Index j = 0; j < net.weight[l].cols(); ++j)
        net.weight[l](i, j) = limit * uni();
    net.bias[l].setZero();
  }
}

inline MatrixXd forward_batch(const ReluNet& net, const MatrixXd& X) {
  MatrixXd a = X;
  for (std::size_t l = 0; l < net.weight.size(); ++l) {
    a = (net.weight[l] * a).colwise() + net.bias[l];
    if (l + 1 < net.weight.size()) a = a.cwiseMax(0.0);
  }
  return a;
}

inline VectorXd nn_eval(const ReluNet& net, const VectorXd& x) {
  if (int(x.size()) != net.input_dim())
    throw SpecError("nn_eval: dimension mismatch");
  return forward_batch(net, x);
}

// ---------------------------------------------------------------------------
// Mean-squared-error loss and its exact gradient via backpropagation. The
// loss averages over both batch columns and output coordinates.
// ---------------------------------------------------------------------------

struct Gradients {
  std::vector<MatrixXd> dW;
  std::vector<VectorXd> db;
};

inline double loss_and_grad(const ReluNet& net, const MatrixXd& X,
                            const MatrixXd& Y, Gradients* grads) {
  const int nl = net.layers();
  std::vector<MatrixXd> act(std::size_t(nl) + 1);
  act[0] = X;
  for (int l = 0; l < nl; ++l) {
    act[std::size_t(l) + 1] =
        (net.weight[std::size_t(l)] * act[std::size_t(l)]).colwise() +
        net.bias[std::size_t(l)];
    if (l + 1 < nl)
      act[std::size_t(l) + 1] = act[std::size_t(l) + 1].cwiseMax(0.0);
  }
  const MatrixXd diff = act[std::size_t(nl)] - Y;
  const double scale = 1.0 / double(diff.size());
  const double loss = diff.squaredNorm() * scale;
  if (!grads) return loss;

  grads->dW.assign(std::size_t(nl), MatrixXd());
  grads->db.assign(std::size_t(nl), VectorXd());
  MatrixXd delta = 2.0 * scale * diff;
  for (int l = nl - 1; l >= 0; --l) {
    grads->dW[std::size_t(l)].noalias() = delta * act[std::size_t(l)].transpose();
    grads->db[std::size_t(l)] = delta.rowwise().sum();
    if (l > 0) {
      MatrixXd back = net.weight[std::size_t(l)].transpose() * delta;
      // hidden activations are ReLU outputs: positive iff the unit fired
      delta = back.cwiseProduct(
          (act[std::size_t(l)].array() > 0.0).cast<double>().matrix());
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Plain constant-rate SGD over shuffled mini-batches.
// ---------------------------------------------------------------------------

struct Hyper {
  double lr = 5e-4;
  int epochs = 100;
  int batch = 256;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0) || epochs < 1 || batch < 1)
      throw SpecError("training hyperparameters must be positive");
  }
};

struct TrainResult {
  ReluNet net;
  std::vector<double> loss_history;  // epoch-mean training loss
};

inline TrainResult train(const datagen::Dataset& ds, int W, int L,
                         const Hyper& hyper) {
  hyper.validate();
  std::vector<const datagen::DataRecord*> feas;
  for (const auto& r : ds.records)
    if (r.feasible) feas.push_back(&r);
  if (feas.empty()) throw SpecError("training needs at least one feasible record");

  const int n = int(feas.size());
  MatrixXd X(ds.d, n), Y(ds.m, n);
  for (int i = 0; i < n; ++i) {
    X.col(i) = feas[std::size_t(i)]->x;
    Y.col(i) = feas[std::size_t(i)]->u0;
  }

  TrainResult out;
  out.net = make_net(ds.d, ds.m, W, L);
  init_net(out.net, hyper.seed);
  std::uint64_t ctr = splitmix64(hyper.seed + 0x51edu);

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[std::size_t(i)] = i;
  Gradients g;
  const int bs = std::min(hyper.batch, n);
  MatrixXd bx(ds.d, bs), by(ds.m, bs);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) {
      int j = int(splitmix64(ctr++) % std::uint64_t(i + 1));
      std::swap(order[std::size_t(i)], order[std::size_t(j)]);
    }
    double acc = 0;
    int batches = 0;
    for (int at = 0; at + bs <= n; at += bs) {
      for (int k = 0; k < bs; ++k) {
        bx.col(k) = X.col(order[std::size_t(at + k)]);
        by.col(k) = Y.col(order[std::size_t(at + k)]);
      }
      acc += loss_and_grad(out.net, bx, by, &g);
      ++batches;
      for (int l = 0; l < out.net.layers(); ++l) {
        out.net.weight[std::size_t(l)].noalias() -= hyper.lr * g.dW[std::size_t(l)];
        out.net.bias[std::size_t(l)].noalias() -= hyper.lr * g.db[std::size_t(l)];
      }
    }
    const double epoch_loss = acc / std::max(batches, 1);
    out.loss_history.push_back(epoch_loss);
    if (!std::isfinite(epoch_loss) || epoch_loss > 1e6)
      throw SpecError("training diverged at epoch " + std::to_string(epoch));
  }
  out.net.meta = json{{"lr", hyper.lr},
                      {"epochs", hyper.epochs},
                      {"batch", bs},
                      {"seed", hyper.seed},
                      {"records", n},
                      {"final_loss", out.loss_history.back()}};
  return out;
}

struct VerifyResult {
  double max_err = 0;
  VectorXd argmax;
  bool pass = true;
};

/// Exact maximum infinity-norm deviation from the oracle over the probes.
template <class Oracle>
VerifyResult verify_uniform_nn(const ReluNet& net,
                               const std::vector<VectorXd>& probes,
                               Oracle&& oracle, double eps) {
  if (probes.empty()) throw SpecError("verification needs at least one probe");
  VerifyResult out;
  out.argmax = probes.front();
  for (const auto& x : probes) {
    const VectorXd diff = nn_eval(net, x) - oracle(x);
    const double e = diff.lpNorm<Eigen::Infinity>();
    if (e > out.max_err) {
      out.max_err = e;
      out.argmax = x;
    }
  }
  out.pass = out.max_err <= eps;
  return out;
}

// ---------------------------------------------------------------------------
// Serialization.
// ---------------------------------------------------------------------------

inline void save_net(const ReluNet& net, const std::string& path) {
  net.check_shapes();
  json jw = json::array(), jb = json::array();
  for (std::size_t l = 0; l < net.weight.size(); ++l) {
    json w = json::array();
    for (Eigen::Index i = 0; i < net.weight[l].rows(); ++i)
      for (Eigen::Index j = 0; j < net.weight[l].cols(); ++j)
        w.push_back(net.weight[l](i, j));
    jw.push_back(std::move(w));
    json b = json::array();
    for (Eigen::Index i = 0; i < net.bias[l].size(); ++i)
      b.push_back(net.bias[l][i]);
    jb.push_back(std::move(b));
  }
  json j{{"layer_dims", net.dims},
         {"weights", std::move(jw)},
         {"biases", std::move(jb)},
         {"training_meta", net.meta.is_null() ? json::object() : net.meta}};
  write_text_file(path, j.dump() + "\n");
}

inline ReluNet load_net(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw SpecError(path + ": " + e.what());
  }
  for (const char* k : {"layer_dims", "weights", "biases"})
    if (!j.contains(k))
      throw SpecError(path + ": missing model field: " + std::string(k));
  ReluNet net;
  net.dims = j["layer_dims"].get<std::vector<int>>();
  if (net.dims.size() < 2) throw SpecError(path + ": needs at least two layers");
  const auto& jw = j["weights"];
  const auto& jb = j["biases"];
  if (jw.size() != net.dims.size() - 1 || jb.size() != jw.size())
    throw SpecError(path + ": layer count mismatch");
  for (std::size_t l = 0; l + 1 < net.dims.size(); ++l) {
    const int rows = net.dims[l + 1], cols = net.dims[l];
    if (int(jw[l].size()) != rows * cols || int(jb[l].size()) != rows)
      throw SpecError(path + ": layer " + std::to_string(l) +
                      " has the wrong shape");
    MatrixXd w(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int c = 0; c < cols; ++c)
        w(i, c) = jw[l].at(std::size_t(i * cols + c)).get<double>();
    VectorXd b(rows);
    for (int i = 0; i < rows; ++i) b[i] = jb[l].at(std::size_t(i)).get<double>();
    net.weight.push_back(std::move(w));
    net.bias.push_back(std::move(b));
  }
  if (j.contains("training_meta")) net.meta = j["training_meta"];
  net.check_shapes();
  return net;
}

}  // namespace nnfs
}  // namespace robosynth
