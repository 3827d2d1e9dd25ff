#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "robosynth/cloop.hpp"

using namespace robosynth;
namespace fs = std::filesystem;

namespace {

VectorXd parse_state_arg(const std::string& s, const char* what) {
  std::vector<double> vals;
  std::string cur;
  auto flush = [&] {
    if (cur.empty())
      throw SpecError(std::string("usage: ") + what +
                      " must be a comma-separated list of numbers");
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(cur, &used);
    } catch (const std::exception&) {
      throw SpecError(std::string("usage: ") + what + ": '" + cur +
                      "' is not a number");
    }
    if (used != cur.size())
      throw SpecError(std::string("usage: ") + what + ": '" + cur +
                      "' is not a number");
    vals.push_back(v);
    cur.clear();
  };
  for (char c : s) {
    if (c == ',')
      flush();
    else if (!std::isspace(static_cast<unsigned char>(c)))
      cur += c;
  }
  flush();
  VectorXd x(int(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) x[int(i)] = vals[i];
  return x;
}

json load_json_file(const std::string& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw SpecError(path + ": " + e.what());
  }
}

void require_artifact(const std::string& path, const char* role) {
  if (!fs::exists(path))
    throw SpecError(std::string("missing required ") + role + ": " + path);
}

std::string vec_to_string(const VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    s += (i ? " " : "") + format_double(v[i]);
  return s;
}

/// Shared run context: the problem, the optional RunConfig file and the
/// output directory. Flag values win over config values over defaults.
struct Ctx {
  std::string spec_path;
  std::string config_path;
  std::string out_dir;
  std::optional<int> workers_flag;
  std::optional<std::uint64_t> seed_flag;
  json cfg = json::object();

  ProblemSpec spec;
  std::string hash;

  void load(bool validate_spec = true) {
    if (!config_path.empty()) {
      require_artifact(config_path, "config file");
      cfg = load_json_file(config_path);
    }
    if (spec_path.empty() && cfg.contains("spec_path"))
      spec_path = cfg["spec_path"].get<std::string>();
    if (spec_path.empty())
      throw SpecError("usage: a problem file is required (--spec or spec_path)");
    require_artifact(spec_path, "problem file");
    spec = load_spec(spec_path);
    if (validate_spec) validate(spec);
    hash = spec_hash(spec);
    if (out_dir.empty())
      out_dir = cfg.value("output_dir", std::string("out"));
  }

  json section(const char* name) const {
    return cfg.contains(name) && cfg[name].is_object() ? cfg[name]
                                                       : json::object();
  }

  int workers() const {
    if (workers_flag && *workers_flag > 0) return *workers_flag;
    if (cfg.contains("workers") && cfg["workers"].get<int>() > 0)
      return cfg["workers"].get<int>();
    return env_workers();
  }

  std::uint64_t seed() const {
    if (seed_flag) return *seed_flag;
    return cfg.value("seed", std::uint64_t(0));
  }
};

template <class T>
T pick(const std::optional<T>& flag, const json& sec, const char* key, T def) {
  if (flag) return *flag;
  if (sec.contains(key)) return sec[key].get<T>();
  return def;
}

struct SAFlags {
  std::optional<double> t0, decay, step_scale;
  std::optional<int> iters;

  void attach(CLI::App* cmd) {
    cmd->add_option("--t0", t0, "annealing start temperature");
    cmd->add_option("--decay", decay, "annealing geometric decay");
    cmd->add_option("--iters", iters, "annealing iterations");
    cmd->add_option("--step-scale", step_scale, "annealing proposal scale");
  }

  msa::SAConfig merge(const Ctx& ctx) const {
    const json sec = ctx.section("sa");
    msa::SAConfig base;
    msa::SAConfig c;
    c.T0 = pick(t0, sec, "T0", base.T0);
    c.decay = pick(decay, sec, "decay", base.decay);
    c.iters = pick(iters, sec, "iters", base.iters);
    c.step_scale = pick(step_scale, sec, "step_scale", base.step_scale);
    c.seed = ctx.seed();
    c.validate();
    return c;
  }

  json to_json(const msa::SAConfig& c) const {
    return json{{"T0", c.T0},
                {"decay", c.decay},
                {"iters", c.iters},
                {"step_scale", c.step_scale},
                {"seed", c.seed}};
  }
};

cloop::DistMode parse_dist(const std::string& s) {
  if (s == "zero") return cloop::DistMode::Zero;
  if (s == "uniform") return cloop::DistMode::Uniform;
  if (s == "vertex") return cloop::DistMode::Vertex;
  throw SpecError("usage: disturbance mode must be zero, uniform or vertex");
}

void write_manifest(const Ctx& ctx, const std::string& command,
                    const json& effective,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  json jin = json::object(), jout = json::object();
  for (const auto& p : inputs) jin[p] = sha256_file(p);
  for (const auto& p : outputs) jout[p] = sha256_file(p);
  json m{{"command", command},
         {"config", effective},
         {"spec_hash", ctx.hash},
         {"inputs", std::move(jin)},
         {"outputs", std::move(jout)}};
  write_text_file(ctx.out_dir + "/" + command + "_manifest.json",
                  m.dump(2) + "\n");
}

void ensure_out(const Ctx& ctx) { fs::create_directories(ctx.out_dir); }

datagen::Dataset load_dataset_checked(const Ctx& ctx, const std::string& path) {
  require_artifact(path, "dataset");
  require_artifact(datagen::meta_path(path), "dataset meta file");
  auto ds = datagen::load(path);
  if (!ds.meta.contains("spec_hash"))
    throw SpecError(path + ": dataset carries no problem fingerprint");
  if (ds.meta["spec_hash"].get<std::string>() != ctx.hash)
    throw SpecError(path +
                    ": dataset was built for a different problem "
                    "(fingerprint mismatch)");
  return ds;
}

struct LoadedPolicy {
  cloop::PolicyModel policy;
  std::string kind;
};

LoadedPolicy load_policy_checked(const Ctx& ctx, const std::string& path) {
  require_artifact(path, "policy artifact");
  const json probe = load_json_file(path);
  json meta;
  LoadedPolicy out{cloop::PolicyModel{}, ""};
  if (probe.contains("layer_dims")) {
    auto net = nnfs::load_net(path);
    meta = net.meta;
    out = {std::move(net), "nn"};
  } else if (probe.contains("values") && probe.contains("mask")) {
    auto md = quifs::load_model(path);
    meta = md.meta;
    out = {std::move(md), "quifs"};
  } else {
    throw SpecError(path + ": not a recognized policy artifact");
  }
  if (!meta.contains("spec_hash"))
    throw SpecError(path + ": policy carries no problem fingerprint");
  if (meta["spec_hash"].get<std::string>() != ctx.hash)
    throw SpecError(path +
                    ": policy was built for a different problem "
                    "(fingerprint mismatch)");
  return out;
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

int cmd_spec_validate(Ctx& ctx) {
  ctx.load();
  std::cout << "spec = " << ctx.spec_path << "\n"
            << "hash = " << ctx.hash << "\n"
            << "d = " << ctx.spec.d() << ", m = " << ctx.spec.m()
            << ", nw = " << ctx.spec.nw() << ", N = " << ctx.spec.N << "\n"
            << "valid = true\n";
  return 0;
}

int cmd_solve(Ctx& ctx, const SAFlags& sa, const std::string& x0_arg) {
  ctx.load();
  const VectorXd x0 = parse_state_arg(x0_arg, "--x0");
  if (int(x0.size()) != ctx.spec.d())
    throw SpecError("usage: --x0 must have " + std::to_string(ctx.spec.d()) +
                    " components");
  const auto cfg = sa.merge(ctx);

  bool feasible = false;
  msa::ExactSolveResult res;
  if (ctx.spec.X.contains(x0)) {
    res = msa::exact_solve(ctx.spec, x0, cfg);
    feasible = res.feasible;
  }

  ensure_out(ctx);
  std::string hist = "iteration,incumbent\n";
  for (std::size_t i = 0; i < res.history.size(); ++i)
    hist += std::to_string(i) + "," + format_double(res.history[i]) + "\n";
  const std::string hist_path = ctx.out_dir + "/sa_history.csv";
  write_text_file(hist_path, hist);

  json effective{{"spec_path", ctx.spec_path},
                 {"x0", std::vector<double>(x0.data(), x0.data() + x0.size())},
                 {"sa", sa.to_json(cfg)},
                 {"output_dir", ctx.out_dir}};
  write_manifest(ctx, "solve", effective, {ctx.spec_path}, {hist_path});

  if (!feasible) {
    std::cout << "feasible = false\n";
    return 2;
  }
  std::cout << "value = " << format_double(res.value) << "\n"
            << "u0 = " << vec_to_string(res.policy.eta.head(ctx.spec.m()))
            << "\n"
            << "feasible = true\n";
  return 0;
}

int cmd_datagen(Ctx& ctx, const SAFlags& sa, std::optional<double> h_flag,
                std::optional<int> n_flag) {
  ctx.load();
  const json sec = ctx.section("grid");
  const double h = pick(h_flag, sec, "h", 0.0);
  const int n = pick(n_flag, sec, "samples", 0);
  if ((h > 0) == (n > 0))
    throw SpecError("usage: choose exactly one of --h (grid) or --samples");
  const auto cfg = sa.merge(ctx);
  const int workers = ctx.workers();

  datagen::Dataset ds;
  if (h > 0) {
    ds = datagen::generate_grid(ctx.spec, h, cfg, workers);
  } else {
    auto states = datagen::sample_states(ctx.spec.X, std::size_t(n), cfg.seed);
    ds = datagen::generate(ctx.spec, states, cfg, workers);
  }

  ensure_out(ctx);
  const std::string data_path = ctx.out_dir + "/dataset.csv";
  datagen::save(ds, data_path);

  json effective{{"spec_path", ctx.spec_path},
                 {"grid", json{{"h", h}, {"samples", n}}},
                 {"sa", sa.to_json(cfg)},
                 {"workers", workers},
                 {"output_dir", ctx.out_dir}};
  write_manifest(ctx, "datagen", effective, {ctx.spec_path},
                 {data_path, datagen::meta_path(data_path)});

  const int feas = int(ds.feasible_count());
  const double frac =
      ds.records.empty()
          ? 0.0
          : double(int(ds.records.size()) - feas) / double(ds.records.size());
  std::cout << "records = " << ds.records.size() << "\n"
            << "feasible = " << feas << "\n"
            << "infeasible_fraction = " << format_double(frac) << "\n";
  return 0;
}

int cmd_learn_quifs(Ctx& ctx, const std::string& dataset,
                    std::optional<double> eps_flag,
                    std::optional<double> l0_flag) {
  ctx.load();
  const json sec = ctx.section("quifs");
  auto ds = load_dataset_checked(ctx, dataset);
  const double eps = pick(eps_flag, sec, "eps", ctx.spec.eps);
  const double l0 = pick(l0_flag, sec, "l0", 0.0);
  const int workers = ctx.workers();

  auto md = quifs::learn(ds, eps, l0, workers);
  md.meta = json{{"spec_hash", ctx.hash},
                 {"dataset", dataset},
                 {"dataset_hash", sha256_file(dataset)}};

  // restriction audit: stored actions must be reproduced within the margin
  double node_err = 0.0;
  for (const auto& idx : md.mask) {
    VectorXd x = md.origin;
    for (int j = 0; j < md.d; ++j) x[j] += md.h * idx[std::size_t(j)];
    const VectorXd diff = quifs::eval(md, x) - md.grid_values.at(idx);
    node_err = std::max(node_err, diff.lpNorm<Eigen::Infinity>());
  }

  ensure_out(ctx);
  const std::string model_path = ctx.out_dir + "/quifs_model.json";
  quifs::save_model(md, model_path);

  json effective{{"spec_path", ctx.spec_path},
                 {"dataset", dataset},
                 {"quifs", json{{"eps", eps}, {"l0", md.L0}}},
                 {"workers", workers},
                 {"output_dir", ctx.out_dir}};
  write_manifest(ctx, "learn_quifs", effective,
                 {ctx.spec_path, dataset, datagen::meta_path(dataset)},
                 {model_path});

  std::cout << "nodes = " << md.grid_values.size() << "\n"
            << "mask_nodes = " << md.mask.size() << "\n"
            << "h = " << format_double(md.h) << "\n"
            << "r0 = " << md.r0 << "\n"
            << "L0 = " << format_double(md.L0) << "\n"
            << "max_node_err = " << format_double(node_err) << "\n";
  if (node_err > md.eps) {
    std::cout << "margin = failed\n";
    return 3;
  }
  std::cout << "margin = met\n";
  return 0;
}

int cmd_train_nn(Ctx& ctx, const std::string& dataset,
                 std::optional<int> width_flag, std::optional<int> depth_flag,
                 std::optional<double> lr_flag, std::optional<int> epochs_flag,
                 std::optional<int> batch_flag, std::optional<double> eps_flag,
                 std::optional<double> l0_flag, bool report_certified,
                 std::optional<double> max_err_flag) {
  ctx.load();
  const json sec = ctx.section("nn");
  auto ds = load_dataset_checked(ctx, dataset);
  const int width = pick(width_flag, sec, "width", 64);
  const int depth = pick(depth_flag, sec, "depth", 4);
  nnfs::Hyper hy;
  hy.lr = pick(lr_flag, sec, "lr", 5e-4);
  hy.epochs = pick(epochs_flag, sec, "epochs", 100);
  hy.batch = pick(batch_flag, sec, "batch", 256);
  hy.seed = ctx.seed();
  const double eps = pick(eps_flag, sec, "eps", ctx.spec.eps);

  auto res = nnfs::train(ds, width, depth, hy);

  double uniform_err = 0.0;
  for (const auto& r : ds.records) {
    if (!r.feasible) continue;
    const VectorXd diff = nnfs::nn_eval(res.net, r.x) - r.u0;
    uniform_err = std::max(uniform_err, diff.lpNorm<Eigen::Infinity>());
  }
  res.net.meta["spec_hash"] = ctx.hash;
  res.net.meta["dataset"] = dataset;
  res.net.meta["dataset_hash"] = sha256_file(dataset);
  res.net.meta["width"] = width;
  res.net.meta["depth"] = depth;
  res.net.meta["uniform_err_train"] = uniform_err;

  ensure_out(ctx);
  const std::string model_path = ctx.out_dir + "/nn_model.json";
  nnfs::save_net(res.net, model_path);

  json effective{{"spec_path", ctx.spec_path},
                 {"dataset", dataset},
                 {"nn",
                  json{{"width", width},
                       {"depth", depth},
                       {"lr", hy.lr},
                       {"epochs", hy.epochs},
                       {"batch", hy.batch},
                       {"eps", eps},
                       {"seed", hy.seed}}},
                 {"output_dir", ctx.out_dir}};
  write_manifest(ctx, "train_nn", effective,
                 {ctx.spec_path, dataset, datagen::meta_path(dataset)},
                 {model_path});

  std::cout << "final_loss = " << format_double(res.loss_history.back()) << "\n"
            << "uniform_err_train = " << format_double(uniform_err) << "\n"
            << "trained_depth = " << depth << "\n";
  if (report_certified) {
    const double l0 = (l0_flag && *l0_flag > 0) ? *l0_flag
                                                : quifs::estimate_l0(ds);
    const auto sizing = nnfs::size_for_width(ds.d, l0, eps, double(width));
    std::cout << "certified_depth = " << format_double(sizing.L) << "\n";
  }
  if (max_err_flag && uniform_err > *max_err_flag) {
    std::cout << "margin = failed\n";
    return 3;
  }
  std::cout << "margin = met\n";
  return 0;
}

int cmd_policy_eval(Ctx& ctx, const std::string& policy_path,
                    const std::string& x_arg) {
  ctx.load();
  const VectorXd x = parse_state_arg(x_arg, "--x");
  auto lp = load_policy_checked(ctx, policy_path);
  VectorXd u;
  if (const auto* qi = std::get_if<quifs::Model>(&lp.policy))
    u = quifs::eval(*qi, x);
  else
    u = nnfs::nn_eval(std::get<nnfs::ReluNet>(lp.policy), x);
  ensure_out(ctx);
  json effective{{"spec_path", ctx.spec_path},
                 {"policy", policy_path},
                 {"x", std::vector<double>(x.data(), x.data() + x.size())},
                 {"output_dir", ctx.out_dir}};
  write_manifest(ctx, "policy_eval", effective, {ctx.spec_path, policy_path},
                 {});
  std::cout << "kind = " << lp.kind << "\n"
            << "u = " << vec_to_string(u) << "\n";
  return 0;
}

int cmd_simulate(Ctx& ctx, const SAFlags& sa, const std::string& policy_path,
                 bool use_rhc, const std::string& x0_arg,
                 std::optional<int> steps_flag,
                 std::optional<std::string> dist_flag) {
  ctx.load();
  const json sec = ctx.section("sim");
  const VectorXd x0 = parse_state_arg(x0_arg, "--x0");
  const int T = pick(steps_flag, sec, "T", 30);
  const std::string dist_name =
      pick(dist_flag, sec, "dist", std::string("uniform"));
  cloop::DisturbanceSampler dist;
  dist.mode = parse_dist(dist_name);

  if (use_rhc == !policy_path.empty())
    throw SpecError("usage: choose exactly one of --policy FILE or --rhc");
  cloop::PolicyModel policy;
  std::string kind;
  if (use_rhc) {
    cloop::RhcPolicy rp;
    rp.cfg = sa.merge(ctx);
    policy = rp;
    kind = "rhc";
  } else {
    auto lp = load_policy_checked(ctx, policy_path);
    policy = std::move(lp.policy);
    kind = lp.kind;
  }

  auto trace = cloop::simulate(ctx.spec, policy, x0, T, dist, ctx.seed());

  ensure_out(ctx);
  const std::string trace_path = ctx.out_dir + "/trace.csv";
  cloop::save_trace(ctx.spec, trace, trace_path);

  json effective{{"spec_path", ctx.spec_path},
                 {"policy", use_rhc ? std::string("rhc") : policy_path},
                 {"sim",
                  json{{"T", T},
                       {"dist", dist_name},
                       {"x0", std::vector<double>(x0.data(),
                                                  x0.data() + x0.size())},
                       {"seed", ctx.seed()}}},
                 {"output_dir", ctx.out_dir}};
  std::vector<std::string> inputs{ctx.spec_path};
  if (!use_rhc) inputs.push_back(policy_path);
  write_manifest(ctx, "simulate", effective, inputs, {trace_path});

  const auto iss = cloop::iss_report(trace);
  std::cout << "kind = " << kind << "\n"
            << "steps = " << trace.steps() << "\n"
            << "violations = " << trace.violations.size() << "\n"
            << "coverage_exit = " << (trace.coverage_exit ? "true" : "false")
            << "\n"
            << "gamma_hat = " << format_double(iss.gamma_hat) << "\n"
            << "entry_time = " << iss.entry_time << "\n";
  if (trace.values.size() >= 2) {
    const auto descent = cloop::descent_report(ctx.spec, trace);
    std::cout << "max_descent_slack = " << format_double(descent.max_slack)
              << "\n";
  }
  return (trace.violations.empty() && !trace.coverage_exit) ? 0 : 3;
}

int cmd_roa(Ctx& ctx, const SAFlags& sa, std::optional<double> h_flag) {
  ctx.load();
  const json sec = ctx.section("grid");
  const double h = pick(h_flag, sec, "h", 0.0);
  if (!(h > 0)) throw SpecError("usage: --h must be positive for roa");
  const auto cfg = sa.merge(ctx);
  const int workers = ctx.workers();

  auto states = datagen::grid_states(ctx.spec.X, h);
  auto roa = cloop::region_of_attraction(ctx.spec, states, cfg, workers);

  ensure_out(ctx);
  std::string body;
  for (int j = 1; j <= ctx.spec.d(); ++j)
    body += (j > 1 ? "," : "") + ("x_" + std::to_string(j));
  body += ",exact,baseline\n";
  for (std::size_t i = 0; i < states.size(); ++i) {
    for (Eigen::Index j = 0; j < states[i].size(); ++j)
      body += (j ? "," : "") + format_double(states[i][j]);
    body += std::string(",") + (roa.exact_mask[i] ? "1" : "0") + "," +
            (roa.baseline_mask[i] ? "1" : "0") + "\n";
  }
  const std::string roa_path = ctx.out_dir + "/roa.csv";
  write_text_file(roa_path, body);

  json effective{{"spec_path", ctx.spec_path},
                 {"grid", json{{"h", h}}},
                 {"sa", sa.to_json(cfg)},
                 {"workers", workers},
                 {"output_dir", ctx.out_dir}};
  write_manifest(ctx, "roa", effective, {ctx.spec_path}, {roa_path});

  const int total = int(states.size());
  const int exact = roa.exact_feasible();
  std::cout << "points = " << total << "\n"
            << "exact_feasible = " << exact << "\n"
            << "baseline_feasible = " << roa.baseline_feasible() << "\n"
            << "exact_infeasible_fraction = "
            << format_double(total ? double(total - exact) / total : 0.0)
            << "\n";
  return 0;
}

int cmd_validate(Ctx& ctx, const std::string& policy_path,
                 std::optional<int> p_flag, std::optional<double> delta_flag,
                 std::optional<int> steps_flag,
                 std::optional<int> rollouts_flag,
                 std::optional<double> mu_crit_flag,
                 std::optional<std::string> dist_flag) {
  ctx.load();
  const json sec = ctx.section("validate");
  const int p = pick(p_flag, sec, "p", 2000);
  const double delta_h = pick(delta_flag, sec, "delta_h", 0.01);
  const int T = pick(steps_flag, sec, "T", 30);
  const int rollouts = pick(rollouts_flag, sec, "rollouts", 5);
  const double mu_crit = pick(mu_crit_flag, sec, "mu_crit", 0.98);
  const std::string dist_name =
      pick(dist_flag, sec, "dist", std::string("uniform"));
  cloop::DisturbanceSampler dist;
  dist.mode = parse_dist(dist_name);

  auto lp = load_policy_checked(ctx, policy_path);
  auto rep = cloop::validate(ctx.spec, lp.policy, p, delta_h, T, ctx.seed(),
                             rollouts, mu_crit, dist, ctx.workers());

  ensure_out(ctx);
  json out = cloop::to_json(rep);
  out["T"] = T;
  out["rollouts_per_state"] = rollouts;
  out["dist"] = dist_name;
  const std::string rep_path = ctx.out_dir + "/validation.json";
  write_text_file(rep_path, out.dump(2) + "\n");

  json effective{{"spec_path", ctx.spec_path},
                 {"policy", policy_path},
                 {"validate",
                  json{{"p", p},
                       {"delta_h", delta_h},
                       {"T", T},
                       {"rollouts", rollouts},
                       {"mu_crit", mu_crit},
                       {"dist", dist_name},
                       {"seed", ctx.seed()}}},
                 {"workers", ctx.workers()},
                 {"output_dir", ctx.out_dir}};
  write_manifest(ctx, "validate", effective, {ctx.spec_path, policy_path},
                 {rep_path});

  std::cout << "mu_tilde = " << format_double(rep.mu_tilde) << "\n"
            << "eps_h = " << format_double(rep.eps_h) << "\n"
            << "pass = " << (rep.pass ? "true" : "false") << "\n";
  return rep.pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust explicit MPC synthesis toolkit"};
  app.require_subcommand(1);

  Ctx ctx;
  SAFlags sa;
  int rc = 0;
  auto attach_common = [&](CLI::App* cmd, bool with_out = true) {
    cmd->add_option("--spec", ctx.spec_path, "problem definition JSON");
    cmd->add_option("--config", ctx.config_path, "run configuration JSON");
    if (with_out) cmd->add_option("--out", ctx.out_dir, "output directory");
    cmd->add_option("--workers", ctx.workers_flag, "worker thread count");
    cmd->add_option("--seed", ctx.seed_flag, "random seed");
  };

  // spec validate
  auto* spec_cmd = app.add_subcommand("spec", "problem file operations");
  spec_cmd->require_subcommand(1);
  auto* spec_val = spec_cmd->add_subcommand("validate", "check a problem file");
  attach_common(spec_val, false);
  spec_val->callback([&] { rc = cmd_spec_validate(ctx); });

  // solve
  auto* solve = app.add_subcommand("solve", "exact solve at one state");
  attach_common(solve);
  sa.attach(solve);
  std::string x0_arg;
  solve->add_option("--x0", x0_arg, "initial state, comma separated")
      ->required();
  solve->callback([&] { rc = cmd_solve(ctx, sa, x0_arg); });

  // datagen
  auto* dg = app.add_subcommand("datagen", "solve a family of states");
  dg->set_help_flag("--help", "print help");
  attach_common(dg);
  sa.attach(dg);
  std::optional<double> dg_h;
  std::optional<int> dg_n;
  dg->add_option("--h", dg_h, "uniform grid step");
  dg->add_option("--samples", dg_n, "number of uniformly sampled states");
  dg->callback([&] { rc = cmd_datagen(ctx, sa, dg_h, dg_n); });

  // learn quifs
  auto* learn = app.add_subcommand("learn", "fit certified approximations");
  learn->require_subcommand(1);
  auto* lq = learn->add_subcommand("quifs", "quasi-interpolation model");
  attach_common(lq);
  std::string lq_dataset;
  std::optional<double> lq_eps, lq_l0;
  lq->add_option("--dataset", lq_dataset, "training dataset CSV")->required();
  lq->add_option("--eps", lq_eps, "uniform approximation margin");
  lq->add_option("--l0", lq_l0, "Lipschitz bound override");
  lq->callback([&] { rc = cmd_learn_quifs(ctx, lq_dataset, lq_eps, lq_l0); });

  // train nn
  auto* train = app.add_subcommand("train", "train parametric approximations");
  train->require_subcommand(1);
  auto* tn = train->add_subcommand("nn", "feedforward network");
  attach_common(tn);
  std::string tn_dataset;
  std::optional<int> tn_width, tn_depth, tn_epochs, tn_batch;
  std::optional<double> tn_lr, tn_eps, tn_l0, tn_max_err;
  bool tn_report = false;
  tn->add_option("--dataset", tn_dataset, "training dataset CSV")->required();
  tn->add_option("--width", tn_width, "hidden width");
  tn->add_option("--depth", tn_depth, "hidden depth");
  tn->add_option("--lr", tn_lr, "learning rate");
  tn->add_option("--epochs", tn_epochs, "training epochs");
  tn->add_option("--batch", tn_batch, "mini-batch size");
  tn->add_option("--eps", tn_eps, "target margin for the certified sizing");
  tn->add_option("--l0", tn_l0, "Lipschitz bound override");
  tn->add_option("--max-uniform-err", tn_max_err,
                 "fail when the training-set uniform error exceeds this");
  tn->add_flag("--report-certified-depth", tn_report,
               "print the certified depth for this width");
  tn->callback([&] {
    rc = cmd_train_nn(ctx, tn_dataset, tn_width, tn_depth, tn_lr, tn_epochs,
                      tn_batch, tn_eps, tn_l0, tn_report, tn_max_err);
  });

  // policy eval
  auto* policy = app.add_subcommand("policy", "stored policy operations");
  policy->require_subcommand(1);
  auto* pe = policy->add_subcommand("eval", "evaluate a policy at one state");
  attach_common(pe);
  std::string pe_policy, pe_x;
  pe->add_option("--model", pe_policy, "policy artifact JSON")->required();
  pe->add_option("--x", pe_x, "state, comma separated")->required();
  pe->callback([&] { rc = cmd_policy_eval(ctx, pe_policy, pe_x); });

  // simulate
  auto* sim = app.add_subcommand("simulate", "closed-loop rollout");
  attach_common(sim);
  sa.attach(sim);
  std::string sim_policy, sim_x0;
  bool sim_rhc = false;
  std::optional<int> sim_steps;
  std::optional<std::string> sim_dist;
  sim->add_option("--policy", sim_policy, "policy artifact JSON");
  sim->add_flag("--rhc", sim_rhc, "use the online exact baseline");
  sim->add_option("--x0", sim_x0, "initial state, comma separated")
      ->required();
  sim->add_option("--steps", sim_steps, "rollout length");
  sim->add_option("--dist", sim_dist, "disturbance mode: zero|uniform|vertex");
  sim->callback([&] {
    rc = cmd_simulate(ctx, sa, sim_policy, sim_rhc, sim_x0, sim_steps, sim_dist);
  });

  // roa
  auto* roa = app.add_subcommand("roa", "feasible-region masks on a grid");
  roa->set_help_flag("--help", "print help");
  attach_common(roa);
  sa.attach(roa);
  std::optional<double> roa_h;
  roa->add_option("--h", roa_h, "uniform grid step");
  roa->callback([&] { rc = cmd_roa(ctx, sa, roa_h); });

  // validate
  auto* val = app.add_subcommand("validate", "probabilistic rollout audit");
  attach_common(val);
  std::string val_policy;
  std::optional<int> val_p, val_steps, val_rollouts;
  std::optional<double> val_delta, val_mu;
  std::optional<std::string> val_dist;
  val->add_option("--policy", val_policy, "policy artifact JSON")->required();
  val->add_option("--p", val_p, "number of initial states");
  val->add_option("--delta", val_delta, "confidence parameter");
  val->add_option("--steps", val_steps, "rollout length");
  val->add_option("--rollouts", val_rollouts, "rollouts per state");
  val->add_option("--mu-crit", val_mu, "pass threshold");
  val->add_option("--dist", val_dist, "disturbance mode: zero|uniform|vertex");
  val->callback([&] {
    rc = cmd_validate(ctx, val_policy, val_p, val_delta, val_steps,
                      val_rollouts, val_mu, val_dist);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const SpecError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
