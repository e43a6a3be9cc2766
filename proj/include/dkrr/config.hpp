#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkrr/dataset.hpp"
#include "dkrr/kernels.hpp"
#include "dkrr/scores.hpp"
#include "dkrr/tuning.hpp"

namespace dkrr {

struct DataConfig {
  enum class Source { csv, simulate } source = Source::csv;
  // csv
  std::string path;
  std::string response = "y";
  bool standardize = false;
  // simulate
  std::string model;  // beta_mixture | wendland
  Eigen::Index n = 0;
  double sigma = 0.0;
  int p = 3;        // wendland covariate dimension
  double rho = 0.0;  // wendland copula correlation
  std::uint64_t sim_seed = 0;
  bool sim_seed_set = false;
};

struct LambdaGrid {
  enum class Mode { log_e, log_10, values, values_over_n } mode = Mode::values;
  double lo = 0.0, hi = 0.0;
  int count = 0;
  std::vector<double> values;

  // values_over_n entries are divided by the sample size, so resolution
  // needs N
  std::vector<double> resolve(Eigen::Index n) const {
    switch (mode) {
      case Mode::log_e:
        return log_lambda_grid(lo, hi, count);
      case Mode::log_10:
        return log_lambda_grid(lo * std::log(10.0), hi * std::log(10.0), count);
      case Mode::values:
        return values;
      case Mode::values_over_n: {
        std::vector<double> out = values;
        for (double& v : out) v /= static_cast<double>(n);
        return out;
      }
    }
    return {};
  }
};

struct NewtonInit {
  double init_eta = 0.0;
  bool has_eta = false;
  std::vector<double> init_theta;
};

struct ExperimentConfig {
  DataConfig data;
  std::vector<KernelSpec> kernels;  // phi_grid expands into several specs
  LambdaGrid lambda;
  int m = 1;
  int m_star = 0;           // 0 = unset
  bool m_star_tenth = false;  // m_star given as the literal "tenth"
  WeightScheme::Kind weights = WeightScheme::Kind::uniform;
  std::vector<ScoreKind> score_kinds{ScoreKind::dgcv};
  double sigma2 = std::numeric_limits<double>::quiet_NaN();
  enum class Optimizer { grid, newton } optimizer = Optimizer::grid;
  NewtonInit newton;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = all hardware threads
  int replicates = 1;
  std::string output_dir = ".";
  int resamples = 0;
  double subsample_fraction = 0.5;

  int resolved_m_star() const { return m_star_tenth ? default_m_star(m) : m_star; }

  WeightScheme weight_scheme() const {
    return weights == WeightScheme::Kind::subset ? WeightScheme::subset(resolved_m_star())
                                                 : WeightScheme::uniform();
  }
};

namespace cfg {

using json = nlohmann::json;

[[noreturn]] inline void fail(const std::string& field, const std::string& what) {
  throw std::invalid_argument("config: field '" + field + "': " + what);
}

inline void check_keys(const json& j, const std::vector<std::string>& allowed,
                       const std::string& ctx) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& a : allowed) ok = ok || it.key() == a;
    if (!ok) fail(ctx.empty() ? it.key() : ctx + "." + it.key(), "unknown field");
  }
}

template <class T>
T get(const json& j, const std::string& key, const std::string& ctx) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ctx.empty() ? key : ctx + "." + key, e.what());
  }
}

template <class T>
T get_or(const json& j, const std::string& key, const std::string& ctx, T fallback) {
  if (!j.contains(key)) return fallback;
  return get<T>(j, key, ctx);
}

inline KernelSpec parse_kernel_node(const json& j, const std::string& ctx,
                                    std::vector<double>* phi_grid);

inline std::vector<KernelSpec> parse_kernel(const json& j, const std::string& ctx) {
  std::vector<double> phi_grid;
  KernelSpec base = parse_kernel_node(j, ctx, &phi_grid);
  if (phi_grid.empty()) return {base};
  std::vector<KernelSpec> out;
  out.reserve(phi_grid.size());
  for (double phi : phi_grid) {
    KernelSpec s = base;
    s.theta = {phi};
    out.push_back(std::move(s));
  }
  return out;
}

inline KernelSpec parse_kernel_node(const json& j, const std::string& ctx,
                                    std::vector<double>* phi_grid) {
  if (!j.is_object()) fail(ctx, "must be an object");
  const std::string family = get<std::string>(j, "family", ctx);
  if (family == "gaussian" || family == "gaussian_sq") {
    check_keys(j, {"family", "phi", "phi_grid"}, ctx);
    const bool has_phi = j.contains("phi"), has_grid = j.contains("phi_grid");
    if (has_phi == has_grid) fail(ctx, "needs exactly one of phi, phi_grid");
    double phi = 1.0;
    if (has_phi) {
      phi = get<double>(j, "phi", ctx);
    } else {
      if (phi_grid == nullptr) fail(ctx + ".phi_grid", "grids are not allowed here");
      *phi_grid = get<std::vector<double>>(j, "phi_grid", ctx);
      if (phi_grid->empty()) fail(ctx + ".phi_grid", "must be nonempty");
      phi = phi_grid->front();
    }
    return family == "gaussian" ? KernelSpec::gaussian(phi) : KernelSpec::gaussian_sq(phi);
  }
  if (family == "polynomial") {
    check_keys(j, {"family", "degree"}, ctx);
    return KernelSpec::polynomial(get<int>(j, "degree", ctx));
  }
  if (family == "sobolev" || family == "sobolev_periodic") {
    check_keys(j, {"family", "nu"}, ctx);
    return KernelSpec::sobolev_periodic(get<int>(j, "nu", ctx));
  }
  if (family == "wendland") {
    check_keys(j, {"family", "p"}, ctx);
    return KernelSpec::wendland(get<int>(j, "p", ctx));
  }
  if (family == "additive") {
    check_keys(j, {"family", "children"}, ctx);
    const json& kids = j.at("children");
    if (!kids.is_array() || kids.empty()) fail(ctx + ".children", "must be a nonempty array");
    std::vector<KernelSpec> children;
    for (std::size_t i = 0; i < kids.size(); ++i)
      children.push_back(
          parse_kernel_node(kids[i], ctx + ".children[" + std::to_string(i) + "]", nullptr));
    return KernelSpec::additive(std::move(children));
  }
  fail(ctx + ".family", "unknown kernel family '" + family + "'");
}

inline DataConfig parse_data(const json& j, const std::string& ctx) {
  if (!j.is_object()) fail(ctx, "must be an object");
  DataConfig d;
  const bool has_csv = j.contains("csv"), has_sim = j.contains("simulate");
  if (has_csv == has_sim) fail(ctx, "needs exactly one of csv, simulate");
  if (has_csv) {
    check_keys(j, {"csv", "response", "standardize"}, ctx);
    d.source = DataConfig::Source::csv;
    d.path = get<std::string>(j, "csv", ctx);
    d.response = get_or<std::string>(j, "response", ctx, "y");
    d.standardize = get_or<bool>(j, "standardize", ctx, false);
    return d;
  }
  check_keys(j, {"simulate"}, ctx);
  const json& s = j.at("simulate");
  check_keys(s, {"model", "n", "sigma", "seed", "p", "rho"}, ctx + ".simulate");
  d.source = DataConfig::Source::simulate;
  d.model = get<std::string>(s, "model", ctx + ".simulate");
  if (d.model != "beta_mixture" && d.model != "wendland")
    fail(ctx + ".simulate.model", "must be beta_mixture or wendland");
  d.n = get<Eigen::Index>(s, "n", ctx + ".simulate");
  if (d.n < 1) fail(ctx + ".simulate.n", "must be >= 1");
  d.sigma = get<double>(s, "sigma", ctx + ".simulate");
  if (!(d.sigma >= 0.0)) fail(ctx + ".simulate.sigma", "must be >= 0");
  d.p = get_or<int>(s, "p", ctx + ".simulate", 3);
  d.rho = get_or<double>(s, "rho", ctx + ".simulate", 0.0);
  if (s.contains("seed")) {
    d.sim_seed = get<std::uint64_t>(s, "seed", ctx + ".simulate");
    d.sim_seed_set = true;
  }
  return d;
}

inline LambdaGrid parse_lambda(const json& j, const std::string& ctx) {
  if (!j.is_object()) fail(ctx, "must be an object");
  LambdaGrid g;
  const bool log_e = j.contains("log_min") || j.contains("log_max");
  const bool log10 = j.contains("log10_min") || j.contains("log10_max");
  const bool vals = j.contains("values");
  const bool vals_n = j.contains("values_over_n");
  const int modes = int(log_e) + int(log10) + int(vals) + int(vals_n);
  if (modes != 1)
    fail(ctx, "needs exactly one of {log_min,log_max,count}, {log10_min,log10_max,count}, "
              "values, values_over_n");
  if (log_e || log10) {
    const std::string pre = log_e ? "log_" : "log10_";
    check_keys(j, {pre + "min", pre + "max", "count"}, ctx);
    g.mode = log_e ? LambdaGrid::Mode::log_e : LambdaGrid::Mode::log_10;
    g.lo = get<double>(j, pre + "min", ctx);
    g.hi = get<double>(j, pre + "max", ctx);
    g.count = get<int>(j, "count", ctx);
    if (g.count < 1) fail(ctx + ".count", "must be >= 1");
    if (!(g.lo <= g.hi)) fail(ctx, "min must be <= max");
    return g;
  }
  check_keys(j, {vals ? "values" : "values_over_n"}, ctx);
  g.mode = vals ? LambdaGrid::Mode::values : LambdaGrid::Mode::values_over_n;
  g.values = get<std::vector<double>>(j, vals ? "values" : "values_over_n", ctx);
  if (g.values.empty()) fail(ctx, "grid must be nonempty");
  for (double v : g.values)
    if (!(v >= 0.0) || !std::isfinite(v)) fail(ctx, "values must be finite and >= 0");
  return g;
}

}  // namespace cfg

inline ExperimentConfig parse_config(const std::string& text) {
  cfg::json j;
  try {
    j = cfg::json::parse(text);
  } catch (const cfg::json::exception& e) {
    throw std::invalid_argument(std::string("config: not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  cfg::check_keys(j,
                  {"data", "kernel", "lambda", "m", "m_star", "weights", "scores", "sigma2",
                   "optimizer", "seed", "threads", "replicates", "output_dir", "resamples",
                   "subsample_fraction"},
                  "");
  for (const char* req : {"data", "kernel", "lambda"})
    if (!j.contains(req)) cfg::fail(req, "required field is missing");

  ExperimentConfig c;
  c.data = cfg::parse_data(j.at("data"), "data");
  c.kernels = cfg::parse_kernel(j.at("kernel"), "kernel");
  c.lambda = cfg::parse_lambda(j.at("lambda"), "lambda");
  c.m = cfg::get_or<int>(j, "m", "", 1);
  if (c.m < 1) cfg::fail("m", "must be >= 1");

  if (j.contains("m_star")) {
    const auto& ms = j.at("m_star");
    if (ms.is_string()) {
      if (ms.get<std::string>() != "tenth")
        cfg::fail("m_star", "string form must be the literal \"tenth\"");
      c.m_star_tenth = true;
    } else {
      c.m_star = cfg::get<int>(j, "m_star", "");
      if (c.m_star < 1) cfg::fail("m_star", "must be >= 1");
      if (c.m_star > c.m) cfg::fail("m_star", "must be <= m");
    }
  }

  const std::string w = cfg::get_or<std::string>(j, "weights", "", "");
  if (w == "subset") {
    c.weights = WeightScheme::Kind::subset;
  } else if (w == "uniform") {
    c.weights = WeightScheme::Kind::uniform;
  } else if (w.empty()) {
    // default: subset weights whenever m_star was given
    c.weights = (c.m_star > 0 || c.m_star_tenth) ? WeightScheme::Kind::subset
                                                 : WeightScheme::Kind::uniform;
  } else {
    cfg::fail("weights", "must be uniform or subset");
  }
  if (c.weights == WeightScheme::Kind::subset && c.m_star == 0 && !c.m_star_tenth)
    cfg::fail("m_star", "required when weights = subset");

  if (j.contains("scores")) {
    const auto names = cfg::get<std::vector<std::string>>(j, "scores", "");
    if (names.empty()) cfg::fail("scores", "must be nonempty");
    c.score_kinds.clear();
    for (const auto& s : names) {
      try {
        c.score_kinds.push_back(score_from_name(s));
      } catch (const std::exception& e) {
        cfg::fail("scores", e.what());
      }
    }
  }

  c.sigma2 = cfg::get_or<double>(j, "sigma2", "", c.sigma2);
  if (j.contains("sigma2") && !(c.sigma2 >= 0.0)) cfg::fail("sigma2", "must be >= 0");

  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    if (o.is_string()) {
      const auto name = o.get<std::string>();
      if (name == "grid") {
        c.optimizer = ExperimentConfig::Optimizer::grid;
      } else if (name == "newton") {
        c.optimizer = ExperimentConfig::Optimizer::newton;
      } else {
        cfg::fail("optimizer", "must be grid or newton");
      }
    } else if (o.is_object()) {
      cfg::check_keys(o, {"newton"}, "optimizer");
      if (!o.contains("newton")) cfg::fail("optimizer", "object form must hold a newton block");
      c.optimizer = ExperimentConfig::Optimizer::newton;
      const auto& nb = o.at("newton");
      cfg::check_keys(nb, {"init_eta", "init_theta"}, "optimizer.newton");
      if (nb.contains("init_eta")) {
        c.newton.init_eta = cfg::get<double>(nb, "init_eta", "optimizer.newton");
        c.newton.has_eta = true;
      }
      c.newton.init_theta =
          cfg::get_or<std::vector<double>>(nb, "init_theta", "optimizer.newton", {});
    } else {
      cfg::fail("optimizer", "must be a string or an object");
    }
  }

  c.seed = cfg::get_or<std::uint64_t>(j, "seed", "", 0);
  c.threads = cfg::get_or<int>(j, "threads", "", 0);
  if (c.threads < 0) cfg::fail("threads", "must be >= 0");
  c.replicates = cfg::get_or<int>(j, "replicates", "", 1);
  if (c.replicates < 1) cfg::fail("replicates", "must be >= 1");
  c.output_dir = cfg::get_or<std::string>(j, "output_dir", "", ".");
  c.resamples = cfg::get_or<int>(j, "resamples", "", 0);
  if (c.resamples < 0) cfg::fail("resamples", "must be >= 0");
  c.subsample_fraction = cfg::get_or<double>(j, "subsample_fraction", "", 0.5);
  if (!(c.subsample_fraction > 0.0) || !(c.subsample_fraction <= 1.0))
    cfg::fail("subsample_fraction", "must be in (0, 1]");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace dkrr
