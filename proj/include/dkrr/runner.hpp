#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dkrr/config.hpp"
#include "dkrr/csv.hpp"
#include "dkrr/diagnostics.hpp"
#include "dkrr/newton.hpp"
#include "dkrr/tuning.hpp"

namespace dkrr {

// Seed tags: every random object a command needs is derived from the config
// seed with a fixed tag, so runs are reproducible and independent of thread
// count.
namespace seedtag {
inline constexpr std::uint64_t partition = 1;
inline constexpr std::uint64_t simulate = 2;
inline constexpr std::uint64_t fresh_sample = 3;
inline constexpr std::uint64_t gap = 4;
inline constexpr std::uint64_t resample = 5;
}  // namespace seedtag

struct RunFlags {
  int threads = -1;            // -1 = take the config value
  bool timings = false;        // real wall_ms in sweep CSVs (off: zeros, byte-stable)
  std::string optimizer;       // override: "grid" | "newton" | ""
  std::optional<double> lambda;  // diagnose/fit single-lambda override
  int resamples = -1;          // diagnose override
};

namespace run {

using json = nlohmann::json;

inline Dataset load_or_simulate(const ExperimentConfig& c) {
  if (c.data.source == DataConfig::Source::csv)
    return load_dataset_csv(c.data.path, c.data.response, c.data.standardize);
  const std::uint64_t seed =
      c.data.sim_seed_set ? c.data.sim_seed : Rng::derive(c.seed, seedtag::simulate);
  if (c.data.model == "beta_mixture") return simulate_beta_mixture(c.data.n, c.data.sigma, seed);
  return simulate_wendland_field(c.data.n, c.data.p, c.data.rho, c.data.sigma, seed);
}

inline Partition partition_for(const ExperimentConfig& c, Eigen::Index n) {
  return random_partition(n, c.m, Rng::derive(c.seed, seedtag::partition));
}

inline int threads_of(const ExperimentConfig& c, const RunFlags& f) {
  return f.threads >= 0 ? f.threads : c.threads;
}

// noise variance for cp/risk/q statistics: explicit config value wins, then
// the dataset sidecar
inline double sigma2_of(const ExperimentConfig& c, const Dataset& d) {
  if (std::isfinite(c.sigma2)) return c.sigma2;
  if (d.has_sigma()) return d.sigma * d.sigma;
  return std::numeric_limits<double>::quiet_NaN();
}

inline std::filesystem::path out_path(const ExperimentConfig& c, const std::string& name) {
  std::filesystem::path dir(c.output_dir);
  std::filesystem::create_directories(dir);
  return dir / name;
}

inline json kernel_to_json(const KernelSpec& s) {
  json j;
  j["family"] = family_name(s.family);
  switch (s.family) {
    case KernelFamily::gaussian:
    case KernelFamily::gaussian_sq:
      j["phi"] = s.theta[0];
      break;
    case KernelFamily::polynomial:
      j["degree"] = static_cast<int>(s.theta[0]);
      break;
    case KernelFamily::sobolev_periodic:
      j["nu"] = static_cast<int>(s.theta[0]);
      break;
    case KernelFamily::wendland:
      j["p"] = static_cast<int>(s.theta[0]);
      break;
    case KernelFamily::additive: {
      json kids = json::array();
      for (const auto& k : s.children) kids.push_back(kernel_to_json(k));
      j["children"] = std::move(kids);
      break;
    }
  }
  return j;
}

inline KernelSpec kernel_from_json(const json& j, const std::string& ctx) {
  return cfg::parse_kernel_node(j, ctx, nullptr);
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
}

inline ScoreRequest request_for(ScoreKind kind, const ExperimentConfig& c, const Dataset& d) {
  switch (kind) {
    case ScoreKind::dgcv_star:
      return ScoreRequest::dgcv_star(c.resolved_m_star());
    case ScoreKind::cp:
      return ScoreRequest::cp(sigma2_of(c, d));
    case ScoreKind::risk:
      return ScoreRequest::risk(sigma2_of(c, d));
    case ScoreKind::ngcv:
      return ScoreRequest::ngcv();
    case ScoreKind::true_loss:
      return ScoreRequest::true_loss();
    case ScoreKind::dgcv:
    default:
      return ScoreRequest::dgcv();
  }
}

// flat sweep table: one row per (grid point, score kind)
inline void write_sweep_csv(const std::filesystem::path& path, const TuneReport& rep,
                            bool timings) {
  const std::size_t arity = flat_theta(rep.specs.front()).size();
  std::vector<std::string> header{"lambda"};
  for (std::size_t c = 0; c < arity; ++c) header.push_back("theta_" + std::to_string(c + 1));
  header.insert(header.end(), {"kind", "score", "trace_stat", "wall_ms"});

  std::vector<std::vector<std::string>> rows;
  rows.reserve(rep.points.size() * rep.kinds.size());
  for (std::size_t pt = 0; pt < rep.points.size(); ++pt) {
    const std::vector<double> th = flat_theta(rep.point_spec(pt));
    for (std::size_t ki = 0; ki < rep.kinds.size(); ++ki) {
      std::vector<std::string> row;
      row.push_back(format_double(rep.points[pt].lambda));
      for (double t : th) row.push_back(format_double(t));
      row.push_back(score_name(rep.kinds[ki].kind));
      row.push_back(format_double(rep.scores[ki][pt]));
      row.push_back(format_double(rep.trace_stat[pt]));
      row.push_back(format_double(timings ? rep.wall_ms[pt] : 0.0));
      rows.push_back(std::move(row));
    }
  }
  write_csv(path, header, rows);
}

}  // namespace run

// tune --optimizer grid: full sweep, per-kind argmin, sweep.csv +
// selection.json (+ ngcv_blocks.csv when the ngcv baseline is requested).
// Returns 3 when some requested criterion has no selectable point.
inline int cmd_tune(const ExperimentConfig& c, const RunFlags& flags = {}) {
  const Dataset data = run::load_or_simulate(c);
  const Partition part = run::partition_for(c, data.n());
  const std::vector<double> lambdas = c.lambda.resolve(data.n());
  const int threads = run::threads_of(c, flags);
  const std::string optimizer =
      !flags.optimizer.empty()
          ? flags.optimizer
          : (c.optimizer == ExperimentConfig::Optimizer::newton ? "newton" : "grid");

  run::json summary;
  summary["command"] = "tune";
  summary["optimizer"] = optimizer;
  summary["seed"] = c.seed;
  summary["n"] = data.n();
  summary["m"] = c.m;
  if (c.weights == WeightScheme::Kind::subset) summary["m_star"] = c.resolved_m_star();

  if (optimizer == "newton") {
    if (c.kernels.size() != 1)
      throw std::invalid_argument("tune: the newton optimizer needs a single kernel spec");
    const KernelSpec& spec = c.kernels.front();
    NewtonOptions opt;
    opt.threads = threads;
    opt.scheme = c.weight_scheme();
    const double init_eta =
        c.newton.has_eta ? c.newton.init_eta : std::log(1.0 / static_cast<double>(data.n()));
    const OptimResult res =
        newton_optimize(data, part, spec, init_eta, c.newton.init_theta, opt);

    std::vector<std::string> header{"iter", "eta"};
    const auto arity = res.theta_hat.size();
    for (std::size_t i = 0; i < arity; ++i) header.push_back("theta_" + std::to_string(i + 1));
    header.insert(header.end(), {"score", "grad_norm", "step"});
    std::vector<std::vector<std::string>> rows;
    for (const auto& s : res.trace) {
      std::vector<std::string> row{std::to_string(s.iter), format_double(s.eta)};
      for (double t : s.theta) row.push_back(format_double(t));
      row.push_back(format_double(s.score));
      row.push_back(format_double(s.grad_norm));
      row.push_back(format_double(s.step));
      rows.push_back(std::move(row));
    }
    write_csv(run::out_path(c, "newton_trace.csv"), header, rows);

    run::json sel;
    sel["kind"] = "dgcv";
    sel["degenerate"] = !std::isfinite(res.score);
    sel["eta"] = res.eta_hat;
    sel["lambda"] = std::exp(res.eta_hat);
    sel["theta"] = res.theta_hat;
    sel["score"] = res.score;
    sel["grad_norm"] = res.grad_norm;
    sel["iterations"] = res.iterations;
    sel["flag"] = flag_name(res.flag);
    summary["selections"] = run::json::array({sel});
    run::write_json(run::out_path(c, "selection.json"), summary);
    std::cout << "tune(newton): " << flag_name(res.flag) << " after " << res.iterations
              << " iterations, lambda = " << format_double(std::exp(res.eta_hat))
              << ", score = " << format_double(res.score) << "\n";
    return std::isfinite(res.score) ? 0 : 3;
  }

  std::vector<ScoreRequest> kinds;
  kinds.reserve(c.score_kinds.size());
  for (ScoreKind k : c.score_kinds) kinds.push_back(run::request_for(k, c, data));

  TuneOptions opt;
  opt.threads = threads;
  const TuneReport rep = tune_grid(data, part, c.weight_scheme(), c.kernels, lambdas, kinds, opt);
  run::write_sweep_csv(run::out_path(c, "sweep.csv"), rep, flags.timings);

  bool missing_selection = false;
  run::json sels = run::json::array();
  for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
    run::json sel;
    sel["kind"] = score_name(kinds[ki].kind);
    const auto best = rep.argmin[ki];
    if (best < 0) {
      sel["degenerate"] = true;
      missing_selection = true;
    } else {
      const auto pt = static_cast<std::size_t>(best);
      sel["degenerate"] = false;
      sel["lambda"] = rep.points[pt].lambda;
      sel["theta"] = flat_theta(rep.point_spec(pt));
      sel["score"] = rep.scores[ki][pt];
      sel["trace_stat"] = rep.trace_stat[pt];
    }
    if (kinds[ki].kind == ScoreKind::ngcv) {
      // the ngcv baseline selects per block; the sweep rows carry the
      // across-block mean only
      const NgcvResult ng = tune_ngcv(data, part, c.kernels, lambdas, opt);
      std::vector<std::vector<std::string>> rows;
      const std::size_t arity = flat_theta(c.kernels.front()).size();
      std::vector<std::string> header{"block", "lambda"};
      for (std::size_t i = 0; i < arity; ++i) header.push_back("theta_" + std::to_string(i + 1));
      header.push_back("score");
      for (const auto& ch : ng.choices) {
        std::vector<std::string> row{std::to_string(ch.block), format_double(ch.lambda)};
        for (double t : flat_theta(ng.specs[ch.spec_index])) row.push_back(format_double(t));
        row.push_back(format_double(ch.score));
        rows.push_back(std::move(row));
      }
      write_csv(run::out_path(c, "ngcv_blocks.csv"), header, rows);
      sel["lambda_mean"] = ng.lambda_mean;
      sel["per_block_table"] = "ngcv_blocks.csv";
      if (data.has_f0()) sel["loss"] = ng.loss_against(data);
    }
    sels.push_back(std::move(sel));
  }
  summary["selections"] = std::move(sels);
  run::write_json(run::out_path(c, "selection.json"), summary);

  for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
    std::cout << "tune(grid): " << score_name(kinds[ki].kind);
    if (rep.argmin[ki] < 0) {
      std::cout << " -> no selectable point\n";
    } else {
      const auto pt = static_cast<std::size_t>(rep.argmin[ki]);
      std::cout << " -> lambda = " << format_double(rep.points[pt].lambda)
                << ", score = " << format_double(rep.scores[ki][pt]) << "\n";
    }
  }
  return missing_selection ? 3 : 0;
}

inline int cmd_simulate(const std::string& model, Eigen::Index n, double sigma,
                        std::uint64_t seed, const std::string& out, int p = 3, double rho = 0.0) {
  Dataset d;
  if (model == "beta" || model == "beta_mixture") {
    d = simulate_beta_mixture(n, sigma, seed);
  } else if (model == "wendland") {
    d = simulate_wendland_field(n, p, rho, sigma, seed);
  } else {
    throw std::invalid_argument("simulate: model must be beta or wendland");
  }
  const std::filesystem::path path(out);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_dataset_csv(d, path);
  std::cout << "simulate: wrote " << n << " x " << d.p() << " dataset to " << out << "\n";
  return 0;
}

namespace run {

inline double single_lambda(const ExperimentConfig& c, const Dataset& data,
                            const std::optional<double>& override_lambda) {
  if (override_lambda) {
    if (!(*override_lambda >= 0.0) || !std::isfinite(*override_lambda))
      throw std::invalid_argument("lambda must be finite and >= 0");
    return *override_lambda;
  }
  const auto lambdas = c.lambda.resolve(data.n());
  if (lambdas.size() != 1)
    throw std::invalid_argument(
        "this command needs one lambda: pass --lambda or a single-point grid");
  return lambdas.front();
}

}  // namespace run

// fit: one (kernel, lambda) model over all blocks, saved with per-block
// covariates and coefficients so predict can run from the file alone.
inline int cmd_fit(const ExperimentConfig& c, const RunFlags& flags, const std::string& out) {
  if (c.kernels.size() != 1)
    throw std::invalid_argument("fit: needs a single kernel spec (no phi_grid)");
  const Dataset data = run::load_or_simulate(c);
  const Partition part = run::partition_for(c, data.n());
  const double lambda = run::single_lambda(c, data, flags.lambda);
  const KernelSpec& spec = c.kernels.front();
  const VectorXd w = VectorXd::Ones(data.n());

  run::json blocks = run::json::array();
  const int threads = run::threads_of(c, flags);
  std::vector<BlockFit> fits(part.blocks.size());
  parallel_for(static_cast<std::int64_t>(part.blocks.size()), resolve_threads(threads),
               [&](std::int64_t k) {
                 fits[static_cast<std::size_t>(k)] =
                     fit_block(data, part.blocks[static_cast<std::size_t>(k)], spec, lambda, w,
                               static_cast<int>(k), FitOptions{/*want_traces=*/false});
               });
  for (const auto& fit : fits) {
    run::json b;
    std::vector<std::vector<double>> x(static_cast<std::size_t>(fit.x.rows()));
    for (Eigen::Index i = 0; i < fit.x.rows(); ++i) {
      x[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(fit.x.cols()));
      for (Eigen::Index j = 0; j < fit.x.cols(); ++j)
        x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = fit.x(i, j);
    }
    b["x"] = std::move(x);
    b["beta"] = std::vector<double>(fit.beta.data(), fit.beta.data() + fit.beta.size());
    blocks.push_back(std::move(b));
  }

  run::json model;
  model["kernel"] = run::kernel_to_json(spec);
  model["lambda"] = lambda;
  model["m"] = part.m();
  model["n"] = data.n();
  model["p"] = data.p();
  model["blocks"] = std::move(blocks);
  const std::filesystem::path path(out);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  run::write_json(path, model);
  std::cout << "fit: wrote " << part.m() << "-block model to " << out << "\n";
  return 0;
}

namespace run {

// covariate matrix from a CSV: the columns named x1..xp, in header order
inline MatrixXd load_covariates_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("empty file: " + path.string());
  const auto header = detail::split_csv_line(line);
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const auto& h = header[j];
    if (h.size() >= 2 && h[0] == 'x' &&
        h.find_first_not_of("0123456789", 1) == std::string::npos)
      cols.push_back(j);
  }
  if (cols.empty())
    throw IngestionError("no covariate columns (x1..xp) in " + path.string());
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw IngestionError(path.string() + ":" + std::to_string(lineno) + ": ragged row");
    std::vector<double> row;
    row.reserve(cols.size());
    for (std::size_t j : cols)
      row.push_back(parse_double(cells[j], (path.string() + ":" + std::to_string(lineno)).c_str()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IngestionError("no data rows in " + path.string());
  MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return x;
}

}  // namespace run

inline int cmd_predict(const std::string& model_path, const std::string& data_path,
                       const std::string& out) {
  std::ifstream in(model_path, std::ios::binary);
  if (!in) throw IngestionError("cannot open model: " + model_path);
  run::json model;
  try {
    model = run::json::parse(in);
  } catch (const run::json::exception& e) {
    throw IngestionError("model is not valid JSON: " + std::string(e.what()));
  }
  const KernelSpec spec = run::kernel_from_json(model.at("kernel"), "model.kernel");
  const double lambda = model.at("lambda").get<double>();
  const auto p = model.at("p").get<Eigen::Index>();

  const MatrixXd xq = run::load_covariates_csv(data_path);
  if (xq.cols() != p)
    throw std::invalid_argument("predict: model expects " + std::to_string(p) +
                                " covariates, data has " + std::to_string(xq.cols()));

  const auto& blocks = model.at("blocks");
  if (!blocks.is_array() || blocks.empty()) throw IngestionError("model has no blocks");
  VectorXd acc = VectorXd::Zero(xq.rows());
  for (const auto& b : blocks) {
    const auto xvec = b.at("x").get<std::vector<std::vector<double>>>();
    const auto beta = b.at("beta").get<std::vector<double>>();
    if (xvec.empty() || xvec.size() != beta.size())
      throw IngestionError("model block has inconsistent shapes");
    MatrixXd xk(static_cast<Eigen::Index>(xvec.size()), p);
    for (std::size_t i = 0; i < xvec.size(); ++i) {
      if (static_cast<Eigen::Index>(xvec[i].size()) != p)
        throw IngestionError("model block row has wrong width");
      for (Eigen::Index j = 0; j < p; ++j) xk(static_cast<Eigen::Index>(i), j) = xvec[i][j];
    }
    const Eigen::Map<const VectorXd> bv(beta.data(), static_cast<Eigen::Index>(beta.size()));
    acc += gram(spec, xq, xk) * bv;
  }
  acc /= static_cast<double>(blocks.size());
  (void)lambda;  // recorded in the model for provenance; prediction needs only beta

  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < p; ++j) header.push_back("x" + std::to_string(j + 1));
  header.push_back("fhat");
  std::vector<std::vector<std::string>> rows(static_cast<std::size_t>(xq.rows()));
  for (Eigen::Index i = 0; i < xq.rows(); ++i) {
    auto& row = rows[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < p; ++j) row.push_back(format_double(xq(i, j)));
    row.push_back(format_double(acc[i]));
  }
  const std::filesystem::path path(out);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_csv(path, header, rows);
  std::cout << "predict: wrote " << xq.rows() << " predictions to " << out << "\n";
  return 0;
}

inline int cmd_diagnose(const ExperimentConfig& c, const RunFlags& flags = {}) {
  const Dataset data = run::load_or_simulate(c);
  const Partition part = run::partition_for(c, data.n());
  const double lambda = run::single_lambda(c, data, flags.lambda);
  const int threads = run::threads_of(c, flags);
  const int resamples = flags.resamples >= 0 ? flags.resamples : c.resamples;

  DiagnosticsRow row;
  row.lambda = lambda;
  row.m = part.m();
  const ConditionStats cs = condition_stats(data, part, c.kernels.front(), lambda, kDenseCap,
                                            threads);
  row.c1 = cs.c1;
  row.c1_prime = cs.c1_prime;
  row.c4 = cs.c4;
  row.d_lambda = cs.d_lambda;
  row.effective_df = cs.effective_df;

  run::json report;
  report["command"] = "diagnose";
  report["lambda"] = lambda;
  report["m"] = part.m();
  report["n"] = data.n();

  const double sigma2 = run::sigma2_of(c, data);
  if (std::isfinite(sigma2)) {
    const VectorXd w = VectorXd::Ones(data.n());
    const TuneState st = make_tune_state(data, part, w, c.kernels.front(), lambda);
    MatrixXd fresh;
    const MatrixXd* fresh_ptr = nullptr;
    if (c.data.source == DataConfig::Source::simulate) {
      // fresh covariates from the same generator for the Monte-Carlo probe
      const std::uint64_t fs = Rng::derive(c.seed, seedtag::fresh_sample);
      const Dataset fd = c.data.model == "beta_mixture"
                             ? simulate_beta_mixture(2048, 0.0, fs)
                             : simulate_wendland_field(2048, c.data.p, c.data.rho, 0.0, fs);
      fresh = fd.x;
      fresh_ptr = &fresh;
    }
    const QStats qs = q_statistics(st, data, sigma2, fresh_ptr, kDenseCap);
    row.q1 = qs.q1;
    row.q2 = qs.q2;
    row.q_mc = qs.q_mc;
  }

  if (data.has_f0() && data.has_sigma()) {
    const GapSummary gap = loss_risk_gap(data, part, c.kernels.front(), lambda,
                                        std::max(c.replicates, 1),
                                        Rng::derive(c.seed, seedtag::gap),
                                        c.weight_scheme(), threads);
    row.loss_risk_gap_median = gap.median;
    report["loss_risk_gap"] = {{"median", gap.median}, {"q25", gap.q25}, {"q75", gap.q75},
                              {"replicates", gap.gaps.size()}};
  }

  const std::vector<std::string> header{"lambda", "m",  "c1", "c1_prime",
                                        "c4",     "d_lambda", "effective_df",
                                        "q1",     "q2", "q_mc", "loss_risk_gap_median"};
  std::vector<std::vector<std::string>> rows{{format_double(row.lambda), std::to_string(row.m),
                                              format_double(row.c1), format_double(row.c1_prime),
                                              format_double(row.c4), format_double(row.d_lambda),
                                              format_double(row.effective_df),
                                              format_double(row.q1), format_double(row.q2),
                                              format_double(row.q_mc),
                                              format_double(row.loss_risk_gap_median)}};
  write_csv(run::out_path(c, "diagnostics.csv"), header, rows);

  report["stats"] = {{"c1", row.c1},
                     {"c1_prime", row.c1_prime},
                     {"c4", row.c4},
                     {"d_lambda", row.d_lambda},
                     {"effective_df", row.effective_df},
                     {"q1", row.q1},
                     {"q2", row.q2}};

  if (resamples > 0) {
    const ResampleReport rr =
        resample_conditions(data, part, c.kernels.front(), lambda, resamples,
                            c.subsample_fraction, Rng::derive(c.seed, seedtag::resample),
                            kDenseCap, threads);
    const std::vector<std::string> rheader{"replicate", "c1",       "c1_prime",
                                           "c4",        "d_lambda", "effective_df"};
    std::vector<std::vector<std::string>> rrows;
    const auto stat_row = [](const std::string& tag, const ConditionStats& s) {
      return std::vector<std::string>{tag,
                                      format_double(s.c1),
                                      format_double(s.c1_prime),
                                      format_double(s.c4),
                                      format_double(s.d_lambda),
                                      format_double(s.effective_df)};
    };
    for (std::size_t i = 0; i < rr.rows.size(); ++i)
      rrows.push_back(stat_row(std::to_string(i), rr.rows[i]));
    rrows.push_back(stat_row("mean", rr.mean));
    rrows.push_back(stat_row("sd", rr.sd));
    write_csv(run::out_path(c, "resample.csv"), rheader, rrows);
    report["resample"] = {{"replicates", resamples},
                          {"fraction", c.subsample_fraction},
                          {"mean",
                           {{"c1", rr.mean.c1},
                            {"c1_prime", rr.mean.c1_prime},
                            {"c4", rr.mean.c4},
                            {"d_lambda", rr.mean.d_lambda},
                            {"effective_df", rr.mean.effective_df}}},
                          {"sd",
                           {{"c1", rr.sd.c1},
                            {"c1_prime", rr.sd.c1_prime},
                            {"c4", rr.sd.c4},
                            {"d_lambda", rr.sd.d_lambda},
                            {"effective_df", rr.sd.effective_df}}}};
  }
  run::write_json(run::out_path(c, "diagnose.json"), report);
  std::cout << "diagnose: d_lambda = " << format_double(row.d_lambda)
            << ", effective_df = " << format_double(row.effective_df)
            << ", c1 = " << format_double(row.c1) << ", c4 = " << format_double(row.c4) << "\n";
  return 0;
}

inline int cmd_profile_m(const ExperimentConfig& c, const std::vector<int>& m_list,
                         const RunFlags& flags = {}) {
  if (c.kernels.size() != 1)
    throw std::invalid_argument("profile-m: needs a single kernel spec");
  const Dataset data = run::load_or_simulate(c);
  const std::vector<double> lambdas = c.lambda.resolve(data.n());
  TuneOptions opt;
  opt.threads = run::threads_of(c, flags);
  const auto rows = profile_m(data, m_list, c.kernels.front(), lambdas, c.seed, opt);

  const std::vector<std::string> header{"m", "lambda_hat", "dgcv_min", "dgcv_centered",
                                        "loss_at_hat"};
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows)
    out.push_back({std::to_string(r.m), format_double(r.lambda_hat), format_double(r.dgcv_min),
                   format_double(r.dgcv_centered), format_double(r.loss_at_hat)});
  write_csv(run::out_path(c, "profile.csv"), header, out);
  for (const auto& r : rows)
    std::cout << "profile-m: m = " << r.m << ", lambda_hat = " << format_double(r.lambda_hat)
              << ", dgcv = " << format_double(r.dgcv_min) << "\n";
  return 0;
}

// one fit+score run for the scaling table; shared by cmd_bench and tests
struct BenchPoint {
  int m = 0;
  double wall_ms = 0.0;
  double dgcv = 0.0;
};

inline BenchPoint bench_point(const Dataset& data, const KernelSpec& spec, double lambda, int m,
                              std::uint64_t seed, int threads) {
  const Partition part = random_partition(data.n(), m, Rng::derive(seed, seedtag::partition));
  const VectorXd w = VectorXd::Ones(data.n());
  const auto t0 = std::chrono::steady_clock::now();
  const TuneState st = make_tune_state(data, part, w, spec, lambda);
  const double score = dgcv_score(st, data);
  (void)threads;  // block fits are the dominant cost; kept serial for stable timing
  BenchPoint bp;
  bp.m = m;
  bp.wall_ms = detail::ms_since(t0);
  bp.dgcv = score;
  return bp;
}

inline int cmd_bench(const ExperimentConfig& c, const std::vector<int>& m_list,
                     const RunFlags& flags = {}) {
  if (c.kernels.size() != 1) throw std::invalid_argument("bench: needs a single kernel spec");
  if (m_list.empty()) throw std::invalid_argument("bench: empty m list");
  const Dataset data = run::load_or_simulate(c);
  const std::vector<double> lambdas = c.lambda.resolve(data.n());
  const double lambda = lambdas.front();

  const std::vector<std::string> header{"m", "n", "lambda", "wall_ms", "dgcv"};
  std::vector<std::vector<std::string>> rows;
  for (int m : m_list) {
    const BenchPoint bp =
        bench_point(data, c.kernels.front(), lambda, m, c.seed, run::threads_of(c, flags));
    rows.push_back({std::to_string(bp.m), std::to_string(data.n()), format_double(lambda),
                    format_double(bp.wall_ms), format_double(bp.dgcv)});
    std::cout << "bench: m = " << bp.m << ", wall_ms = " << format_double(bp.wall_ms) << "\n";
  }
  write_csv(run::out_path(c, "bench.csv"), header, rows);
  return 0;
}

// Uniform error-to-exit-code mapping with a single-line machine-parsable tag.
template <class Fn>
int run_guarded(Fn&& fn) {
  const auto emit = [](const char* category, const std::string& what) {
    std::string msg = what;
    for (char& ch : msg)
      if (ch == '\n' || ch == '\r') ch = ' ';
    std::cerr << "dkrr-error: category=" << category << " message=\"" << msg << "\"\n";
  };
  try {
    return fn();
  } catch (const NoSelection& e) {
    emit("no-selection", e.what());
    return 3;
  } catch (const IngestionError& e) {
    emit("ingestion", e.what());
    return 2;
  } catch (const UnsupportedOperation& e) {
    emit("unsupported", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    emit("validation", e.what());
    return 2;
  } catch (const ResourceLimit& e) {
    emit("resource-limit", e.what());
    return 1;
  } catch (const SingularSystem& e) {
    emit("numeric", e.what());
    return 1;
  } catch (const std::exception& e) {
    emit("internal", e.what());
    return 1;
  }
}

}  // namespace dkrr
