// Command line front end for the divide-and-conquer kernel ridge regression
// library: simulate / tune / fit / predict / diagnose / profile-m / bench.
// Exit codes: 0 success, 2 validation or ingestion failure, 3 when a tuning
// criterion has no selectable grid point, 1 for anything else.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dkrr/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"divide-and-conquer kernel ridge regression"};
  app.require_subcommand(1);

  std::string config_path, optimizer, model, out, model_path, data_path;
  int threads = -1;
  bool timings = false;
  double lambda = -1.0;
  bool lambda_set = false;
  int resamples = -1;
  Eigen::Index sim_n = 0;
  double sim_sigma = 0.0, sim_rho = 0.0;
  std::uint64_t sim_seed = 0;
  int sim_p = 3;
  std::vector<int> m_list;

  auto* tune = app.add_subcommand("tune", "sweep or optimize the tuning criteria");
  tune->add_option("--config", config_path, "experiment config (JSON)")->required();
  tune->add_option("--optimizer", optimizer, "grid | newton (overrides the config)")
      ->check(CLI::IsMember({"grid", "newton"}));
  tune->add_option("--threads", threads, "worker threads (0 = all cores)");
  tune->add_flag("--timings", timings, "record real per-point wall times in sweep.csv");

  auto* sim = app.add_subcommand("simulate", "write a synthetic dataset to CSV");
  sim->add_option("--model", model, "beta | wendland")->required();
  sim->add_option("--n", sim_n, "sample size")->required();
  sim->add_option("--sigma", sim_sigma, "noise standard deviation")->required();
  sim->add_option("--seed", sim_seed, "generator seed")->required();
  sim->add_option("--out", out, "output CSV path")->required();
  sim->add_option("--p", sim_p, "covariate dimension (wendland)");
  sim->add_option("--rho", sim_rho, "covariate correlation (wendland)");

  auto* diag = app.add_subcommand("diagnose", "stability and concentration diagnostics");
  diag->add_option("--config", config_path, "experiment config (JSON)")->required();
  auto* diag_lambda = diag->add_option("--lambda", lambda, "evaluate at this lambda");
  diag->add_option("--resamples", resamples, "subsample replicates (overrides the config)");
  diag->add_option("--threads", threads, "worker threads (0 = all cores)");

  auto* prof = app.add_subcommand("profile-m", "dGCV profile over block counts");
  prof->add_option("--config", config_path, "experiment config (JSON)")->required();
  prof->add_option("--m-list", m_list, "block counts, comma separated")
      ->required()
      ->delimiter(',');
  prof->add_option("--threads", threads, "worker threads (0 = all cores)");

  auto* bench = app.add_subcommand("bench", "fit + score wall time per block count");
  bench->add_option("--config", config_path, "experiment config (JSON)")->required();
  bench->add_option("--m-list", m_list, "block counts, comma separated")
      ->required()
      ->delimiter(',');

  auto* fit = app.add_subcommand("fit", "fit one model and save it as JSON");
  fit->add_option("--config", config_path, "experiment config (JSON)")->required();
  auto* fit_lambda = fit->add_option("--lambda", lambda, "regularization level");
  fit->add_option("--out", out, "model output path")->required();
  fit->add_option("--threads", threads, "worker threads (0 = all cores)");

  auto* pred = app.add_subcommand("predict", "evaluate a saved model on new covariates");
  pred->add_option("--model", model_path, "model JSON from fit")->required();
  pred->add_option("--data", data_path, "covariate CSV (columns x1..xp)")->required();
  pred->add_option("--out", out, "prediction CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad flags are a validation failure
  }
  lambda_set = diag_lambda->count() > 0 || fit_lambda->count() > 0;

  dkrr::RunFlags flags;
  flags.threads = threads;
  flags.timings = timings;
  flags.optimizer = optimizer;
  if (lambda_set) flags.lambda = lambda;
  flags.resamples = resamples;

  return dkrr::run_guarded([&]() -> int {
    if (tune->parsed()) return dkrr::cmd_tune(dkrr::load_config(config_path), flags);
    if (sim->parsed())
      return dkrr::cmd_simulate(model, sim_n, sim_sigma, sim_seed, out, sim_p, sim_rho);
    if (diag->parsed()) return dkrr::cmd_diagnose(dkrr::load_config(config_path), flags);
    if (prof->parsed()) return dkrr::cmd_profile_m(dkrr::load_config(config_path), m_list, flags);
    if (bench->parsed()) return dkrr::cmd_bench(dkrr::load_config(config_path), m_list, flags);
    if (fit->parsed()) return dkrr::cmd_fit(dkrr::load_config(config_path), flags, out);
    if (pred->parsed()) return dkrr::cmd_predict(model_path, data_path, out);
    return 2;
  });
}
