#include <gtest/gtest.h>

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "dkrr/runner.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using dkrr::ExperimentConfig;
using dkrr::parse_config;
using json = nlohmann::json;
using testutil::TempDir;
using testutil::read_file;

namespace {

template <class E>
void expect_throw_contains(const std::function<void()>& fn, const std::string& needle) {
  try {
    fn();
    FAIL() << "expected an exception mentioning '" << needle << "'";
  } catch (const E& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos)
        << "message was: " << e.what();
  } catch (const std::exception& e) {
    FAIL() << "wrong exception type: " << e.what();
  }
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  EXPECT_TRUE(in.good()) << "cannot open " << p;
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(dkrr::detail::split_csv_line(line));
  }
  return out;
}

// minimal valid config the individual tests extend
json base_config() {
  return json::parse(R"({
    "data": {"simulate": {"model": "beta_mixture", "n": 48, "sigma": 0.4, "seed": 5}},
    "kernel": {"family": "gaussian", "phi": 0.5},
    "lambda": {"values": [1e-3, 1e-2]}
  })");
}

}  // namespace

TEST(ParseConfig, ReadsEveryField) {
  json j = base_config();
  j["m"] = 4;
  j["m_star"] = 2;
  j["weights"] = "subset";
  j["scores"] = {"dgcv", "cp"};
  j["sigma2"] = 0.25;
  j["optimizer"] = "grid";
  j["seed"] = 42;
  j["threads"] = 2;
  j["replicates"] = 3;
  j["output_dir"] = "/tmp/somewhere";
  j["resamples"] = 5;
  j["subsample_fraction"] = 0.4;

  const ExperimentConfig c = parse_config(j.dump());
  EXPECT_EQ(c.data.source, dkrr::DataConfig::Source::simulate);
  EXPECT_EQ(c.data.model, "beta_mixture");
  EXPECT_EQ(c.data.n, 48);
  EXPECT_DOUBLE_EQ(c.data.sigma, 0.4);
  EXPECT_TRUE(c.data.sim_seed_set);
  EXPECT_EQ(c.data.sim_seed, 5u);
  ASSERT_EQ(c.kernels.size(), 1u);
  EXPECT_EQ(c.kernels[0].family, dkrr::KernelFamily::gaussian);
  EXPECT_DOUBLE_EQ(c.kernels[0].theta[0], 0.5);
  EXPECT_EQ(c.m, 4);
  EXPECT_EQ(c.m_star, 2);
  EXPECT_EQ(c.resolved_m_star(), 2);
  EXPECT_EQ(c.weights, dkrr::WeightScheme::Kind::subset);
  ASSERT_EQ(c.score_kinds.size(), 2u);
  EXPECT_EQ(c.score_kinds[0], dkrr::ScoreKind::dgcv);
  EXPECT_EQ(c.score_kinds[1], dkrr::ScoreKind::cp);
  EXPECT_DOUBLE_EQ(c.sigma2, 0.25);
  EXPECT_EQ(c.optimizer, ExperimentConfig::Optimizer::grid);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.threads, 2);
  EXPECT_EQ(c.replicates, 3);
  EXPECT_EQ(c.output_dir, "/tmp/somewhere");
  EXPECT_EQ(c.resamples, 5);
  EXPECT_DOUBLE_EQ(c.subsample_fraction, 0.4);
}

TEST(ParseConfig, DefaultsAreConservative) {
  const ExperimentConfig c = parse_config(base_config().dump());
  EXPECT_EQ(c.m, 1);
  EXPECT_EQ(c.m_star, 0);
  EXPECT_FALSE(c.m_star_tenth);
  EXPECT_EQ(c.weights, dkrr::WeightScheme::Kind::uniform);
  ASSERT_EQ(c.score_kinds.size(), 1u);
  EXPECT_EQ(c.score_kinds[0], dkrr::ScoreKind::dgcv);
  EXPECT_TRUE(std::isnan(c.sigma2));
  EXPECT_EQ(c.optimizer, ExperimentConfig::Optimizer::grid);
  EXPECT_EQ(c.seed, 0u);
  EXPECT_EQ(c.threads, 0);
  EXPECT_EQ(c.replicates, 1);
  EXPECT_EQ(c.output_dir, ".");
  EXPECT_EQ(c.resamples, 0);
  EXPECT_DOUBLE_EQ(c.subsample_fraction, 0.5);
}

TEST(ParseConfig, LambdaGridSpellings) {
  json j = base_config();
  j["lambda"] = {{"log_min", -8.0}, {"log_max", -2.0}, {"count", 4}};
  {
    const auto grid = parse_config(j.dump()).lambda.resolve(100);
    const auto want = dkrr::log_lambda_grid(-8.0, -2.0, 4);
    ASSERT_EQ(grid.size(), want.size());
    for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_DOUBLE_EQ(grid[i], want[i]);
  }
  j["lambda"] = {{"log10_min", -3.0}, {"log10_max", -1.0}, {"count", 3}};
  {
    const auto grid = parse_config(j.dump()).lambda.resolve(100);
    ASSERT_EQ(grid.size(), 3u);
    EXPECT_REL_NEAR(grid[0], 1e-3, 1e-12);
    EXPECT_REL_NEAR(grid[1], 1e-2, 1e-12);
    EXPECT_REL_NEAR(grid[2], 1e-1, 1e-12);
  }
  j["lambda"] = {{"values", {0.5, 0.1}}};
  {
    const auto grid = parse_config(j.dump()).lambda.resolve(100);
    ASSERT_EQ(grid.size(), 2u);
    EXPECT_DOUBLE_EQ(grid[0], 0.5);
    EXPECT_DOUBLE_EQ(grid[1], 0.1);
  }
  j["lambda"] = {{"values_over_n", {1.0, 6.0}}};
  {
    const auto grid = parse_config(j.dump()).lambda.resolve(100);
    ASSERT_EQ(grid.size(), 2u);
    EXPECT_DOUBLE_EQ(grid[0], 0.01);
    EXPECT_DOUBLE_EQ(grid[1], 0.06);
  }
}

TEST(ParseConfig, RejectsBadLambdaGrids) {
  json j = base_config();
  j["lambda"] = {{"values", {0.1}}, {"log_min", -3.0}};
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "lambda");
  j["lambda"] = {{"values", json::array()}};
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "nonempty");
  j["lambda"] = {{"values", {-0.1}}};
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "finite");
  j["lambda"] = {{"log_min", -2.0}, {"log_max", -4.0}, {"count", 3}};
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "min");
  j["lambda"] = {{"log_min", -4.0}, {"log_max", -2.0}, {"count", 0}};
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "count");
}

TEST(ParseConfig, KernelFormsAndGrids) {
  json j = base_config();
  j["kernel"] = {{"family", "gaussian"}, {"phi_grid", {1.0, 2.0, 3.0}}};
  {
    const auto c = parse_config(j.dump());
    ASSERT_EQ(c.kernels.size(), 3u);
    EXPECT_DOUBLE_EQ(c.kernels[0].theta[0], 1.0);
    EXPECT_DOUBLE_EQ(c.kernels[2].theta[0], 3.0);
  }
  j["kernel"] = {{"family", "sobolev"}, {"nu", 2}};
  EXPECT_EQ(parse_config(j.dump()).kernels[0].family, dkrr::KernelFamily::sobolev_periodic);
  j["kernel"] = json::parse(
      R"({"family": "additive", "children": [
            {"family": "gaussian", "phi": 1.0},
            {"family": "polynomial", "degree": 2}]})");
  {
    const auto c = parse_config(j.dump());
    ASSERT_EQ(c.kernels.size(), 1u);
    EXPECT_EQ(c.kernels[0].family, dkrr::KernelFamily::additive);
    ASSERT_EQ(c.kernels[0].children.size(), 2u);
  }

  j["kernel"] = {{"family", "gaussian"}, {"phi", 1.0}, {"phi_grid", {2.0}}};
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); },
                                               "exactly one of phi, phi_grid");
  j["kernel"] = json::parse(
      R"({"family": "additive", "children": [{"family": "gaussian", "phi_grid": [1.0, 2.0]}]})");
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); },
                                               "not allowed here");
  j["kernel"] = {{"family", "bogus"}};
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "kernel.family");
  j["kernel"] = {{"family", "gaussian"}, {"phi", 1.0}, {"extra", 1}};
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "unknown field");
}

TEST(ParseConfig, SubsetWeightRules) {
  json j = base_config();
  j["m"] = 20;
  j["m_star"] = "tenth";
  {
    const auto c = parse_config(j.dump());
    EXPECT_TRUE(c.m_star_tenth);
    EXPECT_EQ(c.resolved_m_star(), dkrr::default_m_star(20));
    // m_star alone flips the default scheme to subset
    EXPECT_EQ(c.weights, dkrr::WeightScheme::Kind::subset);
    EXPECT_EQ(c.weight_scheme().kind, dkrr::WeightScheme::Kind::subset);
  }
  j["m_star"] = 3;
  j["weights"] = "uniform";  // explicit uniform wins over the default
  EXPECT_EQ(parse_config(j.dump()).weights, dkrr::WeightScheme::Kind::uniform);

  j.erase("m_star");
  j["weights"] = "subset";
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "m_star");

  j["weights"] = "diag";
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "weights");

  j.erase("weights");
  j["m_star"] = 0;
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "m_star");
  j["m_star"] = 21;
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "<= m");
  j["m_star"] = "half";
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "tenth");
}

TEST(ParseConfig, OptimizerForms) {
  json j = base_config();
  j["optimizer"] = "newton";
  EXPECT_EQ(parse_config(j.dump()).optimizer, ExperimentConfig::Optimizer::newton);

  j["optimizer"] = {{"newton", {{"init_eta", -5.0}, {"init_theta", {0.5}}}}};
  {
    const auto c = parse_config(j.dump());
    EXPECT_EQ(c.optimizer, ExperimentConfig::Optimizer::newton);
    EXPECT_TRUE(c.newton.has_eta);
    EXPECT_DOUBLE_EQ(c.newton.init_eta, -5.0);
    ASSERT_EQ(c.newton.init_theta.size(), 1u);
    EXPECT_DOUBLE_EQ(c.newton.init_theta[0], 0.5);
  }

  j["optimizer"] = "sgd";
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "optimizer");
  j["optimizer"] = {{"newton", {{"step", 1.0}}}};
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); },
                                               "optimizer.newton");
}

TEST(ParseConfig, RejectsStructuralMistakes) {
  expect_throw_contains<std::invalid_argument>([&] { parse_config("{"); }, "not valid JSON");
  expect_throw_contains<std::invalid_argument>([&] { parse_config("[1]"); }, "top level");

  json j = base_config();
  j["bogus"] = 1;
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "bogus");

  j = base_config();
  j.erase("lambda");
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "lambda");

  j = base_config();
  j["data"] = {{"csv", "a.csv"}, {"simulate", {{"model", "beta_mixture"}, {"n", 4}, {"sigma", 0.1}}}};
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); },
                                               "exactly one of csv, simulate");

  j = base_config();
  j["data"]["simulate"]["model"] = "linear";
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); },
                                               "beta_mixture or wendland");

  j = base_config();
  j["data"]["simulate"]["sigma"] = -0.5;
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); },
                                               "data.simulate.sigma");

  j = base_config();
  j["data"]["simulate"]["burn_in"] = 3;
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); },
                                               "data.simulate.burn_in");

  j = base_config();
  j["scores"] = {"dgcv", "press"};
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "scores");
  j["scores"] = json::array();
  expect_throw_contains<std::invalid_argument>([&] { parse_config(j.dump()); }, "nonempty");
}

TEST(ParseConfig, CsvSourceAndLoadConfig) {
  TempDir tmp("cfg_load");
  json j = base_config();
  j["data"] = {{"csv", "data.csv"}, {"response", "target"}, {"standardize", true}};
  const auto path = tmp.str("exp.json");
  {
    std::ofstream out(path);
    out << j.dump(2);
  }
  const ExperimentConfig c = dkrr::load_config(path);
  EXPECT_EQ(c.data.source, dkrr::DataConfig::Source::csv);
  EXPECT_EQ(c.data.path, "data.csv");
  EXPECT_EQ(c.data.response, "target");
  EXPECT_TRUE(c.data.standardize);

  EXPECT_THROW(dkrr::load_config(tmp.str("missing.json")), dkrr::IngestionError);
}

TEST(Runner, SimulateWritesLoadableDatasets) {
  TempDir tmp("run_sim");
  const auto path = tmp.str("beta.csv");
  EXPECT_EQ(dkrr::cmd_simulate("beta", 50, 0.3, 7, path), 0);
  const dkrr::Dataset d = dkrr::load_dataset_csv(path, "y", false);
  EXPECT_EQ(d.n(), 50);
  EXPECT_EQ(d.p(), 1);
  EXPECT_TRUE(d.has_f0());
  EXPECT_TRUE(d.has_sigma());
  EXPECT_DOUBLE_EQ(d.sigma, 0.3);
  const dkrr::Dataset want = dkrr::simulate_beta_mixture(50, 0.3, 7);
  // shortest round-trip formatting is exact
  EXPECT_TRUE((d.y.array() == want.y.array()).all());
  EXPECT_TRUE((d.x.array() == want.x.array()).all());
  EXPECT_TRUE((d.f0.array() == want.f0.array()).all());

  const auto wpath = tmp.str("field.csv");
  EXPECT_EQ(dkrr::cmd_simulate("wendland", 30, 0.2, 9, wpath, /*p=*/4, /*rho=*/0.3), 0);
  const dkrr::Dataset w = dkrr::load_dataset_csv(wpath, "y", false);
  EXPECT_EQ(w.n(), 30);
  EXPECT_EQ(w.p(), 4);

  EXPECT_THROW(dkrr::cmd_simulate("linear", 10, 0.1, 1, tmp.str("x.csv")),
               std::invalid_argument);
}

TEST(Runner, TuneGridWritesSweepAndSelection) {
  TempDir tmp("run_tune");
  json j = base_config();
  j["m"] = 2;
  j["scores"] = {"dgcv", "cp"};
  j["sigma2"] = 0.16;
  j["seed"] = 11;
  j["output_dir"] = tmp.str("out");
  const ExperimentConfig c = parse_config(j.dump());

  EXPECT_EQ(dkrr::cmd_tune(c), 0);

  // the sweep file must byte-match an in-process rerun of the same experiment
  const dkrr::Dataset data = dkrr::run::load_or_simulate(c);
  const dkrr::Partition part = dkrr::run::partition_for(c, data.n());
  std::vector<dkrr::ScoreRequest> kinds{dkrr::ScoreRequest::dgcv(),
                                        dkrr::ScoreRequest::cp(0.16)};
  const dkrr::TuneReport rep = dkrr::tune_grid(data, part, c.weight_scheme(), c.kernels,
                                               c.lambda.resolve(data.n()), kinds);
  dkrr::run::write_sweep_csv(tmp.path / "want.csv", rep, false);
  EXPECT_EQ(read_file(tmp.path / "out" / "sweep.csv"), read_file(tmp.path / "want.csv"));

  const auto table = read_csv(tmp.path / "out" / "sweep.csv");
  ASSERT_EQ(table.size(), 1u + 2u * 2u);  // header + points x kinds
  const std::vector<std::string> header{"lambda", "theta_1", "kind", "score",
                                        "trace_stat", "wall_ms"};
  EXPECT_EQ(table[0], header);
  for (std::size_t r = 1; r < table.size(); ++r) EXPECT_EQ(table[r].back(), "0");

  const json sel = json::parse(read_file(tmp.path / "out" / "selection.json"));
  EXPECT_EQ(sel.at("command"), "tune");
  EXPECT_EQ(sel.at("optimizer"), "grid");
  ASSERT_EQ(sel.at("selections").size(), 2u);
  const auto& s0 = sel.at("selections")[0];
  EXPECT_EQ(s0.at("kind"), "dgcv");
  EXPECT_FALSE(s0.at("degenerate").get<bool>());
  const auto best = static_cast<std::size_t>(rep.argmin[0]);
  EXPECT_DOUBLE_EQ(s0.at("lambda").get<double>(), rep.points[best].lambda);
  EXPECT_DOUBLE_EQ(s0.at("score").get<double>(), rep.scores[0][best]);
}

TEST(Runner, SweepIsByteIdenticalAcrossThreadCounts) {
  TempDir tmp("run_threads");
  json j = base_config();
  j["m"] = 4;
  j["kernel"] = {{"family", "gaussian"}, {"phi_grid", {0.4, 0.8}}};
  j["seed"] = 3;

  j["output_dir"] = tmp.str("one");
  dkrr::RunFlags f1;
  f1.threads = 1;
  EXPECT_EQ(dkrr::cmd_tune(parse_config(j.dump()), f1), 0);

  j["output_dir"] = tmp.str("eight");
  dkrr::RunFlags f8;
  f8.threads = 8;
  EXPECT_EQ(dkrr::cmd_tune(parse_config(j.dump()), f8), 0);

  const std::string a = read_file(tmp.path / "one" / "sweep.csv");
  const std::string b = read_file(tmp.path / "eight" / "sweep.csv");
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a, b);
}

TEST(Runner, NgcvSelectionCarriesPerBlockTable) {
  TempDir tmp("run_ngcv");
  json j = base_config();
  j["m"] = 2;
  j["scores"] = {"ngcv"};
  j["output_dir"] = tmp.str("out");
  EXPECT_EQ(dkrr::cmd_tune(parse_config(j.dump())), 0);

  const auto blocks = read_csv(tmp.path / "out" / "ngcv_blocks.csv");
  ASSERT_EQ(blocks.size(), 3u);  // header + one row per block
  EXPECT_EQ(blocks[0][0], "block");
  EXPECT_EQ(blocks[1][0], "0");
  EXPECT_EQ(blocks[2][0], "1");

  const json sel = json::parse(read_file(tmp.path / "out" / "selection.json"));
  const auto& s0 = sel.at("selections")[0];
  EXPECT_EQ(s0.at("kind"), "ngcv");
  EXPECT_TRUE(s0.contains("lambda_mean"));
  EXPECT_EQ(s0.at("per_block_table"), "ngcv_blocks.csv");
  EXPECT_TRUE(s0.contains("loss"));  // simulated data carries f0
}

TEST(Runner, DegenerateGridExitsWithCodeThree) {
  TempDir tmp("run_degen");
  // four well-separated points keep the unregularized solve stable, so the
  // single-block fit interpolates and dgcv is infinite at lambda = 0
  const auto data_path = tmp.str("tiny.csv");
  {
    std::ofstream out(data_path);
    out << "x1,y\n0.1,0.4\n0.35,-0.2\n0.6,0.1\n0.85,0.3\n";
  }
  json j;
  j["data"] = {{"csv", data_path}};
  j["kernel"] = {{"family", "gaussian"}, {"phi", 0.02}};
  j["lambda"] = {{"values", {0.0}}};
  j["m"] = 1;
  j["output_dir"] = tmp.str("out");
  EXPECT_EQ(dkrr::cmd_tune(parse_config(j.dump())), 3);
  const json sel = json::parse(read_file(tmp.path / "out" / "selection.json"));
  EXPECT_TRUE(sel.at("selections")[0].at("degenerate").get<bool>());
}

TEST(Runner, NewtonTuneWritesTraceAndSelection) {
  TempDir tmp("run_newton");
  json j = base_config();
  j["kernel"] = {{"family", "sobolev"}, {"nu", 2}};
  j["m"] = 2;
  j["optimizer"] = {{"newton", {{"init_eta", -4.0}}}};
  j["output_dir"] = tmp.str("out");
  EXPECT_EQ(dkrr::cmd_tune(parse_config(j.dump())), 0);

  const auto trace = read_csv(tmp.path / "out" / "newton_trace.csv");
  ASSERT_GE(trace.size(), 2u);
  EXPECT_EQ(trace[0][0], "iter");

  const json sel = json::parse(read_file(tmp.path / "out" / "selection.json"));
  EXPECT_EQ(sel.at("optimizer"), "newton");
  const auto& s0 = sel.at("selections")[0];
  EXPECT_TRUE(std::isfinite(s0.at("lambda").get<double>()));
  EXPECT_TRUE(s0.contains("flag"));

  // the optimizer flag on the command line overrides the config
  json g = base_config();
  g["m"] = 2;
  g["output_dir"] = tmp.str("forced");
  dkrr::RunFlags flags;
  flags.optimizer = "newton";
  EXPECT_EQ(dkrr::cmd_tune(parse_config(g.dump()), flags), 0);
  EXPECT_TRUE(std::filesystem::exists(tmp.path / "forced" / "newton_trace.csv"));

  // several candidate kernels cannot feed a single newton run
  json bad = base_config();
  bad["kernel"] = {{"family", "gaussian"}, {"phi_grid", {0.4, 0.8}}};
  bad["optimizer"] = "newton";
  bad["output_dir"] = tmp.str("bad");
  EXPECT_THROW(dkrr::cmd_tune(parse_config(bad.dump())), std::invalid_argument);
}

TEST(Runner, FitThenPredictRoundTrips) {
  TempDir tmp("run_fitpred");
  const auto data_path = tmp.str("train.csv");
  ASSERT_EQ(dkrr::cmd_simulate("beta", 40, 0.3, 13, data_path), 0);

  json j;
  j["data"] = {{"csv", data_path}};
  j["kernel"] = {{"family", "gaussian"}, {"phi", 0.6}};
  j["lambda"] = {{"values", {1e-2}}};
  j["m"] = 2;
  j["seed"] = 21;
  const ExperimentConfig c = parse_config(j.dump());

  const auto model_path = tmp.str("model.json");
  EXPECT_EQ(dkrr::cmd_fit(c, {}, model_path), 0);
  const json model = json::parse(read_file(model_path));
  EXPECT_EQ(model.at("m"), 2);
  EXPECT_EQ(model.at("n"), 40);
  EXPECT_DOUBLE_EQ(model.at("lambda").get<double>(), 1e-2);
  ASSERT_EQ(model.at("blocks").size(), 2u);

  const auto pred_path = tmp.str("pred.csv");
  EXPECT_EQ(dkrr::cmd_predict(model_path, data_path, pred_path), 0);
  const auto table = read_csv(pred_path);
  ASSERT_EQ(table.size(), 41u);
  EXPECT_EQ(table[0], (std::vector<std::string>{"x1", "fhat"}));

  // reproduce the prediction directly from the block solves
  const dkrr::Dataset data = dkrr::run::load_or_simulate(c);
  const dkrr::Partition part = dkrr::run::partition_for(c, data.n());
  const dkrr::VectorXd w = dkrr::VectorXd::Ones(data.n());
  dkrr::VectorXd acc = dkrr::VectorXd::Zero(data.n());
  for (std::size_t k = 0; k < part.blocks.size(); ++k) {
    const auto fit = dkrr::fit_block(data, part.blocks[k], c.kernels[0], 1e-2, w,
                                     static_cast<int>(k));
    acc += dkrr::gram(c.kernels[0], data.x, fit.x) * fit.beta;
  }
  acc /= static_cast<double>(part.m());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double got = dkrr::parse_double(table[static_cast<std::size_t>(i) + 1][1], "fhat");
    EXPECT_REL_NEAR(got, acc[i], 1e-12);
  }

  // a lambda flag overrides the config grid
  dkrr::RunFlags flags;
  flags.lambda = 2e-2;
  const auto model2 = tmp.str("model2.json");
  EXPECT_EQ(dkrr::cmd_fit(c, flags, model2), 0);
  EXPECT_DOUBLE_EQ(json::parse(read_file(model2)).at("lambda").get<double>(), 2e-2);
}

TEST(Runner, PredictValidatesModelAndData) {
  TempDir tmp("run_predbad");
  EXPECT_THROW(dkrr::cmd_predict(tmp.str("missing.json"), tmp.str("d.csv"), tmp.str("o.csv")),
               dkrr::IngestionError);

  // model expecting two covariates fed with one
  const json model = json::parse(R"({
    "kernel": {"family": "gaussian", "phi": 1.0},
    "lambda": 0.01, "m": 1, "n": 2, "p": 2,
    "blocks": [{"x": [[0.1, 0.2], [0.3, 0.4]], "beta": [1.0, -1.0]}]
  })");
  const auto model_path = tmp.str("model.json");
  {
    std::ofstream out(model_path);
    out << model.dump();
  }
  const auto narrow = tmp.str("narrow.csv");
  {
    std::ofstream out(narrow);
    out << "x1\n0.5\n";
  }
  EXPECT_THROW(dkrr::cmd_predict(model_path, narrow, tmp.str("o.csv")), std::invalid_argument);

  const auto no_x = tmp.str("nox.csv");
  {
    std::ofstream out(no_x);
    out << "a,b\n1,2\n";
  }
  EXPECT_THROW(dkrr::cmd_predict(model_path, no_x, tmp.str("o.csv")), dkrr::IngestionError);
}

TEST(Runner, CovariateLoaderPicksNamedColumns) {
  TempDir tmp("run_cov");
  const auto path = tmp.str("q.csv");
  {
    std::ofstream out(path);
    out << "note,x2,y,x1\nfoo,0.5,9,0.25\nbar,0.75,9,0.125\n";
  }
  const dkrr::MatrixXd x = dkrr::run::load_covariates_csv(path);
  ASSERT_EQ(x.rows(), 2);
  ASSERT_EQ(x.cols(), 2);  // x2 then x1, header order
  EXPECT_DOUBLE_EQ(x(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(x(0, 1), 0.25);
  EXPECT_DOUBLE_EQ(x(1, 0), 0.75);

  const auto ragged = tmp.str("ragged.csv");
  {
    std::ofstream out(ragged);
    out << "x1\n1,2\n";
  }
  EXPECT_THROW(dkrr::run::load_covariates_csv(ragged), dkrr::IngestionError);
  const auto empty = tmp.str("empty.csv");
  { std::ofstream out(empty); }
  EXPECT_THROW(dkrr::run::load_covariates_csv(empty), dkrr::IngestionError);
}

TEST(Runner, DiagnoseWritesReportResampleAndGap) {
  TempDir tmp("run_diag");
  json j = base_config();
  j["data"]["simulate"]["n"] = 36;
  j["m"] = 2;
  j["lambda"] = {{"values", {1e-2}}};
  j["replicates"] = 2;
  j["output_dir"] = tmp.str("out");
  const ExperimentConfig c = parse_config(j.dump());

  dkrr::RunFlags flags;
  flags.resamples = 2;
  EXPECT_EQ(dkrr::cmd_diagnose(c, flags), 0);

  const auto table = read_csv(tmp.path / "out" / "diagnostics.csv");
  ASSERT_EQ(table.size(), 2u);
  ASSERT_EQ(table[0].size(), 11u);
  EXPECT_EQ(table[0][0], "lambda");
  EXPECT_EQ(table[1][1], "2");  // m
  // simulated data carries sigma and f0, so the noise and gap columns fill in
  for (const char* col : {"q1", "q2", "q_mc", "loss_risk_gap_median"}) {
    std::size_t at = 0;
    while (at < table[0].size() && table[0][at] != col) ++at;
    ASSERT_LT(at, table[0].size());
    EXPECT_TRUE(std::isfinite(dkrr::parse_double(table[1][at], col))) << col;
  }

  const json rep = json::parse(read_file(tmp.path / "out" / "diagnose.json"));
  EXPECT_TRUE(rep.contains("stats"));
  EXPECT_TRUE(rep.contains("loss_risk_gap"));
  EXPECT_EQ(rep.at("resample").at("replicates"), 2);

  const auto rs = read_csv(tmp.path / "out" / "resample.csv");
  ASSERT_EQ(rs.size(), 5u);  // header + 2 replicates + mean + sd
  EXPECT_EQ(rs[3][0], "mean");
  EXPECT_EQ(rs[4][0], "sd");

  // a multi-point grid needs an explicit lambda
  json multi = base_config();
  multi["output_dir"] = tmp.str("multi");
  EXPECT_EQ(dkrr::run_guarded([&] { return dkrr::cmd_diagnose(parse_config(multi.dump())); }),
            2);
  dkrr::RunFlags pick;
  pick.lambda = 5e-3;
  EXPECT_EQ(dkrr::cmd_diagnose(parse_config(multi.dump()), pick), 0);
  const auto t2 = read_csv(tmp.path / "multi" / "diagnostics.csv");
  EXPECT_EQ(t2[1][0], dkrr::format_double(5e-3));
}

TEST(Runner, ProfileAndBenchTables) {
  TempDir tmp("run_prof");
  json j = base_config();
  j["output_dir"] = tmp.str("out");
  const ExperimentConfig c = parse_config(j.dump());

  EXPECT_EQ(dkrr::cmd_profile_m(c, {1, 2}), 0);
  const auto prof = read_csv(tmp.path / "out" / "profile.csv");
  ASSERT_EQ(prof.size(), 3u);
  EXPECT_EQ(prof[0][0], "m");
  EXPECT_EQ(prof[1][0], "1");
  EXPECT_EQ(prof[2][0], "2");

  EXPECT_EQ(dkrr::cmd_bench(c, {1, 2}), 0);
  const auto bench = read_csv(tmp.path / "out" / "bench.csv");
  ASSERT_EQ(bench.size(), 3u);
  for (std::size_t r = 1; r < bench.size(); ++r) {
    EXPECT_GE(dkrr::parse_double(bench[r][3], "wall_ms"), 0.0);
    EXPECT_TRUE(std::isfinite(dkrr::parse_double(bench[r][4], "dgcv")));
  }
  EXPECT_THROW(dkrr::cmd_bench(c, {}), std::invalid_argument);
}

TEST(Runner, GuardedExitCodesFollowTheErrorTaxonomy) {
  using dkrr::run_guarded;
  EXPECT_EQ(run_guarded([] { return 0; }), 0);
  EXPECT_EQ(run_guarded([]() -> int { throw dkrr::NoSelection("x"); }), 3);
  EXPECT_EQ(run_guarded([]() -> int { throw dkrr::IngestionError("x"); }), 2);
  EXPECT_EQ(run_guarded([]() -> int { throw dkrr::UnsupportedOperation("x"); }), 2);
  EXPECT_EQ(run_guarded([]() -> int { throw std::invalid_argument("x"); }), 2);
  EXPECT_EQ(run_guarded([]() -> int { throw dkrr::ResourceLimit("x"); }), 1);
  EXPECT_EQ(run_guarded([]() -> int { throw dkrr::SingularSystem("x"); }), 1);
  EXPECT_EQ(run_guarded([]() -> int { throw std::runtime_error("x"); }), 1);
}
