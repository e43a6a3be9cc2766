#include "dkrr/block_krr.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "testutil.hpp"

using dkrr::BlockFit;
using dkrr::Dataset;
using dkrr::KernelSpec;
using dkrr::MatrixXd;
using dkrr::Partition;
using dkrr::VectorXd;

TEST(BlockFit, ScalarHandInstance) {
  // one observation: K = [1], M = 1 + 1*0.5, beta = 2 / 1.5 = 4/3,
  // A_11 = 1/1.5 = 2/3
  Dataset d;
  d.x = MatrixXd::Zero(1, 1);
  d.y = VectorXd::Constant(1, 2.0);
  const VectorXd w = VectorXd::Ones(1);
  const BlockFit fit =
      dkrr::fit_block(d, {0}, KernelSpec::gaussian(1.0), 0.5, w, 0);
  EXPECT_REL_NEAR(fit.beta[0], 4.0 / 3.0, 1e-15);
  EXPECT_REL_NEAR(fit.yhat[0], 4.0 / 3.0, 1e-15);
  ASSERT_TRUE(fit.have_traces);
  EXPECT_REL_NEAR(fit.trace, 2.0 / 3.0, 1e-15);
  EXPECT_REL_NEAR(fit.trace_ww, 2.0 / 3.0, 1e-15);
}

TEST(BlockFit, MatchesDenseOracle) {
  const Dataset d = testutil::smooth_dataset(40, 2, 0.3, 101);
  const KernelSpec spec = KernelSpec::gaussian(0.6);
  const double lambda = 1e-2;
  const VectorXd w = VectorXd::Ones(d.n());
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 5; i < 25; ++i) idx.push_back(i);

  const BlockFit fit = dkrr::fit_block(d, idx, spec, lambda, w, 0);
  const MatrixXd xk = oracle::rows(d.x, idx);
  const VectorXd yk = oracle::gathered(d.y, idx);
  MatrixXd m = dkrr::gram(spec, xk);
  const MatrixXd kk = m;
  m.diagonal().array() += static_cast<double>(idx.size()) * lambda;
  const VectorXd beta_or = m.inverse() * yk;
  EXPECT_LE((fit.beta - beta_or).norm(), 1e-9 * std::max(1.0, beta_or.norm()));
  EXPECT_LE((fit.yhat - kk * beta_or).norm(), 1e-9);

  const MatrixXd a = kk * m.inverse();
  EXPECT_REL_NEAR(fit.trace, a.trace(), 1e-10);
  double tww = 0.0;
  for (Eigen::Index j = 0; j < a.rows(); ++j) tww += a(j, j);  // uniform weights
  EXPECT_REL_NEAR(fit.trace_ww, tww, 1e-10);
}

TEST(BlockFit, ZeroWeightBlockSkipsTraces) {
  const Dataset d = testutil::smooth_dataset(20, 1, 0.1, 7);
  const VectorXd w = VectorXd::Zero(d.n());
  std::vector<Eigen::Index> idx{0, 1, 2, 3, 4};
  const BlockFit fit = dkrr::fit_block(d, idx, KernelSpec::gaussian(1.0), 1e-3, w, 0);
  EXPECT_FALSE(fit.have_traces);
  EXPECT_DOUBLE_EQ(fit.trace_ww, 0.0);
}

TEST(BlockFit, TraceDecreasesInLambda) {
  const Dataset d = testutil::smooth_dataset(30, 2, 0.2, 13);
  const VectorXd w = VectorXd::Ones(d.n());
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < 30; ++i) idx.push_back(i);
  double last = 31.0;
  for (double lam : {1e-6, 1e-4, 1e-2, 1.0}) {
    const BlockFit fit = dkrr::fit_block(d, idx, KernelSpec::gaussian(0.8), lam, w, 0);
    EXPECT_LT(fit.trace, last);
    EXPECT_GT(fit.trace, 0.0);
    last = fit.trace;
  }
}

TEST(BlockFit, RejectsBadInputs) {
  const Dataset d = testutil::smooth_dataset(10, 1, 0.1, 3);
  const VectorXd w = VectorXd::Ones(d.n());
  EXPECT_THROW(dkrr::fit_block(d, {}, KernelSpec::gaussian(1.0), 0.1, w, 0),
               std::invalid_argument);
  EXPECT_THROW(dkrr::fit_block(d, {0, 1}, KernelSpec::gaussian(1.0), -0.1, w, 0),
               std::invalid_argument);
  EXPECT_THROW(
      dkrr::fit_block(d, {0, 1}, KernelSpec::gaussian(1.0),
                      std::numeric_limits<double>::infinity(), w, 0),
      std::invalid_argument);
}

TEST(Predict, BlockPredictionMatchesDirectGram) {
  const Dataset d = testutil::smooth_dataset(25, 2, 0.2, 19);
  const KernelSpec spec = KernelSpec::gaussian(0.9);
  const VectorXd w = VectorXd::Ones(d.n());
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < 12; ++i) idx.push_back(i);
  const BlockFit fit = dkrr::fit_block(d, idx, spec, 1e-2, w, 0);

  const MatrixXd xq = testutil::smooth_dataset(9, 2, 0.0, 20).x;
  const VectorXd direct = dkrr::gram(spec, xq, fit.x) * fit.beta;
  EXPECT_LE((dkrr::predict_block(fit, xq) - direct).norm(), 1e-12);
  // chunked evaluation agrees bit for bit with one big slab
  EXPECT_TRUE((dkrr::predict_block(fit, xq, 2).array() ==
               dkrr::predict_block(fit, xq, 4096).array())
                  .all());
  EXPECT_THROW(dkrr::predict_block(fit, MatrixXd::Zero(3, 5)), std::invalid_argument);
}

TEST(Predict, AveragedEstimatorIsBlockMean) {
  const Dataset d = testutil::smooth_dataset(36, 2, 0.2, 29);
  const Partition part = dkrr::random_partition(d.n(), 3, 5);
  const KernelSpec spec = KernelSpec::gaussian(0.7);
  const VectorXd w = VectorXd::Ones(d.n());
  std::vector<BlockFit> fits;
  for (int k = 0; k < 3; ++k)
    fits.push_back(
        dkrr::fit_block(d, part.blocks[static_cast<std::size_t>(k)], spec, 1e-2, w, k));

  const MatrixXd xq = d.x.topRows(10);
  VectorXd mean = VectorXd::Zero(10);
  for (const auto& f : fits) mean += dkrr::predict_block(f, xq);
  mean /= 3.0;
  EXPECT_LE((dkrr::predict_averaged(fits, xq) - mean).norm(), 1e-14);

  // mixed lambdas are rejected
  fits[1] = dkrr::fit_block(d, part.blocks[1], spec, 2e-2, w, 1);
  EXPECT_THROW(dkrr::predict_averaged(fits, xq), std::invalid_argument);
}

TEST(DenseHat, MatchesInverseOracle) {
  const Dataset d = testutil::smooth_dataset(48, 2, 0.25, 31);
  const Partition part = dkrr::random_partition(d.n(), 4, 9);
  const KernelSpec spec = KernelSpec::gaussian(0.8);
  const double lambda = 5e-3;
  const VectorXd w = VectorXd::Ones(d.n());
  const dkrr::TuneState st = dkrr::make_tune_state(d, part, w, spec, lambda);
  const MatrixXd fast = dkrr::dense_averaged_hat(st.fits, d);
  const MatrixXd slow = oracle::dense_abar(d, part, spec, lambda);
  EXPECT_LE((fast - slow).cwiseAbs().maxCoeff(), 1e-10);
  // the cap guards the quadratic memory path
  EXPECT_THROW(dkrr::dense_averaged_hat(st.fits, d, 10), dkrr::ResourceLimit);
}

TEST(TuneState, AveragedFitMatchesDenseSmoother) {
  const Dataset d = testutil::smooth_dataset(45, 2, 0.3, 37);
  const Partition part = dkrr::random_partition(d.n(), 3, 11);
  const KernelSpec spec = KernelSpec::gaussian(1.1);
  const double lambda = 1e-2;
  const VectorXd w = VectorXd::Ones(d.n());
  const dkrr::TuneState st = dkrr::make_tune_state(d, part, w, spec, lambda);
  ASSERT_EQ(st.eval_idx.size(), static_cast<std::size_t>(d.n()));
  const VectorXd fbar_or = oracle::dense_abar(d, part, spec, lambda) * d.y;
  for (Eigen::Index i = 0; i < d.n(); ++i) EXPECT_NEAR(st.fbar[i], fbar_or[i], 1e-9);
}

TEST(TuneState, SubsetWeightsRestrictEvaluation) {
  const Dataset d = testutil::smooth_dataset(40, 1, 0.2, 41);
  const Partition part = dkrr::random_partition(d.n(), 4, 13);
  const VectorXd w = dkrr::make_weights(dkrr::WeightScheme::subset(2), part, d.n());
  const dkrr::TuneState st =
      dkrr::make_tune_state(d, part, w, KernelSpec::gaussian(1.0), 1e-2);
  std::size_t retained = part.blocks[0].size() + part.blocks[1].size();
  EXPECT_EQ(st.eval_idx.size(), retained);
  for (Eigen::Index i : st.eval_idx) EXPECT_GT(st.weights[i], 0.0);
  // fbar is NaN off the retained blocks, defined on them
  for (Eigen::Index i : part.blocks[3]) EXPECT_TRUE(std::isnan(st.fbar[i]));
  for (Eigen::Index i : part.blocks[0]) EXPECT_TRUE(std::isfinite(st.fbar[i]));

  // eval_all overrides the restriction
  const dkrr::TuneState all = dkrr::make_tune_state(d, part, w, KernelSpec::gaussian(1.0), 1e-2,
                                                    dkrr::StateOptions{false, true});
  EXPECT_EQ(all.eval_idx.size(), static_cast<std::size_t>(d.n()));
}

TEST(TuneState, InputValidation) {
  const Dataset d = testutil::smooth_dataset(20, 1, 0.2, 43);
  const Partition part = dkrr::random_partition(d.n(), 2, 1);
  EXPECT_THROW(dkrr::make_tune_state(d, part, VectorXd::Ones(5), KernelSpec::gaussian(1.0), 0.1),
               std::invalid_argument);
  Partition bad = part;
  bad.blocks[0].pop_back();
  EXPECT_THROW(
      dkrr::make_tune_state(d, bad, VectorXd::Ones(d.n()), KernelSpec::gaussian(1.0), 0.1),
      std::invalid_argument);
}
