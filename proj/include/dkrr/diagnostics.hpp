#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Eigenvalues>

#include "dkrr/block_krr.hpp"
#include "dkrr/parallel.hpp"
#include "dkrr/rng.hpp"
#include "dkrr/scores.hpp"

namespace dkrr {

// Dense linear algebra is allowed for these desk-scale checks; anything
// larger must go through the resampling path.
inline constexpr Eigen::Index kDenseCap = 4096;

namespace detail {

inline void check_dense_cap(Eigen::Index n, Eigen::Index cap, const char* what) {
  if (n > cap)
    throw ResourceLimit(std::string(what) + ": N = " + std::to_string(n) +
                        " exceeds the dense cap of " + std::to_string(cap));
}

// interpolated quantile of a sorted vector, q in [0, 1]
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace detail

// Maximal marginal degrees of freedom N*max_i diag(K(K+N lambda I)^{-1})
// together with the effective degrees of freedom tr(K(K+N lambda I)^{-1}).
// The max always dominates the mean, so d_lambda >= effective_df.
struct DegreesOfFreedom {
  double d_lambda = 0.0;
  double effective_df = 0.0;
};

inline DegreesOfFreedom d_lambda(const Dataset& data, const KernelSpec& spec, double lambda,
                                 Eigen::Index dense_cap = kDenseCap) {
  validate(data);
  validate(spec);
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("d_lambda: lambda must be finite and >= 0");
  const auto n = data.n();
  detail::check_dense_cap(n, dense_cap, "d_lambda");
  MatrixXd k = gram(spec, data.x);
  MatrixXd m = k;
  m.diagonal().array() += static_cast<double>(n) * lambda;
  Eigen::LLT<MatrixXd> chol(m);
  if (chol.info() != Eigen::Success)
    throw SingularSystem("d_lambda: Gram system is not positive definite; increase lambda");
  const MatrixXd b = chol.solve(k);
  DegreesOfFreedom out;
  out.d_lambda = static_cast<double>(n) * b.diagonal().maxCoeff();
  out.effective_df = b.trace();
  return out;
}

// Average over blocks l of the largest eigenvalue of
//   (K_ll + n_l lambda I)^{-2} * (1/m) sum_k K_kl' K_kl.
// The inner sum over blocks equals C_l' C_l with C_l the full N x n_l
// cross-Gram strip, because the blocks partition the rows.
inline double c1_statistic(const Dataset& data, const Partition& part, const KernelSpec& spec,
                           double lambda, Eigen::Index dense_cap = kDenseCap,
                           int threads_requested = 0) {
  validate(data);
  validate_partition(part, data.n());
  validate(spec);
  detail::check_dense_cap(data.n(), dense_cap, "c1_statistic");
  const int m = part.m();
  std::vector<double> lam_max(static_cast<std::size_t>(m), 0.0);
  const int threads = resolve_threads(threads_requested);
  parallel_for(m, threads, [&](std::int64_t ll) {
    const auto l = static_cast<std::size_t>(ll);
    const MatrixXd xl = detail::rows_of(data.x, part.blocks[l]);
    const auto nl = xl.rows();
    const MatrixXd strip = gram(spec, data.x, xl);  // N x n_l
    const MatrixXd s = strip.transpose() * strip / static_cast<double>(m);
    MatrixXd mmat = gram(spec, xl);
    mmat.diagonal().array() += static_cast<double>(nl) * lambda;
    Eigen::LLT<MatrixXd> chol(mmat);
    if (chol.info() != Eigen::Success)
      throw SingularSystem("c1_statistic: block system is not positive definite");
    const MatrixXd half = chol.solve(s);
    MatrixXd t = chol.solve(half.transpose());
    t = ((t + t.transpose()) * 0.5).eval();  // M^{-1} S M^{-1}, symmetrized
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(t, Eigen::EigenvaluesOnly);
    lam_max[l] = es.eigenvalues().maxCoeff();
  });
  double acc = 0.0;
  for (double v : lam_max) acc += v;
  return acc / static_cast<double>(m);
}

// m * d_lambda * (log r + log m) / N with r the numerical rank of the full
// Gram matrix (eigenvalues above 1e-10 of the largest magnitude).
inline double c1_prime_statistic(const Dataset& data, const Partition& part,
                                 const KernelSpec& spec, double lambda,
                                 Eigen::Index dense_cap = kDenseCap) {
  validate(data);
  validate_partition(part, data.n());
  validate(spec);
  const auto n = data.n();
  detail::check_dense_cap(n, dense_cap, "c1_prime_statistic");
  const MatrixXd k = gram(spec, data.x);
  MatrixXd m_mat = k;
  m_mat.diagonal().array() += static_cast<double>(n) * lambda;
  Eigen::LLT<MatrixXd> chol(m_mat);
  if (chol.info() != Eigen::Success)
    throw SingularSystem("c1_prime_statistic: Gram system is not positive definite");
  const MatrixXd b = chol.solve(k);
  const double dl = static_cast<double>(n) * b.diagonal().maxCoeff();

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(k, Eigen::EigenvaluesOnly);
  const VectorXd ev = es.eigenvalues();
  const double top = std::max(std::abs(ev[0]), std::abs(ev[ev.size() - 1]));
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (std::abs(ev[i]) > 1e-10 * top) ++rank;
  rank = std::max<Eigen::Index>(rank, 1);

  const double m = static_cast<double>(part.m());
  return m * dl * (std::log(static_cast<double>(rank)) + std::log(m)) / static_cast<double>(n);
}

// [N^{-1} tr(Abar W)]^2 / [N^{-1} tr(Abar' W Abar)]; the numerator comes from
// the blockwise trace identity, the denominator from the dense averaged hat
// matrix.
inline double c4_statistic(const TuneState& st, const Dataset& data,
                           Eigen::Index dense_cap = kDenseCap) {
  detail::check_dense_cap(data.n(), dense_cap, "c4_statistic");
  const double num_root = trace_stat(st);
  const MatrixXd abar = dense_averaged_hat(st.fits, data, dense_cap);
  const double den =
      (abar.array().square().rowwise().sum() * st.weights.array()).sum() /
      static_cast<double>(data.n());
  if (den == 0.0) return num_root == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num_root * num_root / den;
}

// Two empirical versions of the variance functional plus an optional
// Monte-Carlo estimate over a fresh covariate sample:
//   q1 = sigma^2 tr(Abar' Abar)/N      (dense)
//   q2 = sigma^2 (Nm)^{-1} sum_k tr(A_kk^2)
//   q_mc = sigma^2 average over fresh x of sum_k |a_k(x)|^2 / m^2
struct QStats {
  double q1 = 0.0;
  double q2 = 0.0;
  double q_mc = std::numeric_limits<double>::quiet_NaN();
};

inline QStats q_statistics(const TuneState& st, const Dataset& data, double sigma2,
                           const MatrixXd* fresh_sample = nullptr,
                           Eigen::Index dense_cap = kDenseCap) {
  if (!(sigma2 >= 0.0) || !std::isfinite(sigma2))
    throw std::invalid_argument("q_statistics: sigma2 must be finite and >= 0");
  const auto n = data.n();
  const double m = static_cast<double>(st.m());
  QStats out;

  detail::check_dense_cap(n, dense_cap, "q_statistics");
  const MatrixXd abar = dense_averaged_hat(st.fits, data, dense_cap);
  out.q1 = sigma2 * abar.array().square().sum() / static_cast<double>(n);

  double tr2 = 0.0;
  for (const auto& fit : st.fits) {
    const MatrixXd b = fit.chol.solve(block_gram(fit));
    tr2 += (b.array() * b.transpose().array()).sum();  // tr(A_kk^2)
  }
  out.q2 = sigma2 * tr2 / (static_cast<double>(n) * m);

  if (fresh_sample != nullptr) {
    if (fresh_sample->cols() != data.p())
      throw std::invalid_argument("q_statistics: fresh sample dimension mismatch");
    const auto nf = fresh_sample->rows();
    if (nf == 0) throw std::invalid_argument("q_statistics: empty fresh sample");
    VectorXd acc = VectorXd::Zero(nf);
    for (const auto& fit : st.fits) {
      const MatrixXd g = gram(st.spec, fit.x, *fresh_sample);  // n_k x nf
      const MatrixXd a = fit.chol.solve(g);
      acc += a.colwise().squaredNorm().transpose();
    }
    out.q_mc = sigma2 * acc.mean() / (m * m);
  }
  return out;
}

// Fixed-lambda probe of the optimality identity: over B fresh-noise
// replicates on the same covariates, the relative gap
//   |dGCV - Lbar - N^{-1} eps' W eps| / Lbar.
// Block factorizations and cross-Grams are shared across replicates.
struct GapSummary {
  std::vector<double> gaps;  // replicate order
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
};

inline GapSummary loss_risk_gap(const Dataset& data, const Partition& part, const KernelSpec& spec,
                               double lambda, int replicates, std::uint64_t seed,
                               const WeightScheme& scheme = WeightScheme::uniform(),
                               int threads_requested = 0) {
  validate(data);
  validate_partition(part, data.n());
  if (!data.has_f0() || !data.has_sigma())
    throw UnsupportedOperation("loss_risk_gap: needs a synthetic dataset with f0 and sigma");
  if (replicates < 1) throw std::invalid_argument("loss_risk_gap: replicates must be >= 1");

  const auto n = data.n();
  const int m = part.m();
  const double sigma = data.sigma;
  const VectorXd weights = make_weights(scheme, part, n);

  std::vector<Eigen::Index> eval_idx;
  for (Eigen::Index i = 0; i < n; ++i)
    if (weights[i] > 0.0) eval_idx.push_back(i);
  const auto q = static_cast<Eigen::Index>(eval_idx.size());
  const MatrixXd xq = detail::rows_of(data.x, eval_idx);
  const VectorXd w_eval = detail::gather(weights, eval_idx);
  const VectorXd f0_eval = detail::gather(data.f0, eval_idx);

  // replicate-major noise draws keep the table reproducible
  MatrixXd eps(n, replicates);
  Rng rng(seed);
  for (int b = 0; b < replicates; ++b)
    for (Eigen::Index i = 0; i < n; ++i) eps(i, b) = rng.normal();

  struct Slot {
    MatrixXd contrib;  // q x B
    double trace_ww = 0.0;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(m));
  const int threads = resolve_threads(threads_requested);
  parallel_for(m, threads, [&](std::int64_t kk) {
    const auto k = static_cast<std::size_t>(kk);
    const auto& idx = part.blocks[k];
    const auto nk = static_cast<Eigen::Index>(idx.size());
    // weights enter fit_block only through the trace, so build the context
    // once with the realized weights
    const BlockContext ctx = make_block_context(data, idx, spec, weights, static_cast<int>(k));
    const BlockFit fit = fit_block(ctx, lambda);
    const MatrixXd g = gram(spec, xq, ctx.x);
    MatrixXd yk(nk, replicates);
    const VectorXd f0k = detail::gather(data.f0, idx);
    for (int b = 0; b < replicates; ++b)
      for (Eigen::Index i = 0; i < nk; ++i) yk(i, b) = f0k[i] + sigma * eps(idx[static_cast<std::size_t>(i)], b);
    slots[k].contrib = g * fit.chol.solve(yk);
    slots[k].trace_ww = fit.trace_ww;
  });

  MatrixXd fbar = MatrixXd::Zero(q, replicates);
  double trace_sum = 0.0;
  for (const auto& s : slots) {
    fbar += s.contrib;
    trace_sum += s.trace_ww;
  }
  fbar /= static_cast<double>(m);
  const double t_mean = trace_sum / (static_cast<double>(n) * m);

  GapSummary out;
  out.gaps.resize(static_cast<std::size_t>(replicates));
  for (int b = 0; b < replicates; ++b) {
    double wrss = 0.0, loss = 0.0, eps_quad = 0.0;
    for (Eigen::Index i = 0; i < q; ++i) {
      const double e = sigma * eps(eval_idx[static_cast<std::size_t>(i)], b);
      const double y = f0_eval[i] + e;
      const double r = y - fbar(i, b);
      const double d = fbar(i, b) - f0_eval[i];
      wrss += w_eval[i] * r * r;
      loss += w_eval[i] * d * d;
      eps_quad += w_eval[i] * e * e;
    }
    const double nn = static_cast<double>(n);
    const double dgcv = scorefn::gcv_ratio(wrss / nn, t_mean);
    const double lbar = loss / nn;
    out.gaps[static_cast<std::size_t>(b)] =
        lbar > 0.0 ? std::abs(dgcv - lbar - eps_quad / nn) / lbar
                   : std::numeric_limits<double>::infinity();
  }
  std::vector<double> sorted = out.gaps;
  std::sort(sorted.begin(), sorted.end());
  out.median = detail::sorted_quantile(sorted, 0.5);
  out.q25 = detail::sorted_quantile(sorted, 0.25);
  out.q75 = detail::sorted_quantile(sorted, 0.75);
  return out;
}

// Regularity statistics for one (dataset, partition, lambda) instance.
struct ConditionStats {
  double c1 = 0.0;
  double c1_prime = 0.0;
  double c4 = 0.0;
  double d_lambda = 0.0;
  double effective_df = 0.0;
};

inline ConditionStats condition_stats(const Dataset& data, const Partition& part,
                                      const KernelSpec& spec, double lambda,
                                      Eigen::Index dense_cap = kDenseCap,
                                      int threads_requested = 0) {
  ConditionStats out;
  const DegreesOfFreedom df = d_lambda(data, spec, lambda, dense_cap);
  out.d_lambda = df.d_lambda;
  out.effective_df = df.effective_df;
  out.c1 = c1_statistic(data, part, spec, lambda, dense_cap, threads_requested);
  out.c1_prime = c1_prime_statistic(data, part, spec, lambda, dense_cap);
  const VectorXd w = VectorXd::Ones(data.n());
  const TuneState st = make_tune_state(data, part, w, spec, lambda);
  out.c4 = c4_statistic(st, data, dense_cap);
  return out;
}

// Recompute the regularity statistics on B random subsamples (without
// replacement) and report their spread.  Each subsample keeps the block
// count of the reference partition.
struct ResampleReport {
  std::vector<ConditionStats> rows;
  ConditionStats mean;
  ConditionStats sd;
};

inline ResampleReport resample_conditions(const Dataset& data, const Partition& part,
                                          const KernelSpec& spec, double lambda, int replicates,
                                          double fraction, std::uint64_t seed,
                                          Eigen::Index dense_cap = kDenseCap,
                                          int threads_requested = 0) {
  validate(data);
  validate_partition(part, data.n());
  if (!(fraction > 0.0) || !(fraction <= 1.0))
    throw std::invalid_argument("resample_conditions: fraction must be in (0, 1]");
  if (replicates < 1) throw std::invalid_argument("resample_conditions: replicates must be >= 1");
  const auto n = data.n();
  const int m = part.m();
  const auto s = static_cast<Eigen::Index>(
      std::min<long long>(n, std::max<long long>(1, std::llround(fraction * static_cast<double>(n)))));
  if (s < m)
    throw std::invalid_argument("resample_conditions: subsample of " + std::to_string(s) +
                                " points cannot fill " + std::to_string(m) + " blocks");

  ResampleReport rep;
  rep.rows.resize(static_cast<std::size_t>(replicates));
  const int threads = resolve_threads(threads_requested);
  parallel_for(replicates, threads, [&](std::int64_t b) {
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(b)));
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    perm.resize(static_cast<std::size_t>(s));

    Dataset sub;
    sub.x = detail::rows_of(data.x, perm);
    sub.y = detail::gather(data.y, perm);
    if (data.has_f0()) sub.f0 = detail::gather(data.f0, perm);
    sub.sigma = data.sigma;

    // the subsample order is already random, so consecutive chunks make a
    // random balanced partition
    Partition sub_part;
    sub_part.blocks.resize(static_cast<std::size_t>(m));
    Eigen::Index at = 0;
    for (int k = 0; k < m; ++k) {
      const Eigen::Index nk = s / m + (k < s % m ? 1 : 0);
      auto& blk = sub_part.blocks[static_cast<std::size_t>(k)];
      blk.resize(static_cast<std::size_t>(nk));
      std::iota(blk.begin(), blk.end(), at);
      at += nk;
    }
    rep.rows[static_cast<std::size_t>(b)] =
        condition_stats(sub, sub_part, spec, lambda, dense_cap, /*threads=*/1);
  });

  const auto fields = {&ConditionStats::c1, &ConditionStats::c1_prime, &ConditionStats::c4,
                       &ConditionStats::d_lambda, &ConditionStats::effective_df};
  const double nb = static_cast<double>(replicates);
  for (auto f : fields) {
    double acc = 0.0;
    for (const auto& r : rep.rows) acc += r.*f;
    rep.mean.*f = acc / nb;
    double var = 0.0;
    for (const auto& r : rep.rows) {
      const double d = r.*f - rep.mean.*f;
      var += d * d;
    }
    rep.sd.*f = replicates > 1 ? std::sqrt(var / (nb - 1.0)) : 0.0;
  }
  return rep;
}

// One row of the diagnose report; optional fields stay NaN when not computed.
struct DiagnosticsRow {
  double lambda = 0.0;
  int m = 0;
  double c1 = 0.0;
  double c1_prime = 0.0;
  double c4 = 0.0;
  double d_lambda = 0.0;
  double effective_df = 0.0;
  double q1 = std::numeric_limits<double>::quiet_NaN();
  double q2 = std::numeric_limits<double>::quiet_NaN();
  double q_mc = std::numeric_limits<double>::quiet_NaN();
  double loss_risk_gap_median = std::numeric_limits<double>::quiet_NaN();
};

}  // namespace dkrr
