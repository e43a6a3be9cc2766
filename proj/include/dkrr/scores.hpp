#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "dkrr/block_krr.hpp"

namespace dkrr {

enum class ScoreKind { dgcv, dgcv_star, ngcv, cp, true_loss, risk };

inline const char* score_name(ScoreKind k) {
  switch (k) {
    case ScoreKind::dgcv: return "dgcv";
    case ScoreKind::dgcv_star: return "dgcv_star";
    case ScoreKind::ngcv: return "ngcv";
    case ScoreKind::cp: return "cp";
    case ScoreKind::true_loss: return "true_loss";
    case ScoreKind::risk: return "risk";
  }
  return "?";
}

inline ScoreKind score_from_name(const std::string& s) {
  if (s == "dgcv") return ScoreKind::dgcv;
  if (s == "dgcv_star") return ScoreKind::dgcv_star;
  if (s == "ngcv") return ScoreKind::ngcv;
  if (s == "cp") return ScoreKind::cp;
  if (s == "true_loss") return ScoreKind::true_loss;
  if (s == "risk") return ScoreKind::risk;
  throw std::invalid_argument("unknown score: " + s);
}

// GCV-style denominators collapse when the mean trace approaches one; such
// points score +infinity and are skipped by the selectors.
inline constexpr double kDegenerateTol = 1e-12;

namespace scorefn {

// numerator / (1 - trace_mean)^2, +inf when the base is below tolerance
inline double gcv_ratio(double numerator, double trace_mean) {
  const double g = 1.0 - trace_mean;
  if (!(g > kDegenerateTol)) return std::numeric_limits<double>::infinity();
  return numerator / (g * g);
}

}  // namespace scorefn

// (Nm)^{-1} sum_k tr(A_kk W_k): the trace statistic in the dGCV denominator.
inline double trace_stat(const TuneState& st) {
  double t = 0.0;
  for (const auto& f : st.fits) t += f.trace_ww;
  return t / (static_cast<double>(st.weights.size()) * st.m());
}

// Per-block GCV with block-local weights (their sum must equal n_k).
inline double sub_gcv_score(const BlockFit& fit, const Eigen::Ref<const VectorXd>& y_k,
                            const Eigen::Ref<const VectorXd>& w_k) {
  const auto n = fit.n();
  if (y_k.size() != n || w_k.size() != n)
    throw std::invalid_argument("sub_gcv_score: block length mismatch");
  if (std::abs(w_k.sum() - static_cast<double>(n)) > 1e-8 * static_cast<double>(n))
    throw std::invalid_argument("sub_gcv_score: block weights must sum to n_k");
  if (!fit.have_traces)
    throw std::invalid_argument("sub_gcv_score: fit was built without traces");
  const double rss = (w_k.array() * (y_k - fit.yhat).array().square()).sum();
  const double nn = static_cast<double>(n);
  return scorefn::gcv_ratio(rss / nn, fit.trace_ww / nn);
}

namespace detail {

inline double weighted_rss_over_n(const TuneState& st, const Dataset& data) {
  double acc = 0.0;
  for (Eigen::Index i : st.eval_idx) {
    const double r = data.y[i] - st.fbar[i];
    acc += st.weights[i] * r * r;
  }
  return acc / static_cast<double>(data.n());
}

}  // namespace detail

// Distributed GCV: weighted residual mean square over the squared trace gap.
inline double dgcv_score(const TuneState& st, const Dataset& data) {
  return scorefn::gcv_ratio(detail::weighted_rss_over_n(st, data), trace_stat(st));
}

// Subsampled variant: residuals and traces from the first m_star blocks only.
// The state must have been built with the matching subset weight scheme; the
// value then coincides with dgcv_score by the weight algebra.
inline double dgcv_star_score(const TuneState& st, const Dataset& data, int m_star) {
  if (m_star < 1 || m_star > st.m())
    throw std::invalid_argument("dgcv_star_score: m_star out of range");
  Eigen::Index retained = 0;
  for (int k = 0; k < st.m(); ++k) {
    const auto& blk = st.partition.blocks[static_cast<std::size_t>(k)];
    for (Eigen::Index i : blk) {
      const bool has_w = st.weights[i] > 0.0;
      if (has_w != (k < m_star))
        throw std::invalid_argument(
            "dgcv_star_score: state weights do not realize the subset scheme for this m_star");
    }
    if (k < m_star) retained += static_cast<Eigen::Index>(blk.size());
  }
  double rss = 0.0;
  double tr = 0.0;
  for (int k = 0; k < m_star; ++k) {
    const auto& blk = st.partition.blocks[static_cast<std::size_t>(k)];
    for (Eigen::Index i : blk) {
      const double r = data.y[i] - st.fbar[i];
      rss += r * r;
    }
    tr += st.fits[static_cast<std::size_t>(k)].trace;
  }
  const double nr = static_cast<double>(retained);
  return scorefn::gcv_ratio(rss / nr, tr / (nr * st.m()));
}

// Unbiased-risk style score: weighted residual mean square plus the trace
// penalty 2 sigma^2 tr(Abar W) / N.
inline double cp_score(const TuneState& st, const Dataset& data, double sigma2) {
  if (!(sigma2 >= 0.0)) throw std::invalid_argument("cp_score: sigma2 must be >= 0");
  const double nn = static_cast<double>(data.n());
  double tr = 0.0;
  for (const auto& f : st.fits) tr += f.trace_ww;
  return detail::weighted_rss_over_n(st, data) + 2.0 * sigma2 * tr / (st.m() * nn);
}

// Weighted empirical loss against the true mean function.
inline double true_loss(const TuneState& st, const Dataset& data) {
  if (!data.has_f0()) throw std::invalid_argument("true_loss: dataset has no f0");
  double acc = 0.0;
  for (Eigen::Index i : st.eval_idx) {
    const double r = st.fbar[i] - data.f0[i];
    acc += st.weights[i] * r * r;
  }
  return acc / static_cast<double>(data.n());
}

// Exact finite-sample risk at the design points: squared bias of the averaged
// smoother applied to f0, plus the noise variance it propagates.  Computed
// blockwise from a_k(x_i) = M_k^{-1} K(X_k, x_i).
inline double risk_score(const TuneState& st, const Dataset& data, double sigma2) {
  if (!data.has_f0()) throw std::invalid_argument("risk_score: dataset has no f0");
  if (!(sigma2 >= 0.0)) throw std::invalid_argument("risk_score: sigma2 must be >= 0");
  const auto q = static_cast<Eigen::Index>(st.eval_idx.size());
  const MatrixXd xq = detail::rows_of(data.x, st.eval_idx);
  VectorXd ef = VectorXd::Zero(q);        // sum_k E f_hat_k(x_i)
  VectorXd var_sum = VectorXd::Zero(q);   // sum_k |a_k(x_i)|^2
  for (const auto& f : st.fits) {
    const VectorXd f0k = detail::gather(data.f0, f.idx);
    const VectorXd beta0 = f.chol.solve(f0k);
    const MatrixXd g = gram(f.spec, xq, f.x);              // q x n_k
    ef += g * beta0;
    const MatrixXd a = f.chol.solve(g.transpose());        // n_k x q
    var_sum += a.colwise().squaredNorm().transpose();
  }
  const double m = static_cast<double>(st.m());
  double acc = 0.0;
  for (Eigen::Index j = 0; j < q; ++j) {
    const Eigen::Index i = st.eval_idx[static_cast<std::size_t>(j)];
    const double bias = ef[j] / m - data.f0[i];
    acc += st.weights[i] * (bias * bias + sigma2 * var_sum[j] / (m * m));
  }
  return acc / static_cast<double>(data.n());
}

}  // namespace dkrr
