#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "dkrr/dataset.hpp"
#include "dkrr/errors.hpp"
#include "dkrr/kernels.hpp"

namespace dkrr {

// Ridge fit of one block: coefficients of (K_kk + n_k lambda I) beta = y_k,
// plus the in-block smoother diagnostics needed by the selection scores.
struct BlockFit {
  int block = 0;
  std::vector<Eigen::Index> idx;  // sample rows of this block, original order
  MatrixXd x;                     // n_k x p covariates of the block
  KernelSpec spec;
  double lambda = 0.0;

  Eigen::LLT<MatrixXd> chol;  // factor of K_kk + n_k lambda I
  VectorXd beta;
  VectorXd yhat;       // in-block fitted values, A_kk y_k
  double trace_ww = 0.0;  // tr(A_kk W_k)
  double trace = 0.0;     // tr(A_kk)
  bool have_traces = false;

  MatrixXd gram;  // K_kk, retained only on request

  Eigen::Index n() const { return static_cast<Eigen::Index>(idx.size()); }
};

struct FitOptions {
  bool want_traces = true;
  bool keep_gram = false;
};

namespace detail {

inline MatrixXd rows_of(const MatrixXd& x, const std::vector<Eigen::Index>& idx) {
  MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

inline VectorXd gather(const VectorXd& v, const std::vector<Eigen::Index>& idx) {
  VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

}  // namespace detail

// Everything about one block that does not depend on lambda: indices,
// covariates, responses, weights, and the Gram matrix.  Sweeps over a lambda
// grid build the context once and refit per lambda.
struct BlockContext {
  int block = 0;
  std::vector<Eigen::Index> idx;
  MatrixXd x;
  VectorXd y;
  VectorXd w;
  KernelSpec spec;
  MatrixXd k;  // K_kk
};

inline BlockContext make_block_context(const Dataset& data, const std::vector<Eigen::Index>& idx,
                                       const KernelSpec& spec,
                                       const Eigen::Ref<const VectorXd>& weights,
                                       int block_index = 0) {
  validate(spec);
  if (idx.empty()) throw std::invalid_argument("fit_block: empty block");
  BlockContext ctx;
  ctx.block = block_index;
  ctx.idx = idx;
  ctx.x = detail::rows_of(data.x, idx);
  ctx.y = detail::gather(data.y, idx);
  ctx.w = detail::gather(weights, idx);
  ctx.spec = spec;
  ctx.k = gram(spec, ctx.x);
  return ctx;
}

// Fits one block at lambda.  The solve is checked to residual 1e-8 |y_k| with
// one refinement step before giving up.
inline BlockFit fit_block(const BlockContext& ctx, double lambda, const FitOptions& opt = {}) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("fit_block: lambda must be finite and >= 0");

  BlockFit fit;
  fit.block = ctx.block;
  fit.idx = ctx.idx;
  fit.x = ctx.x;
  fit.spec = ctx.spec;
  fit.lambda = lambda;

  const auto n = fit.n();
  MatrixXd m = ctx.k;
  m.diagonal().array() += static_cast<double>(n) * lambda;
  fit.chol.compute(m);
  if (fit.chol.info() != Eigen::Success)
    throw SingularSystem("fit_block: K + n*lambda*I is not positive definite; increase lambda");

  fit.beta = fit.chol.solve(ctx.y);
  const double tol = 1e-8 * std::max(1.0, ctx.y.norm());
  VectorXd resid = ctx.y - m * fit.beta;
  if (resid.norm() > tol) {  // one step of iterative refinement
    fit.beta += fit.chol.solve(resid);
    resid = ctx.y - m * fit.beta;
    if (resid.norm() > tol)
      throw SingularSystem("fit_block: solve did not reach tolerance; increase lambda");
  }
  fit.yhat = ctx.k * fit.beta;

  // tr(A_kk W_k) with A_kk = K (K + n lambda I)^{-1}: solve n right-hand
  // sides against K and read the diagonal.  Skipped when the block carries no
  // weight, where tr(A_kk W_k) = 0 exactly.
  if (opt.want_traces && ctx.w.cwiseAbs().maxCoeff() > 0.0) {
    const MatrixXd b = fit.chol.solve(ctx.k);
    fit.trace = b.trace();
    fit.trace_ww = (ctx.w.array() * b.diagonal().array()).sum();
    fit.have_traces = true;
  }

  if (opt.keep_gram) fit.gram = ctx.k;
  return fit;
}

// Convenience form building the context on the fly.
inline BlockFit fit_block(const Dataset& data, const std::vector<Eigen::Index>& idx,
                          const KernelSpec& spec, double lambda,
                          const Eigen::Ref<const VectorXd>& weights, int block_index = 0,
                          const FitOptions& opt = {}) {
  return fit_block(make_block_context(data, idx, spec, weights, block_index), lambda, opt);
}

// K_kk of a fit: the stored copy when kept, else recomputed.
inline MatrixXd block_gram(const BlockFit& fit) {
  if (fit.gram.size() > 0) return fit.gram;
  return gram(fit.spec, fit.x);
}

// f_hat_k at query points, in row chunks to bound the gram slab.
inline VectorXd predict_block(const BlockFit& fit, const Eigen::Ref<const MatrixXd>& xq,
                              Eigen::Index chunk = 4096) {
  if (xq.cols() != fit.x.cols())
    throw std::invalid_argument("predict_block: query dimension mismatch");
  VectorXd out(xq.rows());
  for (Eigen::Index r0 = 0; r0 < xq.rows(); r0 += chunk) {
    const Eigen::Index rows = std::min(chunk, xq.rows() - r0);
    out.segment(r0, rows) = gram(fit.spec, xq.middleRows(r0, rows), fit.x) * fit.beta;
  }
  return out;
}

// Averaged estimator (1/m) sum_k f_hat_k, accumulated in block order so the
// result does not depend on scheduling.  All fits must share (spec, lambda).
inline VectorXd predict_averaged(const std::vector<BlockFit>& fits,
                                 const Eigen::Ref<const MatrixXd>& xq) {
  if (fits.empty()) throw std::invalid_argument("predict_averaged: no fits");
  for (const auto& f : fits)
    if (f.lambda != fits.front().lambda || !spec_equal(f.spec, fits.front().spec))
      throw std::invalid_argument("predict_averaged: fits must share spec and lambda");
  VectorXd acc = VectorXd::Zero(xq.rows());
  for (const auto& f : fits) acc += predict_block(f, xq);
  return acc / static_cast<double>(fits.size());
}

// Dense averaged smoother: column block S_k is (1/m) K(X, X_k) M_k^{-1}.
// Guarded by a dense cap; this is the oracle/diagnostic path only.
inline MatrixXd dense_averaged_hat(const std::vector<BlockFit>& fits, const Dataset& data,
                                   Eigen::Index dense_cap = 4096) {
  if (fits.empty()) throw std::invalid_argument("dense_averaged_hat: no fits");
  const auto n = data.n();
  if (n > dense_cap)
    throw ResourceLimit("dense_averaged_hat: N exceeds the dense cap of " +
                        std::to_string(dense_cap));
  MatrixXd abar = MatrixXd::Zero(n, n);
  const double inv_m = 1.0 / static_cast<double>(fits.size());
  for (const auto& f : fits) {
    const MatrixXd p = gram(f.spec, data.x, f.x);              // N x n_k
    const MatrixXd s = f.chol.solve(p.transpose()).transpose();  // P M^{-1}
    for (std::size_t j = 0; j < f.idx.size(); ++j)
      abar.col(f.idx[j]) += inv_m * s.col(static_cast<Eigen::Index>(j));
  }
  return abar;
}

// One tuning point: per-block fits plus the averaged predictions at the
// sample points that carry weight.
struct TuneState {
  double lambda = 0.0;
  KernelSpec spec;
  Partition partition;
  VectorXd weights;                    // realized, length N
  std::vector<BlockFit> fits;          // one per block, partition order
  VectorXd fbar;                       // NaN where not evaluated
  std::vector<Eigen::Index> eval_idx;  // points where fbar is defined

  int m() const { return static_cast<int>(fits.size()); }
};

struct StateOptions {
  bool keep_gram = false;
  bool eval_all = false;  // evaluate fbar everywhere, not just where w > 0
};

inline TuneState make_tune_state(const Dataset& data, const Partition& part,
                                 const Eigen::Ref<const VectorXd>& weights,
                                 const KernelSpec& spec, double lambda,
                                 const StateOptions& opt = {}) {
  validate(data);
  validate_partition(part, data.n());
  if (weights.size() != data.n())
    throw std::invalid_argument("make_tune_state: weight length differs from N");

  TuneState st;
  st.lambda = lambda;
  st.spec = spec;
  st.partition = part;
  st.weights = weights;

  st.fits.reserve(part.blocks.size());
  FitOptions fo;
  fo.keep_gram = opt.keep_gram;
  for (int k = 0; k < part.m(); ++k)
    st.fits.push_back(fit_block(data, part.blocks[static_cast<std::size_t>(k)], spec, lambda,
                                weights, k, fo));

  st.eval_idx.clear();
  for (Eigen::Index i = 0; i < data.n(); ++i)
    if (opt.eval_all || weights[i] > 0.0) st.eval_idx.push_back(i);

  const MatrixXd xq = detail::rows_of(data.x, st.eval_idx);
  const VectorXd pred = predict_averaged(st.fits, xq);
  st.fbar = VectorXd::Constant(data.n(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < st.eval_idx.size(); ++i)
    st.fbar[st.eval_idx[i]] = pred[static_cast<Eigen::Index>(i)];
  return st;
}

}  // namespace dkrr
