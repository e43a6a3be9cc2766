#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dkrr/parallel.hpp"
#include "dkrr/scores.hpp"
#include "dkrr/tuning.hpp"

namespace dkrr {

// dGCV split into numerator alpha = N^{-1}(y - fbar)' W (y - fbar) and
// denominator gamma = (1 - (Nm)^{-1} sum_k tr(A_kk W_k))^2; dGCV = alpha/gamma.
struct AlphaGamma {
  double alpha = 0.0;
  double gamma = 0.0;

  double dgcv() const {
    const double g = std::sqrt(gamma);
    if (g <= kDegenerateTol) return std::numeric_limits<double>::infinity();
    return alpha / gamma;
  }
};

inline AlphaGamma alpha_gamma(const TuneState& st, const Dataset& data) {
  AlphaGamma ag;
  ag.alpha = detail::weighted_rss_over_n(st, data);
  const double g = 1.0 - trace_stat(st);
  ag.gamma = g * g;
  return ag;
}

// Value, gradient, and (optionally) Hessian of log dGCV.  Parameter order is
// (eta, theta_1..theta_D) with eta = log lambda and theta in its original
// scale; D = theta_dim(spec), so families without smooth hyperparameters get
// the eta derivative only.
struct LogDgcvDerivatives {
  double value = 0.0;
  double alpha = 0.0;
  double gamma = 0.0;
  VectorXd grad;
  MatrixXd hess;  // empty when order == 1
};

namespace detail {

// sum_j w_j (X Y)_jj without forming the product
inline double weighted_prod_diag(const VectorXd& w, const MatrixXd& x, const MatrixXd& y) {
  return ((x.array() * y.transpose().array()).rowwise().sum() * w.array()).sum();
}

inline double weighted_diag(const VectorXd& w, const MatrixXd& x) {
  return w.dot(x.diagonal());
}

// Per-block pieces: prediction contributions at the evaluation points and
// the weighted trace tr(A_kk W_k), each with derivatives in (lambda, theta).
struct DerivSlot {
  VectorXd f;
  std::vector<VectorXd> d1;
  std::vector<std::vector<VectorXd>> d2;
  double t = 0.0;
  std::vector<double> t1;
  std::vector<std::vector<double>> t2;
};

}  // namespace detail

inline LogDgcvDerivatives log_dgcv_derivatives(const TuneState& st, const Dataset& data,
                                               int order, int threads_requested = 0) {
  if (order != 1 && order != 2)
    throw std::invalid_argument("log_dgcv_derivatives: order must be 1 or 2");
  if (!(st.lambda > 0.0))
    throw std::invalid_argument("log_dgcv_derivatives: lambda must be positive");
  const auto n_total = data.n();
  const int m = st.m();
  const double lambda = st.lambda;
  const auto dim_theta = static_cast<std::size_t>(theta_dim(st.spec));
  const std::size_t a_dim = 1 + dim_theta;  // (lambda, theta...) before the eta chain rule
  const bool want_h = order == 2;

  const MatrixXd xq = detail::rows_of(data.x, st.eval_idx);
  const VectorXd y_eval = detail::gather(data.y, st.eval_idx);
  const VectorXd w_eval = detail::gather(st.weights, st.eval_idx);

  const int threads = resolve_threads(threads_requested);
  std::vector<detail::DerivSlot> slots(static_cast<std::size_t>(m));

  parallel_for(m, threads, [&](std::int64_t kk) {
    const auto k = static_cast<std::size_t>(kk);
    const BlockFit& fit = st.fits[k];
    auto& out = slots[k];
    const auto nk = static_cast<double>(fit.n());
    const VectorXd wk = detail::gather(st.weights, fit.idx);
    const bool weighted = (wk.array() != 0.0).any();

    const MatrixXd kmat = block_gram(fit);
    const MatrixXd g = gram(st.spec, xq, fit.x);
    std::vector<MatrixXd> kd(dim_theta);
    for (std::size_t c = 0; c < dim_theta; ++c)
      kd[c] = gram_derivative(st.spec, fit.x, fit.x, static_cast<int>(c));

    // coefficient-vector chains: beta and its derivatives
    const VectorXd u = fit.chol.solve(fit.beta);
    const VectorXd beta_l = -nk * u;
    std::vector<VectorXd> beta_c(dim_theta);
    for (std::size_t c = 0; c < dim_theta; ++c) beta_c[c] = -fit.chol.solve(kd[c] * fit.beta);

    out.f = g * fit.beta;
    out.d1.resize(a_dim);
    out.d1[0] = g * beta_l;
    for (std::size_t c = 0; c < dim_theta; ++c)
      out.d1[1 + c] = gram_derivative(st.spec, xq, fit.x, static_cast<int>(c)) * fit.beta +
                      g * beta_c[c];

    if (want_h) {
      const VectorXd z = fit.chol.solve(u);
      out.d2.assign(a_dim, std::vector<VectorXd>(a_dim));
      out.d2[0][0] = g * (2.0 * nk * nk * z);
      std::vector<MatrixXd> gd(dim_theta);
      for (std::size_t c = 0; c < dim_theta; ++c)
        gd[c] = gram_derivative(st.spec, xq, fit.x, static_cast<int>(c));
      for (std::size_t c = 0; c < dim_theta; ++c) {
        const VectorXd beta_lc = nk * fit.chol.solve((kd[c] * u - beta_c[c]).eval());
        out.d2[0][1 + c] = gd[c] * beta_l + g * beta_lc;
        out.d2[1 + c][0] = out.d2[0][1 + c];
      }
      for (std::size_t c = 0; c < dim_theta; ++c) {
        for (std::size_t d = c; d < dim_theta; ++d) {
          const MatrixXd kdd =
              gram_second_derivative(st.spec, fit.x, fit.x, static_cast<int>(c),
                                     static_cast<int>(d));
          const VectorXd beta_cd =
              -fit.chol.solve((kd[d] * beta_c[c] + kd[c] * beta_c[d] + kdd * fit.beta).eval());
          const MatrixXd gdd = gram_second_derivative(st.spec, xq, fit.x, static_cast<int>(c),
                                                      static_cast<int>(d));
          out.d2[1 + c][1 + d] =
              gdd * fit.beta + gd[c] * beta_c[d] + gd[d] * beta_c[c] + g * beta_cd;
          out.d2[1 + d][1 + c] = out.d2[1 + c][1 + d];
        }
      }
    }

    out.t1.assign(a_dim, 0.0);
    if (want_h) out.t2.assign(a_dim, std::vector<double>(a_dim, 0.0));
    // a block with no weighted points contributes tr(A_kk W_k) = 0 identically
    if (!weighted) return;

    const MatrixXd b = fit.chol.solve(kmat);
    const MatrixXd c_mat = fit.chol.solve(b);
    out.t = detail::weighted_diag(wk, b);
    out.t1[0] = -nk * detail::weighted_diag(wk, c_mat);
    std::vector<MatrixXd> p(dim_theta);
    for (std::size_t c = 0; c < dim_theta; ++c) {
      p[c] = fit.chol.solve(kd[c]);
      out.t1[1 + c] = detail::weighted_diag(wk, p[c]) - detail::weighted_prod_diag(wk, p[c], b);
    }
    if (!want_h) return;

    const MatrixXd d_mat = fit.chol.solve(c_mat);
    out.t2[0][0] = 2.0 * nk * nk * detail::weighted_diag(wk, d_mat);
    MatrixXd eye_b = -b;
    eye_b.diagonal().array() += 1.0;  // I - B
    for (std::size_t c = 0; c < dim_theta; ++c) {
      const MatrixXd q = fit.chol.solve(p[c]);
      out.t2[0][1 + c] = nk * (detail::weighted_prod_diag(wk, p[c], c_mat) -
                               detail::weighted_diag(wk, q) +
                               detail::weighted_prod_diag(wk, q, b));
      out.t2[1 + c][0] = out.t2[0][1 + c];
    }
    std::vector<MatrixXd> pe(dim_theta);
    for (std::size_t c = 0; c < dim_theta; ++c) pe[c] = p[c] * eye_b;
    for (std::size_t c = 0; c < dim_theta; ++c) {
      for (std::size_t d = c; d < dim_theta; ++d) {
        const MatrixXd kdd = gram_second_derivative(st.spec, fit.x, fit.x, static_cast<int>(c),
                                                    static_cast<int>(d));
        const MatrixXd r = fit.chol.solve(kdd);
        out.t2[1 + c][1 + d] = detail::weighted_prod_diag(wk, r, eye_b) -
                               detail::weighted_prod_diag(wk, p[d], pe[c]) -
                               detail::weighted_prod_diag(wk, p[c], pe[d]);
        out.t2[1 + d][1 + c] = out.t2[1 + c][1 + d];
      }
    }
  });

  // deterministic reduction in block order
  const auto q = static_cast<Eigen::Index>(st.eval_idx.size());
  VectorXd f_sum = VectorXd::Zero(q);
  std::vector<VectorXd> d1_sum(a_dim, VectorXd::Zero(q));
  std::vector<std::vector<VectorXd>> d2_sum;
  if (want_h) d2_sum.assign(a_dim, std::vector<VectorXd>(a_dim, VectorXd::Zero(q)));
  double t_sum = 0.0;
  VectorXd t1_sum = VectorXd::Zero(static_cast<Eigen::Index>(a_dim));
  MatrixXd t2_sum = MatrixXd::Zero(static_cast<Eigen::Index>(a_dim),
                                   static_cast<Eigen::Index>(a_dim));
  for (const auto& s : slots) {
    f_sum += s.f;
    for (std::size_t a = 0; a < a_dim; ++a) d1_sum[a] += s.d1[a];
    if (want_h)
      for (std::size_t a = 0; a < a_dim; ++a)
        for (std::size_t b = 0; b < a_dim; ++b) d2_sum[a][b] += s.d2[a][b];
    t_sum += s.t;
    for (std::size_t a = 0; a < a_dim; ++a) t1_sum[static_cast<Eigen::Index>(a)] += s.t1[a];
    if (want_h)
      for (std::size_t a = 0; a < a_dim; ++a)
        for (std::size_t b = 0; b < a_dim; ++b)
          t2_sum(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += s.t2[a][b];
  }

  const double nn = static_cast<double>(n_total);
  const double mm = static_cast<double>(m);
  const VectorXd r = y_eval - f_sum / mm;

  const double alpha = (w_eval.array() * r.array().square()).sum() / nn;
  VectorXd alpha1(static_cast<Eigen::Index>(a_dim));
  for (std::size_t a = 0; a < a_dim; ++a)
    alpha1[static_cast<Eigen::Index>(a)] =
        -2.0 / nn * (w_eval.array() * r.array() * (d1_sum[a] / mm).array()).sum();
  MatrixXd alpha2;
  if (want_h) {
    alpha2.resize(static_cast<Eigen::Index>(a_dim), static_cast<Eigen::Index>(a_dim));
    for (std::size_t a = 0; a < a_dim; ++a)
      for (std::size_t b = 0; b < a_dim; ++b)
        alpha2(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
            2.0 / nn *
            ((w_eval.array() * (d1_sum[a] / mm).array() * (d1_sum[b] / mm).array()).sum() -
             (w_eval.array() * r.array() * (d2_sum[a][b] / mm).array()).sum());
  }

  const double t_mean = t_sum / (nn * mm);
  const VectorXd t1 = t1_sum / (nn * mm);
  const double gden = 1.0 - t_mean;
  if (!(gden > kDegenerateTol))
    throw SingularSystem("log_dgcv_derivatives: degenerate dGCV denominator");
  if (!(alpha > 0.0))
    throw SingularSystem("log_dgcv_derivatives: zero residual sum of squares");
  const double gamma = gden * gden;
  const VectorXd gamma1 = -2.0 * gden * t1;
  MatrixXd gamma2;
  if (want_h) {
    const MatrixXd t2 = t2_sum / (nn * mm);
    gamma2 = 2.0 * t1 * t1.transpose() - 2.0 * gden * t2;
  }

  LogDgcvDerivatives res;
  res.alpha = alpha;
  res.gamma = gamma;
  res.value = std::log(alpha) - std::log(gamma);
  VectorXd f1 = alpha1 / alpha - gamma1 / gamma;
  res.grad = f1;
  res.grad[0] *= lambda;  // d/d eta = lambda d/d lambda
  if (want_h) {
    MatrixXd f2 = alpha2 / alpha -
                  alpha1 * alpha1.transpose() / (alpha * alpha) - gamma2 / gamma +
                  gamma1 * gamma1.transpose() / (gamma * gamma);
    res.hess = f2;
    res.hess.row(0) *= lambda;
    res.hess.col(0) *= lambda;
    res.hess(0, 0) += lambda * f1[0];
  }
  return res;
}

// ---------------------------------------------------------------------------
// Newton-Raphson minimization of log dGCV over (eta, theta)

struct NewtonOptions {
  int max_iter = 50;
  double grad_tol = 1e-6;
  double backtrack = 0.5;
  int max_halvings = 30;
  int threads = 0;
  WeightScheme scheme = WeightScheme::uniform();
};

struct NewtonStep {
  int iter = 0;
  double eta = 0.0;
  std::vector<double> theta;
  double score = 0.0;      // dGCV value (not its log)
  double grad_norm = 0.0;  // infinity norm in (eta, log theta) coordinates
  double step = 0.0;       // accepted line-search multiplier
};

struct OptimResult {
  double eta_hat = 0.0;
  std::vector<double> theta_hat;
  double score = 0.0;      // dGCV at the optimum
  double grad_norm = 0.0;
  int iterations = 0;
  std::vector<NewtonStep> trace;
  enum class Flag { converged, max_iter, line_search_failed } flag = Flag::max_iter;
};

inline const char* flag_name(OptimResult::Flag f) {
  switch (f) {
    case OptimResult::Flag::converged: return "converged";
    case OptimResult::Flag::max_iter: return "max_iter";
    case OptimResult::Flag::line_search_failed: return "line_search_failed";
  }
  return "unknown";
}

namespace detail {

// Shift H by tau*I, doubling tau until Cholesky succeeds.
inline Eigen::LLT<MatrixXd> make_positive_definite(MatrixXd h) {
  Eigen::LLT<MatrixXd> llt(h);
  if (llt.info() == Eigen::Success) return llt;
  const double scale = std::max(h.cwiseAbs().maxCoeff(), 1e-12);
  double tau = 1e-6 * scale;
  for (int i = 0; i < 120; ++i) {
    MatrixXd shifted = h;
    shifted.diagonal().array() += tau;
    llt.compute(shifted);
    if (llt.info() == Eigen::Success) return llt;
    tau *= 2.0;
  }
  throw SingularSystem("newton: could not regularize the Hessian");
}

}  // namespace detail

// Damped Newton with Hessian shifting and backtracking line search on
// log dGCV.  Positivity of theta is kept by iterating internally in
// psi = log theta; reported gradients are in (eta, psi) coordinates.
// Line-search failure returns the best point found so far with a flag,
// not an exception.
inline OptimResult newton_optimize(const Dataset& data, const Partition& part,
                                   const KernelSpec& spec0, double init_eta,
                                   const std::vector<double>& init_theta,
                                   const NewtonOptions& opt = {}) {
  validate(data);
  validate_partition(part, data.n());
  validate(spec0);
  const auto dim_theta = static_cast<std::size_t>(theta_dim(spec0));
  std::vector<double> theta =
      init_theta.empty() && dim_theta > 0 ? flat_theta(spec0) : init_theta;
  if (theta.size() != dim_theta)
    throw std::invalid_argument("newton: init_theta size does not match the kernel");
  for (double t : theta)
    if (!(t > 0.0)) throw std::invalid_argument("newton: theta must be positive");
  if (!std::isfinite(init_eta)) throw std::invalid_argument("newton: init_eta must be finite");

  const VectorXd weights = make_weights(opt.scheme, part, data.n());
  const StateOptions state_opt{/*keep_gram=*/true, /*eval_all=*/false};

  const auto eval_state = [&](double eta, const std::vector<double>& th) {
    KernelSpec s = dim_theta > 0 ? with_theta(spec0, th) : spec0;
    return make_tune_state(data, part, weights, s, std::exp(eta), state_opt);
  };

  double eta = init_eta;
  TuneState st = eval_state(eta, theta);
  double score = dgcv_score(st, data);

  OptimResult res;
  res.eta_hat = eta;
  res.theta_hat = theta;
  res.score = score;
  res.grad_norm = std::numeric_limits<double>::quiet_NaN();
  if (!std::isfinite(score)) {
    res.flag = OptimResult::Flag::line_search_failed;  // degenerate start
    return res;
  }

  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    const LogDgcvDerivatives d = log_dgcv_derivatives(st, data, 2, opt.threads);
    // chain (eta, theta) -> (eta, psi = log theta)
    VectorXd g = d.grad;
    MatrixXd h = d.hess;
    for (std::size_t c = 0; c < dim_theta; ++c) {
      const auto i = static_cast<Eigen::Index>(1 + c);
      const double tc = theta[c];
      g[i] *= tc;
      h.row(i) *= tc;
      h.col(i) *= tc;
      h(i, i) += tc * d.grad[static_cast<Eigen::Index>(1 + c)];
    }
    const double gnorm = g.cwiseAbs().maxCoeff();
    res.grad_norm = gnorm;
    if (!g.allFinite() || !h.allFinite()) {
      res.flag = OptimResult::Flag::line_search_failed;
      break;
    }
    if (gnorm <= opt.grad_tol) {
      res.flag = OptimResult::Flag::converged;
      break;
    }

    const VectorXd dir = -detail::make_positive_definite(h).solve(g);
    double step = 1.0;
    bool accepted = false;
    for (int half = 0; half <= opt.max_halvings; ++half) {
      const double eta_try = eta + step * dir[0];
      std::vector<double> theta_try = theta;
      for (std::size_t c = 0; c < dim_theta; ++c)
        theta_try[c] = std::exp(std::log(theta[c]) + step * dir[static_cast<Eigen::Index>(1 + c)]);
      bool ok = std::isfinite(eta_try);
      for (double t : theta_try) ok = ok && std::isfinite(t) && t > 0.0;
      if (ok) {
        // a trial point where the block systems lose positive definiteness
        // (lambda driven too small) is infeasible, not fatal: reject and halve
        try {
          TuneState st_try = eval_state(eta_try, theta_try);
          const double s_try = dgcv_score(st_try, data);
          if (std::isfinite(s_try) && s_try < score) {
            eta = eta_try;
            theta = std::move(theta_try);
            st = std::move(st_try);
            score = s_try;
            accepted = true;
            break;
          }
        } catch (const SingularSystem&) {
        }
      }
      step *= opt.backtrack;
    }
    if (!accepted) {
      res.flag = OptimResult::Flag::line_search_failed;
      break;
    }
    res.iterations = iter;
    res.trace.push_back({iter, eta, theta, score, gnorm, step});
    res.eta_hat = eta;
    res.theta_hat = theta;
    res.score = score;
    if (iter == opt.max_iter) res.flag = OptimResult::Flag::max_iter;
  }
  return res;
}

}  // namespace dkrr
