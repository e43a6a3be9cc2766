#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "dkrr/parallel.hpp"
#include "dkrr/scores.hpp"

namespace dkrr {

// One requested selection criterion; sigma2 feeds cp/risk, m_star feeds
// dgcv_star.
struct ScoreRequest {
  ScoreKind kind = ScoreKind::dgcv;
  int m_star = 0;
  double sigma2 = std::numeric_limits<double>::quiet_NaN();

  static ScoreRequest dgcv() { return {ScoreKind::dgcv, 0, {}}; }
  static ScoreRequest dgcv_star(int m_star) { return {ScoreKind::dgcv_star, m_star, {}}; }
  static ScoreRequest ngcv() { return {ScoreKind::ngcv, 0, {}}; }
  static ScoreRequest cp(double sigma2) { return {ScoreKind::cp, 0, sigma2}; }
  static ScoreRequest true_loss() { return {ScoreKind::true_loss, 0, {}}; }
  static ScoreRequest risk(double sigma2) { return {ScoreKind::risk, 0, sigma2}; }
};

struct TuneOptions {
  int threads = 0;  // 0 = all hardware threads
};

struct TunePoint {
  std::size_t spec_index = 0;
  double lambda = 0.0;
};

struct TuneReport {
  std::vector<KernelSpec> specs;
  std::vector<double> lambdas;
  std::vector<ScoreRequest> kinds;
  std::vector<TunePoint> points;            // spec-major, lambda-minor
  std::vector<std::vector<double>> scores;  // [kind][point]
  std::vector<double> trace_stat;           // [point]
  std::vector<double> wall_ms;              // [point]
  std::vector<std::ptrdiff_t> argmin;       // [kind], -1 when nothing selectable
  int m = 0;

  int kind_index(ScoreKind k) const {
    for (std::size_t i = 0; i < kinds.size(); ++i)
      if (kinds[i].kind == k) return static_cast<int>(i);
    return -1;
  }

  const KernelSpec& point_spec(std::size_t pt) const { return specs[points[pt].spec_index]; }

  // Selected point for a criterion; throws NoSelection when every grid point
  // was degenerate.
  std::size_t best(ScoreKind k) const {
    const int ki = kind_index(k);
    if (ki < 0) throw std::invalid_argument("tune report: criterion was not requested");
    if (argmin[static_cast<std::size_t>(ki)] < 0)
      throw NoSelection(std::string("tune: every grid point is degenerate for ") + score_name(k));
    return static_cast<std::size_t>(argmin[static_cast<std::size_t>(ki)]);
  }

  double best_lambda(ScoreKind k) const { return points[best(k)].lambda; }
  const KernelSpec& best_spec(ScoreKind k) const { return point_spec(best(k)); }
  double best_score(ScoreKind k) const {
    return scores[static_cast<std::size_t>(kind_index(k))][best(k)];
  }
};

// `count` points equally spaced in log(lambda).
inline std::vector<double> log_lambda_grid(double log_min, double log_max, int count) {
  if (count < 1) throw std::invalid_argument("lambda grid: count must be >= 1");
  if (!(log_min <= log_max)) throw std::invalid_argument("lambda grid: log_min > log_max");
  std::vector<double> out(static_cast<std::size_t>(count));
  if (count == 1) {
    out[0] = std::exp(log_min);
    return out;
  }
  const double step = (log_max - log_min) / (count - 1);
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = std::exp(log_min + i * step);
  return out;
}

namespace detail {

inline double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// Tie-break order for equal scores: smaller lambda, then lexicographically
// smaller hyperparameters.
inline bool point_precedes(double l1, const std::vector<double>& t1, double l2,
                           const std::vector<double>& t2) {
  if (l1 != l2) return l1 < l2;
  return std::lexicographical_compare(t1.begin(), t1.end(), t2.begin(), t2.end());
}

// Per-(spec, block) sweep output across the lambda grid.
struct BlockSweep {
  std::vector<VectorXd> contrib;  // G_k beta_k at the evaluation points
  std::vector<double> tw;
  std::vector<double> tplain;
  std::vector<double> sub;        // per-block GCV values (ngcv only)
  std::vector<VectorXd> ef;       // G_k M^{-1} f0_k (risk only)
  std::vector<VectorXd> var;      // per-point |a_k|^2 (risk only)
  std::vector<double> lam_ms;
  double gram_ms = 0.0;
};

}  // namespace detail

// Full grid sweep: every (spec, lambda) is scored for every requested
// criterion.  Per-block Gram matrices are built once per spec and reused
// across the lambda grid; blocks are processed in waves whose results are
// merged in block order, so scores do not depend on the thread count.
inline TuneReport tune_grid(const Dataset& data, const Partition& part,
                            const WeightScheme& scheme, const std::vector<KernelSpec>& specs,
                            const std::vector<double>& lambdas,
                            const std::vector<ScoreRequest>& kinds, const TuneOptions& opt = {}) {
  validate(data);
  validate_partition(part, data.n());
  if (specs.empty()) throw std::invalid_argument("tune_grid: no kernel specs");
  if (lambdas.empty()) throw std::invalid_argument("tune_grid: no lambda values");
  if (kinds.empty()) throw std::invalid_argument("tune_grid: no score kinds");
  for (const auto& s : specs) validate(s);
  const std::size_t arity = flat_theta(specs.front()).size();
  const int smooth = theta_dim(specs.front());
  for (const auto& s : specs)
    if (flat_theta(s).size() != arity || theta_dim(s) != smooth)
      throw std::invalid_argument("tune_grid: specs must share hyperparameter arity");
  for (double l : lambdas)
    if (!(l >= 0.0) || !std::isfinite(l))
      throw std::invalid_argument("tune_grid: lambda values must be finite and >= 0");

  bool needs_sub = false, needs_risk = false, needs_f0 = false, needs_plain = false;
  for (const auto& k : kinds) {
    switch (k.kind) {
      case ScoreKind::ngcv:
        if (scheme.kind != WeightScheme::Kind::uniform)
          throw std::invalid_argument("tune_grid: ngcv requires uniform weights");
        needs_sub = true;
        break;
      case ScoreKind::dgcv_star:
        if (scheme.kind != WeightScheme::Kind::subset || k.m_star != scheme.m_star)
          throw std::invalid_argument(
              "tune_grid: dgcv_star requires the matching subset weight scheme");
        needs_plain = true;
        break;
      case ScoreKind::cp:
      case ScoreKind::risk:
        if (!(k.sigma2 >= 0.0) || !std::isfinite(k.sigma2))
          throw std::invalid_argument("tune_grid: cp/risk need a finite sigma2 >= 0");
        if (k.kind == ScoreKind::risk) needs_risk = true;
        break;
      default:
        break;
    }
    if (k.kind == ScoreKind::true_loss || k.kind == ScoreKind::risk) needs_f0 = true;
  }
  if (needs_f0 && !data.has_f0())
    throw std::invalid_argument("tune_grid: true_loss/risk need a dataset with f0");

  const auto n = data.n();
  const int m = part.m();
  const VectorXd weights = make_weights(scheme, part, n);

  std::vector<Eigen::Index> eval_idx;
  for (Eigen::Index i = 0; i < n; ++i)
    if (weights[i] > 0.0) eval_idx.push_back(i);
  const auto q = static_cast<Eigen::Index>(eval_idx.size());
  const MatrixXd xq = detail::rows_of(data.x, eval_idx);
  const VectorXd y_eval = detail::gather(data.y, eval_idx);
  const VectorXd w_eval = detail::gather(weights, eval_idx);
  VectorXd f0_eval;
  if (data.has_f0()) f0_eval = detail::gather(data.f0, eval_idx);

  Eigen::Index n_retained = 0;  // subset scheme: points carrying weight
  int m_star = m;
  if (scheme.kind == WeightScheme::Kind::subset) m_star = scheme.m_star;
  for (int k = 0; k < m_star; ++k)
    n_retained += static_cast<Eigen::Index>(part.blocks[static_cast<std::size_t>(k)].size());

  const auto L = lambdas.size();
  const auto n_points = specs.size() * L;
  TuneReport rep;
  rep.specs = specs;
  rep.lambdas = lambdas;
  rep.kinds = kinds;
  rep.m = m;
  rep.points.resize(n_points);
  rep.scores.assign(kinds.size(), std::vector<double>(n_points, 0.0));
  rep.trace_stat.assign(n_points, 0.0);
  rep.wall_ms.assign(n_points, 0.0);
  rep.argmin.assign(kinds.size(), -1);

  const int threads = resolve_threads(opt.threads);
  const std::size_t wave = static_cast<std::size_t>(threads) * 2;

  for (std::size_t si = 0; si < specs.size(); ++si) {
    const KernelSpec& spec = specs[si];

    std::vector<VectorXd> fbar_acc(L, VectorXd::Zero(q));
    std::vector<double> tw_sum(L, 0.0), tplain_sum(L, 0.0), sub_sum(L, 0.0), lam_ms(L, 0.0);
    std::vector<VectorXd> ef_acc, var_acc;
    if (needs_risk) {
      ef_acc.assign(L, VectorXd::Zero(q));
      var_acc.assign(L, VectorXd::Zero(q));
    }
    double gram_ms_total = 0.0;

    for (std::size_t k0 = 0; k0 < part.blocks.size(); k0 += wave) {
      const std::size_t cnt = std::min(wave, part.blocks.size() - k0);
      std::vector<detail::BlockSweep> slots(cnt);
      parallel_for(static_cast<std::int64_t>(cnt), threads, [&](std::int64_t j) {
        const std::size_t k = k0 + static_cast<std::size_t>(j);
        auto& out = slots[static_cast<std::size_t>(j)];
        const auto t_gram = std::chrono::steady_clock::now();
        const BlockContext ctx =
            make_block_context(data, part.blocks[k], spec, weights, static_cast<int>(k));
        const MatrixXd g = gram(spec, xq, ctx.x);
        out.gram_ms = detail::ms_since(t_gram);
        VectorXd f0k;
        if (needs_risk) f0k = detail::gather(data.f0, ctx.idx);
        out.contrib.resize(L);
        out.tw.assign(L, 0.0);
        out.tplain.assign(L, 0.0);
        if (needs_sub) out.sub.assign(L, 0.0);
        if (needs_risk) {
          out.ef.resize(L);
          out.var.resize(L);
        }
        out.lam_ms.assign(L, 0.0);
        for (std::size_t li = 0; li < L; ++li) {
          const auto t0 = std::chrono::steady_clock::now();
          const BlockFit fit = fit_block(ctx, lambdas[li]);
          out.contrib[li] = g * fit.beta;
          out.tw[li] = fit.trace_ww;
          out.tplain[li] = fit.trace;
          if (needs_sub) out.sub[li] = sub_gcv_score(fit, ctx.y, ctx.w);
          if (needs_risk) {
            const VectorXd beta0 = fit.chol.solve(f0k);
            out.ef[li] = g * beta0;
            const MatrixXd a = fit.chol.solve(g.transpose());
            out.var[li] = a.colwise().squaredNorm().transpose();
          }
          out.lam_ms[li] = detail::ms_since(t0);
        }
      });
      // merge in block order: the reduction order is fixed by construction
      for (std::size_t j = 0; j < cnt; ++j) {
        const auto& out = slots[j];
        gram_ms_total += out.gram_ms;
        for (std::size_t li = 0; li < L; ++li) {
          fbar_acc[li] += out.contrib[li];
          tw_sum[li] += out.tw[li];
          tplain_sum[li] += out.tplain[li];
          if (needs_sub) sub_sum[li] += out.sub[li];
          if (needs_risk) {
            ef_acc[li] += out.ef[li];
            var_acc[li] += out.var[li];
          }
          lam_ms[li] += out.lam_ms[li];
        }
      }
    }

    for (std::size_t li = 0; li < L; ++li) {
      const std::size_t pt = si * L + li;
      rep.points[pt] = {si, lambdas[li]};
      const double nn = static_cast<double>(n);
      rep.trace_stat[pt] = tw_sum[li] / (nn * m);
      rep.wall_ms[pt] = lam_ms[li] + gram_ms_total / static_cast<double>(L);

      const VectorXd fbar = fbar_acc[li] / static_cast<double>(m);
      double wrss = 0.0, urss = 0.0;
      for (Eigen::Index i = 0; i < q; ++i) {
        const double r = y_eval[i] - fbar[i];
        wrss += w_eval[i] * r * r;
        urss += r * r;
      }

      for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
        const auto& req = kinds[ki];
        double v = 0.0;
        switch (req.kind) {
          case ScoreKind::dgcv:
            v = scorefn::gcv_ratio(wrss / nn, rep.trace_stat[pt]);
            break;
          case ScoreKind::dgcv_star: {
            const double nr = static_cast<double>(n_retained);
            v = scorefn::gcv_ratio(urss / nr, tplain_sum[li] / (nr * m));
            break;
          }
          case ScoreKind::ngcv:
            v = sub_sum[li] / static_cast<double>(m);
            break;
          case ScoreKind::cp:
            v = wrss / nn + 2.0 * req.sigma2 * tw_sum[li] / (static_cast<double>(m) * nn);
            break;
          case ScoreKind::true_loss: {
            double acc = 0.0;
            for (Eigen::Index i = 0; i < q; ++i) {
              const double r = fbar[i] - f0_eval[i];
              acc += w_eval[i] * r * r;
            }
            v = acc / nn;
            break;
          }
          case ScoreKind::risk: {
            double acc = 0.0;
            const double mm = static_cast<double>(m);
            for (Eigen::Index i = 0; i < q; ++i) {
              const double bias = ef_acc[li][i] / mm - f0_eval[i];
              acc += w_eval[i] * (bias * bias + req.sigma2 * var_acc[li][i] / (mm * mm));
            }
            v = acc / nn;
            break;
          }
        }
        rep.scores[ki][pt] = v;
      }
    }
  }

  // argmin per criterion; degenerate (non-finite) points are not selectable
  for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
    std::ptrdiff_t best = -1;
    double best_v = 0.0;
    std::vector<double> best_theta;
    for (std::size_t pt = 0; pt < n_points; ++pt) {
      const double v = rep.scores[ki][pt];
      if (!std::isfinite(v)) continue;
      const std::vector<double> th = flat_theta(rep.point_spec(pt));
      if (best < 0 || v < best_v ||
          (v == best_v &&
           detail::point_precedes(rep.points[pt].lambda, th,
                                  rep.points[static_cast<std::size_t>(best)].lambda, best_theta))) {
        best = static_cast<std::ptrdiff_t>(pt);
        best_v = v;
        best_theta = th;
      }
    }
    rep.argmin[ki] = best;
  }
  return rep;
}

// Per-block GCV tuning: every block picks its own (spec, lambda) by
// minimizing its in-block GCV; the final estimator averages the refitted
// blocks.  Defined for uniform weights.
struct NgcvChoice {
  int block = 0;
  std::size_t spec_index = 0;
  double lambda = 0.0;
  double score = 0.0;
};

struct NgcvResult {
  std::vector<KernelSpec> specs;
  std::vector<NgcvChoice> choices;  // per block
  std::vector<BlockFit> fits;       // refit at the per-block selections
  double lambda_mean = 0.0;
  VectorXd fbar;  // averaged prediction at all sample points

  // loss of the averaged per-block-tuned estimator against f0
  double loss_against(const Dataset& data) const {
    if (!data.has_f0()) throw std::invalid_argument("ngcv loss: dataset has no f0");
    return (fbar - data.f0).squaredNorm() / static_cast<double>(data.n());
  }
};

inline NgcvResult tune_ngcv(const Dataset& data, const Partition& part,
                            const std::vector<KernelSpec>& specs,
                            const std::vector<double>& lambdas, const TuneOptions& opt = {}) {
  validate(data);
  validate_partition(part, data.n());
  if (specs.empty() || lambdas.empty())
    throw std::invalid_argument("tune_ngcv: empty candidate grid");
  for (const auto& s : specs) validate(s);

  const auto n = data.n();
  const VectorXd weights = VectorXd::Ones(n);
  const int m = part.m();
  const int threads = resolve_threads(opt.threads);

  NgcvResult res;
  res.specs = specs;
  res.choices.resize(static_cast<std::size_t>(m));
  res.fits.resize(static_cast<std::size_t>(m));

  parallel_for(m, threads, [&](std::int64_t k) {
    const auto& idx = part.blocks[static_cast<std::size_t>(k)];
    std::ptrdiff_t best_si = -1;
    double best_v = 0.0, best_lambda = 0.0;
    std::vector<double> best_theta;
    BlockFit best_fit;
    for (std::size_t si = 0; si < specs.size(); ++si) {
      const BlockContext ctx =
          make_block_context(data, idx, specs[si], weights, static_cast<int>(k));
      const std::vector<double> th = flat_theta(specs[si]);
      for (double lam : lambdas) {
        BlockFit fit = fit_block(ctx, lam);
        const double v = sub_gcv_score(fit, ctx.y, ctx.w);
        if (!std::isfinite(v)) continue;
        if (best_si < 0 || v < best_v ||
            (v == best_v && detail::point_precedes(lam, th, best_lambda, best_theta))) {
          best_si = static_cast<std::ptrdiff_t>(si);
          best_v = v;
          best_lambda = lam;
          best_theta = th;
          best_fit = std::move(fit);
        }
      }
    }
    if (best_si < 0)
      throw NoSelection("tune_ngcv: every candidate is degenerate for block " +
                        std::to_string(k));
    res.choices[static_cast<std::size_t>(k)] = {static_cast<int>(k),
                                                static_cast<std::size_t>(best_si), best_lambda,
                                                best_v};
    res.fits[static_cast<std::size_t>(k)] = std::move(best_fit);
  });

  double lam_sum = 0.0;
  for (const auto& c : res.choices) lam_sum += c.lambda;
  res.lambda_mean = lam_sum / m;

  // blocks may carry different (spec, lambda); average their predictions in
  // block order
  VectorXd acc = VectorXd::Zero(n);
  for (const auto& f : res.fits) acc += predict_block(f, data.x);
  res.fbar = acc / static_cast<double>(m);
  return res;
}

// dGCV profiled over the number of blocks: for each m, draw a fresh random
// partition (seed derived from the master seed and m), tune lambda by dGCV,
// and report the profile value.  Centered values sum to zero over the list.
struct ProfileRow {
  int m = 0;
  double lambda_hat = 0.0;
  double dgcv_min = 0.0;
  double dgcv_centered = 0.0;
  double loss_at_hat = std::numeric_limits<double>::quiet_NaN();  // when f0 known
};

inline std::vector<ProfileRow> profile_m(const Dataset& data, const std::vector<int>& m_list,
                                         const KernelSpec& spec,
                                         const std::vector<double>& lambdas, std::uint64_t seed,
                                         const TuneOptions& opt = {}) {
  if (m_list.empty()) throw std::invalid_argument("profile_m: empty m list");
  std::vector<ProfileRow> rows;
  rows.reserve(m_list.size());
  std::vector<ScoreRequest> kinds{ScoreRequest::dgcv()};
  if (data.has_f0()) kinds.push_back(ScoreRequest::true_loss());
  for (int m : m_list) {
    const Partition part =
        random_partition(data.n(), m, Rng::derive(seed, static_cast<std::uint64_t>(m)));
    const TuneReport rep =
        tune_grid(data, part, WeightScheme::uniform(), {spec}, lambdas, kinds, opt);
    ProfileRow row;
    row.m = m;
    const std::size_t pt = rep.best(ScoreKind::dgcv);
    row.lambda_hat = rep.points[pt].lambda;
    row.dgcv_min = rep.best_score(ScoreKind::dgcv);
    if (data.has_f0())
      row.loss_at_hat = rep.scores[static_cast<std::size_t>(rep.kind_index(ScoreKind::true_loss))][pt];
    rows.push_back(row);
  }
  double mean = 0.0;
  for (const auto& r : rows) mean += r.dgcv_min;
  mean /= static_cast<double>(rows.size());
  for (auto& r : rows) r.dgcv_centered = r.dgcv_min - mean;
  return rows;
}

}  // namespace dkrr
