#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "dkrr/errors.hpp"
#include "dkrr/rng.hpp"

namespace dkrr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Dataset {
  MatrixXd x;  // N x p, one row per observation
  VectorXd y;  // length N
  VectorXd f0;
  // length N when the true regression function is known, else empty
  double sigma = std::numeric_limits<double>::quiet_NaN();  // noise sd when known

  Eigen::Index n() const { return y.size(); }
  Eigen::Index p() const { return x.cols(); }
  bool has_f0() const { return f0.size() == y.size() && y.size() > 0; }
  bool has_sigma() const { return std::isfinite(sigma); }
};

inline void validate(const Dataset& d) {
  if (d.x.rows() != d.y.size())
    throw std::invalid_argument("dataset: x and y row counts differ");
  if (d.y.size() == 0) throw std::invalid_argument("dataset: empty");
  if (d.f0.size() != 0 && d.f0.size() != d.y.size())
    throw std::invalid_argument("dataset: f0 length differs from y");
}

struct Partition {
  std::vector<std::vector<Eigen::Index>> blocks;

  int m() const { return static_cast<int>(blocks.size()); }
  Eigen::Index total() const {
    Eigen::Index t = 0;
    for (const auto& b : blocks) t += static_cast<Eigen::Index>(b.size());
    return t;
  }
};

// Disjoint, covering, and balanced: every |n_k - N/m| <= 1.
inline void validate_partition(const Partition& part, Eigen::Index n) {
  if (part.blocks.empty()) throw std::invalid_argument("partition: no blocks");
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (const auto& b : part.blocks) {
    if (b.empty()) throw std::invalid_argument("partition: empty block");
    for (Eigen::Index i : b) {
      if (i < 0 || i >= n) throw std::invalid_argument("partition: index out of range");
      if (seen[static_cast<std::size_t>(i)]) throw std::invalid_argument("partition: duplicate index");
      seen[static_cast<std::size_t>(i)] = 1;
    }
  }
  if (part.total() != n) throw std::invalid_argument("partition: blocks do not cover the sample");
  const auto lo = static_cast<std::size_t>(n / part.m());
  for (const auto& b : part.blocks)
    if (b.size() != lo && b.size() != lo + 1)
      throw std::invalid_argument("partition: block sizes must be within one of N/m");
}

// Uniformly random partition into m near-equal blocks.
inline Partition random_partition(Eigen::Index n, int m, std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("random_partition: m must be >= 1");
  if (n < m) throw std::invalid_argument("random_partition: fewer samples than blocks");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng(seed);
  rng.shuffle(perm);
  Partition part;
  part.blocks.resize(static_cast<std::size_t>(m));
  const Eigen::Index base = n / m;
  const Eigen::Index extra = n % m;  // first `extra` blocks get one more
  std::size_t pos = 0;
  for (int k = 0; k < m; ++k) {
    const Eigen::Index sz = base + (k < extra ? 1 : 0);
    auto& blk = part.blocks[static_cast<std::size_t>(k)];
    blk.assign(perm.begin() + pos, perm.begin() + pos + sz);
    pos += static_cast<std::size_t>(sz);
  }
  return part;
}

struct WeightScheme {
  enum class Kind { uniform, subset } kind = Kind::uniform;
  int m_star = 0;  // subset only: the first m_star blocks are retained

  static WeightScheme uniform() { return {Kind::uniform, 0}; }
  static WeightScheme subset(int m_star) { return {Kind::subset, m_star}; }
};

// Realized weight vector; sums to N.  Under the subset scheme the first
// m_star blocks carry weight N / (their total size) and the rest carry zero.
inline VectorXd make_weights(const WeightScheme& scheme, const Partition& part,
                             Eigen::Index n) {
  if (scheme.kind == WeightScheme::Kind::uniform) return VectorXd::Ones(n);
  if (scheme.m_star < 1 || scheme.m_star > part.m())
    throw std::invalid_argument("weights: m_star must be in [1, m]");
  Eigen::Index retained = 0;
  for (int k = 0; k < scheme.m_star; ++k)
    retained += static_cast<Eigen::Index>(part.blocks[static_cast<std::size_t>(k)].size());
  const double w = static_cast<double>(n) / static_cast<double>(retained);
  VectorXd out = VectorXd::Zero(n);
  for (int k = 0; k < scheme.m_star; ++k)
    for (Eigen::Index i : part.blocks[static_cast<std::size_t>(k)]) out[i] = w;
  return out;
}

// "tenth" rule used by the subsampled criterion: ceil(m / 10).
inline int default_m_star(int m) { return (m + 9) / 10; }

namespace detail {

// log Beta(a,b) density via lgamma, stable for large shapes
inline double beta_log_pdf(double x, double a, double b) {
  if (!(x > 0.0 && x < 1.0)) return -std::numeric_limits<double>::infinity();
  const double logc = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  return logc + (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x);
}

inline double beta_pdf(double x, double a, double b) {
  const double lp = beta_log_pdf(x, a, b);
  return std::isfinite(lp) ? std::exp(lp) : 0.0;
}

// standard normal CDF; erfc keeps the error far below 1e-10
inline double norm_cdf(double z) { return 0.5 * std::erfc(-z * M_SQRT1_2); }

}  // namespace detail

// Mean function of the one-dimensional test bed: a two-component Beta mixture.
inline double beta_mixture_mean(double x) {
  return 2.4 * detail::beta_pdf(x, 30.0, 17.0) + 1.6 * detail::beta_pdf(x, 3.0, 11.0);
}

// x ~ U[0,1], y = f0(x) + sigma * N(0,1).  All covariates are drawn first,
// then the noise, so the stream layout is part of the contract.
inline Dataset simulate_beta_mixture(Eigen::Index n, double sigma, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("simulate_beta_mixture: n must be >= 1");
  if (!(sigma >= 0.0)) throw std::invalid_argument("simulate_beta_mixture: sigma must be >= 0");
  Rng rng(seed);
  Dataset d;
  d.x.resize(n, 1);
  d.y.resize(n);
  d.f0.resize(n);
  d.sigma = sigma;
  for (Eigen::Index i = 0; i < n; ++i) {
    d.x(i, 0) = rng.uniform();
    d.f0[i] = beta_mixture_mean(d.x(i, 0));
  }
  for (Eigen::Index i = 0; i < n; ++i) d.y[i] = d.f0[i] + sigma * rng.normal();
  return d;
}

// Compactly supported radial mean field on [0,1]^p.
inline double wendland_field_mean(const Eigen::Ref<const VectorXd>& x, int p) {
  const double r = x.norm() / std::sqrt(static_cast<double>(p));
  const double v = 1.0 - r;
  if (v <= 0.0) return 0.0;
  double v7 = v;
  for (int i = 1; i < 7; ++i) v7 *= v;
  return 20.0 * v7 * (16.0 * r * r + 7.0 * r + 1.0);
}

// Covariates are Phi(z_j) for an equicorrelated Gaussian z (correlation rho);
// the square root of (1-rho) I + rho 11' has the closed form a I + b 11'.
inline Dataset simulate_wendland_field(Eigen::Index n, int p, double rho, double sigma,
                                       std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("simulate_wendland_field: n must be >= 1");
  if (p < 1 || p > 5)
    throw std::invalid_argument("simulate_wendland_field: p must be an integer in [1,5]");
  if (!(rho >= 0.0 && rho < 1.0))
    throw std::invalid_argument("simulate_wendland_field: rho must be in [0,1)");
  if (!(sigma >= 0.0)) throw std::invalid_argument("simulate_wendland_field: sigma must be >= 0");
  const double a = std::sqrt(1.0 - rho);
  const double b = (std::sqrt(1.0 - rho + p * rho) - a) / static_cast<double>(p);
  Rng rng(seed);
  Dataset d;
  d.x.resize(n, p);
  d.y.resize(n);
  d.f0.resize(n);
  d.sigma = sigma;
  VectorXd g(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) g[j] = rng.normal();
    const double s = g.sum();
    for (int j = 0; j < p; ++j) d.x(i, j) = detail::norm_cdf(a * g[j] + b * s);
    d.f0[i] = wendland_field_mean(d.x.row(i).transpose(), p);
  }
  for (Eigen::Index i = 0; i < n; ++i) d.y[i] = d.f0[i] + sigma * rng.normal();
  return d;
}

// Center/scale each covariate column to mean zero, sample sd one.
inline void standardize_covariates(Dataset& d) {
  const auto n = d.n();
  if (n < 2) throw std::invalid_argument("standardize: need at least two rows");
  for (Eigen::Index j = 0; j < d.p(); ++j) {
    const double mean = d.x.col(j).mean();
    const double ss = (d.x.col(j).array() - mean).square().sum();
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0))
      throw std::invalid_argument("standardize: covariate column is constant");
    d.x.col(j) = (d.x.col(j).array() - mean) / sd;
  }
}

}  // namespace dkrr
