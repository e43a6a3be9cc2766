#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dkrr/errors.hpp"

namespace dkrr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class KernelFamily {
  gaussian,          // exp(-|x-z|^2 / phi)
  gaussian_sq,       // exp(-|x-z|^2 / phi^2), alternate parametrization
  polynomial,        // (1 + x.z)^degree
  sobolev_periodic,  // periodic Sobolev kernel on [0,1], smoothness nu
  wendland,          // compactly supported radial kernel on R^p, p <= 5
  additive,          // sum of one-dimensional kernels, one per coordinate
};

inline const char* family_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::gaussian: return "gaussian";
    case KernelFamily::gaussian_sq: return "gaussian_sq";
    case KernelFamily::polynomial: return "polynomial";
    case KernelFamily::sobolev_periodic: return "sobolev_periodic";
    case KernelFamily::wendland: return "wendland";
    case KernelFamily::additive: return "additive";
  }
  return "?";
}

inline KernelFamily family_from_name(const std::string& s) {
  if (s == "gaussian") return KernelFamily::gaussian;
  if (s == "gaussian_sq") return KernelFamily::gaussian_sq;
  if (s == "polynomial") return KernelFamily::polynomial;
  if (s == "sobolev_periodic" || s == "sobolev") return KernelFamily::sobolev_periodic;
  if (s == "wendland") return KernelFamily::wendland;
  if (s == "additive") return KernelFamily::additive;
  throw std::invalid_argument("unknown kernel family: " + s);
}

struct KernelSpec {
  KernelFamily family = KernelFamily::gaussian;
  // gaussian / gaussian_sq: {phi}; polynomial: {degree}; sobolev_periodic:
  // {nu}; wendland: {p}.  Empty for additive, which uses children instead.
  std::vector<double> theta;
  std::vector<KernelSpec> children;  // additive only, one per coordinate

  static KernelSpec gaussian(double phi) { return {KernelFamily::gaussian, {phi}, {}}; }
  static KernelSpec gaussian_sq(double phi) { return {KernelFamily::gaussian_sq, {phi}, {}}; }
  static KernelSpec polynomial(int degree) {
    return {KernelFamily::polynomial, {static_cast<double>(degree)}, {}};
  }
  static KernelSpec sobolev_periodic(int nu) {
    return {KernelFamily::sobolev_periodic, {static_cast<double>(nu)}, {}};
  }
  static KernelSpec wendland(int p) {
    return {KernelFamily::wendland, {static_cast<double>(p)}, {}};
  }
  static KernelSpec additive(std::vector<KernelSpec> kids) {
    return {KernelFamily::additive, {}, std::move(kids)};
  }
};

namespace detail {

// Bernoulli numbers B_0..B_20 (B_1 = -1/2 convention) as exact rationals.
inline constexpr double kBernoulliNumber[21] = {
    1.0,
    -1.0 / 2.0,
    1.0 / 6.0,
    0.0,
    -1.0 / 30.0,
    0.0,
    1.0 / 42.0,
    0.0,
    -1.0 / 30.0,
    0.0,
    5.0 / 66.0,
    0.0,
    -691.0 / 2730.0,
    0.0,
    7.0 / 6.0,
    0.0,
    -3617.0 / 510.0,
    0.0,
    43867.0 / 798.0,
    0.0,
    -174611.0 / 330.0,
};

constexpr double binomial(int n, int k) {
  // exact for n <= 20: intermediate products stay below 2^53
  unsigned long long r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<unsigned long long>(n - k + i) / i;
  return static_cast<double>(r);
}

// coefficient of t^j in B_n(t) is C(n,j) * B_{n-j}; tabulated at compile time
struct BernCoeffs {
  double c[21][21] = {};
};

constexpr BernCoeffs make_bern_coeffs() {
  BernCoeffs t;
  for (int n = 0; n <= 20; ++n)
    for (int j = 0; j <= n; ++j) t.c[n][j] = binomial(n, j) * kBernoulliNumber[n - j];
  return t;
}

inline constexpr BernCoeffs kBern = make_bern_coeffs();

constexpr double factorial(int n) {
  double r = 1.0;
  for (int i = 2; i <= n; ++i) r *= i;
  return r;
}

inline double powi(double x, int n) {
  double r = 1.0;
  for (double b = x; n > 0; n >>= 1, b *= b)
    if (n & 1) r *= b;
  return r;
}

}  // namespace detail

// Bernoulli polynomial B_order(t), order <= 20, by Horner on the closed-form
// coefficient table.
inline double bernoulli_polynomial(int order, double t) {
  if (order < 0) throw std::invalid_argument("bernoulli_polynomial: negative order");
  if (order > 20)
    throw UnsupportedOperation("bernoulli_polynomial: coefficients tabulated up to order 20");
  const double* c = detail::kBern.c[order];
  double acc = c[order];
  for (int j = order - 1; j >= 0; --j) acc = acc * t + c[j];
  return acc;
}

namespace detail {

inline double gaussian_value(double phi, double d2) { return std::exp(-d2 / phi); }
inline double gaussian_sq_value(double phi, double d2) { return std::exp(-d2 / (phi * phi)); }

inline double wendland_value(double p, double d2) {
  const double r = std::sqrt(d2 / p);
  const double v = 1.0 - r;
  return v > 0.0 ? powi(v, 5) * (5.0 * r + 1.0) : 0.0;
}

// Periodic Sobolev kernel on [0,1].  Evaluated at frac(|x-z|): the even
// Bernoulli polynomials satisfy B_n(t) = B_n(1-t), so this equals the value
// at the wrapped signed difference while staying exactly symmetric in
// floating point.
inline double sobolev_value(int nu, double x, double z) {
  double t = std::abs(x - z);
  t -= std::floor(t);
  const double sign = (nu % 2 == 1) ? 1.0 : -1.0;
  return sign * bernoulli_polynomial(2 * nu, t) / factorial(2 * nu);
}

inline void check_unit_interval(double v, const char* who) {
  if (!(v >= 0.0 && v <= 1.0))
    throw std::invalid_argument(std::string(who) + ": points must lie in [0,1]");
}

inline bool is_integer(double v) { return std::isfinite(v) && std::floor(v) == v; }

}  // namespace detail

inline void validate(const KernelSpec& spec) {
  switch (spec.family) {
    case KernelFamily::gaussian:
    case KernelFamily::gaussian_sq:
      if (spec.theta.size() != 1 || !(spec.theta[0] > 0.0) || !std::isfinite(spec.theta[0]))
        throw std::invalid_argument("gaussian kernel: phi must be a positive finite scalar");
      break;
    case KernelFamily::polynomial:
      if (spec.theta.size() != 1 || !detail::is_integer(spec.theta[0]) || spec.theta[0] < 1)
        throw std::invalid_argument("polynomial kernel: degree must be an integer >= 1");
      break;
    case KernelFamily::sobolev_periodic:
      if (spec.theta.size() != 1 || !detail::is_integer(spec.theta[0]) || spec.theta[0] < 1 ||
          spec.theta[0] > 10)
        throw std::invalid_argument("sobolev kernel: nu must be an integer in [1,10]");
      break;
    case KernelFamily::wendland:
      if (spec.theta.size() != 1 || !detail::is_integer(spec.theta[0]) || spec.theta[0] < 1 ||
          spec.theta[0] > 5)
        throw std::invalid_argument("wendland kernel: p must be an integer dimension in [1,5]");
      break;
    case KernelFamily::additive:
      if (!spec.theta.empty())
        throw std::invalid_argument("additive kernel: theta lives on the children");
      if (spec.children.empty())
        throw std::invalid_argument("additive kernel: needs at least one child");
      for (const auto& ch : spec.children) {
        if (ch.family == KernelFamily::additive)
          throw std::invalid_argument("additive kernel: children must be one-dimensional kernels");
        validate(ch);
      }
      break;
  }
}

inline bool spec_equal(const KernelSpec& a, const KernelSpec& b) {
  if (a.family != b.family || a.theta != b.theta || a.children.size() != b.children.size())
    return false;
  for (std::size_t i = 0; i < a.children.size(); ++i)
    if (!spec_equal(a.children[i], b.children[i])) return false;
  return true;
}

// Number of smoothly tunable hyperparameters (phi components); 0 for families
// whose hyperparameter is discrete.
inline int theta_dim(const KernelSpec& spec) {
  switch (spec.family) {
    case KernelFamily::gaussian:
    case KernelFamily::gaussian_sq:
      return 1;
    case KernelFamily::additive: {
      for (const auto& ch : spec.children)
        if (ch.family != KernelFamily::gaussian && ch.family != KernelFamily::gaussian_sq)
          return 0;
      return static_cast<int>(spec.children.size());
    }
    default:
      return 0;
  }
}

// All numeric hyperparameters, flattened, for reports and CSV columns.
inline std::vector<double> flat_theta(const KernelSpec& spec) {
  if (spec.family == KernelFamily::additive) {
    std::vector<double> out;
    for (const auto& ch : spec.children)
      for (double v : ch.theta) out.push_back(v);
    return out;
  }
  return spec.theta;
}

// Replace the tunable components (see theta_dim) with new values.
inline KernelSpec with_theta(const KernelSpec& spec, const std::vector<double>& theta) {
  const int d = theta_dim(spec);
  if (d == 0)
    throw UnsupportedOperation("with_theta: kernel family has no tunable components");
  if (static_cast<int>(theta.size()) != d)
    throw std::invalid_argument("with_theta: wrong number of components");
  KernelSpec out = spec;
  if (spec.family == KernelFamily::additive) {
    for (std::size_t c = 0; c < out.children.size(); ++c) out.children[c].theta = {theta[c]};
  } else {
    out.theta = {theta[0]};
  }
  validate(out);
  return out;
}

// ---------------------------------------------------------------------------
// evaluation

inline double eval_kernel(const KernelSpec& spec, const Eigen::Ref<const VectorXd>& x,
                          const Eigen::Ref<const VectorXd>& z) {
  validate(spec);
  if (x.size() != z.size()) throw std::invalid_argument("eval_kernel: dimension mismatch");
  switch (spec.family) {
    case KernelFamily::gaussian:
      return detail::gaussian_value(spec.theta[0], (x - z).squaredNorm());
    case KernelFamily::gaussian_sq:
      return detail::gaussian_sq_value(spec.theta[0], (x - z).squaredNorm());
    case KernelFamily::polynomial:
      return detail::powi(1.0 + x.dot(z), static_cast<int>(spec.theta[0]));
    case KernelFamily::sobolev_periodic: {
      if (x.size() != 1)
        throw std::invalid_argument("sobolev kernel: defined on one-dimensional inputs");
      detail::check_unit_interval(x[0], "sobolev kernel");
      detail::check_unit_interval(z[0], "sobolev kernel");
      return detail::sobolev_value(static_cast<int>(spec.theta[0]), x[0], z[0]);
    }
    case KernelFamily::wendland: {
      const auto p = static_cast<Eigen::Index>(spec.theta[0]);
      if (x.size() != p)
        throw std::invalid_argument("wendland kernel: input dimension must equal p");
      return detail::wendland_value(spec.theta[0], (x - z).squaredNorm());
    }
    case KernelFamily::additive: {
      if (static_cast<std::size_t>(x.size()) != spec.children.size())
        throw std::invalid_argument("additive kernel: one child per coordinate required");
      double acc = 0.0;
      for (std::size_t j = 0; j < spec.children.size(); ++j) {
        VectorXd xs(1), zs(1);
        xs[0] = x[static_cast<Eigen::Index>(j)];
        zs[0] = z[static_cast<Eigen::Index>(j)];
        acc += eval_kernel(spec.children[j], xs, zs);
      }
      return acc;
    }
  }
  return 0.0;
}

namespace detail {

// Pairwise squared distances, one row per point of a, computed per pair as
// |a_i - b_j|^2 with a fixed summation order.  This keeps gram(A,A) exactly
// symmetric and gram(A,B) exactly the transpose of gram(B,A), which a
// sum-of-squares expansion via GEMM would not.
inline MatrixXd pairwise_sqdist(const Eigen::Ref<const MatrixXd>& a,
                                const Eigen::Ref<const MatrixXd>& b) {
  const MatrixXd at = a.transpose();  // p x na, points contiguous
  const MatrixXd bt = b.transpose();
  MatrixXd d2(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      d2(i, j) = (at.col(i) - bt.col(j)).squaredNorm();
  return d2;
}

inline MatrixXd pairwise_dot(const Eigen::Ref<const MatrixXd>& a,
                             const Eigen::Ref<const MatrixXd>& b) {
  const MatrixXd at = a.transpose();
  const MatrixXd bt = b.transpose();
  MatrixXd d(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) d(i, j) = at.col(i).dot(bt.col(j));
  return d;
}

inline void check_dims(const KernelSpec& spec, Eigen::Index p, const char* who) {
  if (spec.family == KernelFamily::sobolev_periodic && p != 1)
    throw std::invalid_argument(std::string(who) + ": sobolev kernel needs 1-d inputs");
  if (spec.family == KernelFamily::wendland && p != static_cast<Eigen::Index>(spec.theta[0]))
    throw std::invalid_argument(std::string(who) + ": wendland input dimension must equal p");
  if (spec.family == KernelFamily::additive &&
      static_cast<std::size_t>(p) != spec.children.size())
    throw std::invalid_argument(std::string(who) + ": additive kernel needs one child per coordinate");
}

}  // namespace detail

// Gram matrix K(i,j) = K(a_i, b_j); rows of a and b are points.
inline MatrixXd gram(const KernelSpec& spec, const Eigen::Ref<const MatrixXd>& a,
                     const Eigen::Ref<const MatrixXd>& b) {
  validate(spec);
  if (a.cols() != b.cols()) throw std::invalid_argument("gram: dimension mismatch");
  detail::check_dims(spec, a.cols(), "gram");
  switch (spec.family) {
    case KernelFamily::gaussian: {
      MatrixXd k = detail::pairwise_sqdist(a, b);
      const double phi = spec.theta[0];
      return (-k / phi).array().exp().matrix();
    }
    case KernelFamily::gaussian_sq: {
      MatrixXd k = detail::pairwise_sqdist(a, b);
      const double phi = spec.theta[0];
      return (-k / (phi * phi)).array().exp().matrix();
    }
    case KernelFamily::polynomial: {
      MatrixXd k = detail::pairwise_dot(a, b);
      const int r = static_cast<int>(spec.theta[0]);
      for (Eigen::Index j = 0; j < k.cols(); ++j)
        for (Eigen::Index i = 0; i < k.rows(); ++i) k(i, j) = detail::powi(1.0 + k(i, j), r);
      return k;
    }
    case KernelFamily::sobolev_periodic: {
      const int nu = static_cast<int>(spec.theta[0]);
      MatrixXd k(a.rows(), b.rows());
      for (Eigen::Index i = 0; i < a.rows(); ++i)
        detail::check_unit_interval(a(i, 0), "gram(sobolev)");
      for (Eigen::Index j = 0; j < b.rows(); ++j)
        detail::check_unit_interval(b(j, 0), "gram(sobolev)");
      for (Eigen::Index j = 0; j < b.rows(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
          k(i, j) = detail::sobolev_value(nu, a(i, 0), b(j, 0));
      return k;
    }
    case KernelFamily::wendland: {
      MatrixXd k = detail::pairwise_sqdist(a, b);
      const double p = spec.theta[0];
      for (Eigen::Index j = 0; j < k.cols(); ++j)
        for (Eigen::Index i = 0; i < k.rows(); ++i) k(i, j) = detail::wendland_value(p, k(i, j));
      return k;
    }
    case KernelFamily::additive: {
      MatrixXd k = MatrixXd::Zero(a.rows(), b.rows());
      for (std::size_t c = 0; c < spec.children.size(); ++c) {
        const auto j = static_cast<Eigen::Index>(c);
        k += gram(spec.children[c], a.col(j), b.col(j));
      }
      return k;
    }
  }
  return {};
}

inline MatrixXd gram(const KernelSpec& spec, const Eigen::Ref<const MatrixXd>& a) {
  return gram(spec, a, a);
}

namespace detail {

// d/dphi and d2/dphi2 of the two smooth radial families, as functions of the
// squared distance.
inline double gaussian_d1(double phi, double d2) {
  return gaussian_value(phi, d2) * d2 / (phi * phi);
}
inline double gaussian_d2(double phi, double d2) {
  const double p2 = phi * phi;
  return gaussian_value(phi, d2) * (d2 * d2 / (p2 * p2) - 2.0 * d2 / (p2 * phi));
}
inline double gaussian_sq_d1(double phi, double d2) {
  return gaussian_sq_value(phi, d2) * 2.0 * d2 / (phi * phi * phi);
}
inline double gaussian_sq_d2(double phi, double d2) {
  const double p2 = phi * phi;
  return gaussian_sq_value(phi, d2) * (4.0 * d2 * d2 / (p2 * p2 * p2) - 6.0 * d2 / (p2 * p2));
}

inline MatrixXd smooth_deriv(const KernelSpec& spec, const Eigen::Ref<const MatrixXd>& a,
                             const Eigen::Ref<const MatrixXd>& b, int order) {
  MatrixXd k = pairwise_sqdist(a, b);
  const double phi = spec.theta[0];
  const bool sq = spec.family == KernelFamily::gaussian_sq;
  for (Eigen::Index j = 0; j < k.cols(); ++j)
    for (Eigen::Index i = 0; i < k.rows(); ++i) {
      const double d2 = k(i, j);
      if (order == 1)
        k(i, j) = sq ? gaussian_sq_d1(phi, d2) : gaussian_d1(phi, d2);
      else
        k(i, j) = sq ? gaussian_sq_d2(phi, d2) : gaussian_d2(phi, d2);
    }
  return k;
}

inline void require_smooth(const KernelSpec& spec, const char* who) {
  if (theta_dim(spec) == 0)
    throw UnsupportedOperation(std::string(who) + ": kernel family '" +
                               family_name(spec.family) +
                               "' has no smooth hyperparameter");
}

}  // namespace detail

// dK/dtheta_c as a matrix over the point pairs; component indices follow the
// flattening of theta_dim/with_theta.
inline MatrixXd gram_derivative(const KernelSpec& spec, const Eigen::Ref<const MatrixXd>& a,
                                const Eigen::Ref<const MatrixXd>& b, int c) {
  validate(spec);
  detail::require_smooth(spec, "gram_derivative");
  const int d = theta_dim(spec);
  if (c < 0 || c >= d) throw std::invalid_argument("gram_derivative: component out of range");
  if (spec.family == KernelFamily::additive) {
    const auto j = static_cast<Eigen::Index>(c);
    return detail::smooth_deriv(spec.children[c], a.col(j), b.col(j), 1);
  }
  return detail::smooth_deriv(spec, a, b, 1);
}

// d2K/dtheta_c1 dtheta_c2; zero matrix for distinct additive components.
inline MatrixXd gram_second_derivative(const KernelSpec& spec,
                                       const Eigen::Ref<const MatrixXd>& a,
                                       const Eigen::Ref<const MatrixXd>& b, int c1, int c2) {
  validate(spec);
  detail::require_smooth(spec, "gram_second_derivative");
  const int d = theta_dim(spec);
  if (c1 < 0 || c1 >= d || c2 < 0 || c2 >= d)
    throw std::invalid_argument("gram_second_derivative: component out of range");
  if (spec.family == KernelFamily::additive) {
    if (c1 != c2) return MatrixXd::Zero(a.rows(), b.rows());
    const auto j = static_cast<Eigen::Index>(c1);
    return detail::smooth_deriv(spec.children[c1], a.col(j), b.col(j), 2);
  }
  return detail::smooth_deriv(spec, a, b, 2);
}

}  // namespace dkrr
