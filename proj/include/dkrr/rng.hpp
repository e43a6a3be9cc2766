#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <utility>

namespace dkrr {

// The one generator used wherever results must be reproducible.  mt19937_64
// has a fully specified state transition; the transforms below deliberately
// avoid std::*_distribution, whose output is implementation defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // uniform on [0,1) with 53 random bits
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller; the second variate is cached
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0,1], keeps the log finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // unbiased integer on [0, n), n >= 1, by rejection
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t rem = (0 - n) % n;  // 2^64 mod n
    std::uint64_t x;
    do {
      x = gen_();
    } while (x < rem);
    return x % n;
  }

  // Fisher-Yates with our own bounded draws, so the permutation depends only
  // on the seed (std::shuffle is implementation defined)
  template <class Vec>
  void shuffle(Vec& v) {
    using std::swap;
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      swap(v[i - 1], v[j]);
    }
  }

  // Independent child seed for (seed, tag); splitmix64-style mixing.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dkrr
