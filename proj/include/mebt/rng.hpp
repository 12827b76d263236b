#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "mebt/common.hpp"

namespace mebt {

// Deterministic generator with hand-rolled distributions. std::mt19937_64's
// output sequence is pinned by the standard, but the std:: distributions are
// not, so sampling goes through the explicit transforms below. Identical seeds
// give identical streams on any conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1): top 53 bits scaled, so every value is exactly representable.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection-free modulo is biased; n here is tiny
  // relative to 2^64 so multiply-shift keeps the bias below 2^-53.
  std::int64_t uniform_int(std::int64_t n) {
    check(n > 0, "uniform_int: n must be positive");
    return static_cast<std::int64_t>(uniform() * static_cast<double>(n));
  }

  // Box-Muller, cached second value.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Standard Gumbel: -log(-log(U)). U is nudged away from 0 to stay finite.
  double gumbel() {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return -std::log(-std::log(u));
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n), in shuffled order.
  std::vector<Index> sample_without_replacement(Index n, Index k) {
    check(k >= 0 && k <= n, "sample_without_replacement: need 0 <= k <= n");
    std::vector<Index> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), Index{0});
    for (Index i = 0; i < k; ++i) {
      const auto j = i + uniform_int(n - i);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(k));
    return pool;
  }

  // Inverse-CDF draw from unnormalized nonnegative weights.
  Index categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) {
      check(w >= 0.0 && std::isfinite(w), "categorical: weights must be finite and nonnegative");
      total += w;
    }
    check(total > 0.0, "categorical: all weights are zero");
    const double x = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (x < acc) return static_cast<Index>(i);
    }
    return static_cast<Index>(weights.size() - 1);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace mebt
