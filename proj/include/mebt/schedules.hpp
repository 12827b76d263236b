#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mebt/common.hpp"
#include "mebt/rng.hpp"

// Stochastic schedules: the training interval curriculum, masking-ratio
// sampling, and the inference mask schedule gamma with its per-step token
// quota.

namespace mebt::sched {

struct IntervalSchedule {
  double alpha = 30000.0;  // iterations per unit of mean growth
  double beta = 2.0;       // Gaussian width, in frames
  Index t_max = 1;         // latent temporal length

  void validate() const {
    if (alpha <= 0) throw ConfigError("interval schedule: alpha must be > 0");
    if (beta <= 0) throw ConfigError("interval schedule: beta must be > 0");
    if (t_max < 1) throw ConfigError("interval schedule: t_max must be >= 1");
  }
};

enum class Curriculum { none, uniform, gaussian };
enum class GammaKind { cosine, linear };

inline Curriculum curriculum_from_string(const std::string& s) {
  if (s == "none") return Curriculum::none;
  if (s == "uniform") return Curriculum::uniform;
  if (s == "gaussian") return Curriculum::gaussian;
  throw ConfigError("unknown curriculum '" + s + "' (expected none|uniform|gaussian)");
}

inline std::string to_string(Curriculum c) {
  switch (c) {
    case Curriculum::none: return "none";
    case Curriculum::uniform: return "uniform";
    case Curriculum::gaussian: return "gaussian";
  }
  throw LogicError("unreachable curriculum");
}

inline GammaKind gamma_from_string(const std::string& s) {
  if (s == "cosine") return GammaKind::cosine;
  if (s == "linear") return GammaKind::linear;
  throw ConfigError("unknown gamma schedule '" + s + "' (expected cosine|linear)");
}

inline std::string to_string(GammaKind k) {
  return k == GammaKind::cosine ? "cosine" : "linear";
}

// Unnormalized density of the interval length at iteration n:
// exp(-(v - 1 - n/alpha)^2 / (2 beta^2)). The mean ramps up by one frame
// every alpha iterations, starting from 1.
inline double interval_pdf(double v, std::int64_t n, const IntervalSchedule& sched) {
  sched.validate();
  check(v >= 1.0, "interval_pdf: v must be >= 1");
  const double d = v - 1.0 - static_cast<double>(n) / sched.alpha;
  return std::exp(-d * d / (2.0 * sched.beta * sched.beta));
}

// Draws v-hat from the ramping Gaussian, then v = min(max(1, ceil(v-hat)), t).
inline Index sample_interval(std::int64_t n, const IntervalSchedule& sched, Rng& rng) {
  sched.validate();
  const double mean = 1.0 + static_cast<double>(n) / sched.alpha;
  const double vhat = rng.normal(mean, sched.beta);
  const auto v = static_cast<Index>(std::ceil(vhat));
  return std::min(std::max<Index>(1, v), sched.t_max);
}

// Interval length for one training batch under the chosen curriculum.
inline Index sample_v(Curriculum c, std::int64_t n, const IntervalSchedule& sched, Rng& rng) {
  sched.validate();
  switch (c) {
    case Curriculum::none: return sched.t_max;
    case Curriculum::uniform: return 1 + rng.uniform_int(sched.t_max);
    case Curriculum::gaussian: return sample_interval(n, sched, rng);
  }
  throw LogicError("unreachable curriculum");
}

// gamma(0) = 1 and gamma(1) = 0 hold exactly by definition; the trig value of
// cos(pi/2) is only zero up to rounding, so the endpoint is pinned.
inline double gamma(GammaKind kind, double u) {
  check(u >= 0.0 && u <= 1.0, "gamma: u must be in [0, 1]");
  if (u >= 1.0) return 0.0;
  switch (kind) {
    case GammaKind::cosine: return std::cos(M_PI * u / 2.0);
    case GammaKind::linear: return 1.0 - u;
  }
  throw LogicError("unreachable gamma kind");
}

// Training-time masking ratio: r = gamma(U) with U uniform, floored so that
// ceil(r N) >= 1 even when U lands exactly on 1.
inline double sample_mask_ratio(GammaKind kind, Index n_max, Rng& rng) {
  check(n_max >= 1, "sample_mask_ratio: n_max must be >= 1");
  const double r = gamma(kind, rng.uniform());
  return std::max(r, 1.0 / static_cast<double>(n_max));
}

// ceil(r N) unique indices, sorted ascending.
inline std::vector<Index> sample_mask(Index n, double r, Rng& rng) {
  if (!(r > 0.0 && r <= 1.0)) throw ConfigError("sample_mask: r must be in (0, 1]");
  check(n >= 1, "sample_mask: N must be >= 1");
  const auto n_m = static_cast<Index>(std::ceil(r * static_cast<double>(n)));
  auto m = rng.sample_without_replacement(n, std::min(n_m, n));
  std::sort(m.begin(), m.end());
  return m;
}

// Cumulative context size after decode step s of S: N_s = N - ceil(gamma((s+1)/S) N).
// Evaluating gamma at (s+1)/S rather than s/S makes the final step land on
// exactly N tokens; the schedule is non-decreasing in s.
inline Index tokens_decoded_after(Index s, Index S, Index n, GammaKind kind) {
  check(S >= 1, "tokens_decoded_after: S must be >= 1");
  check(n >= 1, "tokens_decoded_after: N must be >= 1");
  if (s < 0 || s >= S) throw LogicError("tokens_decoded_after: step out of range");
  const double u = static_cast<double>(s + 1) / static_cast<double>(S);
  const double masked = std::ceil(gamma(kind, u) * static_cast<double>(n));
  return n - static_cast<Index>(masked);
}

}  // namespace mebt::sched
