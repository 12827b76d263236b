#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <new>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include "mebt/autograd.hpp"
#include "mebt/common.hpp"
#include "mebt/features.hpp"
#include "mebt/model.hpp"
#include "mebt/rng.hpp"
#include "mebt/schedules.hpp"
#include "mebt/trainer.hpp"

// Empirical complexity measurement (analytic score-entry counts vs. measured
// peak activation memory across sequence lengths), the feature-space Fréchet
// distance, and sliding-window quality drift curves.

namespace mebt::bench {

// Least-squares slope of log2(y) against log2(x). All points must be > 0.
inline double loglog_slope(const std::vector<std::array<double, 2>>& pts) {
  if (pts.size() < 2) throw ConfigError("loglog_slope: need >= 2 points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& p : pts) {
    check(p[0] > 0.0 && p[1] > 0.0, "loglog_slope: points must be positive");
    const double x = std::log2(p[0]), y = std::log2(p[1]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(pts.size());
  const double denom = sxx - sx * sx / n;
  check(denom > 1e-12, "loglog_slope: degenerate x spread");
  return (sxy - sx * sy / n) / denom;
}

struct LengthRecord {
  Index tokens = 0;
  std::int64_t counted_scores = 0;   // analytic score entries for the backend
  std::int64_t centered_scores = 0;  // minus the length-independent latent part
  std::int64_t peak_bytes = 0;       // measured activation peak, forward+backward
  double wall_ms = 0.0;
  bool oom = false;
};

struct ScalingReport {
  std::string backend;
  std::vector<LengthRecord> records;
  double slope_counted = 0.0;  // fitted on centered analytic counts
  double slope_memory = 0.0;
  double slope_wall = 0.0;
};

inline void to_json(nlohmann::json& j, const LengthRecord& r) {
  j = {{"tokens", r.tokens},
       {"counted_scores", r.counted_scores},
       {"centered_scores", r.centered_scores},
       {"peak_bytes", r.peak_bytes},
       {"wall_ms", r.wall_ms},
       {"oom", r.oom}};
}

inline void to_json(nlohmann::json& j, const ScalingReport& r) {
  j = {{"backend", r.backend},
       {"records", r.records},
       {"slope_counted", r.slope_counted},
       {"slope_memory", r.slope_memory},
       {"slope_wall", r.slope_wall}};
}

using ConfigFactory = std::function<model::ModelConfig(Index tokens)>;

// One forward+backward of the masked objective per batch element at each
// length, under a half-masked full-length batch. Peak activation bytes come
// from the autograd allocator statistics; the analytic score-entry counter is
// the authoritative linearity check. An allocation failure at a length is
// recorded and the sweep continues.
inline ScalingReport measure_scaling(const ConfigFactory& make_config, model::Backend backend,
                                     std::vector<Index> lengths, Index batch = 1,
                                     std::uint64_t seed = 0) {
  if (lengths.size() < 4) throw ConfigError("measure_scaling: need >= 4 lengths");
  if (batch < 1) throw ConfigError("measure_scaling: batch must be >= 1");
  std::sort(lengths.begin(), lengths.end());
  if (lengths.front() < 1 || lengths.back() < 8 * lengths.front())
    throw ConfigError("measure_scaling: lengths must span >= 8x");

  ScalingReport report;
  report.backend = model::to_string(backend);

  for (std::size_t li = 0; li < lengths.size(); ++li) {
    const Index n = lengths[li];
    auto cfg = make_config(n);
    cfg.backend = backend;
    cfg.validate();
    if (cfg.n_max() != n)
      throw ConfigError("measure_scaling: factory grid holds " + std::to_string(cfg.n_max()) +
                        " tokens, expected " + std::to_string(n));

    LengthRecord rec;
    rec.tokens = n;
    const Index n_m = (n + 1) / 2;  // half masked
    const auto cost =
        model::count_attention_cost(cfg, n - n_m, n_m, cfg.grid_t, cfg.grid_h, cfg.grid_w);
    const auto& entry = backend == model::Backend::mebt   ? cost.mebt
                        : backend == model::Backend::full ? cost.full
                        : backend == model::Backend::axial ? cost.axial
                                                            : cost.window;
    rec.counted_scores = entry.scores;
    rec.centered_scores =
        entry.scores - (backend == model::Backend::mebt ? cost.mebt_fixed_scores : 0);

    try {
      Rng rng(seed + li);
      model::MebtModel<float> m(cfg, rng);
      ag::MemoryStats::reset_peak();
      const auto t0 = std::chrono::steady_clock::now();
      for (Index b = 0; b < batch; ++b) {
        model::MaskedBatch mb;
        mb.interval_start = 0;
        mb.interval_len = cfg.grid_t;
        mb.n_total = n;
        mb.masked = sched::sample_mask(n, 0.5, rng);
        std::vector<Index> targets;
        for (Index p = 0; p < n; ++p) {
          if (std::binary_search(mb.masked.begin(), mb.masked.end(), p))
            targets.push_back(rng.uniform_int(cfg.vocab));
          else
            mb.context.emplace_back(p, rng.uniform_int(cfg.vocab));
        }
        auto loss = train::mebt_loss(m.forward_logits(model::canonicalize(std::move(mb), cfg)),
                                     targets);
        ag::backward(loss);
      }
      const auto t1 = std::chrono::steady_clock::now();
      rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      rec.peak_bytes = ag::MemoryStats::peak_bytes;
    } catch (const std::bad_alloc&) {
      rec.oom = true;  // record the failure point and continue the sweep
    }
    report.records.push_back(rec);
  }

  std::vector<std::array<double, 2>> counted, memory, wall;
  for (const auto& r : report.records) {
    if (r.oom) continue;
    counted.push_back({static_cast<double>(r.tokens), static_cast<double>(r.centered_scores)});
    memory.push_back({static_cast<double>(r.tokens), static_cast<double>(r.peak_bytes)});
    wall.push_back({static_cast<double>(r.tokens), std::max(r.wall_ms, 1e-3)});
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  report.slope_counted = counted.size() >= 2 ? loglog_slope(counted) : nan;
  report.slope_memory = memory.size() >= 2 ? loglog_slope(memory) : nan;
  report.slope_wall = wall.size() >= 2 ? loglog_slope(wall) : nan;
  return report;
}

namespace detail {

// Symmetric PSD square root with eigenvalue clamping at zero. Eigenvalues
// below -tol (relative to the largest magnitude) mean the matrix is not a
// covariance at all and raise a numeric error.
inline Mat<double> psd_sqrt(const Mat<double>& sym) {
  Eigen::SelfAdjointEigenSolver<Mat<double>> es(sym);
  if (es.info() != Eigen::Success) throw NumericError("psd_sqrt: eigendecomposition failed");
  Eigen::VectorXd lam = es.eigenvalues();
  const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
  for (Index i = 0; i < lam.size(); ++i) {
    if (lam(i) < -1e-8 * scale)
      throw NumericError("covariance is not positive semidefinite");
    lam(i) = std::sqrt(std::max(lam(i), 0.0));
  }
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

inline void moments(const Mat<double>& x, Eigen::RowVectorXd& mu, Mat<double>& sigma) {
  mu = x.colwise().mean();
  const Mat<double> c = x.rowwise() - mu;
  sigma = c.transpose() * c / static_cast<double>(x.rows());  // population covariance
}

}  // namespace detail

// Fréchet distance between Gaussians fit to the two feature sets (rows are
// samples): |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}), the cross term
// computed through the symmetric form (S1^{1/2} S2 S1^{1/2})^{1/2}.
inline double frechet_feature_distance(const Mat<double>& a, const Mat<double>& b) {
  if (a.rows() < 2 || b.rows() < 2)
    throw ConfigError("frechet: need >= 2 samples per side");
  if (a.cols() != b.cols() || a.cols() < 1)
    throw ConfigError("frechet: feature dimensions differ");
  if (!a.allFinite() || !b.allFinite()) throw NumericError("frechet: non-finite features");

  Eigen::RowVectorXd mu1, mu2;
  Mat<double> s1, s2;
  detail::moments(a, mu1, s1);
  detail::moments(b, mu2, s2);

  const Mat<double> root1 = detail::psd_sqrt(s1);
  Mat<double> cross = root1 * s2 * root1;
  cross = ((cross + cross.transpose()) / 2.0).eval();  // symmetrize round-off
  Eigen::SelfAdjointEigenSolver<Mat<double>> es(cross);
  if (es.info() != Eigen::Success) throw NumericError("frechet: eigendecomposition failed");
  double tr_root = 0.0;
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  for (Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double lam = es.eigenvalues()(i);
    if (lam < -1e-8 * scale) throw NumericError("covariance is not positive semidefinite");
    tr_root += std::sqrt(std::max(lam, 0.0));
  }

  const double d = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_root;
  return std::max(0.0, d);  // exact value is >= 0; clamp round-off
}

// Feature rows for every sliding window of every video: one row per
// (video, window) pair. Useful for building reference distributions.
inline Mat<double> clip_features(const std::vector<VideoArray>& videos,
                                 const features::FeatureExtractor& fx, Index window,
                                 Index stride) {
  if (videos.empty()) throw ConfigError("clip_features: no videos");
  if (window < 1 || stride < 1) throw ConfigError("clip_features: bad window/stride");
  std::vector<Mat<double>> rows;
  for (const auto& v : videos) {
    check(v.rank() == 4, "clip_features: videos must be (T,H,W,C)");
    if (v.dims[0] < window) throw ConfigError("clip_features: video shorter than the window");
    for (Index start = 0; start + window <= v.dims[0]; start += stride)
      rows.push_back(fx.window_features(v, start, window));
  }
  Mat<double> out(static_cast<Index>(rows.size()), rows[0].cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = rows[i];
  return out;
}

struct QualityCurve {
  std::vector<Index> window_starts;
  std::vector<double> distance;  // Fréchet to the reference, per window
  std::vector<double> delta;     // distance minus the first window's
};

inline void to_json(nlohmann::json& j, const QualityCurve& q) {
  j = {{"window_starts", q.window_starts}, {"distance", q.distance}, {"delta", q.delta}};
}

// Drift of sample quality over time: featurize each sliding window across the
// sample set, measure the Fréchet distance to the reference distribution, and
// report the shift relative to the first window.
inline QualityCurve quality_over_time(const std::vector<VideoArray>& videos,
                                      const features::FeatureExtractor& fx, Index window,
                                      Index stride, const Mat<double>& reference) {
  if (videos.size() < 2) throw ConfigError("quality_over_time: need >= 2 videos");
  if (window < 1 || stride < 1) throw ConfigError("quality_over_time: bad window/stride");
  const Index t = videos.front().dims[0];
  for (const auto& v : videos) {
    check(v.rank() == 4, "quality_over_time: videos must be (T,H,W,C)");
    if (v.dims[0] != t) throw ConfigError("quality_over_time: videos must share a length");
  }
  if (t < window) throw ConfigError("quality_over_time: videos shorter than the window");

  QualityCurve out;
  for (Index start = 0; start + window <= t; start += stride) {
    Mat<double> feats(static_cast<Index>(videos.size()), reference.cols());
    for (std::size_t v = 0; v < videos.size(); ++v)
      feats.row(static_cast<Index>(v)) = fx.window_features(videos[v], start, window);
    out.window_starts.push_back(start);
    out.distance.push_back(frechet_feature_distance(reference, feats));
  }
  for (double d : out.distance) out.delta.push_back(d - out.distance.front());
  return out;
}

}  // namespace mebt::bench
