#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mebt/autograd.hpp"
#include "mebt/checkpoint.hpp"
#include "mebt/common.hpp"
#include "mebt/nn.hpp"
#include "mebt/optim.hpp"
#include "mebt/rng.hpp"
#include "mebt/synth.hpp"

// A small frozen video-frame classifier whose penultimate activations serve
// as evaluation features. Frames are split into square patches; each patch
// row carries its pixels plus normalized patch-center coordinates, so mean
// pooling over patches still sees color-at-position conjunctions. Labels are
// the joint (palette color, canvas quadrant) class of the scene's first
// sprite, recomputed from the scene dynamics rather than the pixels.

namespace mebt::features {

struct ExtractorConfig {
  Index frame_h = 32, frame_w = 32, channels = 3;
  Index patch = 8;
  Index d_hidden = 48;
  Index feature_dim = 32;
  Index num_classes = 16;

  Index patches() const { return (frame_h / patch) * (frame_w / patch); }
  // Pixels, the same pixels scaled by the patch-center x and y, and the
  // center coordinates themselves. The position-modulated copies let mean
  // pooling keep color-at-position conjunctions in the linear regime.
  Index patch_dim() const { return 3 * patch * patch * channels + 2; }

  void validate() const {
    if (frame_h < 1 || frame_w < 1) throw ConfigError("extractor: bad frame size");
    if (channels != 1 && channels != 3) throw ConfigError("extractor: channels must be 1 or 3");
    if (patch < 1 || frame_h % patch != 0 || frame_w % patch != 0)
      throw ConfigError("extractor: patch must divide the frame");
    if (d_hidden < 1 || feature_dim < 1) throw ConfigError("extractor: bad widths");
    if (num_classes < 2) throw ConfigError("extractor: need >= 2 classes");
  }
};

inline void to_json(nlohmann::json& j, const ExtractorConfig& c) {
  j = {{"frame_h", c.frame_h},     {"frame_w", c.frame_w},
       {"channels", c.channels},   {"patch", c.patch},
       {"d_hidden", c.d_hidden},   {"feature_dim", c.feature_dim},
       {"num_classes", c.num_classes}};
}

inline void from_json(const nlohmann::json& j, ExtractorConfig& c) {
  j.at("frame_h").get_to(c.frame_h);
  j.at("frame_w").get_to(c.frame_w);
  j.at("channels").get_to(c.channels);
  j.at("patch").get_to(c.patch);
  j.at("d_hidden").get_to(c.d_hidden);
  j.at("feature_dim").get_to(c.feature_dim);
  j.at("num_classes").get_to(c.num_classes);
}

// Quadrant of a sprite's center: 0 top-left, 1 top-right, 2 bottom-left,
// 3 bottom-right. Boundaries fall to the lower-right half.
inline Index quadrant_of(const synth::SceneSpec& spec, const synth::SpriteState& st) {
  const Index cx2 = 2 * st.x + spec.sprite_size;  // twice the center
  const Index cy2 = 2 * st.y + spec.sprite_size;
  const Index qx = cx2 >= spec.canvas_w ? 1 : 0;
  const Index qy = cy2 >= spec.canvas_h ? 1 : 0;
  return qy * 2 + qx;
}

inline Index num_frame_labels(const synth::SceneSpec& spec) {
  return static_cast<Index>(spec.palette.size()) * 4;
}

// Joint (color, quadrant) class of sprite 0 at one frame.
inline Index frame_label(const synth::SceneSpec& spec, std::uint64_t seed, Index frame) {
  const auto st = synth::sprite_state_at(spec, seed, frame, 0);
  return st.color_index * 4 + quadrant_of(spec, st);
}

struct FeatureExtractor {
  ExtractorConfig cfg;
  nn::Linear<float> embed, head, classify;
  nn::NamedParams<float> named;

  FeatureExtractor(ExtractorConfig c, Rng& rng) : cfg(c) {
    cfg.validate();
    embed = nn::Linear<float>(cfg.patch_dim(), cfg.d_hidden, rng);
    head = nn::Linear<float>(cfg.d_hidden, cfg.feature_dim, rng);
    classify = nn::Linear<float>(cfg.feature_dim, cfg.num_classes, rng);
    embed.collect("embed", named);
    head.collect("head", named);
    classify.collect("classify", named);
  }

  const nn::NamedParams<float>& params() const { return named; }

  // Patch rows of one frame: pixels in raster order plus the patch center in
  // [-1, 1] canvas coordinates.
  Mat<float> patchify(const VideoArray& video, Index frame) const {
    check(video.rank() == 4, "patchify: expected (T,H,W,C) video");
    check(video.dims[1] == cfg.frame_h && video.dims[2] == cfg.frame_w &&
              video.dims[3] == cfg.channels,
          "patchify: video geometry does not match the extractor");
    check(frame >= 0 && frame < video.dims[0], "patchify: frame out of range");
    const Index ph = cfg.frame_h / cfg.patch, pw = cfg.frame_w / cfg.patch;
    const Index area = cfg.patch * cfg.patch * cfg.channels;
    Mat<float> rows(cfg.patches(), cfg.patch_dim());
    for (Index py = 0; py < ph; ++py)
      for (Index px = 0; px < pw; ++px) {
        const Index row = py * pw + px;
        const auto cx = static_cast<float>(2.0 * (px + 0.5) / static_cast<double>(pw) - 1.0);
        const auto cy = static_cast<float>(2.0 * (py + 0.5) / static_cast<double>(ph) - 1.0);
        Index at = 0;
        for (Index dy = 0; dy < cfg.patch; ++dy)
          for (Index dx = 0; dx < cfg.patch; ++dx) {
            const Index y = py * cfg.patch + dy, x = px * cfg.patch + dx;
            const std::size_t base = static_cast<std::size_t>(
                ((frame * cfg.frame_h + y) * cfg.frame_w + x) * cfg.channels);
            for (Index c = 0; c < cfg.channels; ++c) {
              const float v = video.data[base + c];
              rows(row, at) = v;
              rows(row, at + area) = v * cx;
              rows(row, at + 2 * area) = v * cy;
              ++at;
            }
          }
        rows(row, 3 * area) = cx;
        rows(row, 3 * area + 1) = cy;
      }
    return rows;
  }

  // Differentiable path for a stack of frames given as patch matrices:
  // patch embedding, mean pool over patches, feature head. Output is one
  // feature row per frame.
  ag::Var<float> features_var(const std::vector<Mat<float>>& patch_mats) const {
    check(!patch_mats.empty(), "features: empty batch");
    const Index p = cfg.patches();
    const auto b = static_cast<Index>(patch_mats.size());
    std::vector<ag::Var<float>> stacked;
    stacked.reserve(patch_mats.size());
    for (const auto& m : patch_mats) {
      check(m.rows() == p && m.cols() == cfg.patch_dim(), "features: bad patch matrix");
      stacked.push_back(ag::constant(m));
    }
    auto h1 = ag::gelu(embed(ag::concat_rows(stacked)));  // (b*p, d_hidden)
    Mat<float> pool = Mat<float>::Zero(b, b * p);
    for (Index i = 0; i < b; ++i)
      pool.block(i, i * p, 1, p).setConstant(1.0f / static_cast<float>(p));
    auto pooled = ag::matmul(ag::constant(pool), h1);  // (b, d_hidden)
    return ag::gelu(head(pooled));                     // (b, feature_dim)
  }

  ag::Var<float> logits_var(const std::vector<Mat<float>>& patch_mats) const {
    return classify(features_var(patch_mats));
  }

  // Frozen evaluation path: mean feature vector of a frame window, as double.
  Mat<double> window_features(const VideoArray& video, Index start, Index len) const {
    check(len >= 1, "window_features: empty window");
    check(start >= 0 && video.rank() == 4 && start + len <= video.dims[0],
          "window_features: window out of range");
    std::vector<Mat<float>> mats;
    mats.reserve(static_cast<std::size_t>(len));
    for (Index f = start; f < start + len; ++f) mats.push_back(patchify(video, f));
    const auto feats = features_var(mats);
    Mat<double> mean = feats->val.template cast<double>().colwise().mean();
    return mean;  // 1 x feature_dim
  }

  ckpt::Checkpoint to_checkpoint(Index step, std::uint64_t seed) const {
    ckpt::Checkpoint c;
    c.meta = {{"kind", "feature_extractor"}, {"config", cfg}, {"step", step}, {"seed", seed}};
    ckpt::append_params(c, named);
    return c;
  }

  static FeatureExtractor from_checkpoint(const ckpt::Checkpoint& c) {
    if (c.meta.value("kind", "") != "feature_extractor")
      throw FormatError("checkpoint is not a feature extractor", 0);
    const auto cfg = c.meta.at("config").get<ExtractorConfig>();
    Rng rng(0);
    FeatureExtractor fx(cfg, rng);
    ckpt::restore_params(c, fx.named);
    return fx;
  }
};

struct ExtractorTrainConfig {
  Index steps = 2000;
  Index batch = 32;
  double holdout_fraction = 0.2;
  double accuracy_threshold = 0.9;
  optim::AdamWConfig adamw{.lr = 1e-3};

  void validate() const {
    if (steps < 0) throw ConfigError("extractor train: steps must be >= 0");
    if (batch < 1) throw ConfigError("extractor train: batch must be >= 1");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
      throw ConfigError("extractor train: holdout_fraction must lie in (0, 1)");
    if (!(accuracy_threshold > 0.0 && accuracy_threshold <= 1.0))
      throw ConfigError("extractor train: bad accuracy threshold");
    adamw.validate();
  }
};

inline void to_json(nlohmann::json& j, const ExtractorTrainConfig& c) {
  j = {{"steps", c.steps},
       {"batch", c.batch},
       {"holdout_fraction", c.holdout_fraction},
       {"accuracy_threshold", c.accuracy_threshold},
       {"adamw", c.adamw}};
}

inline void from_json(const nlohmann::json& j, ExtractorTrainConfig& c) {
  j.at("steps").get_to(c.steps);
  j.at("batch").get_to(c.batch);
  j.at("holdout_fraction").get_to(c.holdout_fraction);
  j.at("accuracy_threshold").get_to(c.accuracy_threshold);
  j.at("adamw").get_to(c.adamw);
}

struct ExtractorTrainResult {
  FeatureExtractor extractor;
  double held_out_accuracy = 0.0;
  bool accuracy_ok = false;  // threshold miss is a warning, not a failure
};

namespace detail {

struct FrameRef {
  Index video, frame;
  Index label;
};

inline double accuracy_on(const FeatureExtractor& fx, const std::vector<VideoArray>& videos,
                          const std::vector<FrameRef>& refs) {
  if (refs.empty()) return 0.0;
  Index hits = 0;
  for (const auto& r : refs) {
    const auto logits =
        fx.logits_var({fx.patchify(videos[static_cast<std::size_t>(r.video)], r.frame)});
    Index best = 0;
    logits->val.row(0).maxCoeff(&best);
    if (best == r.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(refs.size());
}

}  // namespace detail

// Trains the classifier on per-frame labels, holding out whole videos from
// the end of the list. Returns the frozen extractor and its held-out
// accuracy; falling short of the threshold is reported, never thrown.
inline ExtractorTrainResult train_feature_extractor(
    const std::vector<VideoArray>& videos, const std::vector<std::vector<Index>>& labels,
    const ExtractorConfig& cfg, const ExtractorTrainConfig& tc, Rng& rng) {
  cfg.validate();
  tc.validate();
  if (videos.empty()) throw ConfigError("extractor train: empty corpus");
  if (labels.size() != videos.size())
    throw ConfigError("extractor train: one label track per video required");
  for (std::size_t v = 0; v < videos.size(); ++v) {
    check(videos[v].rank() == 4, "extractor train: corpus entries must be (T,H,W,C)");
    if (labels[v].size() != static_cast<std::size_t>(videos[v].dims[0]))
      throw ConfigError("extractor train: one label per frame required");
    for (Index l : labels[v])
      if (l < 0 || l >= cfg.num_classes)
        throw DataError("extractor train: label " + std::to_string(l) +
                        " outside class range of " + std::to_string(cfg.num_classes));
  }

  const auto v_total = static_cast<Index>(videos.size());
  const Index v_hold = std::max<Index>(
      1, static_cast<Index>(std::llround(tc.holdout_fraction * static_cast<double>(v_total))));
  if (v_hold >= v_total)
    throw ConfigError("extractor train: holdout leaves no training videos");

  std::vector<detail::FrameRef> train_refs, held_refs;
  for (Index v = 0; v < v_total; ++v)
    for (Index f = 0; f < videos[static_cast<std::size_t>(v)].dims[0]; ++f) {
      const detail::FrameRef r{v, f, labels[static_cast<std::size_t>(v)][static_cast<std::size_t>(f)]};
      (v < v_total - v_hold ? train_refs : held_refs).push_back(r);
    }

  FeatureExtractor fx(cfg, rng);
  optim::AdamW<float> opt(fx.named, tc.adamw,
                          optim::AdamW<float>::default_decay_mask(fx.named));

  for (Index step = 0; step < tc.steps; ++step) {
    std::vector<Mat<float>> mats;
    std::vector<Index> targets;
    for (Index b = 0; b < tc.batch; ++b) {
      const auto& r = train_refs[static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(train_refs.size())))];
      mats.push_back(fx.patchify(videos[static_cast<std::size_t>(r.video)], r.frame));
      targets.push_back(r.label);
    }
    auto loss = ag::cross_entropy_mean(fx.logits_var(mats), targets);
    if (!std::isfinite(static_cast<double>(loss->val(0, 0))))
      throw NumericError("extractor train: non-finite loss at step " + std::to_string(step));
    ag::backward(loss);
    opt.step();
  }

  ExtractorTrainResult out{std::move(fx), 0.0, false};
  out.held_out_accuracy = detail::accuracy_on(out.extractor, videos, held_refs);
  out.accuracy_ok = out.held_out_accuracy >= tc.accuracy_threshold;
  return out;
}

}  // namespace mebt::features
