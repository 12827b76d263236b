#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mebt/autograd.hpp"
#include "mebt/checkpoint.hpp"
#include "mebt/ndarray.hpp"
#include "mebt/nn.hpp"
#include "mebt/optim.hpp"
#include "mebt/synth.hpp"

// Vector-quantized video tokenizer: a stack of strided 3D convolutions down
// to a (T/r_t, H/r_s, W/r_s) grid of embeddings, nearest-code quantization
// against a learned codebook, and a mirrored transposed-conv decoder. Trained
// with the three-term loss: reconstruction (gradient reaching the encoder
// through the straight-through estimator), codebook pull toward frozen
// encoder outputs, and the beta-weighted commitment term.

namespace mebt::vq {

struct TokenizerConfig {
  Index r_t = 4;         // temporal compression, power of two
  Index r_s = 8;         // spatial compression, power of two
  Index vocab = 64;      // codebook size U
  Index embed_dim = 64;  // code width d
  Index width = 64;      // conv channel width
  double beta_vq = 0.25;

  void validate() const {
    auto pow2 = [](Index x) { return x >= 1 && (x & (x - 1)) == 0; };
    if (!pow2(r_t) || !pow2(r_s))
      throw ConfigError("tokenizer: r_t and r_s must be powers of two");
    if (vocab < 2 || vocab > 65536)
      throw ConfigError("tokenizer: vocab must lie in [2, 65536]");
    if (embed_dim < 1 || width < 1) throw ConfigError("tokenizer: bad widths");
    if (!(beta_vq > 0.0)) throw ConfigError("tokenizer: beta_vq must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const TokenizerConfig& c) {
  j = {{"r_t", c.r_t},     {"r_s", c.r_s},     {"vocab", c.vocab},
       {"embed_dim", c.embed_dim}, {"width", c.width}, {"beta_vq", c.beta_vq}};
}

inline void from_json(const nlohmann::json& j, TokenizerConfig& c) {
  j.at("r_t").get_to(c.r_t);
  j.at("r_s").get_to(c.r_s);
  j.at("vocab").get_to(c.vocab);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("width").get_to(c.width);
  j.at("beta_vq").get_to(c.beta_vq);
}

namespace detail {

inline Index log2i(Index x) {
  Index n = 0;
  while ((Index{1} << n) < x) ++n;
  return n;
}

// Per-block conv geometry parameters. Stride-2 axes use kernel 4 / pad 1
// (exact halving); stride-1 axes use kernel 3 / pad 1 (size preserving).
struct BlockPlan {
  std::array<Index, 3> kernel, stride, pad;
};

inline std::vector<BlockPlan> block_plans(const TokenizerConfig& cfg) {
  const Index n_s = log2i(cfg.r_s), n_t = log2i(cfg.r_t);
  const Index n_blocks = std::max<Index>({n_s, n_t, 1});
  std::vector<BlockPlan> plans;
  for (Index i = 0; i < n_blocks; ++i) {
    BlockPlan p;
    const bool st = i >= n_blocks - n_t;  // temporal stride on the last n_t blocks
    const bool ss = i < n_s;
    p.kernel = {st ? 4 : 3, ss ? 4 : 3, ss ? 4 : 3};
    p.stride = {st ? 2 : 1, ss ? 2 : 1, ss ? 2 : 1};
    p.pad = {1, 1, 1};
    plans.push_back(p);
  }
  return plans;
}

}  // namespace detail

// Video (T,H,W,C) rows <-> feature matrix [T*H*W, C]; both are row-major over
// the same index order, so this is a plain element copy.
template <typename S>
Mat<S> video_to_mat(const VideoArray& v) {
  check(v.rank() == 4, "video_to_mat: expected rank-4 (T,H,W,C)");
  const Index rows = v.dims[0] * v.dims[1] * v.dims[2];
  Mat<S> m(rows, v.dims[3]);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < v.dims[3]; ++c)
      m(r, c) = static_cast<S>(v.data[static_cast<std::size_t>(r * v.dims[3] + c)]);
  return m;
}

template <typename S>
VideoArray mat_to_video(const Mat<S>& m, Index T, Index H, Index W) {
  check(m.rows() == T * H * W, "mat_to_video: row count mismatch");
  VideoArray v({T, H, W, m.cols()});
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      v.data[static_cast<std::size_t>(r * m.cols() + c)] = static_cast<float>(m(r, c));
  return v;
}

// Nearest code per row by squared Euclidean distance; ties take the lowest
// index. Distances are evaluated with the same expression for every candidate
// so exact ties stay exact.
template <typename S>
std::vector<Index> nearest_codes(const Mat<S>& h, const Mat<S>& codes) {
  check(h.cols() == codes.cols(), "nearest_codes: dimension mismatch");
  check(codes.rows() >= 1, "nearest_codes: empty codebook");
  std::vector<Index> idx(static_cast<std::size_t>(h.rows()));
  for (Index p = 0; p < h.rows(); ++p) {
    Index best = 0;
    S best_d = (h.row(p) - codes.row(0)).squaredNorm();
    for (Index u = 1; u < codes.rows(); ++u) {
      const S d = (h.row(p) - codes.row(u)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = u;
      }
    }
    idx[static_cast<std::size_t>(p)] = best;
  }
  return idx;
}

template <typename S>
struct VqLossTerms {
  ag::Var<S> total, recon, codebook, commit;
};

// Mean over all matrix entries of the squared difference.
template <typename S>
ag::Var<S> mean_sq_diff(const ag::Var<S>& a, const Mat<S>& b) {
  return ag::scale(ag::sum_sq(ag::add_const(a, Mat<S>(-b))),
                   static_cast<S>(1.0 / static_cast<double>(b.rows() * b.cols())));
}

// Three-term objective. xhat carries the straight-through path to the
// encoder; y_emb_sel is the gathered codebook rows (gradient = codebook
// pull); h is the raw encoder output (gradient = commitment).
template <typename S>
VqLossTerms<S> vq_loss(const Mat<S>& x, const ag::Var<S>& xhat, const ag::Var<S>& h,
                       const ag::Var<S>& y_emb_sel, double beta_vq) {
  auto recon = mean_sq_diff(xhat, x);
  auto codebook = mean_sq_diff(y_emb_sel, Mat<S>(h->val));
  auto commit = ag::scale(mean_sq_diff(h, Mat<S>(y_emb_sel->val)), static_cast<S>(beta_vq));
  auto total = ag::add(ag::add(recon, codebook), commit);
  return {total, recon, codebook, commit};
}

template <typename S>
class Tokenizer {
 public:
  struct Geoms {
    std::vector<std::shared_ptr<const ag::ConvGeom>> blocks;  // encoder order
    std::shared_ptr<const ag::ConvGeom> token_grid;           // 1x1x1 over token dims
    std::array<Index, 3> video_dims, token_dims;
  };

  Tokenizer(TokenizerConfig cfg, Index channels, Rng& rng)
      : cfg_(cfg), channels_(channels) {
    cfg_.validate();
    check(channels >= 1, "tokenizer: channels must be >= 1");
    const auto plans = detail::block_plans(cfg_);
    Index in_ch = channels_;
    for (std::size_t i = 0; i < plans.size(); ++i) {
      const Index k = plans[i].kernel[0] * plans[i].kernel[1] * plans[i].kernel[2];
      enc_w_.push_back(ag::param(kaiming(rng, k * in_ch, cfg_.width)));
      enc_b_.push_back(ag::param(Mat<S>::Zero(1, cfg_.width)));
      in_ch = cfg_.width;
    }
    enc_proj_w_ = ag::param(kaiming(rng, cfg_.width, cfg_.embed_dim));
    enc_proj_b_ = ag::param(Mat<S>::Zero(1, cfg_.embed_dim));

    dec_proj_w_ = ag::param(kaiming(rng, cfg_.embed_dim, cfg_.width));
    dec_proj_b_ = ag::param(Mat<S>::Zero(1, cfg_.width));
    for (std::size_t i = plans.size(); i-- > 0;) {
      const Index k = plans[i].kernel[0] * plans[i].kernel[1] * plans[i].kernel[2];
      const Index out_ch = i == 0 ? channels_ : cfg_.width;
      dec_w_.push_back(ag::param(kaiming(rng, k * out_ch, cfg_.width)));
      dec_b_.push_back(ag::param(Mat<S>::Zero(1, out_ch)));
    }
    // Codebook init spans a small cube around the origin, shrinking with U.
    Mat<S> cb(cfg_.vocab, cfg_.embed_dim);
    const double lim = 1.0 / static_cast<double>(cfg_.vocab);
    for (Index i = 0; i < cb.rows(); ++i)
      for (Index j = 0; j < cb.cols(); ++j)
        cb(i, j) = static_cast<S>(rng.uniform(-lim, lim));
    codebook_ = ag::param(cb);

    for (std::size_t i = 0; i < enc_w_.size(); ++i) {
      named_.emplace_back("enc." + std::to_string(i) + ".w", enc_w_[i]);
      named_.emplace_back("enc." + std::to_string(i) + ".b", enc_b_[i]);
    }
    named_.emplace_back("enc.proj.w", enc_proj_w_);
    named_.emplace_back("enc.proj.b", enc_proj_b_);
    named_.emplace_back("dec.proj.w", dec_proj_w_);
    named_.emplace_back("dec.proj.b", dec_proj_b_);
    for (std::size_t i = 0; i < dec_w_.size(); ++i) {
      named_.emplace_back("dec." + std::to_string(i) + ".w", dec_w_[i]);
      named_.emplace_back("dec." + std::to_string(i) + ".b", dec_b_[i]);
    }
    named_.emplace_back("codebook", codebook_);
  }

  const TokenizerConfig& config() const { return cfg_; }
  Index channels() const { return channels_; }
  const nn::NamedParams<S>& params() const { return named_; }
  const ag::Var<S>& codebook() const { return codebook_; }

  std::array<Index, 3> token_dims(Index T, Index H, Index W) const {
    if (T % cfg_.r_t != 0 || H % cfg_.r_s != 0 || W % cfg_.r_s != 0)
      throw ConfigError("tokenizer: video dims (" + std::to_string(T) + "," +
                        std::to_string(H) + "," + std::to_string(W) +
                        ") not divisible by compression (" + std::to_string(cfg_.r_t) + "," +
                        std::to_string(cfg_.r_s) + "," + std::to_string(cfg_.r_s) + ")");
    return {T / cfg_.r_t, H / cfg_.r_s, W / cfg_.r_s};
  }

  Geoms make_geoms(Index T, Index H, Index W) const {
    Geoms g;
    g.video_dims = {T, H, W};
    g.token_dims = token_dims(T, H, W);
    std::array<Index, 3> dims = g.video_dims;
    for (const auto& p : detail::block_plans(cfg_)) {
      auto geom = std::make_shared<ag::ConvGeom>(
          ag::build_conv_geom(dims, p.kernel, p.stride, p.pad));
      dims = geom->small;
      g.blocks.push_back(std::move(geom));
    }
    check(dims == g.token_dims, "tokenizer: conv stack does not reach the token grid");
    g.token_grid = std::make_shared<ag::ConvGeom>(
        ag::build_conv_geom(dims, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}));
    return g;
  }

  // Raw continuous embeddings, differentiable: [t*h*w, embed_dim].
  ag::Var<S> encode_var(const ag::Var<S>& video_rows, const Geoms& g) const {
    auto x = video_rows;
    for (std::size_t i = 0; i < g.blocks.size(); ++i)
      x = ag::gelu(ag::conv3d(x, enc_w_[i], enc_b_[i], g.blocks[i]));
    return ag::conv3d(x, enc_proj_w_, enc_proj_b_, g.token_grid);
  }

  // Decoder from (straight-through) code embeddings back to video rows,
  // unclamped: training measures reconstruction on the raw output.
  ag::Var<S> decode_var(const ag::Var<S>& code_rows, const Geoms& g) const {
    auto x = ag::gelu(ag::conv3d(code_rows, dec_proj_w_, dec_proj_b_, g.token_grid));
    for (std::size_t i = 0; i < dec_w_.size(); ++i) {
      const std::size_t mirrored = g.blocks.size() - 1 - i;
      x = ag::conv3d_transpose(x, dec_w_[i], dec_b_[i], g.blocks[mirrored]);
      if (i + 1 < dec_w_.size()) x = ag::gelu(x);
    }
    return x;
  }

  struct TrainingForward {
    ag::Var<S> h, xhat;
    std::vector<Index> indices;
    VqLossTerms<S> loss;
  };

  TrainingForward training_forward(const Mat<S>& video_rows, const Geoms& g) const {
    auto x = ag::constant(video_rows);
    auto h = encode_var(x, g);
    const auto idx = nearest_codes<S>(h->val, codebook_->val);
    auto e_sel = ag::gather_rows(codebook_, idx);
    auto st = ag::straight_through(h, e_sel->val);
    auto xhat = decode_var(st, g);
    auto loss = vq_loss<S>(video_rows, xhat, h, e_sel, cfg_.beta_vq);
    return {h, xhat, idx, loss};
  }

  // ---- Frozen-parameter inference over typed arrays ----

  NdArray<float> encode(const VideoArray& video) const {
    check(video.rank() == 4, "encode: expected (T,H,W,C) video");
    check(video.dims[3] == channels_, "encode: channel count mismatch");
    const auto g = make_geoms(video.dims[0], video.dims[1], video.dims[2]);
    auto h = encode_var(ag::constant(video_to_mat<S>(video)), g);
    if (!h->val.allFinite()) throw NumericError("encode: non-finite embeddings");
    NdArray<float> out({g.token_dims[0], g.token_dims[1], g.token_dims[2], cfg_.embed_dim});
    for (Index r = 0; r < h->val.rows(); ++r)
      for (Index c = 0; c < h->val.cols(); ++c)
        out.data[static_cast<std::size_t>(r * cfg_.embed_dim + c)] =
            static_cast<float>(h->val(r, c));
    return out;
  }

  std::pair<TokenGrid, NdArray<float>> quantize(const NdArray<float>& h) const {
    check(h.rank() == 4 && h.dims[3] == cfg_.embed_dim, "quantize: expected (t,h,w,d)");
    const Index rows = h.dims[0] * h.dims[1] * h.dims[2];
    Mat<S> hm(rows, cfg_.embed_dim);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cfg_.embed_dim; ++c)
        hm(r, c) = static_cast<S>(h.data[static_cast<std::size_t>(r * cfg_.embed_dim + c)]);
    const auto idx = nearest_codes<S>(hm, codebook_->val);
    TokenGrid grid({h.dims[0], h.dims[1], h.dims[2]});
    NdArray<float> y_emb(h.dims);
    for (Index r = 0; r < rows; ++r) {
      grid.data[static_cast<std::size_t>(r)] =
          static_cast<std::uint16_t>(idx[static_cast<std::size_t>(r)]);
      for (Index c = 0; c < cfg_.embed_dim; ++c)
        y_emb.data[static_cast<std::size_t>(r * cfg_.embed_dim + c)] =
            static_cast<float>(codebook_->val(idx[static_cast<std::size_t>(r)], c));
    }
    return {std::move(grid), std::move(y_emb)};
  }

  TokenGrid tokenize(const VideoArray& video) const { return quantize(encode(video)).first; }

  VideoArray decode_tokens(const TokenGrid& tokens) const {
    check(tokens.rank() == 3, "decode_tokens: expected (t,h,w) grid");
    for (auto ix : tokens.data)
      if (ix >= cfg_.vocab)
        throw DataError("decode_tokens: token index " + std::to_string(ix) +
                        " outside vocabulary of " + std::to_string(cfg_.vocab));
    const Index T = tokens.dims[0] * cfg_.r_t;
    const Index H = tokens.dims[1] * cfg_.r_s;
    const Index W = tokens.dims[2] * cfg_.r_s;
    const auto g = make_geoms(T, H, W);
    Mat<S> rows(tokens.size(), cfg_.embed_dim);
    for (Index r = 0; r < tokens.size(); ++r)
      rows.row(r) = codebook_->val.row(tokens.data[static_cast<std::size_t>(r)]);
    auto xhat = decode_var(ag::constant(rows), g);
    if (!xhat->val.allFinite()) throw NumericError("decode_tokens: non-finite output");
    Mat<S> clamped = xhat->val.cwiseMax(S{0}).cwiseMin(S{1});
    return mat_to_video<S>(clamped, T, H, W);
  }

  // ---- Checkpointing ----

  ckpt::Checkpoint to_checkpoint(std::int64_t step, std::uint64_t seed) const {
    ckpt::Checkpoint c;
    c.meta = {{"kind", "tokenizer"},
              {"config", cfg_},
              {"channels", channels_},
              {"step", step},
              {"seed", seed}};
    ckpt::append_params(c, named_);
    return c;
  }

  static Tokenizer<S> from_checkpoint(const ckpt::Checkpoint& c) {
    if (!c.meta.contains("kind") || c.meta["kind"] != "tokenizer")
      throw FormatError("checkpoint is not a tokenizer", 0);
    TokenizerConfig cfg = c.meta.at("config").get<TokenizerConfig>();
    Rng rng(0);  // init values are immediately overwritten
    Tokenizer<S> tok(cfg, c.meta.at("channels").get<Index>(), rng);
    ckpt::restore_params(c, tok.named_);
    return tok;
  }

 private:
  static Mat<S> kaiming(Rng& rng, Index fan_in_rows, Index cols) {
    return nn::normal_init<S>(rng, fan_in_rows, cols,
                              std::sqrt(2.0 / static_cast<double>(fan_in_rows)));
  }

  TokenizerConfig cfg_;
  Index channels_ = 3;
  std::vector<ag::Var<S>> enc_w_, enc_b_;
  ag::Var<S> enc_proj_w_, enc_proj_b_, dec_proj_w_, dec_proj_b_;
  std::vector<ag::Var<S>> dec_w_, dec_b_;
  ag::Var<S> codebook_;
  nn::NamedParams<S> named_;
};

// ---- Training ----

struct TokTrainConfig {
  Index steps = 2000;
  Index crop_frames = 16;  // temporal crop per step, divisible by r_t
  optim::AdamWConfig adamw{.lr = 1e-3, .weight_decay = 0.0, .clip_norm = 1.0};

  void validate(const TokenizerConfig& tc) const {
    if (steps < 0) throw ConfigError("tokenizer training: steps must be >= 0");
    if (crop_frames < 1 || crop_frames % tc.r_t != 0)
      throw ConfigError("tokenizer training: crop_frames must be a positive multiple of r_t");
    adamw.validate();
  }
};

struct StepMetrics {
  std::int64_t step;
  double total, recon, codebook, commit;
  double wall_ms;
};

struct EvalResult {
  double mse = 0.0;
  Index codes_used = 0;
};

inline std::vector<VideoArray> load_split(const synth::CorpusManifest& manifest) {
  std::vector<VideoArray> videos;
  for (const auto& e : manifest.entries) videos.push_back(io::load_tensor<float>(e.path));
  if (videos.empty()) throw ConfigError("corpus split is empty");
  return videos;
}

// Mean per-entry squared reconstruction error over full videos, plus the
// number of distinct codebook entries the split activates.
template <typename S>
EvalResult eval_tokenizer(const Tokenizer<S>& tok, const std::vector<VideoArray>& videos) {
  EvalResult r;
  std::set<std::uint16_t> used;
  double sum = 0.0, count = 0.0;
  for (const auto& v : videos) {
    const auto tokens = tok.tokenize(v);
    for (auto ix : tokens.data) used.insert(ix);
    const auto recon = tok.decode_tokens(tokens);
    check(recon.dims == v.dims, "eval_tokenizer: reconstruction shape mismatch");
    for (std::size_t i = 0; i < v.data.size(); ++i) {
      const double d = static_cast<double>(recon.data[i]) - static_cast<double>(v.data[i]);
      sum += d * d;
    }
    count += static_cast<double>(v.data.size());
  }
  r.mse = sum / count;
  r.codes_used = static_cast<Index>(used.size());
  return r;
}

// Single-stream training over random temporal crops of the split's videos.
// Metrics are recorded per step; a non-finite loss aborts with the step index.
template <typename S>
std::vector<StepMetrics> train_tokenizer(Tokenizer<S>& tok,
                                         const std::vector<VideoArray>& videos,
                                         const TokTrainConfig& opts, Rng& rng) {
  opts.validate(tok.config());
  for (const auto& v : videos) {
    check(v.rank() == 4, "train_tokenizer: corpus entries must be (T,H,W,C)");
    if (v.dims[0] < opts.crop_frames)
      throw ConfigError("train_tokenizer: a video is shorter than crop_frames");
  }
  optim::AdamW<S> opt(tok.params(), opts.adamw,
                      optim::AdamW<S>::default_decay_mask(tok.params()));

  std::map<std::array<Index, 3>, typename Tokenizer<S>::Geoms> geom_cache;
  std::vector<StepMetrics> metrics;
  for (Index step = 0; step < opts.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& v = videos[static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(videos.size())))];
    const Index t_start = rng.uniform_int(v.dims[0] - opts.crop_frames + 1);

    Mat<S> crop(opts.crop_frames * v.dims[1] * v.dims[2], v.dims[3]);
    for (Index r = 0; r < crop.rows(); ++r) {
      const Index src = t_start * v.dims[1] * v.dims[2] + r;
      for (Index c = 0; c < v.dims[3]; ++c)
        crop(r, c) = static_cast<S>(v.data[static_cast<std::size_t>(src * v.dims[3] + c)]);
    }

    const std::array<Index, 3> dims = {opts.crop_frames, v.dims[1], v.dims[2]};
    auto it = geom_cache.find(dims);
    if (it == geom_cache.end())
      it = geom_cache.emplace(dims, tok.make_geoms(dims[0], dims[1], dims[2])).first;

    auto fwd = tok.training_forward(crop, it->second);
    const double loss = static_cast<double>(fwd.loss.total->val(0, 0));
    if (!std::isfinite(loss))
      throw NumericError("train_tokenizer: non-finite loss at step " + std::to_string(step));
    opt.zero_grads();
    ag::backward(fwd.loss.total);
    opt.step();

    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    metrics.push_back({step, loss, static_cast<double>(fwd.loss.recon->val(0, 0)),
                       static_cast<double>(fwd.loss.codebook->val(0, 0)),
                       static_cast<double>(fwd.loss.commit->val(0, 0)), ms});
  }
  return metrics;
}

}  // namespace mebt::vq
