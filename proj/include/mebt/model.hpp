#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "mebt/checkpoint.hpp"
#include "mebt/nn.hpp"
#include "mebt/schedules.hpp"

// The transformer core. Encoder: a latent bottleneck of N_L learned tokens
// alternating cross-attention over the context with self-attention. Decoder:
// alternating (a) latents attending over {latents, mask slots} and (b) mask
// slots attending over latents, ending with (b) so logits come from mask
// states. Ablation backends (full, axial, window) run plain self-attention
// over all interval tokens in different sparsity patterns.

namespace mebt::model {

enum class Backend { mebt, full, axial, window };

inline Backend backend_from_string(const std::string& s) {
  if (s == "mebt") return Backend::mebt;
  if (s == "full") return Backend::full;
  if (s == "axial") return Backend::axial;
  if (s == "window") return Backend::window;
  throw ConfigError("unknown backend '" + s + "' (expected mebt|full|axial|window)");
}

inline std::string to_string(Backend b) {
  switch (b) {
    case Backend::mebt: return "mebt";
    case Backend::full: return "full";
    case Backend::axial: return "axial";
    case Backend::window: return "window";
  }
  throw LogicError("unreachable backend");
}

struct ModelConfig {
  Index num_layers = 8;
  Index num_heads = 4;
  Index d_model = 64;
  Index n_latent = 16;
  Index grid_t = 16, grid_h = 4, grid_w = 4;
  Index vocab = 64;
  Backend backend = Backend::mebt;
  Index window = 16;     // spatial window size of the window backend
  double dropout = 0.0;  // training-time rate; forwards take an optional context

  Index n_max() const { return grid_t * grid_h * grid_w; }

  void validate() const {
    if (num_heads < 1 || d_model < 1 || d_model % num_heads != 0)
      throw ConfigError("model: d_model must be a positive multiple of num_heads");
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw ConfigError("model: dropout must lie in [0, 1)");
    if (n_latent < 1) throw ConfigError("model: n_latent must be >= 1");
    if (grid_t < 1 || grid_h < 1 || grid_w < 1) throw ConfigError("model: bad grid");
    if (vocab < 2) throw ConfigError("model: vocab must be >= 2");
    if (backend == Backend::mebt) {
      if (num_layers < 2) throw ConfigError("model: mebt backend needs >= 2 layers");
    } else if (num_layers < 1) {
      throw ConfigError("model: need >= 1 layer");
    }
    if (backend == Backend::window && (window < 1 || (grid_h * grid_w) % window != 0))
      throw ConfigError("model: window must divide h*w");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"num_layers", c.num_layers}, {"num_heads", c.num_heads},
       {"d_model", c.d_model},       {"n_latent", c.n_latent},
       {"grid_t", c.grid_t},         {"grid_h", c.grid_h},
       {"grid_w", c.grid_w},         {"vocab", c.vocab},
       {"backend", to_string(c.backend)}, {"window", c.window},
       {"dropout", c.dropout}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("num_layers").get_to(c.num_layers);
  j.at("num_heads").get_to(c.num_heads);
  j.at("d_model").get_to(c.d_model);
  j.at("n_latent").get_to(c.n_latent);
  j.at("grid_t").get_to(c.grid_t);
  j.at("grid_h").get_to(c.grid_h);
  j.at("grid_w").get_to(c.grid_w);
  j.at("vocab").get_to(c.vocab);
  c.backend = backend_from_string(j.at("backend").get<std::string>());
  j.at("window").get_to(c.window);
  j.at("dropout").get_to(c.dropout);
}

// Layer kinds, shared by the forward pass and the analytic cost counter.
// Encoder: cross ('c') then self ('s'), alternating from cross.
// Decoder: pairs of ('a' latents over {z_L, z_M}, 'b' masks over z_L); odd
// counts lead with a 'b' so the final layer is always 'b'.
inline Index encoder_layer_count(Index num_layers) { return num_layers / 2; }
inline Index decoder_layer_count(Index num_layers) { return num_layers - num_layers / 2; }

inline std::vector<char> encoder_kinds(Index n_enc) {
  std::vector<char> kinds;
  for (Index i = 0; i < n_enc; ++i) kinds.push_back(i % 2 == 0 ? 'c' : 's');
  return kinds;
}

inline std::vector<char> decoder_kinds(Index n_dec) {
  std::vector<char> kinds;
  if (n_dec % 2 == 1) kinds.push_back('b');
  for (Index i = kinds.size(); i < n_dec; i += 2) {
    kinds.push_back('a');
    kinds.push_back('b');
  }
  return kinds;
}

struct Coords {
  Index t, h, w;
};

inline Coords unflatten(Index p, Index h, Index w) {
  return {p / (h * w), (p / w) % h, p % w};
}

// One training/decoding instance: visible (position, token) pairs plus the
// masked positions to predict, all within a contiguous frame interval.
struct MaskedBatch {
  std::vector<std::pair<Index, Index>> context;  // (absolute position, token id)
  std::vector<Index> masked;                     // absolute positions, sorted unique
  Index n_total = 0;                             // tokens in the interval sub-volume
  Index interval_start = 0, interval_len = 0;    // latent frames
};

// Sorts context by position and masked ascending, then checks every invariant.
// Canonical ordering makes encoder output bitwise independent of the order in
// which callers assembled the context.
inline MaskedBatch canonicalize(MaskedBatch b, const ModelConfig& cfg) {
  std::sort(b.context.begin(), b.context.end());
  std::sort(b.masked.begin(), b.masked.end());
  if (b.masked.empty()) throw LogicError("batch: at least one masked position required");
  if (b.interval_start < 0 || b.interval_len < 1 ||
      b.interval_start + b.interval_len > cfg.grid_t)
    throw LogicError("batch: interval outside the grid");
  if (b.n_total != b.interval_len * cfg.grid_h * cfg.grid_w)
    throw LogicError("batch: n_total does not match the interval sub-volume");
  auto in_window = [&](Index p) {
    if (p < 0 || p >= cfg.n_max()) return false;
    const auto c = unflatten(p, cfg.grid_h, cfg.grid_w);
    return c.t >= b.interval_start && c.t < b.interval_start + b.interval_len;
  };
  for (std::size_t i = 0; i < b.masked.size(); ++i) {
    if (!in_window(b.masked[i])) throw LogicError("batch: masked position outside interval");
    if (i > 0 && b.masked[i] == b.masked[i - 1])
      throw LogicError("batch: duplicate masked position");
  }
  for (std::size_t i = 0; i < b.context.size(); ++i) {
    if (!in_window(b.context[i].first))
      throw LogicError("batch: context position outside interval");
    if (i > 0 && b.context[i].first == b.context[i - 1].first)
      throw LogicError("batch: duplicate context position");
    if (b.context[i].second < 0 || b.context[i].second >= cfg.vocab)
      throw LogicError("batch: token id outside vocabulary");
    if (std::binary_search(b.masked.begin(), b.masked.end(), b.context[i].first))
      throw LogicError("batch: context and masked positions overlap");
  }
  if (static_cast<Index>(b.context.size() + b.masked.size()) > b.n_total)
    throw LogicError("batch: more positions than the interval holds");
  return b;
}

template <typename S>
struct MebtModel {
  ModelConfig cfg;
  ag::Var<S> tok_emb;      // vocab x d
  ag::Var<S> pos_emb;      // N_max x d
  ag::Var<S> mask_vec;     // 1 x d
  ag::Var<S> latent_init;  // N_L x d (mebt backend only)
  std::vector<nn::Block<S>> enc_blocks;  // kinds from encoder_kinds
  std::vector<nn::Block<S>> dec_blocks;  // kinds from decoder_kinds
  std::vector<nn::Block<S>> flat_blocks; // full/axial/window backends
  nn::LayerNorm<S> ln_final;
  nn::Linear<S> head;  // d -> vocab, untied from tok_emb
  nn::NamedParams<S> named;

  explicit MebtModel(const ModelConfig& config, Rng& rng) : cfg(config) {
    cfg.validate();
    tok_emb = ag::param(nn::normal_init<S>(rng, cfg.vocab, cfg.d_model));
    pos_emb = ag::param(nn::normal_init<S>(rng, cfg.n_max(), cfg.d_model));
    mask_vec = ag::param(nn::normal_init<S>(rng, 1, cfg.d_model));
    named.emplace_back("tok_emb", tok_emb);
    named.emplace_back("pos_emb", pos_emb);
    named.emplace_back("mask_vec", mask_vec);
    if (cfg.backend == Backend::mebt) {
      latent_init = ag::param(nn::normal_init<S>(rng, cfg.n_latent, cfg.d_model));
      named.emplace_back("latent_init", latent_init);
      const Index n_enc = encoder_layer_count(cfg.num_layers);
      const Index n_dec = decoder_layer_count(cfg.num_layers);
      for (Index i = 0; i < n_enc; ++i) {
        enc_blocks.emplace_back(cfg.d_model, cfg.num_heads, rng);
        enc_blocks.back().collect("enc." + std::to_string(i), named);
      }
      for (Index i = 0; i < n_dec; ++i) {
        dec_blocks.emplace_back(cfg.d_model, cfg.num_heads, rng);
        dec_blocks.back().collect("dec." + std::to_string(i), named);
      }
    } else {
      for (Index i = 0; i < cfg.num_layers; ++i) {
        flat_blocks.emplace_back(cfg.d_model, cfg.num_heads, rng);
        flat_blocks.back().collect("blk." + std::to_string(i), named);
      }
    }
    ln_final = nn::LayerNorm<S>(cfg.d_model);
    ln_final.collect("ln_final", named);
    head = nn::Linear<S>(cfg.d_model, cfg.vocab, rng);
    head.collect("head", named);
  }

  const nn::NamedParams<S>& params() const { return named; }

  ckpt::Checkpoint to_checkpoint(std::int64_t step, std::uint64_t seed) const {
    ckpt::Checkpoint c;
    c.meta = {{"kind", "mebt_model"}, {"config", cfg}, {"step", step}, {"seed", seed}};
    ckpt::append_params(c, named);
    return c;
  }

  static MebtModel from_checkpoint(const ckpt::Checkpoint& c) {
    if (!c.meta.contains("kind") || c.meta["kind"] != "mebt_model")
      throw FormatError("checkpoint is not a masked transformer model", 0);
    const auto cfg = c.meta.at("config").get<ModelConfig>();
    Rng rng(0);  // init values are immediately overwritten
    MebtModel m(cfg, rng);
    ckpt::restore_params(c, m.named);
    return m;
  }

  // (context embeddings N_C x d, mask embeddings N_M x d). Canonical batch
  // order only: call canonicalize first.
  std::pair<ag::Var<S>, ag::Var<S>> embed(const MaskedBatch& b) const {
    std::vector<Index> ctx_tokens, ctx_pos;
    for (const auto& [p, tok] : b.context) {
      ctx_pos.push_back(p);
      ctx_tokens.push_back(tok);
    }
    ag::Var<S> ctx;
    if (ctx_pos.empty()) {
      ctx = ag::constant(Mat<S>(0, cfg.d_model));
    } else {
      ctx = ag::add(ag::gather_rows(tok_emb, ctx_tokens), ag::gather_rows(pos_emb, ctx_pos));
    }
    auto mask = ag::add_rowvec(ag::gather_rows(pos_emb, b.masked), mask_vec);
    return {ctx, mask};
  }

  static void require_finite(const ag::Var<S>& x, const char* stage, Index layer) {
    if (!x->val.allFinite())
      throw NumericError(std::string("non-finite activations in ") + stage + " layer " +
                         std::to_string(layer));
  }

  // Latent state after the encoder stack. Empty context skips cross blocks
  // entirely (attention over zero keys is undefined), leaving only the
  // self-attention blocks to transform the learned init.
  ag::Var<S> encoder_forward(const ag::Var<S>& ctx_emb,
                             const nn::DropoutCtx* drop = nullptr) const {
    check(cfg.backend == Backend::mebt, "encoder_forward: mebt backend only");
    auto z = latent_init;
    const auto kinds = encoder_kinds(encoder_layer_count(cfg.num_layers));
    for (std::size_t i = 0; i < enc_blocks.size(); ++i) {
      if (kinds[i] == 'c') {
        if (ctx_emb->val.rows() == 0) continue;
        z = enc_blocks[i].cross_forward(z, ctx_emb, drop);
      } else {
        z = enc_blocks[i].self_forward(z, nullptr, drop);
      }
      require_finite(z, "encoder", static_cast<Index>(i));
    }
    return z;
  }

  // Logits for every masked slot, shape N_M x vocab.
  ag::Var<S> decoder_forward(ag::Var<S> latents, ag::Var<S> mask_emb,
                             const nn::DropoutCtx* drop = nullptr) const {
    check(cfg.backend == Backend::mebt, "decoder_forward: mebt backend only");
    check(mask_emb->val.rows() >= 1, "decoder_forward: need at least one mask slot");
    auto z_l = std::move(latents);
    auto z_m = std::move(mask_emb);
    const auto kinds = decoder_kinds(decoder_layer_count(cfg.num_layers));
    for (std::size_t i = 0; i < dec_blocks.size(); ++i) {
      if (kinds[i] == 'a') {
        z_l = dec_blocks[i].cross_forward(z_l, ag::concat_rows<S>({z_l, z_m}), drop);
        require_finite(z_l, "decoder", static_cast<Index>(i));
      } else {
        z_m = dec_blocks[i].cross_forward(z_m, z_l, drop);
        require_finite(z_m, "decoder", static_cast<Index>(i));
      }
    }
    return head(ln_final(z_m));
  }

  // Attention groups for one flat-backend layer over the batch's sorted
  // positions. full: one group; axial: lines along w, h, t in rotation;
  // window: frames on even layers, spatial tiles x all frames on odd layers.
  std::vector<std::vector<Index>> layer_groups(const std::vector<Index>& positions,
                                               Index layer) const {
    const Index n = static_cast<Index>(positions.size());
    std::map<Index, std::vector<Index>> keyed;
    auto coords = [&](Index i) { return unflatten(positions[static_cast<std::size_t>(i)],
                                                  cfg.grid_h, cfg.grid_w); };
    switch (cfg.backend) {
      case Backend::full: {
        std::vector<Index> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), Index{0});
        return {all};
      }
      case Backend::axial: {
        const Index axis = layer % 3;  // horizontal, vertical, temporal
        for (Index i = 0; i < n; ++i) {
          const auto c = coords(i);
          const Index key = axis == 0 ? c.t * cfg.grid_h + c.h
                          : axis == 1 ? c.t * cfg.grid_w + c.w
                                      : c.h * cfg.grid_w + c.w;
          keyed[key].push_back(i);
        }
        break;
      }
      case Backend::window: {
        for (Index i = 0; i < n; ++i) {
          const auto c = coords(i);
          const Index sp = c.h * cfg.grid_w + c.w;
          const Index key = layer % 2 == 0 ? c.t : sp / cfg.window;
          keyed[key].push_back(i);
        }
        break;
      }
      case Backend::mebt: throw LogicError("layer_groups: not a flat backend");
    }
    std::vector<std::vector<Index>> groups;
    groups.reserve(keyed.size());
    for (auto& [k, v] : keyed) groups.push_back(std::move(v));
    return groups;
  }

  // Flat backends: one token row per interval position (context rows carry
  // token+position embeddings, masked rows mask+position), self-attention per
  // layer pattern, masked rows projected to logits.
  ag::Var<S> flat_forward(const MaskedBatch& b, const nn::DropoutCtx* drop = nullptr) const {
    check(cfg.backend != Backend::mebt, "flat_forward: flat backends only");
    auto [ctx, mask] = embed(b);
    auto x = ctx->val.rows() == 0 ? mask : ag::concat_rows<S>({ctx, mask});
    // Sorted-position order: context positions then masked positions merge.
    std::vector<Index> positions;
    positions.reserve(static_cast<std::size_t>(x->val.rows()));
    for (const auto& [p, tok] : b.context) positions.push_back(p);
    for (Index p : b.masked) positions.push_back(p);
    std::vector<Index> order(positions.size());
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(),
              [&](Index i, Index j) { return positions[static_cast<std::size_t>(i)] <
                                             positions[static_cast<std::size_t>(j)]; });
    x = ag::gather_rows(x, order);
    std::vector<Index> sorted_positions;
    for (Index i : order) sorted_positions.push_back(positions[static_cast<std::size_t>(i)]);
    for (std::size_t layer = 0; layer < flat_blocks.size(); ++layer) {
      if (cfg.backend == Backend::full) {
        x = flat_blocks[layer].self_forward(x, nullptr, drop);
      } else {
        x = flat_blocks[layer].grouped_forward(
            x, layer_groups(sorted_positions, static_cast<Index>(layer)), drop);
      }
      require_finite(x, "flat", static_cast<Index>(layer));
    }
    // Masked rows, in ascending masked-position order.
    std::vector<Index> mask_rows;
    for (std::size_t i = 0; i < sorted_positions.size(); ++i)
      if (std::binary_search(b.masked.begin(), b.masked.end(), sorted_positions[i]))
        mask_rows.push_back(static_cast<Index>(i));
    return head(ln_final(ag::gather_rows(x, mask_rows)));
  }

  // N_M x vocab logits for the masked positions of a canonical batch.
  ag::Var<S> forward_logits(const MaskedBatch& b, const nn::DropoutCtx* drop = nullptr) const {
    if (cfg.backend == Backend::mebt) {
      auto [ctx, mask] = embed(b);
      return decoder_forward(encoder_forward(ctx, drop), mask, drop);
    }
    return flat_forward(b, drop);
  }
};

// Autoregressive baseline: causal dense self-attention over raster-ordered
// tokens. Slot 0 holds a learned start vector; slot i >= 1 holds token i-1
// plus its positional embedding. Row i predicts token i.
template <typename S>
struct ArModel {
  ModelConfig cfg;
  ag::Var<S> tok_emb, pos_emb, bos;
  std::vector<nn::Block<S>> blocks;
  nn::LayerNorm<S> ln_final;
  nn::Linear<S> head;
  nn::NamedParams<S> named;

  explicit ArModel(const ModelConfig& config, Rng& rng) : cfg(config) {
    cfg.validate();
    tok_emb = ag::param(nn::normal_init<S>(rng, cfg.vocab, cfg.d_model));
    pos_emb = ag::param(nn::normal_init<S>(rng, cfg.n_max(), cfg.d_model));
    bos = ag::param(nn::normal_init<S>(rng, 1, cfg.d_model));
    named.emplace_back("tok_emb", tok_emb);
    named.emplace_back("pos_emb", pos_emb);
    named.emplace_back("bos", bos);
    for (Index i = 0; i < cfg.num_layers; ++i) {
      blocks.emplace_back(cfg.d_model, cfg.num_heads, rng);
      blocks.back().collect("blk." + std::to_string(i), named);
    }
    ln_final = nn::LayerNorm<S>(cfg.d_model);
    ln_final.collect("ln_final", named);
    head = nn::Linear<S>(cfg.d_model, cfg.vocab, rng);
    head.collect("head", named);
  }

  const nn::NamedParams<S>& params() const { return named; }

  ckpt::Checkpoint to_checkpoint(std::int64_t step, std::uint64_t seed) const {
    ckpt::Checkpoint c;
    c.meta = {{"kind", "ar_model"}, {"config", cfg}, {"step", step}, {"seed", seed}};
    ckpt::append_params(c, named);
    return c;
  }

  static ArModel from_checkpoint(const ckpt::Checkpoint& c) {
    if (!c.meta.contains("kind") || c.meta["kind"] != "ar_model")
      throw FormatError("checkpoint is not an autoregressive model", 0);
    const auto cfg = c.meta.at("config").get<ModelConfig>();
    Rng rng(0);  // init values are immediately overwritten
    ArModel m(cfg, rng);
    ckpt::restore_params(c, m.named);
    return m;
  }

  static Mat<S> causal_mask(Index n) {
    Mat<S> m = Mat<S>::Zero(n, n);
    const S neg = static_cast<S>(sizeof(S) == 4 ? -1e9 : -1e30);
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j) m(i, j) = neg;
    return m;
  }

  // Logits [len, vocab]; row i sees tokens [0, i) only.
  ag::Var<S> forward(const std::vector<Index>& tokens,
                     const nn::DropoutCtx* drop = nullptr) const {
    const auto len = static_cast<Index>(tokens.size());
    check(len >= 1 && len <= cfg.n_max(), "ar forward: bad sequence length");
    ag::Var<S> x;
    if (len == 1) {
      x = bos;
    } else {
      std::vector<Index> prev(tokens.begin(), tokens.end() - 1);
      for (Index t : prev) check(t >= 0 && t < cfg.vocab, "ar forward: token out of range");
      std::vector<Index> pos(static_cast<std::size_t>(len - 1));
      std::iota(pos.begin(), pos.end(), Index{0});
      auto shifted = ag::add(ag::gather_rows(tok_emb, prev), ag::gather_rows(pos_emb, pos));
      x = ag::concat_rows<S>({bos, shifted});
    }
    const Mat<S> mask = causal_mask(len);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      x = blocks[i].self_forward(x, &mask, drop);
      MebtModel<S>::require_finite(x, "ar", static_cast<Index>(i));
    }
    return head(ln_final(x));
  }
};

// Exact per-forward attention-score and activation entry counts, derived from
// the layer definitions above (not asymptotics). n_c and n_m are the context
// and masked token counts inside a (t, h, w) interval grid; the local pattern
// (attend to `window` nearest raster neighbors) is counted but has no
// execution backend.
struct CostEntry {
  std::int64_t scores = 0;
  std::int64_t activations = 0;
};

struct AttentionCost {
  CostEntry mebt, full, axial, window, local;
  std::int64_t mebt_fixed_scores = 0;  // N_C/N_M-independent part (latent-latent terms)
};

inline AttentionCost count_attention_cost(const ModelConfig& cfg, Index n_c, Index n_m,
                                          Index t, Index h, Index w) {
  check(n_c >= 0 && n_m >= 1, "count_attention_cost: need n_c >= 0, n_m >= 1");
  check(n_c + n_m == t * h * w, "count_attention_cost: grid inconsistent with token counts");
  const Index n = n_c + n_m;
  const Index d = cfg.d_model;
  AttentionCost out;

  // Activation entries for one attention block: Q (rq*d) + K,V (2*rkv*d) +
  // scores + weighted sum (rq*d) + output projection (rq*d) + feed-forward
  // (4*rq*d hidden + rq*d out).
  auto block_act = [d](std::int64_t rq, std::int64_t rkv, std::int64_t scores) {
    return 8 * rq * d + 2 * rkv * d + scores;
  };

  const Index n_l = cfg.n_latent;
  for (char k : encoder_kinds(encoder_layer_count(cfg.num_layers))) {
    if (k == 'c') {
      const std::int64_t s = static_cast<std::int64_t>(n_l) * n_c;
      out.mebt.scores += s;
      out.mebt.activations += block_act(n_l, n_c, s);
    } else {
      const std::int64_t s = static_cast<std::int64_t>(n_l) * n_l;
      out.mebt.scores += s;
      out.mebt_fixed_scores += s;
      out.mebt.activations += block_act(n_l, n_l, s);
    }
  }
  for (char k : decoder_kinds(decoder_layer_count(cfg.num_layers))) {
    if (k == 'a') {
      const std::int64_t s = static_cast<std::int64_t>(n_l) * (n_l + n_m);
      out.mebt.scores += s;
      out.mebt_fixed_scores += static_cast<std::int64_t>(n_l) * n_l;
      out.mebt.activations += block_act(n_l, n_l + n_m, s);
    } else {
      const std::int64_t s = static_cast<std::int64_t>(n_m) * n_l;
      out.mebt.scores += s;
      out.mebt.activations += block_act(n_m, n_l, s);
    }
  }

  for (Index layer = 0; layer < cfg.num_layers; ++layer) {
    // full: one dense matrix over all tokens.
    const std::int64_t fs = static_cast<std::int64_t>(n) * n;
    out.full.scores += fs;
    out.full.activations += block_act(n, n, fs);
    // axial: every token attends along one axis line per layer (w, h, t).
    const Index axis_len = layer % 3 == 0 ? w : layer % 3 == 1 ? h : t;
    const std::int64_t as = static_cast<std::int64_t>(n) * axis_len;
    out.axial.scores += as;
    out.axial.activations += block_act(n, n, as);
    // window: frame attention on even layers, spatial-tile x time on odd.
    const std::int64_t ws = layer % 2 == 0
                                ? static_cast<std::int64_t>(t) * (h * w) * (h * w)
                                : static_cast<std::int64_t>(h * w) * cfg.window * t * t;
    out.window.scores += ws;
    out.window.activations += block_act(n, n, ws);
    // local: each token attends to `window` raster neighbors.
    const std::int64_t ls = static_cast<std::int64_t>(n) * cfg.window;
    out.local.scores += ls;
    out.local.activations += block_act(n, n, ls);
  }
  return out;
}

}  // namespace mebt::model
