#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mebt/model.hpp"
#include "mebt/schedules.hpp"

// Inference over a frozen model: iterative confidence-based mask decoding
// with Gumbel-annealed promotion, optional top-k sampling, a partitioned
// revision phase, and sequential single-token priming for long videos. All
// routines are generic over anything exposing `cfg` (the grid/vocab config)
// and the model's forward; tests drive them with scripted stubs.

namespace mebt::sampler {

struct DecodeConfig {
  Index steps = 32;                                      // parallel decode iterations
  sched::GammaKind gamma = sched::GammaKind::cosine;     // masking schedule
  Index top_k = 0;                                       // 0 disables filtering
  double tau = 8.0;                                      // promotion noise scale
  Index partitions = 2;                                  // revision partition count
  double revision_temperature = 0.7;                     // logit divisor when revising
  Index revision_repeats = 2;                            // revision sweeps over the grid
  Index primed_tokens = 0;                               // sequential single-token prefix
  std::uint64_t seed = 0;

  void validate(Index n, Index vocab) const {
    if (steps < 1) throw ConfigError("decode: steps must be >= 1");
    if (partitions < 1 || partitions > n)
      throw ConfigError("decode: partitions must lie in [1, N]");
    if (revision_repeats < 0) throw ConfigError("decode: revision_repeats must be >= 0");
    if (primed_tokens < 0 || primed_tokens > n)
      throw ConfigError("decode: primed_tokens must lie in [0, N]");
    if (top_k < 0 || top_k > vocab)
      throw ConfigError("decode: top_k must lie in [1, vocab] (0 disables)");
    if (!(tau >= 0.0)) throw ConfigError("decode: tau must be >= 0");
    if (!(revision_temperature > 0.0))
      throw ConfigError("decode: revision_temperature must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const DecodeConfig& c) {
  j = {{"steps", c.steps},
       {"gamma", sched::to_string(c.gamma)},
       {"top_k", c.top_k},
       {"tau", c.tau},
       {"partitions", c.partitions},
       {"revision_temperature", c.revision_temperature},
       {"revision_repeats", c.revision_repeats},
       {"primed_tokens", c.primed_tokens},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, DecodeConfig& c) {
  j.at("steps").get_to(c.steps);
  c.gamma = sched::gamma_from_string(j.at("gamma").get<std::string>());
  j.at("top_k").get_to(c.top_k);
  j.at("tau").get_to(c.tau);
  j.at("partitions").get_to(c.partitions);
  j.at("revision_temperature").get_to(c.revision_temperature);
  j.at("revision_repeats").get_to(c.revision_repeats);
  j.at("primed_tokens").get_to(c.primed_tokens);
  j.at("seed").get_to(c.seed);
}

// Model-forward counts of one sampling pipeline, by phase.
struct DecodeStats {
  Index prime_forwards = 0;
  Index decode_forwards = 0;
  Index revise_forwards = 0;

  Index total() const { return prime_forwards + decode_forwards + revise_forwards; }
};

// All but the k largest entries set to -inf; ties keep the lower index.
inline std::vector<double> top_k_filter(std::vector<double> logits, Index k) {
  const auto u = static_cast<Index>(logits.size());
  if (k < 1 || k > u) throw ConfigError("top_k_filter: k must lie in [1, vocab]");
  if (k == u) return logits;
  std::vector<Index> order(logits.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (logits[static_cast<std::size_t>(a)] != logits[static_cast<std::size_t>(b)])
      return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)];
    return a < b;
  });
  for (Index i = k; i < u; ++i)
    logits[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] =
        -std::numeric_limits<double>::infinity();
  return logits;
}

// Promotion score: the sampled token's probability plus Gumbel noise annealed
// to zero over the decode. When the noise coefficient is zero no random draw
// is consumed, so tau = 0 gives a fully deterministic ranking.
inline double confidence(double p, Index s, Index total_steps, double tau, Rng& rng) {
  check(p > 0.0 && p <= 1.0, "confidence: probability must lie in (0, 1]");
  check(total_steps >= 1 && s >= 0 && s <= total_steps, "confidence: step out of range");
  const double coeff =
      (1.0 - static_cast<double>(s) / static_cast<double>(total_steps)) * tau;
  if (coeff == 0.0) return p;
  const double u = std::max(rng.uniform(), std::numeric_limits<double>::min());
  return p + (-std::log(-std::log(u))) * coeff;
}

// Temperature-scaled, optionally top-k-filtered categorical draw. Returns the
// sampled index and its probability under the renormalized distribution that
// was actually sampled from.
inline std::pair<Index, double> sample_filtered(std::vector<double> logits, Index k,
                                                double temperature, Rng& rng) {
  check(!logits.empty(), "sample_filtered: empty logits");
  if (!(temperature > 0.0)) throw ConfigError("sample_filtered: temperature must be > 0");
  if (k > 0) logits = top_k_filter(std::move(logits), k);
  double hi = -std::numeric_limits<double>::infinity();
  for (double l : logits) hi = std::max(hi, l);
  check(std::isfinite(hi), "sample_filtered: no finite logits");
  std::vector<double> weights(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    weights[i] = std::isfinite(logits[i]) ? std::exp((logits[i] - hi) / temperature) : 0.0;
    total += weights[i];
  }
  const Index pick = rng.categorical(weights);
  return {pick, weights[static_cast<std::size_t>(pick)] / total};
}

namespace detail {

template <typename M>
std::vector<double> logits_row(const M& logits_val, Index r) {
  std::vector<double> row(static_cast<std::size_t>(logits_val.cols()));
  for (Index c = 0; c < logits_val.cols(); ++c)
    row[static_cast<std::size_t>(c)] = static_cast<double>(logits_val(r, c));
  return row;
}

// Full-grid batch: committed positions (value >= 0) form the context, the
// rest are masked. Positions ascend, so the batch is already canonical.
inline model::MaskedBatch full_grid_batch(const std::vector<Index>& value,
                                          const model::ModelConfig& mc) {
  model::MaskedBatch b;
  b.interval_start = 0;
  b.interval_len = mc.grid_t;
  b.n_total = mc.n_max();
  for (Index p = 0; p < mc.n_max(); ++p) {
    if (value[static_cast<std::size_t>(p)] >= 0)
      b.context.emplace_back(p, value[static_cast<std::size_t>(p)]);
    else
      b.masked.push_back(p);
  }
  return b;
}

}  // namespace detail

// N_d sequential single-token decodes in raster order, each conditioning on
// everything committed so far. The result seeds decode_iterative.
template <typename M>
std::vector<std::pair<Index, Index>> prime_long_video(const M& m, const DecodeConfig& cfg,
                                                      Rng& rng,
                                                      DecodeStats* stats = nullptr) {
  const auto& mc = m.cfg;
  cfg.validate(mc.n_max(), mc.vocab);
  std::vector<Index> value(static_cast<std::size_t>(mc.n_max()), -1);
  std::vector<std::pair<Index, Index>> ctx;
  ctx.reserve(static_cast<std::size_t>(cfg.primed_tokens));
  for (Index i = 0; i < cfg.primed_tokens; ++i) {
    model::MaskedBatch b;
    b.interval_start = 0;
    b.interval_len = mc.grid_t;
    b.n_total = mc.n_max();
    b.context = ctx;
    b.masked = {i};
    auto logits = m.forward_logits(model::canonicalize(std::move(b), mc));
    if (stats != nullptr) ++stats->prime_forwards;
    const auto [tok, p] =
        sample_filtered(detail::logits_row(logits->val, 0), cfg.top_k, 1.0, rng);
    (void)p;
    value[static_cast<std::size_t>(i)] = tok;
    ctx.emplace_back(i, tok);
  }
  return ctx;
}

// Parallel iterative decoding: each step forwards every still-masked
// position, samples a candidate token per position, scores candidates by
// annealed confidence, and promotes the highest scorers into the context
// until the masking schedule's quota for that step is met. Promoted tokens
// keep the values sampled at their promotion step; unpromoted samples are
// discarded and re-predicted. Exactly `steps` forwards when anything is left
// to decode.
template <typename M>
TokenGrid decode_iterative(const M& m, const DecodeConfig& cfg, Rng& rng,
                           const std::vector<std::pair<Index, Index>>& initial_context = {},
                           DecodeStats* stats = nullptr) {
  const auto& mc = m.cfg;
  const Index n = mc.n_max();
  cfg.validate(n, mc.vocab);
  if (mc.vocab > 65536) throw ConfigError("decode: vocabulary exceeds the token grid range");

  std::vector<Index> value(static_cast<std::size_t>(n), -1);
  Index committed = 0;
  for (const auto& [p, tok] : initial_context) {
    if (p < 0 || p >= n || tok < 0 || tok >= mc.vocab)
      throw LogicError("decode: invalid initial context entry");
    if (value[static_cast<std::size_t>(p)] >= 0)
      throw LogicError("decode: duplicate initial context position");
    value[static_cast<std::size_t>(p)] = tok;
    ++committed;
  }
  const Index base = committed;
  const Index remaining = n - committed;

  struct Candidate {
    double score;
    Index pos, tok;
  };
  for (Index s = 0; s < cfg.steps && remaining > 0; ++s) {
    const auto batch = model::canonicalize(detail::full_grid_batch(value, mc), mc);
    auto logits = m.forward_logits(batch);
    if (stats != nullptr) ++stats->decode_forwards;
    std::vector<Candidate> cand;
    cand.reserve(batch.masked.size());
    for (std::size_t r = 0; r < batch.masked.size(); ++r) {
      const auto [tok, p] = sample_filtered(
          detail::logits_row(logits->val, static_cast<Index>(r)), cfg.top_k, 1.0, rng);
      cand.push_back({confidence(p, s, cfg.steps, cfg.tau, rng), batch.masked[r], tok});
    }
    const Index target = base + sched::tokens_decoded_after(s, cfg.steps, remaining, cfg.gamma);
    const Index promote = target - committed;
    std::sort(cand.begin(), cand.end(), [](const Candidate& a, const Candidate& b2) {
      if (a.score != b2.score) return a.score > b2.score;
      return a.pos < b2.pos;
    });
    for (Index i = 0; i < promote; ++i) {
      value[static_cast<std::size_t>(cand[static_cast<std::size_t>(i)].pos)] =
          cand[static_cast<std::size_t>(i)].tok;
      ++committed;
    }
  }
  if (committed != n) throw LogicError("decode: schedule did not cover the grid");

  TokenGrid grid({mc.grid_t, mc.grid_h, mc.grid_w});
  for (Index p = 0; p < n; ++p)
    grid.data[static_cast<std::size_t>(p)] =
        static_cast<std::uint16_t>(value[static_cast<std::size_t>(p)]);
  return grid;
}

// Revision: per sweep, draw a fresh even partition of all positions (sizes
// differ by at most one), then for each part in turn re-mask it, forward,
// re-sample its tokens with temperature-scaled logits, and commit before the
// next part. Partitions are redrawn every sweep.
template <typename M>
TokenGrid revise(const M& m, TokenGrid tokens, const DecodeConfig& cfg, Rng& rng,
                 DecodeStats* stats = nullptr) {
  const auto& mc = m.cfg;
  const Index n = mc.n_max();
  cfg.validate(n, mc.vocab);
  if (tokens.rank() != 3 || tokens.dims[0] != mc.grid_t || tokens.dims[1] != mc.grid_h ||
      tokens.dims[2] != mc.grid_w)
    throw ConfigError("revise: token grid shape does not match the model grid");
  for (auto tokv : tokens.data)
    if (static_cast<Index>(tokv) >= mc.vocab)
      throw LogicError("revise: partially decoded grid");

  std::vector<Index> value(static_cast<std::size_t>(n));
  for (Index p = 0; p < n; ++p)
    value[static_cast<std::size_t>(p)] = static_cast<Index>(tokens.data[static_cast<std::size_t>(p)]);

  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (Index rep = 0; rep < cfg.revision_repeats; ++rep) {
    std::iota(perm.begin(), perm.end(), Index{0});
    rng.shuffle(perm);
    const Index small = n / cfg.partitions;
    const Index bumped = n % cfg.partitions;  // first `bumped` parts get one extra
    std::size_t offset = 0;
    for (Index part = 0; part < cfg.partitions; ++part) {
      const Index size = small + (part < bumped ? 1 : 0);
      std::vector<Index> masked(perm.begin() + static_cast<std::ptrdiff_t>(offset),
                                perm.begin() + static_cast<std::ptrdiff_t>(offset + size));
      offset += static_cast<std::size_t>(size);
      std::sort(masked.begin(), masked.end());

      model::MaskedBatch b;
      b.interval_start = 0;
      b.interval_len = mc.grid_t;
      b.n_total = n;
      b.masked = masked;
      for (Index p = 0; p < n; ++p)
        if (!std::binary_search(masked.begin(), masked.end(), p))
          b.context.emplace_back(p, value[static_cast<std::size_t>(p)]);
      auto logits = m.forward_logits(model::canonicalize(std::move(b), mc));
      if (stats != nullptr) ++stats->revise_forwards;
      for (std::size_t r = 0; r < masked.size(); ++r) {
        const auto [tok, p] =
            sample_filtered(detail::logits_row(logits->val, static_cast<Index>(r)),
                            cfg.top_k, cfg.revision_temperature, rng);
        (void)p;
        value[static_cast<std::size_t>(masked[r])] = tok;
      }
    }
  }

  for (Index p = 0; p < n; ++p)
    tokens.data[static_cast<std::size_t>(p)] =
        static_cast<std::uint16_t>(value[static_cast<std::size_t>(p)]);
  return tokens;
}

// Prime -> iterative decode -> revise, one RNG stream end to end.
template <typename M>
TokenGrid generate_tokens(const M& m, const DecodeConfig& cfg, Rng& rng,
                          DecodeStats* stats = nullptr) {
  const auto ctx = prime_long_video(m, cfg, rng, stats);
  auto grid = decode_iterative(m, cfg, rng, ctx, stats);
  return revise(m, std::move(grid), cfg, rng, stats);
}

// Autoregressive baseline sampling: one forward per position in raster
// order. The trailing slot of each probe sequence is a placeholder whose
// value never enters the input embedding (the causality tests pin this).
template <typename S>
TokenGrid ar_sample(const model::ArModel<S>& m, Index top_k, Rng& rng,
                    Index* forwards = nullptr) {
  const auto& mc = m.cfg;
  const Index n = mc.n_max();
  if (top_k < 0 || top_k > mc.vocab)
    throw ConfigError("ar_sample: top_k must lie in [1, vocab] (0 disables)");
  std::vector<Index> tokens;
  tokens.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto probe = tokens;
    probe.push_back(0);
    auto logits = m.forward(probe);
    if (forwards != nullptr) ++*forwards;
    const auto [tok, p] =
        sample_filtered(detail::logits_row(logits->val, i), top_k, 1.0, rng);
    (void)p;
    tokens.push_back(tok);
  }
  TokenGrid grid({mc.grid_t, mc.grid_h, mc.grid_w});
  for (Index p = 0; p < n; ++p)
    grid.data[static_cast<std::size_t>(p)] =
        static_cast<std::uint16_t>(tokens[static_cast<std::size_t>(p)]);
  return grid;
}

}  // namespace mebt::sampler
