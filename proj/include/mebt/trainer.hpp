#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mebt/model.hpp"
#include "mebt/optim.hpp"
#include "mebt/schedules.hpp"
#include "mebt/vq.hpp"

// Training for the masked transformer (interval curriculum over cached token
// grids) and the autoregressive baseline (full raster sequences). Both share
// AdamW, dropout, the metrics log, and the non-finite-loss abort. The
// tokenizer is frozen: grids are computed once and treated as data.

namespace mebt::train {

struct TrainConfig {
  Index batch_size = 4;  // gradient-accumulated windows per optimizer step
  Index steps = 1000;
  sched::Curriculum curriculum = sched::Curriculum::gaussian;
  double alpha = 1000.0;     // iterations per unit of interval-mean growth
  double beta_sched = 2.0;   // interval Gaussian width, in latent frames
  sched::GammaKind gamma = sched::GammaKind::cosine;
  double dropout = 0.0;
  optim::AdamWConfig adamw{};
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (steps < 0) throw ConfigError("train: steps must be >= 0");
    if (!(alpha > 0.0) || !(beta_sched > 0.0))
      throw ConfigError("train: schedule parameters must be > 0");
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw ConfigError("train: dropout must lie in [0, 1)");
    adamw.validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"steps", c.steps},
       {"curriculum", sched::to_string(c.curriculum)},
       {"alpha", c.alpha},
       {"beta_sched", c.beta_sched},
       {"gamma", sched::to_string(c.gamma)},
       {"dropout", c.dropout},
       {"adamw", c.adamw},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("batch_size").get_to(c.batch_size);
  j.at("steps").get_to(c.steps);
  c.curriculum = sched::curriculum_from_string(j.at("curriculum").get<std::string>());
  j.at("alpha").get_to(c.alpha);
  j.at("beta_sched").get_to(c.beta_sched);
  c.gamma = sched::gamma_from_string(j.at("gamma").get<std::string>());
  j.at("dropout").get_to(c.dropout);
  j.at("adamw").get_to(c.adamw);
  j.at("seed").get_to(c.seed);
}

// One metrics-log record per optimizer step. v, r, n_mask are means over the
// batch elements; r is the realized masked fraction |m| / N of each window.
// wall_ms is excluded from determinism comparisons by nature.
struct StepRecord {
  Index step = 0;
  double loss = 0.0;
  double v = 0.0;
  double r = 0.0;
  double n_mask = 0.0;
  double wall_ms = 0.0;
};

inline void to_json(nlohmann::json& j, const StepRecord& s) {
  j = {{"step", s.step},     {"loss", s.loss},     {"v", s.v},
       {"r", s.r},           {"n_mask", s.n_mask}, {"wall_ms", s.wall_ms}};
}

inline std::string metrics_to_jsonl(const std::vector<StepRecord>& records) {
  std::string out;
  for (const auto& rec : records) {
    out += nlohmann::json(rec).dump();
    out += '\n';
  }
  return out;
}

using StepHook = std::function<void(const StepRecord&)>;

// ---- Losses ----

// Mean categorical cross-entropy over masked positions; averaging (rather
// than summing) decouples the learning rate from the per-batch mask count,
// which the curriculum varies.
template <typename S>
ag::Var<S> mebt_loss(const ag::Var<S>& logits, const std::vector<Index>& targets) {
  if (logits->val.rows() != static_cast<Index>(targets.size()))
    throw LogicError("mebt_loss: one target per masked row required");
  return ag::cross_entropy_mean(logits, targets);
}

// Mean next-token negative log-likelihood over the full raster sequence.
template <typename S>
ag::Var<S> ar_loss(const ag::Var<S>& logits, const std::vector<Index>& targets) {
  if (logits->val.rows() != static_cast<Index>(targets.size()))
    throw LogicError("ar_loss: one target per position required");
  return ag::cross_entropy_mean(logits, targets);
}

// Perturbing the token at one position must leave all logit rows at or before
// that position bitwise unchanged (row i conditions on tokens [0, i) only).
// Generic over anything with cfg.vocab and forward(tokens) -> Var of logits.
template <typename ModelT>
void ar_causality_check(const ModelT& m, const std::vector<Index>& tokens) {
  check(tokens.size() >= 2, "ar_causality_check: need at least two tokens");
  const auto base = m.forward(tokens)->val;
  auto perturbed = tokens;
  const std::size_t j = perturbed.size() - 1;
  perturbed[j] = (perturbed[j] + 1) % m.cfg.vocab;
  const auto probe = m.forward(perturbed)->val;
  for (std::size_t i = 0; i <= j; ++i)
    for (Index c = 0; c < base.cols(); ++c)
      if (base(static_cast<Index>(i), c) != probe(static_cast<Index>(i), c))
        throw LogicError("ar baseline: leakage detected at row " + std::to_string(i));
}

// ---- Token corpus ----

// Content check for grids arriving from caches or files: a structurally valid
// container whose indices fall outside the vocabulary is bad data, not a bug.
inline void validate_token_grid(const TokenGrid& grid, Index vocab) {
  if (grid.rank() != 3) throw DataError("token grid must be (t, h, w)");
  for (std::size_t i = 0; i < grid.data.size(); ++i)
    if (static_cast<Index>(grid.data[i]) >= vocab)
      throw DataError("token index " + std::to_string(grid.data[i]) +
                      " outside vocabulary of " + std::to_string(vocab));
}

template <typename S>
std::vector<TokenGrid> tokenize_corpus(const vq::Tokenizer<S>& tok,
                                       const std::vector<VideoArray>& videos) {
  std::vector<TokenGrid> grids;
  grids.reserve(videos.size());
  for (const auto& v : videos) grids.push_back(tok.tokenize(v));
  return grids;
}

inline std::string token_cache_path(const std::string& dir, std::size_t i) {
  return dir + "/tokens_" + std::to_string(i) + ".mbt";
}

inline void save_token_cache(const std::string& dir, const std::vector<TokenGrid>& grids) {
  for (std::size_t i = 0; i < grids.size(); ++i)
    io::save_tensor(token_cache_path(dir, i), grids[i]);
}

inline std::vector<TokenGrid> load_token_cache(const std::string& dir, std::size_t count,
                                               Index vocab) {
  std::vector<TokenGrid> grids;
  grids.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    grids.push_back(io::load_tensor<std::uint16_t>(token_cache_path(dir, i)));
    validate_token_grid(grids.back(), vocab);
  }
  return grids;
}

// ---- Batch construction ----

// Samples the interval length from the curriculum, places the window
// uniformly, then splits the window's positions into masked and context.
// Positions are absolute spatio-temporal indices into the full grid, so the
// model's positional table is shared across window placements.
inline model::MaskedBatch make_training_batch(const TokenGrid& tokens, std::int64_t n,
                                              const TrainConfig& cfg, Rng& rng) {
  check(tokens.rank() == 3, "make_training_batch: token grid must be (t, h, w)");
  const Index t = tokens.dims[0], h = tokens.dims[1], w = tokens.dims[2];
  const sched::IntervalSchedule sch{cfg.alpha, cfg.beta_sched, t};
  const Index v = sched::sample_v(cfg.curriculum, n, sch, rng);
  const Index start = (v == t) ? 0 : rng.uniform_int(t - v + 1);
  const Index hw = h * w;
  const Index n_window = v * hw;
  const Index base = start * hw;
  const double r = sched::sample_mask_ratio(cfg.gamma, n_window, rng);
  const auto rel = sched::sample_mask(n_window, r, rng);

  model::MaskedBatch b;
  b.interval_start = start;
  b.interval_len = v;
  b.n_total = n_window;
  b.masked.reserve(rel.size());
  b.context.reserve(static_cast<std::size_t>(n_window) - rel.size());
  std::size_t mi = 0;
  for (Index p = 0; p < n_window; ++p) {
    const Index abs = base + p;
    if (mi < rel.size() && rel[mi] == p) {
      b.masked.push_back(abs);
      ++mi;
    } else {
      b.context.emplace_back(abs, static_cast<Index>(tokens.data[static_cast<std::size_t>(abs)]));
    }
  }
  return b;
}

template <typename S>
std::vector<Index> masked_targets(const TokenGrid& tokens, const model::MaskedBatch& b) {
  std::vector<Index> targets;
  targets.reserve(b.masked.size());
  for (Index p : b.masked)
    targets.push_back(static_cast<Index>(tokens.data[static_cast<std::size_t>(p)]));
  return targets;
}

namespace detail {

inline void require_grid_corpus(const std::vector<TokenGrid>& grids,
                                const model::ModelConfig& mc) {
  if (grids.empty()) throw ConfigError("train: empty token corpus");
  for (const auto& g : grids) {
    if (g.rank() != 3 || g.dims[0] != mc.grid_t || g.dims[1] != mc.grid_h ||
        g.dims[2] != mc.grid_w)
      throw ConfigError("train: token grid shape does not match the model grid");
    validate_token_grid(g, mc.vocab);
  }
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace detail

// ---- Training loops ----
// One exclusive trainer owns the parameters; batches touch only the immutable
// token cache and the trainer's RNG stream. A non-finite loss aborts with the
// failing step index. Runs are bit-deterministic given (seed, corpus, config)
// apart from the wall_ms field.

template <typename S>
std::vector<StepRecord> train_mebt(model::MebtModel<S>& m, const std::vector<TokenGrid>& grids,
                                   const TrainConfig& cfg, Rng& rng,
                                   const StepHook& hook = {}) {
  cfg.validate();
  detail::require_grid_corpus(grids, m.cfg);
  optim::AdamW<S> opt(m.params(), cfg.adamw, optim::AdamW<S>::default_decay_mask(m.params()));
  nn::DropoutCtx drop{cfg.dropout, &rng};
  const nn::DropoutCtx* dp = cfg.dropout > 0.0 ? &drop : nullptr;

  std::vector<StepRecord> log;
  log.reserve(static_cast<std::size_t>(cfg.steps));
  for (Index step = 0; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    opt.zero_grads();
    StepRecord rec;
    rec.step = step;
    try {
      for (Index bi = 0; bi < cfg.batch_size; ++bi) {
        const auto& grid = grids[static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(grids.size())))];
        const auto b = model::canonicalize(make_training_batch(grid, step, cfg, rng), m.cfg);
        auto loss = mebt_loss(m.forward_logits(b, dp), masked_targets<S>(grid, b));
        ag::backward(ag::scale(loss, static_cast<S>(1.0 / static_cast<double>(cfg.batch_size))));
        rec.loss += static_cast<double>(loss->val(0, 0)) / static_cast<double>(cfg.batch_size);
        rec.v += static_cast<double>(b.interval_len) / static_cast<double>(cfg.batch_size);
        rec.r += static_cast<double>(b.masked.size()) /
                 (static_cast<double>(b.n_total) * static_cast<double>(cfg.batch_size));
        rec.n_mask += static_cast<double>(b.masked.size()) / static_cast<double>(cfg.batch_size);
      }
      if (!std::isfinite(rec.loss)) throw NumericError("train: non-finite loss");
      opt.step();
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step));
    }
    rec.wall_ms = detail::elapsed_ms(t0);
    log.push_back(rec);
    if (hook) hook(rec);
  }
  return log;
}

template <typename S>
std::vector<StepRecord> train_ar(model::ArModel<S>& m, const std::vector<TokenGrid>& grids,
                                 const TrainConfig& cfg, Rng& rng, const StepHook& hook = {}) {
  cfg.validate();
  detail::require_grid_corpus(grids, m.cfg);

  // Self-test before any optimization: the baseline's claim to be
  // autoregressive is a precondition of every loss it reports.
  {
    std::vector<Index> probe;
    probe.reserve(grids[0].data.size());
    for (auto tokv : grids[0].data) probe.push_back(static_cast<Index>(tokv));
    ar_causality_check(m, probe);
  }

  optim::AdamW<S> opt(m.params(), cfg.adamw, optim::AdamW<S>::default_decay_mask(m.params()));
  nn::DropoutCtx drop{cfg.dropout, &rng};
  const nn::DropoutCtx* dp = cfg.dropout > 0.0 ? &drop : nullptr;

  std::vector<StepRecord> log;
  log.reserve(static_cast<std::size_t>(cfg.steps));
  for (Index step = 0; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    opt.zero_grads();
    StepRecord rec;
    rec.step = step;
    try {
      for (Index bi = 0; bi < cfg.batch_size; ++bi) {
        const auto& grid = grids[static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(grids.size())))];
        std::vector<Index> tokens;
        tokens.reserve(grid.data.size());
        for (auto tokv : grid.data) tokens.push_back(static_cast<Index>(tokv));
        auto loss = ar_loss(m.forward(tokens, dp), tokens);
        ag::backward(ag::scale(loss, static_cast<S>(1.0 / static_cast<double>(cfg.batch_size))));
        rec.loss += static_cast<double>(loss->val(0, 0)) / static_cast<double>(cfg.batch_size);
        rec.v += static_cast<double>(m.cfg.grid_t) / static_cast<double>(cfg.batch_size);
        rec.r += 1.0 / static_cast<double>(cfg.batch_size);
        rec.n_mask += static_cast<double>(tokens.size()) / static_cast<double>(cfg.batch_size);
      }
      if (!std::isfinite(rec.loss)) throw NumericError("train: non-finite loss");
      opt.step();
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step));
    }
    rec.wall_ms = detail::elapsed_ms(t0);
    log.push_back(rec);
    if (hook) hook(rec);
  }
  return log;
}

// ---- Held-out evaluation ----

// Mean masked NLL over full-length windows at fixed masking ratios, with a
// dedicated RNG so the measurement is identical across compared runs.
template <typename S>
double eval_masked_nll(const model::MebtModel<S>& m, const std::vector<TokenGrid>& grids,
                       std::uint64_t seed, const std::vector<double>& ratios = {0.25, 0.5,
                                                                                0.75}) {
  detail::require_grid_corpus(grids, m.cfg);
  check(!ratios.empty(), "eval_masked_nll: need at least one ratio");
  Rng rng(seed);
  double sum = 0.0;
  Index count = 0;
  for (const auto& grid : grids) {
    for (double r : ratios) {
      const Index n = m.cfg.n_max();
      const auto rel = sched::sample_mask(n, r, rng);
      model::MaskedBatch b;
      b.interval_start = 0;
      b.interval_len = m.cfg.grid_t;
      b.n_total = n;
      std::size_t mi = 0;
      for (Index p = 0; p < n; ++p) {
        if (mi < rel.size() && rel[mi] == p) {
          b.masked.push_back(p);
          ++mi;
        } else {
          b.context.emplace_back(p,
                                 static_cast<Index>(grid.data[static_cast<std::size_t>(p)]));
        }
      }
      const auto canon = model::canonicalize(std::move(b), m.cfg);
      auto loss = mebt_loss(m.forward_logits(canon), masked_targets<S>(grid, canon));
      sum += static_cast<double>(loss->val(0, 0));
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

template <typename S>
double eval_ar_nll(const model::ArModel<S>& m, const std::vector<TokenGrid>& grids) {
  detail::require_grid_corpus(grids, m.cfg);
  double sum = 0.0;
  for (const auto& grid : grids) {
    std::vector<Index> tokens;
    tokens.reserve(grid.data.size());
    for (auto tokv : grid.data) tokens.push_back(static_cast<Index>(tokv));
    sum += static_cast<double>(ar_loss(m.forward(tokens), tokens)->val(0, 0));
  }
  return sum / static_cast<double>(grids.size());
}

}  // namespace mebt::train
