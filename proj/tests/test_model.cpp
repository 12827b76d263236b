#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <mebt/model.hpp>

#include <algorithm>
#include <set>

using namespace mebt;
using model::ArModel;
using model::AttentionCost;
using model::Backend;
using model::MaskedBatch;
using model::MebtModel;
using model::ModelConfig;

namespace {

ModelConfig small_cfg(Backend backend = Backend::mebt) {
  ModelConfig cfg;
  cfg.num_layers = 4;
  cfg.num_heads = 2;
  cfg.d_model = 8;
  cfg.n_latent = 3;
  cfg.grid_t = 4;
  cfg.grid_h = 2;
  cfg.grid_w = 2;
  cfg.vocab = 11;
  cfg.backend = backend;
  cfg.window = 2;
  return cfg;
}

// Interval frames [1, 3) of the 4x2x2 grid: positions 4..11.
MaskedBatch small_batch(const ModelConfig& cfg) {
  MaskedBatch b;
  b.interval_start = 1;
  b.interval_len = 2;
  b.n_total = b.interval_len * cfg.grid_h * cfg.grid_w;
  b.context = {{4, 1}, {6, 2}, {7, 3}, {9, 5}, {11, 7}};
  b.masked = {5, 8, 10};
  return canonicalize(b, cfg);
}

template <typename S>
bool bitwise_equal(const Mat<S>& a, const Mat<S>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         ((a - b).cwiseAbs().maxCoeff() == S{0});
}

template <typename S>
void zero_grads(const nn::NamedParams<S>& params) {
  for (const auto& [name, p] : params) p->grad.setZero(p->val.rows(), p->val.cols());
}

// Central-difference check of every parameter gradient (subsampled entries).
// Analytic grads are snapshotted before the finite-difference re-evaluations
// build fresh graphs over the same parameter nodes.
template <typename LossFn>
void expect_param_grads(const nn::NamedParams<double>& params, LossFn loss_fn,
                        double rtol = 1e-5, double atol = 1e-8) {
  zero_grads(params);
  auto loss = loss_fn();
  ag::backward(loss);
  std::vector<Mat<double>> analytic;
  for (const auto& [name, p] : params)
    analytic.push_back(p->grad.size() > 0 ? p->grad
                                          : Mat<double>::Zero(p->val.rows(), p->val.cols()));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& [name, p] = params[pi];
    CAPTURE(name);
    const Index n = p->val.size();
    for (Index k = 0; k < n; k += std::max<Index>(1, n / 7)) {
      const Index i = k / p->val.cols(), j = k % p->val.cols();
      const double eps = 1e-6;
      const double orig = p->val(i, j);
      p->val(i, j) = orig + eps;
      const double up = loss_fn()->val(0, 0);
      p->val(i, j) = orig - eps;
      const double dn = loss_fn()->val(0, 0);
      p->val(i, j) = orig;
      const double fd = (up - dn) / (2 * eps);
      const double an = analytic[pi](i, j);
      CAPTURE(i);
      CAPTURE(j);
      CHECK(std::abs(an - fd) <= atol + rtol * std::max(std::abs(an), std::abs(fd)));
    }
  }
}

}  // namespace

TEST_CASE("layer kind sequences alternate as specified") {
  using model::decoder_kinds;
  using model::encoder_kinds;
  CHECK(encoder_kinds(1) == std::vector<char>{'c'});
  CHECK(encoder_kinds(2) == std::vector<char>{'c', 's'});
  CHECK(encoder_kinds(3) == std::vector<char>{'c', 's', 'c'});
  CHECK(decoder_kinds(1) == std::vector<char>{'b'});
  CHECK(decoder_kinds(2) == std::vector<char>{'a', 'b'});
  CHECK(decoder_kinds(3) == std::vector<char>{'b', 'a', 'b'});
  CHECK(decoder_kinds(4) == std::vector<char>{'a', 'b', 'a', 'b'});
  for (Index total = 2; total <= 12; ++total) {
    const Index n_enc = model::encoder_layer_count(total);
    const Index n_dec = model::decoder_layer_count(total);
    CHECK(n_enc + n_dec == total);
    CHECK(n_dec >= n_enc);
    CHECK(n_dec - n_enc <= 1);
    const auto dk = decoder_kinds(n_dec);
    REQUIRE(!dk.empty());
    CHECK(dk.back() == 'b');  // logits always read from mask states
  }
}

TEST_CASE("config validation rejects inconsistent settings") {
  CHECK_THROWS_AS((ModelConfig{.num_heads = 3, .d_model = 8}.validate()), ConfigError);
  CHECK_THROWS_AS((ModelConfig{.n_latent = 0}.validate()), ConfigError);
  CHECK_THROWS_AS((ModelConfig{.num_layers = 1, .backend = Backend::mebt}.validate()),
                  ConfigError);
  CHECK_THROWS_AS((ModelConfig{.backend = Backend::window, .window = 3}.validate()),
                  ConfigError);
  CHECK_THROWS_AS((ModelConfig{.vocab = 1}.validate()), ConfigError);
  CHECK_THROWS_AS((ModelConfig{.dropout = 1.0}.validate()), ConfigError);
  CHECK_THROWS_AS((ModelConfig{.dropout = -0.1}.validate()), ConfigError);
  CHECK_NOTHROW(ModelConfig{}.validate());
  CHECK(model::backend_from_string("axial") == Backend::axial);
  CHECK(model::to_string(Backend::window) == "window");
  CHECK_THROWS_AS(model::backend_from_string("dense"), ConfigError);
}

TEST_CASE("batch canonicalization sorts and enforces invariants") {
  const auto cfg = small_cfg();
  auto b = small_batch(cfg);
  CHECK(std::is_sorted(b.context.begin(), b.context.end()));
  CHECK(std::is_sorted(b.masked.begin(), b.masked.end()));

  auto broken = b;
  broken.masked.clear();
  CHECK_THROWS_AS(canonicalize(broken, cfg), LogicError);

  broken = b;
  broken.masked.push_back(5);
  CHECK_THROWS_AS(canonicalize(broken, cfg), LogicError);

  broken = b;
  broken.context.push_back({4, 2});  // duplicate position, different token
  CHECK_THROWS_AS(canonicalize(broken, cfg), LogicError);

  broken = b;
  broken.context.push_back({5, 2});  // overlaps a masked position
  CHECK_THROWS_AS(canonicalize(broken, cfg), LogicError);

  broken = b;
  broken.masked.push_back(12);  // frame 3, outside interval [1, 3)
  CHECK_THROWS_AS(canonicalize(broken, cfg), LogicError);

  broken = b;
  broken.context[0].second = cfg.vocab;  // token id out of range
  CHECK_THROWS_AS(canonicalize(broken, cfg), LogicError);

  broken = b;
  broken.n_total = 7;
  CHECK_THROWS_AS(canonicalize(broken, cfg), LogicError);

  broken = b;
  broken.interval_start = 3;  // interval [3, 5) exceeds grid_t = 4
  CHECK_THROWS_AS(canonicalize(broken, cfg), LogicError);
}

TEST_CASE("forward shapes: latent state and masked logits") {
  const auto cfg = small_cfg();
  Rng rng(7);
  MebtModel<double> m(cfg, rng);
  const auto b = small_batch(cfg);
  auto [ctx, mask] = m.embed(b);
  CHECK(ctx->val.rows() == 5);
  CHECK(ctx->val.cols() == cfg.d_model);
  CHECK(mask->val.rows() == 3);
  auto z = m.encoder_forward(ctx);
  CHECK(z->val.rows() == cfg.n_latent);
  CHECK(z->val.cols() == cfg.d_model);
  auto logits = m.decoder_forward(z, mask);
  CHECK(logits->val.rows() == 3);
  CHECK(logits->val.cols() == cfg.vocab);
  CHECK(logits->val.allFinite());

  // Mask embeddings carry only position information plus the shared vector.
  const Mat<double> expect_row =
      m.pos_emb->val.row(5) + m.mask_vec->val.row(0);
  CHECK(bitwise_equal<double>(Mat<double>(mask->val.row(0)), expect_row));
}

TEST_CASE("wider masked set matches the documented logits shape") {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.d_model = 8;
  cfg.n_latent = 4;
  cfg.grid_t = 4;
  cfg.grid_h = 2;
  cfg.grid_w = 2;
  cfg.vocab = 64;
  Rng rng(3);
  MebtModel<float> m(cfg, rng);
  MaskedBatch b;
  b.interval_start = 0;
  b.interval_len = 4;
  b.n_total = 16;
  for (Index p = 0; p < 4; ++p) b.context.push_back({p, p % cfg.vocab});
  for (Index p = 4; p < 16; ++p) b.masked.push_back(p);
  auto logits = m.forward_logits(canonicalize(b, cfg));
  CHECK(logits->val.rows() == 12);
  CHECK(logits->val.cols() == 64);
}

TEST_CASE("context order never changes the output bits") {
  for (Backend backend : {Backend::mebt, Backend::full, Backend::axial, Backend::window}) {
    CAPTURE(model::to_string(backend));
    const auto cfg = small_cfg(backend);
    Rng rng(11);
    MebtModel<double> m(cfg, rng);
    auto b = small_batch(cfg);
    auto ref = m.forward_logits(b);

    MaskedBatch shuffled = b;
    std::reverse(shuffled.context.begin(), shuffled.context.end());
    std::swap(shuffled.masked[0], shuffled.masked[2]);
    auto out = m.forward_logits(canonicalize(shuffled, cfg));
    CHECK(bitwise_equal(ref->val, out->val));
  }
}

TEST_CASE("empty context leaves cross blocks out of the computation") {
  ModelConfig cfg = small_cfg();
  cfg.num_layers = 2;  // encoder = [cross], decoder = [mask-over-latent]
  Rng rng(5);
  MebtModel<double> m(cfg, rng);
  MaskedBatch b;
  b.interval_start = 0;
  b.interval_len = 1;
  b.n_total = 4;
  b.masked = {0, 1, 2, 3};
  b = canonicalize(b, cfg);
  auto [ctx, mask] = m.embed(b);
  CHECK(ctx->val.rows() == 0);
  CHECK(ctx->val.cols() == cfg.d_model);
  // The only encoder layer is cross-attention; with nothing to attend to, the
  // latent state must pass through untouched.
  auto z = m.encoder_forward(ctx);
  CHECK(bitwise_equal(z->val, m.latent_init->val));
  auto logits = m.forward_logits(b);
  CHECK(logits->val.rows() == 4);
  CHECK(logits->val.allFinite());
}

TEST_CASE("logits are independent of token rows no context entry uses") {
  const auto cfg = small_cfg();
  Rng rng(13);
  MebtModel<double> m(cfg, rng);
  const auto b = small_batch(cfg);
  auto ref = m.forward_logits(b);

  // Token 9 appears nowhere in the context, so its embedding row must be
  // unreachable: masked slots carry positions only, never token values.
  m.tok_emb->val.row(9).array() += 5.0;
  auto out = m.forward_logits(b);
  CHECK(bitwise_equal(ref->val, out->val));

  // A token the context does use must influence the logits.
  m.tok_emb->val.row(1).array() += 5.0;
  auto changed = m.forward_logits(b);
  CHECK_FALSE(bitwise_equal(ref->val, changed->val));
}

TEST_CASE("attention cost: encoder pair and decoder pair pin to hand arithmetic") {
  ModelConfig cfg;
  cfg.num_layers = 4;  // encoder [c, s], decoder [a, b]
  cfg.num_heads = 2;
  cfg.d_model = 8;
  cfg.n_latent = 4;
  cfg.grid_t = 6;
  cfg.grid_h = 2;
  cfg.grid_w = 2;
  const auto cost = model::count_attention_cost(cfg, 12, 12, 6, 2, 2);
  // encoder: 4x12 cross + 4x4 self = 64
  // decoder: 4x(4+12) + 12x4 = 112
  CHECK(cost.mebt.scores == 64 + 112);
  // latent-latent terms do not move with token counts
  CHECK(cost.mebt_fixed_scores == 16 + 16);
  CHECK(cost.mebt.activations > cost.mebt.scores);
}

TEST_CASE("attention cost: full backend is one dense matrix per layer") {
  ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.backend = Backend::full;
  cfg.grid_t = 4;
  cfg.grid_h = 2;
  cfg.grid_w = 2;
  const auto cost = model::count_attention_cost(cfg, 8, 8, 4, 2, 2);
  CHECK(cost.full.scores == 256);  // 16 tokens -> 16x16 entries
}

TEST_CASE("attention cost: doubling frames doubles mebt, quadruples full") {
  ModelConfig cfg;
  cfg.num_layers = 6;
  cfg.n_latent = 4;
  const auto c1 = model::count_attention_cost(cfg, 12, 12, 6, 2, 2);
  const auto c2 = model::count_attention_cost(cfg, 24, 24, 12, 2, 2);
  CHECK(c2.mebt.scores - c2.mebt_fixed_scores == 2 * (c1.mebt.scores - c1.mebt_fixed_scores));
  CHECK(c2.full.scores == 4 * c1.full.scores);
}

TEST_CASE("attention cost: exactly affine in context and mask counts") {
  ModelConfig cfg;
  cfg.num_layers = 4;
  cfg.n_latent = 5;

  // Vary N_C at fixed N_M by growing the grid.
  std::vector<std::int64_t> by_ctx;
  for (Index t = 2; t <= 5; ++t)
    by_ctx.push_back(model::count_attention_cost(cfg, t * 4 - 4, 4, t, 2, 2).mebt.scores);
  for (std::size_t i = 2; i < by_ctx.size(); ++i)
    CHECK(by_ctx[i] - 2 * by_ctx[i - 1] + by_ctx[i - 2] == 0);
  // Slope per context token = N_L per cross-attention layer (one here, 4 apart).
  CHECK(by_ctx[1] - by_ctx[0] == 4 * cfg.n_latent * 1);

  // Vary N_M at fixed N_C the same way.
  std::vector<std::int64_t> by_mask;
  for (Index t = 2; t <= 5; ++t)
    by_mask.push_back(model::count_attention_cost(cfg, 4, t * 4 - 4, t, 2, 2).mebt.scores);
  for (std::size_t i = 2; i < by_mask.size(); ++i)
    CHECK(by_mask[i] - 2 * by_mask[i - 1] + by_mask[i - 2] == 0);
  // Slope per mask token = N_L for the latent-update plus N_L for the
  // mask-update layer (one decoder pair here, 4 apart).
  CHECK(by_mask[1] - by_mask[0] == 4 * cfg.n_latent * 2);

  // Full backend: exact quadratic in the token total.
  ModelConfig fc;
  fc.num_layers = 1;
  fc.backend = Backend::full;
  auto full_at = [&](Index t) {
    return model::count_attention_cost(fc, 0 + t * 4 / 2, t * 4 - t * 4 / 2, t, 2, 2)
        .full.scores;
  };
  for (Index t = 2; t <= 5; ++t) CHECK(full_at(t) == t * 4 * t * 4);
}

TEST_CASE("axial groups restrict every query to one axis line") {
  ModelConfig cfg;
  cfg.num_layers = 3;
  cfg.backend = Backend::axial;
  cfg.num_heads = 2;
  cfg.d_model = 8;
  cfg.grid_t = 4;
  cfg.grid_h = 4;
  cfg.grid_w = 4;
  Rng rng(17);
  MebtModel<double> m(cfg, rng);
  std::vector<Index> positions(64);
  std::iota(positions.begin(), positions.end(), Index{0});
  for (Index layer = 0; layer < 3; ++layer) {
    const auto groups = m.layer_groups(positions, layer);
    CHECK(groups.size() == 16);
    std::set<Index> seen;
    for (const auto& g : groups) {
      CHECK(g.size() == 4);  // each query attends to exactly 4 keys
      for (Index i : g) seen.insert(i);
      // All rows of one group share the two off-axis coordinates.
      const auto c0 = model::unflatten(positions[static_cast<std::size_t>(g[0])], 4, 4);
      for (Index i : g) {
        const auto c = model::unflatten(positions[static_cast<std::size_t>(i)], 4, 4);
        if (layer % 3 == 0) {
          CHECK(c.t == c0.t);
          CHECK(c.h == c0.h);
        } else if (layer % 3 == 1) {
          CHECK(c.t == c0.t);
          CHECK(c.w == c0.w);
        } else {
          CHECK(c.h == c0.h);
          CHECK(c.w == c0.w);
        }
      }
    }
    CHECK(seen.size() == 64);
  }
  const auto cost = model::count_attention_cost(cfg, 32, 32, 4, 4, 4);
  CHECK(cost.axial.scores == 3 * 64 * 4);
}

TEST_CASE("window groups alternate frames with spatial tiles across time") {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.backend = Backend::window;
  cfg.num_heads = 2;
  cfg.d_model = 8;
  cfg.grid_t = 8;
  cfg.grid_h = 2;
  cfg.grid_w = 2;
  cfg.window = 4;
  Rng rng(19);
  MebtModel<double> m(cfg, rng);
  std::vector<Index> positions(32);
  std::iota(positions.begin(), positions.end(), Index{0});
  const auto frames = m.layer_groups(positions, 0);
  CHECK(frames.size() == 8);
  for (const auto& g : frames) CHECK(g.size() == 4);
  const auto tiles = m.layer_groups(positions, 1);
  REQUIRE(tiles.size() == 1);  // window covers the whole 2x2 frame
  CHECK(tiles[0].size() == 32);

  const auto cost = model::count_attention_cost(cfg, 16, 16, 8, 2, 2);
  // even layer: 8 frames x 4x4; odd layer: one (4 positions x 8 frames)^2 block
  CHECK(cost.window.scores == 8 * 16 + (4 * 8) * (4 * 8));
}

TEST_CASE("grouped attention equals dense attention under a blocking mask") {
  Rng rng(23);
  nn::Block<double> block(8, 2, rng);
  Mat<double> xv = nn::normal_init<double>(rng, 12, 8, 1.0);
  auto x = ag::param(xv);
  std::vector<std::vector<Index>> groups = {{0, 1, 2, 3, 4, 5}, {6, 7, 8, 9, 10, 11}};
  auto grouped = block.grouped_forward(x, groups);

  Mat<double> mask = Mat<double>::Zero(12, 12);
  for (Index i = 0; i < 12; ++i)
    for (Index j = 0; j < 12; ++j)
      if ((i < 6) != (j < 6)) mask(i, j) = -1e30;
  auto dense = block.self_forward(x, &mask);
  CHECK((grouped->val - dense->val).cwiseAbs().maxCoeff() < 1e-12);

  std::vector<std::vector<Index>> missing = {{0, 1, 2}, {6, 7, 8, 9, 10, 11}};
  CHECK_THROWS_AS(block.grouped_forward(x, missing), LogicError);
}

TEST_CASE("autoregressive logits see strictly earlier tokens only") {
  ModelConfig cfg = small_cfg();
  cfg.backend = Backend::full;
  cfg.num_layers = 2;
  Rng rng(29);
  ArModel<double> m(cfg, rng);

  auto start = m.forward({3});
  CHECK(start->val.rows() == 1);
  CHECK(start->val.cols() == cfg.vocab);

  std::vector<Index> tokens = {3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8};
  auto ref = m.forward(tokens);
  CHECK(ref->val.rows() == 12);

  auto perturbed = tokens;
  perturbed[5] = (perturbed[5] + 1) % cfg.vocab;
  auto out = m.forward(perturbed);
  // Rows 0..5 predict from tokens before index 5: bitwise unchanged.
  CHECK(bitwise_equal<double>(Mat<double>(ref->val.topRows(6)),
                              Mat<double>(out->val.topRows(6))));
  CHECK_FALSE(bitwise_equal<double>(Mat<double>(ref->val.bottomRows(6)),
                                    Mat<double>(out->val.bottomRows(6))));

  CHECK_THROWS_AS(m.forward({}), LogicError);
  CHECK_THROWS_AS(m.forward(std::vector<Index>(cfg.n_max() + 1, 0)), LogicError);
}

TEST_CASE("parameter names are unique and all require gradients") {
  const auto cfg = small_cfg();
  Rng rng(31);
  MebtModel<double> m(cfg, rng);
  std::set<std::string> names;
  for (const auto& [name, p] : m.params()) {
    CHECK(p->needs_grad);
    CHECK(names.insert(name).second);
  }
  CHECK(names.count("enc.0.attn.wq.w") == 1);
  CHECK(names.count("dec.1.ffn.w1.b") == 1);
  CHECK(names.count("latent_init") == 1);
  CHECK(names.count("head.w") == 1);

  ArModel<double> ar(cfg, rng);
  std::set<std::string> ar_names;
  for (const auto& [name, p] : ar.params()) CHECK(ar_names.insert(name).second);
  CHECK(ar_names.count("bos") == 1);
}

TEST_CASE("dropout is a no-op when inactive and rescales when active") {
  const auto cfg = small_cfg();
  Rng rng(37);
  MebtModel<double> m(cfg, rng);
  const auto b = small_batch(cfg);
  auto ref = m.forward_logits(b);
  CHECK(bitwise_equal(ref->val, m.forward_logits(b, nullptr)->val));
  nn::DropoutCtx inactive{0.0, &rng};
  CHECK(bitwise_equal(ref->val, m.forward_logits(b, &inactive)->val));

  nn::DropoutCtx active{0.5, &rng};
  auto dropped = m.forward_logits(b, &active);
  CHECK(dropped->val.allFinite());
  CHECK_FALSE(bitwise_equal(ref->val, dropped->val));

  // Inverted scaling keeps the expected activation magnitude.
  auto ones = ag::constant(Mat<double>::Ones(200, 50));
  double mean = nn::apply_dropout(ones, &active)->val.mean();
  CHECK(mean > 0.9);
  CHECK(mean < 1.1);
}

TEST_CASE("analytic parameter gradients match finite differences everywhere") {
  auto ce_targets = [](Index n) {
    std::vector<Index> t;
    for (Index i = 0; i < n; ++i) t.push_back(i % 5);
    return t;
  };

  SUBCASE("latent bottleneck path") {
    ModelConfig cfg = small_cfg();
    cfg.num_layers = 4;  // covers cross, self, latent-update, mask-update
    Rng rng(41);
    MebtModel<double> m(cfg, rng);
    const auto b = small_batch(cfg);
    expect_param_grads(m.params(), [&] {
      return ag::cross_entropy_mean(m.forward_logits(b), ce_targets(3));
    });
  }

  SUBCASE("flat backends") {
    for (Backend backend : {Backend::full, Backend::axial, Backend::window}) {
      CAPTURE(model::to_string(backend));
      ModelConfig cfg = small_cfg(backend);
      cfg.num_layers = 2;
      Rng rng(43);
      MebtModel<double> m(cfg, rng);
      const auto b = small_batch(cfg);
      expect_param_grads(m.params(), [&] {
        return ag::cross_entropy_mean(m.forward_logits(b), ce_targets(3));
      });
    }
  }

  SUBCASE("autoregressive baseline") {
    ModelConfig cfg = small_cfg(Backend::full);
    cfg.num_layers = 2;
    Rng rng(47);
    ArModel<double> m(cfg, rng);
    std::vector<Index> tokens = {1, 2, 3, 4, 5, 6};
    expect_param_grads(m.params(), [&] {
      return ag::cross_entropy_mean(m.forward(tokens), tokens);
    });
  }
}
