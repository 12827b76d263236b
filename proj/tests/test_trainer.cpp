#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <mebt/trainer.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

using namespace mebt;
using model::MaskedBatch;
using model::ModelConfig;
using train::TrainConfig;

namespace {

ModelConfig tiny_model_cfg() {
  ModelConfig mc;
  mc.num_layers = 2;
  mc.num_heads = 2;
  mc.d_model = 8;
  mc.n_latent = 2;
  mc.grid_t = 4;
  mc.grid_h = 2;
  mc.grid_w = 2;
  mc.vocab = 8;
  return mc;
}

TrainConfig tiny_train_cfg() {
  TrainConfig tc;
  tc.batch_size = 2;
  tc.steps = 80;
  tc.curriculum = sched::Curriculum::uniform;
  tc.alpha = 40.0;
  tc.beta_sched = 1.5;
  tc.adamw.lr = 5e-3;
  return tc;
}

TokenGrid random_grid(Index t, Index h, Index w, Index vocab, std::uint64_t seed) {
  Rng rng(seed);
  TokenGrid g({t, h, w});
  for (auto& x : g.data)
    x = static_cast<std::uint16_t>(rng.uniform_int(static_cast<std::int64_t>(vocab)));
  return g;
}

std::vector<TokenGrid> grid_corpus(const ModelConfig& mc, std::size_t n,
                                   std::uint64_t seed) {
  std::vector<TokenGrid> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(random_grid(mc.grid_t, mc.grid_h, mc.grid_w, mc.vocab, seed + i));
  return out;
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  return xs[xs.size() / 2];
}

template <typename M>
bool bitwise_equal(const M& a, const M& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

// Logit rows deliberately contaminated by the last token: a leaky "baseline".
struct LeakyStub {
  ModelConfig cfg;
  ag::Var<double> forward(const std::vector<Index>& tokens) const {
    Mat<double> logits =
        Mat<double>::Constant(static_cast<Index>(tokens.size()), cfg.vocab,
                              static_cast<double>(tokens.back()));
    return ag::constant(logits);
  }
};

}  // namespace

TEST_CASE("masked loss matches closed forms") {
  SUBCASE("uniform logits give ln(vocab) regardless of the mask count") {
    for (Index n_m : {1, 3, 9}) {
      auto logits = ag::constant(Mat<double>(Mat<double>::Zero(n_m, 4)));
      std::vector<Index> targets(static_cast<std::size_t>(n_m), 2);
      CHECK(train::mebt_loss(logits, targets)->val(0, 0) ==
            doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
  }

  SUBCASE("saturating correct logits drive the loss toward zero") {
    Mat<double> logits = Mat<double>::Zero(2, 4);
    logits(0, 1) = 50.0;
    logits(1, 3) = 50.0;
    CHECK(train::mebt_loss(ag::constant(logits), {1, 3})->val(0, 0) < 1e-12);
  }

  SUBCASE("two positions with probabilities one half and one quarter") {
    // softmax(ln 2, 0, 0, 0... arranged so target prob is exactly 0.5 / 0.25
    Mat<double> logits = Mat<double>::Zero(2, 2);
    logits(0, 0) = std::log(1.0);  // row 0: probs (0.5, 0.5) -> target prob 0.5
    logits(1, 0) = std::log(1.0 / 3.0);  // row 1: probs (0.25, 0.75)
    const double loss = train::mebt_loss(ag::constant(logits), {0, 0})->val(0, 0);
    CHECK(loss == doctest::Approx(-(std::log(0.5) + std::log(0.25)) / 2.0).epsilon(1e-12));
    CHECK(loss == doctest::Approx(1.0397).epsilon(1e-3));
  }

  SUBCASE("row/target count mismatch is a logic error") {
    auto logits = ag::constant(Mat<double>(Mat<double>::Zero(3, 4)));
    CHECK_THROWS_AS(train::mebt_loss(logits, {0, 1}), LogicError);
    CHECK_THROWS_AS(train::ar_loss(logits, {0, 1, 2, 3}), LogicError);
  }
}

TEST_CASE("autoregressive baseline causality") {
  const auto mc = tiny_model_cfg();
  Rng rng(3);
  model::ArModel<double> m(mc, rng);

  SUBCASE("single token conditions on the start embedding only") {
    auto l1 = m.forward({5});
    CHECK(l1->val.rows() == 1);
    auto l2 = m.forward({2});
    CHECK(bitwise_equal(l1->val, l2->val));  // row 0 never sees the token it predicts
  }

  SUBCASE("self-test passes for the real model and catches a leaky stub") {
    std::vector<Index> tokens = {1, 4, 2, 7, 0, 3};
    CHECK_NOTHROW(train::ar_causality_check(m, tokens));
    LeakyStub leaky{mc};
    try {
      train::ar_causality_check(leaky, tokens);
      FAIL("expected LogicError");
    } catch (const LogicError& e) {
      CHECK(std::string(e.what()).find("leakage detected") != std::string::npos);
    }
  }
}

TEST_CASE("training batches respect the curriculum and the batch invariants") {
  const auto mc = tiny_model_cfg();
  const auto grid = random_grid(mc.grid_t, mc.grid_h, mc.grid_w, mc.vocab, 7);
  TrainConfig tc = tiny_train_cfg();

  SUBCASE("no curriculum always spans the full video") {
    tc.curriculum = sched::Curriculum::none;
    Rng rng(8);
    for (int i = 0; i < 50; ++i) {
      const auto b = train::make_training_batch(grid, i, tc, rng);
      CHECK(b.interval_len == mc.grid_t);
      CHECK(b.interval_start == 0);
    }
  }

  SUBCASE("uniform curriculum reaches every interval length") {
    tc.curriculum = sched::Curriculum::uniform;
    Rng rng(9);
    std::vector<int> seen(static_cast<std::size_t>(mc.grid_t) + 1, 0);
    for (int i = 0; i < 400; ++i) {
      const auto b = train::make_training_batch(grid, i, tc, rng);
      REQUIRE(b.interval_len >= 1);
      REQUIRE(b.interval_len <= mc.grid_t);
      ++seen[static_cast<std::size_t>(b.interval_len)];
    }
    for (Index v = 1; v <= mc.grid_t; ++v) CHECK(seen[static_cast<std::size_t>(v)] > 0);
  }

  SUBCASE("ten thousand draws all canonicalize and partition the window") {
    tc.curriculum = sched::Curriculum::gaussian;
    tc.alpha = 300.0;
    Rng rng(10);
    bool saw_offset_window = false;
    for (int i = 0; i < 10000; ++i) {
      auto b = train::make_training_batch(grid, i, tc, rng);
      const auto canon = model::canonicalize(std::move(b), mc);
      REQUIRE(!canon.masked.empty());
      REQUIRE(static_cast<Index>(canon.context.size() + canon.masked.size()) ==
              canon.n_total);
      const Index lo = canon.interval_start * mc.grid_h * mc.grid_w;
      const Index hi = lo + canon.n_total;
      for (const auto& [p, tokv] : canon.context) {
        REQUIRE(p >= lo);
        REQUIRE(p < hi);
        REQUIRE(tokv == static_cast<Index>(grid.data[static_cast<std::size_t>(p)]));
      }
      for (Index p : canon.masked) {
        REQUIRE(p >= lo);
        REQUIRE(p < hi);
      }
      if (canon.interval_start > 0) saw_offset_window = true;
    }
    CHECK(saw_offset_window);  // absolute positions, not window-relative
  }
}

TEST_CASE("masked-transformer training reduces the loss deterministically") {
  const auto mc = tiny_model_cfg();
  const auto grids = grid_corpus(mc, 3, 20);
  const auto tc = tiny_train_cfg();

  auto run = [&](std::uint64_t seed) {
    Rng init_rng(seed);
    model::MebtModel<float> m(mc, init_rng);
    Rng train_rng(seed + 1);
    auto log = train::train_mebt(m, grids, tc, train_rng);
    return std::make_pair(std::move(m), std::move(log));
  };

  auto [m, log] = run(21);
  REQUIRE(log.size() == 80);
  std::vector<double> head_losses, tail_losses;
  for (std::size_t i = 0; i < 8; ++i) {
    head_losses.push_back(log[i].loss);
    tail_losses.push_back(log[log.size() - 8 + i].loss);
  }
  CHECK(median(tail_losses) < median(head_losses));
  for (const auto& rec : log) {
    CHECK(std::isfinite(rec.loss));
    CHECK(rec.v >= 1.0);
    CHECK(rec.r > 0.0);
    CHECK(rec.r <= 1.0);
    CHECK(rec.n_mask >= 1.0);
  }

  auto [m2, log2] = run(21);
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i].loss == log2[i].loss);
    CHECK(log[i].v == log2[i].v);
    CHECK(log[i].r == log2[i].r);
    CHECK(log[i].n_mask == log2[i].n_mask);
  }
  for (std::size_t k = 0; k < m.params().size(); ++k)
    CHECK((m.params()[k].second->val - m2.params()[k].second->val).cwiseAbs().maxCoeff() ==
          0.0f);

  // Held-out evaluation: fixed seed makes it a pure function of the model.
  const double nll_a = train::eval_masked_nll(m, grids, 99);
  const double nll_b = train::eval_masked_nll(m, grids, 99);
  CHECK(nll_a == nll_b);
  Rng fresh_rng(21);
  model::MebtModel<float> untrained(mc, fresh_rng);
  CHECK(nll_a < train::eval_masked_nll(untrained, grids, 99));
}

TEST_CASE("autoregressive training reduces the loss") {
  auto mc = tiny_model_cfg();
  mc.backend = model::Backend::full;  // AR uses dense blocks; 2 layers suffice
  const auto grids = grid_corpus(mc, 2, 30);
  auto tc = tiny_train_cfg();
  tc.steps = 60;
  tc.batch_size = 1;

  Rng init_rng(31);
  model::ArModel<float> m(mc, init_rng);
  Rng train_rng(32);
  const double before = train::eval_ar_nll(m, grids);
  auto log = train::train_ar(m, grids, tc, train_rng);
  REQUIRE(log.size() == 60);
  const double after = train::eval_ar_nll(m, grids);
  CHECK(after < before);
  CHECK(std::isfinite(after));
}

TEST_CASE("zero steps leave the parameters at initialization") {
  const auto mc = tiny_model_cfg();
  const auto grids = grid_corpus(mc, 1, 40);
  auto tc = tiny_train_cfg();
  tc.steps = 0;

  Rng rng_a(41), rng_b(41);
  model::MebtModel<float> m(mc, rng_a);
  model::MebtModel<float> init(mc, rng_b);
  Rng train_rng(42);
  auto log = train::train_mebt(m, grids, tc, train_rng);
  CHECK(log.empty());
  for (std::size_t k = 0; k < m.params().size(); ++k)
    CHECK((m.params()[k].second->val - init.params()[k].second->val)
              .cwiseAbs()
              .maxCoeff() == 0.0f);
}

TEST_CASE("non-finite loss aborts with the failing step index") {
  const auto mc = tiny_model_cfg();
  const auto grids = grid_corpus(mc, 1, 50);
  auto tc = tiny_train_cfg();
  tc.steps = 5;

  Rng rng(51);
  model::MebtModel<float> m(mc, rng);
  for (const auto& [name, p] : m.params())  // the latent init enters every forward
    if (name == "latent_init") p->val(0, 0) = std::numeric_limits<float>::quiet_NaN();
  Rng train_rng(52);
  try {
    train::train_mebt(m, grids, tc, train_rng);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("corpus validation") {
  const auto mc = tiny_model_cfg();
  auto tc = tiny_train_cfg();
  tc.steps = 1;
  Rng rng(61);
  model::MebtModel<float> m(mc, rng);
  Rng train_rng(62);

  SUBCASE("empty corpus") {
    std::vector<TokenGrid> none;
    CHECK_THROWS_AS(train::train_mebt(m, none, tc, train_rng), ConfigError);
  }

  SUBCASE("wrong grid shape") {
    std::vector<TokenGrid> wrong = {random_grid(2, 2, 2, mc.vocab, 63)};
    CHECK_THROWS_AS(train::train_mebt(m, wrong, tc, train_rng), ConfigError);
  }

  SUBCASE("token outside the vocabulary is bad data") {
    auto grid = random_grid(mc.grid_t, mc.grid_h, mc.grid_w, mc.vocab, 64);
    grid.data[3] = static_cast<std::uint16_t>(mc.vocab);
    std::vector<TokenGrid> bad = {std::move(grid)};
    CHECK_THROWS_AS(train::train_mebt(m, bad, tc, train_rng), DataError);
  }
}

TEST_CASE("metrics serialize to one JSON record per line") {
  std::vector<train::StepRecord> records(3);
  records[0] = {0, 1.5, 4.0, 0.5, 8.0, 12.5};
  records[2] = {2, 0.75, 2.0, 0.25, 4.0, 11.0};
  const auto text = train::metrics_to_jsonl(records);
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  REQUIRE(lines.size() == 3);
  const auto j = nlohmann::json::parse(lines[0]);
  CHECK(j["step"] == 0);
  CHECK(j["loss"] == 1.5);
  CHECK(j["v"] == 4.0);
  CHECK(j["r"] == 0.5);
  CHECK(j["n_mask"] == 8.0);
  CHECK(nlohmann::json::parse(lines[2])["loss"] == 0.75);
}

TEST_CASE("model checkpoints round-trip bit for bit") {
  const auto mc = tiny_model_cfg();
  const auto grid = random_grid(mc.grid_t, mc.grid_h, mc.grid_w, mc.vocab, 70);
  auto tc = tiny_train_cfg();
  tc.curriculum = sched::Curriculum::uniform;

  Rng rng(71);
  model::MebtModel<float> m(mc, rng);
  Rng batch_rng(72);
  const auto b = model::canonicalize(train::make_training_batch(grid, 0, tc, batch_rng), mc);
  const auto base = m.forward_logits(b)->val;

  const auto bytes = ckpt::serialize_checkpoint(m.to_checkpoint(7, 71));
  auto restored =
      model::MebtModel<float>::from_checkpoint(ckpt::deserialize_checkpoint(bytes));
  CHECK(restored.cfg.vocab == mc.vocab);
  CHECK(bitwise_equal(restored.forward_logits(b)->val, base));

  Rng ar_rng(73);
  model::ArModel<float> ar(mc, ar_rng);
  std::vector<Index> tokens = {1, 2, 3, 4, 5};
  const auto ar_base = ar.forward(tokens)->val;
  auto ar_restored = model::ArModel<float>::from_checkpoint(
      ckpt::deserialize_checkpoint(ckpt::serialize_checkpoint(ar.to_checkpoint(0, 73))));
  CHECK(bitwise_equal(ar_restored.forward(tokens)->val, ar_base));

  CHECK_THROWS_AS(model::ArModel<float>::from_checkpoint(m.to_checkpoint(0, 0)),
                  FormatError);
  CHECK_THROWS_AS(model::MebtModel<float>::from_checkpoint(ar.to_checkpoint(0, 0)),
                  FormatError);
}

TEST_CASE("token cache round-trips through disk") {
  const auto dir = std::filesystem::temp_directory_path() / "mebt_token_cache_test";
  std::filesystem::create_directories(dir);
  const auto mc = tiny_model_cfg();
  const auto grids = grid_corpus(mc, 3, 80);
  train::save_token_cache(dir.string(), grids);
  const auto loaded = train::load_token_cache(dir.string(), grids.size(), mc.vocab);
  REQUIRE(loaded.size() == grids.size());
  for (std::size_t i = 0; i < grids.size(); ++i) {
    CHECK(loaded[i].dims == grids[i].dims);
    CHECK(loaded[i].data == grids[i].data);
  }
  CHECK_THROWS_AS(train::load_token_cache(dir.string(), grids.size(), 2), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training configuration serializes and validates") {
  TrainConfig tc = tiny_train_cfg();
  tc.curriculum = sched::Curriculum::gaussian;
  tc.gamma = sched::GammaKind::linear;
  tc.seed = 123;
  const nlohmann::json j = tc;
  TrainConfig back = j.get<TrainConfig>();
  CHECK(back.batch_size == tc.batch_size);
  CHECK(back.steps == tc.steps);
  CHECK(back.curriculum == tc.curriculum);
  CHECK(back.alpha == tc.alpha);
  CHECK(back.beta_sched == tc.beta_sched);
  CHECK(back.gamma == tc.gamma);
  CHECK(back.adamw.lr == tc.adamw.lr);
  CHECK(back.seed == tc.seed);

  TrainConfig bad = tc;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tc;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tc;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
