#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mebt/autograd.hpp"
#include "mebt/rng.hpp"

namespace mebt::nn {

template <typename S>
using NamedParams = std::vector<std::pair<std::string, ag::Var<S>>>;

template <typename S>
Mat<S> normal_init(Rng& rng, Index rows, Index cols, double stddev = 0.02) {
  Mat<S> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<S>(rng.normal(0.0, stddev));
  return m;
}

// Training-time dropout. Inactive (the default) is an exact no-op, so eval
// and inference paths stay bit-deterministic.
struct DropoutCtx {
  double rate = 0.0;
  Rng* rng = nullptr;
  bool active() const { return rng != nullptr && rate > 0.0; }
};

// Inverted dropout: kept entries scale by 1/(1-rate) so expectations match.
template <typename S>
ag::Var<S> apply_dropout(const ag::Var<S>& x, const DropoutCtx* drop) {
  if (drop == nullptr || !drop->active()) return x;
  check(drop->rate < 1.0, "dropout: rate must be < 1");
  const S keep_scale = static_cast<S>(1.0 / (1.0 - drop->rate));
  Mat<S> m(x->val.rows(), x->val.cols());
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      m(i, j) = drop->rng->uniform() < drop->rate ? S{0} : keep_scale;
  return ag::hadamard(x, ag::constant(m));
}

template <typename S>
struct Linear {
  ag::Var<S> w, b;

  Linear() = default;
  Linear(Index in, Index out, Rng& rng)
      : w(ag::param(normal_init<S>(rng, in, out))), b(ag::param(Mat<S>::Zero(1, out))) {}

  ag::Var<S> operator()(const ag::Var<S>& x) const {
    return ag::add_rowvec(ag::matmul(x, w), b);
  }

  void collect(const std::string& prefix, NamedParams<S>& out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

template <typename S>
struct LayerNorm {
  ag::Var<S> gamma, beta;

  LayerNorm() = default;
  explicit LayerNorm(Index dim)
      : gamma(ag::param(Mat<S>::Ones(1, dim))), beta(ag::param(Mat<S>::Zero(1, dim))) {}

  ag::Var<S> operator()(const ag::Var<S>& x) const {
    return ag::add_rowvec(ag::mul_rowvec(ag::layernorm_rows(x), gamma), beta);
  }

  void collect(const std::string& prefix, NamedParams<S>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

// Multi-head attention. Queries and keys/values may come from different
// sources (cross-attention). An optional additive mask is applied to the
// score matrix of every head (causal masking in the autoregressive baseline).
template <typename S>
struct Mha {
  Index heads = 1;
  Linear<S> wq, wk, wv, wo;

  Mha() = default;
  Mha(Index d_model, Index num_heads, Rng& rng)
      : heads(num_heads),
        wq(d_model, d_model, rng),
        wk(d_model, d_model, rng),
        wv(d_model, d_model, rng),
        wo(d_model, d_model, rng) {
    check(d_model % num_heads == 0, "Mha: d_model must be divisible by num_heads");
  }

  ag::Var<S> operator()(const ag::Var<S>& q_in, const ag::Var<S>& kv_in,
                        const Mat<S>* mask = nullptr) const {
    const Index d = wq.w->val.cols();
    const Index dh = d / heads;
    const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    auto q = wq(q_in), k = wk(kv_in), v = wv(kv_in);
    std::vector<ag::Var<S>> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (Index h = 0; h < heads; ++h) {
      auto qh = ag::slice_cols(q, h * dh, dh);
      auto kh = ag::slice_cols(k, h * dh, dh);
      auto vh = ag::slice_cols(v, h * dh, dh);
      auto scores = ag::scale(ag::matmul_nt(qh, kh), inv_sqrt_dh);
      if (mask) scores = ag::add_const(scores, *mask);
      outs.push_back(ag::matmul(ag::softmax_rows(scores), vh));
    }
    return wo(heads == 1 ? outs[0] : ag::concat_cols(outs));
  }

  // Attention restricted to index groups: each group attends only within
  // itself. Projections run once over the full matrix; scores are formed per
  // group, and rows return to their original order afterwards.
  ag::Var<S> grouped(const ag::Var<S>& x, const std::vector<std::vector<Index>>& groups) const {
    const Index d = wq.w->val.cols();
    const Index dh = d / heads;
    const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    auto q = wq(x), k = wk(x), v = wv(x);
    std::vector<ag::Var<S>> outs;
    std::vector<Index> flat;
    flat.reserve(static_cast<std::size_t>(x->val.rows()));
    for (const auto& g : groups) {
      check(!g.empty(), "Mha::grouped: empty group");
      auto qg = ag::gather_rows(q, g);
      auto kg = ag::gather_rows(k, g);
      auto vg = ag::gather_rows(v, g);
      std::vector<ag::Var<S>> head_outs;
      for (Index h = 0; h < heads; ++h) {
        auto qh = ag::slice_cols(qg, h * dh, dh);
        auto kh = ag::slice_cols(kg, h * dh, dh);
        auto vh = ag::slice_cols(vg, h * dh, dh);
        auto scores = ag::scale(ag::matmul_nt(qh, kh), inv_sqrt_dh);
        head_outs.push_back(ag::matmul(ag::softmax_rows(scores), vh));
      }
      outs.push_back(heads == 1 ? head_outs[0] : ag::concat_cols(head_outs));
      flat.insert(flat.end(), g.begin(), g.end());
    }
    check(static_cast<Index>(flat.size()) == x->val.rows(),
          "Mha::grouped: groups must partition all rows");
    std::vector<Index> inverse(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i)
      inverse[static_cast<std::size_t>(flat[i])] = static_cast<Index>(i);
    return wo(ag::gather_rows(ag::concat_rows(outs), inverse));
  }

  void collect(const std::string& prefix, NamedParams<S>& out) const {
    wq.collect(prefix + ".wq", out);
    wk.collect(prefix + ".wk", out);
    wv.collect(prefix + ".wv", out);
    wo.collect(prefix + ".wo", out);
  }
};

// Position-wise feed-forward with 4x expansion and gelu.
template <typename S>
struct Ffn {
  Linear<S> w1, w2;

  Ffn() = default;
  Ffn(Index d_model, Rng& rng) : w1(d_model, 4 * d_model, rng), w2(4 * d_model, d_model, rng) {}

  ag::Var<S> operator()(const ag::Var<S>& x) const { return w2(ag::gelu(w1(x))); }

  void collect(const std::string& prefix, NamedParams<S>& out) const {
    w1.collect(prefix + ".w1", out);
    w2.collect(prefix + ".w2", out);
  }
};

// One pre-norm transformer block: x + Attn(LN(x)) followed by x + Ffn(LN(x)).
// Cross-attention normalizes queries and keys/values with separate norms.
template <typename S>
struct Block {
  LayerNorm<S> ln_q, ln_kv, ln_f;
  Mha<S> attn;
  Ffn<S> ffn;

  Block() = default;
  Block(Index d_model, Index heads, Rng& rng)
      : ln_q(d_model),
        ln_kv(d_model),
        ln_f(d_model),
        attn(d_model, heads, rng),
        ffn(d_model, rng) {}

  ag::Var<S> ffn_residual(const ag::Var<S>& x, const DropoutCtx* drop = nullptr) const {
    return ag::add(x, apply_dropout(ffn(ln_f(x)), drop));
  }

  ag::Var<S> self_forward(const ag::Var<S>& x, const Mat<S>* mask = nullptr,
                          const DropoutCtx* drop = nullptr) const {
    auto normed = ln_q(x);
    return ffn_residual(ag::add(x, apply_dropout(attn(normed, normed, mask), drop)), drop);
  }

  ag::Var<S> cross_forward(const ag::Var<S>& q, const ag::Var<S>& kv,
                           const DropoutCtx* drop = nullptr) const {
    return ffn_residual(ag::add(q, apply_dropout(attn(ln_q(q), ln_kv(kv)), drop)), drop);
  }

  ag::Var<S> grouped_forward(const ag::Var<S>& x,
                             const std::vector<std::vector<Index>>& groups,
                             const DropoutCtx* drop = nullptr) const {
    return ffn_residual(ag::add(x, apply_dropout(attn.grouped(ln_q(x), groups), drop)), drop);
  }

  void collect(const std::string& prefix, NamedParams<S>& out) const {
    ln_q.collect(prefix + ".ln_q", out);
    ln_kv.collect(prefix + ".ln_kv", out);
    ln_f.collect(prefix + ".ln_f", out);
    attn.collect(prefix + ".attn", out);
    ffn.collect(prefix + ".ffn", out);
  }
};

}  // namespace mebt::nn
