#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "mebt/common.hpp"

// Reverse-mode autodiff over row-major Eigen matrices. Graphs are built
// bottom-up through the free functions below; node ids increase monotonically,
// so visiting reachable nodes in descending id order is a valid reverse
// topological order. Scalar type is a template parameter: float for training,
// double for finite-difference verification.

namespace mebt::ag {

// Activation accounting. Parameter tensors are excluded so the peak reflects
// per-step working memory, the quantity whose growth with sequence length the
// scaling harness fits.
struct MemoryStats {
  inline static std::int64_t live_bytes = 0;
  inline static std::int64_t peak_bytes = 0;

  static void add(std::int64_t n) {
    live_bytes += n;
    if (live_bytes > peak_bytes) peak_bytes = live_bytes;
  }
  static void sub(std::int64_t n) { live_bytes -= n; }
  static void reset_peak() { peak_bytes = live_bytes; }
};

template <typename S>
struct Node {
  Mat<S> val;
  Mat<S> grad;  // empty until backward touches this node
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backfn;
  std::uint64_t id = 0;
  bool needs_grad = false;
  bool counted = false;         // participates in MemoryStats
  std::int64_t counted_bytes = 0;

  ~Node() {
    if (counted) MemoryStats::sub(counted_bytes);
  }

  void track_grad_bytes() {
    if (counted) {
      const auto n = static_cast<std::int64_t>(grad.size() * sizeof(S));
      MemoryStats::add(n);
      counted_bytes += n;
    }
  }
};

template <typename S>
using Var = std::shared_ptr<Node<S>>;

namespace detail {

inline std::uint64_t next_id() {
  static std::uint64_t counter = 0;
  return ++counter;
}

template <typename S>
Var<S> make_node(Mat<S> val, bool counted) {
  auto n = std::make_shared<Node<S>>();
  n->val = std::move(val);
  n->id = next_id();
  n->counted = counted;
  if (counted) {
    n->counted_bytes = static_cast<std::int64_t>(n->val.size() * sizeof(S));
    MemoryStats::add(n->counted_bytes);
  }
  return n;
}

// Accumulates g into p's grad, allocating on first touch.
template <typename S, typename Expr>
void accum(const Var<S>& p, const Expr& g) {
  if (!p->needs_grad) return;
  if (p->grad.size() == 0) {
    p->grad = Mat<S>::Zero(p->val.rows(), p->val.cols());
    p->track_grad_bytes();
  }
  p->grad += g;
}

template <typename S>
Var<S> unary(const Var<S>& a, Mat<S> val, std::function<void(Node<S>&)> backfn) {
  auto n = make_node<S>(std::move(val), true);
  n->parents = {a};
  n->needs_grad = a->needs_grad;
  if (n->needs_grad) n->backfn = std::move(backfn);
  return n;
}

template <typename S>
Var<S> binary(const Var<S>& a, const Var<S>& b, Mat<S> val,
              std::function<void(Node<S>&)> backfn) {
  auto n = make_node<S>(std::move(val), true);
  n->parents = {a, b};
  n->needs_grad = a->needs_grad || b->needs_grad;
  if (n->needs_grad) n->backfn = std::move(backfn);
  return n;
}

}  // namespace detail

// Leaf without gradient. Accepts any Eigen matrix expression.
template <typename Derived>
Var<typename Derived::Scalar> constant(const Eigen::MatrixBase<Derived>& v) {
  using S = typename Derived::Scalar;
  return detail::make_node<S>(Mat<S>(v), true);
}

// Trainable leaf. Excluded from activation accounting.
template <typename Derived>
Var<typename Derived::Scalar> param(const Eigen::MatrixBase<Derived>& v) {
  using S = typename Derived::Scalar;
  auto n = detail::make_node<S>(Mat<S>(v), false);
  n->needs_grad = true;
  return n;
}

template <typename S>
Var<S> detach(const Var<S>& a) {
  return constant<S>(a->val);
}

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  check(a->val.cols() == b->val.rows(), "matmul: inner dims differ");
  return detail::binary<S>(a, b, a->val * b->val, [](Node<S>& n) {
    const auto& a = n.parents[0];
    const auto& b = n.parents[1];
    detail::accum(a, n.grad * b->val.transpose());
    detail::accum(b, a->val.transpose() * n.grad);
  });
}

// a * b^T without materializing the transpose; attention scores use this.
template <typename S>
Var<S> matmul_nt(const Var<S>& a, const Var<S>& b) {
  check(a->val.cols() == b->val.cols(), "matmul_nt: inner dims differ");
  return detail::binary<S>(a, b, a->val * b->val.transpose(), [](Node<S>& n) {
    const auto& a = n.parents[0];
    const auto& b = n.parents[1];
    detail::accum(a, n.grad * b->val);
    detail::accum(b, n.grad.transpose() * a->val);
  });
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  check(a->val.rows() == b->val.rows() && a->val.cols() == b->val.cols(), "add: shape mismatch");
  return detail::binary<S>(a, b, a->val + b->val, [](Node<S>& n) {
    detail::accum(n.parents[0], n.grad);
    detail::accum(n.parents[1], n.grad);
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  check(a->val.rows() == b->val.rows() && a->val.cols() == b->val.cols(), "sub: shape mismatch");
  return detail::binary<S>(a, b, a->val - b->val, [](Node<S>& n) {
    detail::accum(n.parents[0], n.grad);
    detail::accum(n.parents[1], -n.grad);
  });
}

template <typename S>
Var<S> hadamard(const Var<S>& a, const Var<S>& b) {
  check(a->val.rows() == b->val.rows() && a->val.cols() == b->val.cols(),
        "hadamard: shape mismatch");
  return detail::binary<S>(a, b, a->val.cwiseProduct(b->val), [](Node<S>& n) {
    detail::accum(n.parents[0], n.grad.cwiseProduct(n.parents[1]->val));
    detail::accum(n.parents[1], n.grad.cwiseProduct(n.parents[0]->val));
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S s) {
  return detail::unary<S>(a, a->val * s,
                          [s](Node<S>& n) { detail::accum(n.parents[0], n.grad * s); });
}

// Adds a constant matrix (e.g. an additive attention mask). No gradient to m.
template <typename S>
Var<S> add_const(const Var<S>& a, const Mat<S>& m) {
  check(a->val.rows() == m.rows() && a->val.cols() == m.cols(), "add_const: shape mismatch");
  return detail::unary<S>(a, a->val + m,
                          [](Node<S>& n) { detail::accum(n.parents[0], n.grad); });
}

// v is [1, n], broadcast over rows of a.
template <typename S>
Var<S> add_rowvec(const Var<S>& a, const Var<S>& v) {
  check(v->val.rows() == 1 && v->val.cols() == a->val.cols(), "add_rowvec: shape mismatch");
  return detail::binary<S>(a, v, a->val.rowwise() + v->val.row(0), [](Node<S>& n) {
    detail::accum(n.parents[0], n.grad);
    detail::accum(n.parents[1], n.grad.colwise().sum());
  });
}

template <typename S>
Var<S> mul_rowvec(const Var<S>& a, const Var<S>& v) {
  check(v->val.rows() == 1 && v->val.cols() == a->val.cols(), "mul_rowvec: shape mismatch");
  return detail::binary<S>(
      a, v, (a->val.array().rowwise() * v->val.row(0).array()).matrix(), [](Node<S>& n) {
        const auto& a = n.parents[0];
        const auto& v = n.parents[1];
        detail::accum(a, (n.grad.array().rowwise() * v->val.row(0).array()).matrix());
        detail::accum(v, n.grad.cwiseProduct(a->val).colwise().sum());
      });
}

template <typename S>
Var<S> softmax_rows(const Var<S>& a) {
  Mat<S> y = a->val;
  for (Index r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp();
    row /= row.sum();
  }
  return detail::unary<S>(a, std::move(y), [](Node<S>& n) {
    Mat<S> dx(n.val.rows(), n.val.cols());
    for (Index r = 0; r < n.val.rows(); ++r) {
      const auto y = n.val.row(r).array();
      const auto g = n.grad.row(r).array();
      const S dot = (y * g).sum();
      dx.row(r) = (y * (g - dot)).matrix();
    }
    detail::accum(n.parents[0], dx);
  });
}

// Row-wise normalization to zero mean, unit variance (population). Affine
// scale/shift is applied separately through mul_rowvec / add_rowvec.
template <typename S>
Var<S> layernorm_rows(const Var<S>& a, S eps = static_cast<S>(1e-5)) {
  const Index cols = a->val.cols();
  Mat<S> y(a->val.rows(), cols);
  for (Index r = 0; r < a->val.rows(); ++r) {
    const auto x = a->val.row(r);
    const S mu = x.mean();
    const S var = (x.array() - mu).square().mean();
    y.row(r) = (x.array() - mu) / std::sqrt(var + eps);
  }
  return detail::unary<S>(a, std::move(y), [eps](Node<S>& n) {
    const auto& a = n.parents[0];
    const Index cols = n.val.cols();
    Mat<S> dx(n.val.rows(), cols);
    for (Index r = 0; r < n.val.rows(); ++r) {
      const auto x = a->val.row(r);
      const S mu = x.mean();
      const S sigma = std::sqrt((x.array() - mu).square().mean() + eps);
      const auto y = n.val.row(r);
      const auto g = n.grad.row(r);
      const S gm = g.mean();
      const S gym = g.cwiseProduct(y).mean();
      dx.row(r) = (g.array() - gm - y.array() * gym) / sigma;
    }
    detail::accum(a, dx);
  });
}

// Exact erf form: x * Phi(x).
template <typename S>
Var<S> gelu(const Var<S>& a) {
  auto cdf = [](S x) {
    return static_cast<S>(0.5) * (1 + std::erf(x * static_cast<S>(M_SQRT1_2)));
  };
  Mat<S> y = a->val.array() * a->val.array().unaryExpr(cdf);
  return detail::unary<S>(a, std::move(y), [cdf](Node<S>& n) {
    const auto x = n.parents[0]->val.array();
    const S inv_sqrt_2pi = static_cast<S>(0.3989422804014326779);
    const auto pdf = (-x.square() * static_cast<S>(0.5)).exp() * inv_sqrt_2pi;
    detail::accum(n.parents[0], (n.grad.array() * (x.unaryExpr(cdf) + x * pdf)).matrix());
  });
}

// Rows of a at the given indices; duplicates allowed. Backward scatter-adds.
template <typename S>
Var<S> gather_rows(const Var<S>& a, std::vector<Index> idx) {
  Mat<S> y(static_cast<Index>(idx.size()), a->val.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] >= 0 && idx[i] < a->val.rows(), "gather_rows: index out of range");
    y.row(static_cast<Index>(i)) = a->val.row(idx[i]);
  }
  return detail::unary<S>(a, std::move(y), [idx = std::move(idx)](Node<S>& n) {
    const auto& a = n.parents[0];
    if (!a->needs_grad) return;
    if (a->grad.size() == 0) {
      a->grad = Mat<S>::Zero(a->val.rows(), a->val.cols());
      a->track_grad_bytes();
    }
    for (std::size_t i = 0; i < idx.size(); ++i)
      a->grad.row(idx[i]) += n.grad.row(static_cast<Index>(i));
  });
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  check(!parts.empty(), "concat_rows: empty input");
  const Index cols = parts[0]->val.cols();
  Index rows = 0;
  for (const auto& p : parts) {
    check(p->val.cols() == cols, "concat_rows: column mismatch");
    rows += p->val.rows();
  }
  Mat<S> y(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    y.middleRows(at, p->val.rows()) = p->val;
    at += p->val.rows();
  }
  auto n = detail::make_node<S>(std::move(y), true);
  n->parents = parts;
  for (const auto& p : parts) n->needs_grad = n->needs_grad || p->needs_grad;
  if (n->needs_grad)
    n->backfn = [](Node<S>& n) {
      Index at = 0;
      for (auto& p : n.parents) {
        detail::accum(p, n.grad.middleRows(at, p->val.rows()));
        at += p->val.rows();
      }
    };
  return n;
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  check(!parts.empty(), "concat_cols: empty input");
  const Index rows = parts[0]->val.rows();
  Index cols = 0;
  for (const auto& p : parts) {
    check(p->val.rows() == rows, "concat_cols: row mismatch");
    cols += p->val.cols();
  }
  Mat<S> y(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    y.middleCols(at, p->val.cols()) = p->val;
    at += p->val.cols();
  }
  auto n = detail::make_node<S>(std::move(y), true);
  n->parents = parts;
  for (const auto& p : parts) n->needs_grad = n->needs_grad || p->needs_grad;
  if (n->needs_grad)
    n->backfn = [](Node<S>& n) {
      Index at = 0;
      for (auto& p : n.parents) {
        detail::accum(p, n.grad.middleCols(at, p->val.cols()));
        at += p->val.cols();
      }
    };
  return n;
}

template <typename S>
Var<S> slice_rows(const Var<S>& a, Index start, Index count) {
  check(start >= 0 && count >= 1 && start + count <= a->val.rows(),
        "slice_rows: range out of bounds");
  return detail::unary<S>(a, a->val.middleRows(start, count), [start, count](Node<S>& n) {
    const auto& a = n.parents[0];
    if (!a->needs_grad) return;
    if (a->grad.size() == 0) {
      a->grad = Mat<S>::Zero(a->val.rows(), a->val.cols());
      a->track_grad_bytes();
    }
    a->grad.middleRows(start, count) += n.grad;
  });
}

template <typename S>
Var<S> slice_cols(const Var<S>& a, Index start, Index count) {
  check(start >= 0 && count >= 1 && start + count <= a->val.cols(),
        "slice_cols: range out of bounds");
  return detail::unary<S>(a, a->val.middleCols(start, count), [start, count](Node<S>& n) {
    const auto& a = n.parents[0];
    if (!a->needs_grad) return;
    if (a->grad.size() == 0) {
      a->grad = Mat<S>::Zero(a->val.rows(), a->val.cols());
      a->track_grad_bytes();
    }
    a->grad.middleCols(start, count) += n.grad;
  });
}

template <typename S>
Var<S> sum_all(const Var<S>& a) {
  Mat<S> y(1, 1);
  y(0, 0) = a->val.sum();
  return detail::unary<S>(a, std::move(y), [](Node<S>& n) {
    detail::accum(n.parents[0],
                  Mat<S>::Constant(n.parents[0]->val.rows(), n.parents[0]->val.cols(),
                                   n.grad(0, 0)));
  });
}

template <typename S>
Var<S> mean_all(const Var<S>& a) {
  return scale(sum_all(a), static_cast<S>(1) / static_cast<S>(a->val.size()));
}

// Squared Frobenius norm as a 1x1 node.
template <typename S>
Var<S> sum_sq(const Var<S>& a) {
  Mat<S> y(1, 1);
  y(0, 0) = a->val.squaredNorm();
  return detail::unary<S>(a, std::move(y), [](Node<S>& n) {
    detail::accum(n.parents[0], (2 * n.grad(0, 0)) * n.parents[0]->val);
  });
}

// Mean cross-entropy of row-wise categorical logits against integer targets.
// Softmax is recomputed in backward rather than stored.
template <typename S>
Var<S> cross_entropy_mean(const Var<S>& logits, std::vector<Index> targets) {
  check(static_cast<Index>(targets.size()) == logits->val.rows(),
        "cross_entropy_mean: one target per row required");
  check(!targets.empty(), "cross_entropy_mean: empty batch");
  S total = 0;
  for (Index r = 0; r < logits->val.rows(); ++r) {
    const auto row = logits->val.row(r);
    const Index t = targets[static_cast<std::size_t>(r)];
    check(t >= 0 && t < logits->val.cols(), "cross_entropy_mean: target out of range");
    const S mx = row.maxCoeff();
    const S lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(t);
  }
  Mat<S> y(1, 1);
  y(0, 0) = total / static_cast<S>(targets.size());
  return detail::unary<S>(logits, std::move(y), [targets = std::move(targets)](Node<S>& n) {
    const auto& logits = n.parents[0];
    const S g = n.grad(0, 0) / static_cast<S>(targets.size());
    Mat<S> dx(logits->val.rows(), logits->val.cols());
    for (Index r = 0; r < logits->val.rows(); ++r) {
      const auto row = logits->val.row(r);
      const S mx = row.maxCoeff();
      Vec<S> p = (row.array() - mx).exp();
      p /= p.sum();
      dx.row(r) = g * p.transpose();
      dx(r, targets[static_cast<std::size_t>(r)]) -= g;
    }
    detail::accum(logits, dx);
  });
}

// Identity on values of q, identity on gradients toward h: the quantized
// output is used forward while the encoder output receives the gradient
// unchanged. q carries the quantized vectors as plain data.
template <typename S>
Var<S> straight_through(const Var<S>& h, const Mat<S>& q) {
  check(h->val.rows() == q.rows() && h->val.cols() == q.cols(),
        "straight_through: shape mismatch");
  return detail::unary<S>(h, Mat<S>(q),
                          [](Node<S>& n) { detail::accum(n.parents[0], n.grad); });
}

// 3D geometry shared by conv and transposed conv. The map always goes from a
// "big" grid to a "small" grid: conv gathers along it, transposed conv
// scatters along it. Slot order is ((a*kh + b)*kw + c) over the kernel.
struct ConvGeom {
  std::array<Index, 3> big{}, small{}, kernel{}, stride{}, pad{};
  std::vector<Index> map;  // [small_count * slot_count], big spatial index or -1

  Index big_count() const { return big[0] * big[1] * big[2]; }
  Index small_count() const { return small[0] * small[1] * small[2]; }
  Index slot_count() const { return kernel[0] * kernel[1] * kernel[2]; }
};

inline ConvGeom build_conv_geom(std::array<Index, 3> big, std::array<Index, 3> kernel,
                                std::array<Index, 3> stride, std::array<Index, 3> pad) {
  ConvGeom g;
  g.big = big;
  g.kernel = kernel;
  g.stride = stride;
  g.pad = pad;
  for (int i = 0; i < 3; ++i) {
    check(big[i] >= 1 && kernel[i] >= 1 && stride[i] >= 1 && pad[i] >= 0,
          "build_conv_geom: bad geometry");
    const Index span = big[i] + 2 * pad[i] - kernel[i];
    check(span >= 0, "build_conv_geom: kernel larger than padded input");
    g.small[static_cast<std::size_t>(i)] = span / stride[i] + 1;
  }
  const Index K = g.slot_count();
  g.map.assign(static_cast<std::size_t>(g.small_count() * K), -1);
  Index r = 0;
  for (Index ot = 0; ot < g.small[0]; ++ot)
    for (Index oh = 0; oh < g.small[1]; ++oh)
      for (Index ow = 0; ow < g.small[2]; ++ow, ++r)
        for (Index a = 0; a < kernel[0]; ++a)
          for (Index b = 0; b < kernel[1]; ++b)
            for (Index c = 0; c < kernel[2]; ++c) {
              const Index it = ot * stride[0] - pad[0] + a;
              const Index ih = oh * stride[1] - pad[1] + b;
              const Index iw = ow * stride[2] - pad[2] + c;
              if (it < 0 || it >= big[0] || ih < 0 || ih >= big[1] || iw < 0 || iw >= big[2])
                continue;
              const Index slot = (a * kernel[1] + b) * kernel[2] + c;
              g.map[static_cast<std::size_t>(r * K + slot)] = (it * big[1] + ih) * big[2] + iw;
            }
  return g;
}

namespace detail {

// Gathers big-grid features into the [small_count, K*C] patch matrix.
template <typename S>
Mat<S> conv_cols(const ConvGeom& g, const Mat<S>& big) {
  const Index K = g.slot_count(), C = big.cols();
  Mat<S> cols = Mat<S>::Zero(g.small_count(), K * C);
  for (Index r = 0; r < g.small_count(); ++r)
    for (Index k = 0; k < K; ++k) {
      const Index src = g.map[static_cast<std::size_t>(r * K + k)];
      if (src >= 0) cols.block(r, k * C, 1, C) = big.row(src);
    }
  return cols;
}

// Adjoint of conv_cols: scatter-adds patch columns back onto the big grid.
template <typename S>
void conv_cols_adjoint(const ConvGeom& g, const Mat<S>& cols, Mat<S>& big) {
  const Index K = g.slot_count(), C = big.cols();
  for (Index r = 0; r < g.small_count(); ++r)
    for (Index k = 0; k < K; ++k) {
      const Index dst = g.map[static_cast<std::size_t>(r * K + k)];
      if (dst >= 0) big.row(dst) += cols.block(r, k * C, 1, C);
    }
}

}  // namespace detail

// x: [big_count, Cin], w: [K*Cin, Cout], b: [1, Cout] -> [small_count, Cout].
// The patch matrix is recomputed in backward instead of being stored.
template <typename S>
Var<S> conv3d(const Var<S>& x, const Var<S>& w, const Var<S>& b,
              const std::shared_ptr<const ConvGeom>& g) {
  const Index Cin = x->val.cols();
  check(x->val.rows() == g->big_count(), "conv3d: input grid size mismatch");
  check(w->val.rows() == g->slot_count() * Cin, "conv3d: weight rows mismatch");
  check(b->val.rows() == 1 && b->val.cols() == w->val.cols(), "conv3d: bias shape mismatch");
  Mat<S> y = detail::conv_cols<S>(*g, x->val) * w->val;
  y.rowwise() += b->val.row(0);
  auto n = detail::make_node<S>(std::move(y), true);
  n->parents = {x, w, b};
  n->needs_grad = x->needs_grad || w->needs_grad || b->needs_grad;
  if (n->needs_grad)
    n->backfn = [g](Node<S>& n) {
      const auto& x = n.parents[0];
      const auto& w = n.parents[1];
      const auto& b = n.parents[2];
      const Mat<S> cols = detail::conv_cols<S>(*g, x->val);
      detail::accum(w, cols.transpose() * n.grad);
      detail::accum(b, n.grad.colwise().sum());
      if (x->needs_grad) {
        const Mat<S> dcols = n.grad * w->val.transpose();
        if (x->grad.size() == 0) {
          x->grad = Mat<S>::Zero(x->val.rows(), x->val.cols());
          x->track_grad_bytes();
        }
        detail::conv_cols_adjoint<S>(*g, dcols, x->grad);
      }
    };
  return n;
}

// Transposed conv as the exact adjoint of conv3d over the same geometry.
// x: [small_count, Cin], w: [K*Cout, Cin], b: [1, Cout] -> [big_count, Cout].
template <typename S>
Var<S> conv3d_transpose(const Var<S>& x, const Var<S>& w, const Var<S>& b,
                        const std::shared_ptr<const ConvGeom>& g) {
  const Index Cin = x->val.cols();
  check(x->val.rows() == g->small_count(), "conv3d_transpose: input grid size mismatch");
  check(w->val.cols() == Cin, "conv3d_transpose: weight cols mismatch");
  check(w->val.rows() % g->slot_count() == 0, "conv3d_transpose: weight rows mismatch");
  const Index Cout = w->val.rows() / g->slot_count();
  check(b->val.rows() == 1 && b->val.cols() == Cout, "conv3d_transpose: bias shape mismatch");
  Mat<S> y = Mat<S>::Constant(g->big_count(), Cout, S{0});
  {
    const Mat<S> tmp = x->val * w->val.transpose();  // [small, K*Cout]
    detail::conv_cols_adjoint<S>(*g, tmp, y);
    y.rowwise() += b->val.row(0);
  }
  auto n = detail::make_node<S>(std::move(y), true);
  n->parents = {x, w, b};
  n->needs_grad = x->needs_grad || w->needs_grad || b->needs_grad;
  if (n->needs_grad)
    n->backfn = [g](Node<S>& n) {
      const auto& x = n.parents[0];
      const auto& w = n.parents[1];
      const auto& b = n.parents[2];
      const Mat<S> gcols = detail::conv_cols<S>(*g, n.grad);  // [small, K*Cout]
      detail::accum(x, gcols * w->val);
      detail::accum(w, gcols.transpose() * x->val);
      detail::accum(b, n.grad.colwise().sum());
    };
  return n;
}

// Reverse sweep from a scalar root. Gradients accumulate; callers zero them
// between steps via the optimizer.
template <typename S>
void backward(const Var<S>& root) {
  check(root->val.size() == 1, "backward: root must be a 1x1 scalar");
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<Node<S>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node<S>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p->needs_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Node<S>* a, const Node<S>* b) { return a->id > b->id; });
  if (root->grad.size() == 0) {
    root->grad = Mat<S>::Ones(1, 1);
    root->track_grad_bytes();
  } else {
    root->grad.setOnes();
  }
  for (Node<S>* n : order)
    if (n->backfn && n->grad.size() != 0) n->backfn(*n);
}

}  // namespace mebt::ag
