#pragma once

// Differentiable tensor operations. Every op validates shapes, computes its
// forward value eagerly and, when an input is tracked, records a backward rule
// on the current Graph. Reductions and matrix products accumulate in double.

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lemamba/tensor.hpp"

namespace lemamba {

using Index = std::shared_ptr<const std::vector<std::int64_t>>;

namespace detail {

inline std::size_t product(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t n = 1;
  for (std::size_t i = from; i < to && i < s.size(); ++i) n *= static_cast<std::size_t>(s[i]);
  return n;
}

inline std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank, std::string_view op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw ShapeError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  return axis;
}

// Scalar operand or trailing-suffix operand broadcasts into `big`.
inline bool broadcasts_into(const Shape& small, const Shape& big) {
  if (numel_of(small) == 1) return true;
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline Shape binary_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() == b.shape()) return a.shape();
  if (broadcasts_into(b.shape(), a.shape())) return a.shape();
  if (broadcasts_into(a.shape(), b.shape())) return b.shape();
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

// Adds per-output-element gradient contributions into an operand that was
// broadcast (index i maps to i % n).
inline void accumulate_broadcast(std::span<float> dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += static_cast<float>(src[i]);
}

template <class Fa, class Fb>
void binary_backward(const ImplPtr& a, const ImplPtr& b, const ImplPtr& out, Fa dfa, Fb dfb) {
  const auto& g = out->grad;
  const std::size_t n = g.size();
  const std::size_t na = a->data.size(), nb = b->data.size();
  if (auto ga = sink(a); !ga.empty()) {
    if (na == n) {
      for (std::size_t i = 0; i < n; ++i) ga[i] += static_cast<float>(g[i] * dfa(i % na, i % nb));
    } else {
      std::vector<double> acc(na, 0.0);
      for (std::size_t i = 0; i < n; ++i) acc[i % na] += g[i] * dfa(i % na, i % nb);
      accumulate_broadcast(ga, acc);
    }
  }
  if (auto gb = sink(b); !gb.empty()) {
    if (nb == n) {
      for (std::size_t i = 0; i < n; ++i) gb[i] += static_cast<float>(g[i] * dfb(i % na, i % nb));
    } else {
      std::vector<double> acc(nb, 0.0);
      for (std::size_t i = 0; i < n; ++i) acc[i % nb] += g[i] * dfb(i % na, i % nb);
      accumulate_broadcast(gb, acc);
    }
  }
}

template <class F, class D>
Tensor unary(std::string_view op, const Tensor& x, F f, D dfdx) {
  const auto xs = x.data();
  std::vector<float> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = static_cast<float>(f(xs[i]));
  count_flops(static_cast<std::int64_t>(xs.size()));
  Tensor y(x.shape(), std::move(out));
  auto xi = x.impl();
  auto yi = y.impl();
  record(op, {&x}, {&y}, [xi, yi, dfdx] {
    auto gx = sink(xi);
    if (gx.empty()) return;
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] += static_cast<float>(yi->grad[i] * dfdx(xi->data[i], yi->data[i]));
  });
  return y;
}

// C[M,N] (+)= op(A) * op(B) with double accumulation. With ta, A is stored
// K x M; with tb, B is stored N x K.
inline void gemm(const float* A, const float* B, float* C, std::size_t M, std::size_t N,
                 std::size_t K, bool ta, bool tb, bool accumulate) {
  count_flops(static_cast<std::int64_t>(M * N * K));
  // Row-update form throughout so the inner loop vectorizes; a transposed B
  // is copied into K x N layout first.
  std::vector<float> bt;
  if (tb) {
    bt.resize(K * N);
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t k = 0; k < K; ++k) bt[k * N + j] = B[j * K + k];
    B = bt.data();
  }
  std::vector<double> acc(N);
  for (std::size_t i = 0; i < M; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      const double a = ta ? A[k * M + i] : A[i * K + k];
      const float* brow = B + k * N;
      for (std::size_t j = 0; j < N; ++j) acc[j] += a * brow[j];
    }
    float* crow = C + i * N;
    if (accumulate)
      for (std::size_t j = 0; j < N; ++j) crow[j] += static_cast<float>(acc[j]);
    else
      for (std::size_t j = 0; j < N; ++j) crow[j] = static_cast<float>(acc[j]);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (same shape, scalar or trailing-suffix broadcast).

inline Tensor add(const Tensor& a, const Tensor& b) {
  const Shape shape = detail::binary_shape(a, b, "add");
  const auto n = numel_of(shape);
  const auto as = a.data(), bs = b.data();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = as[i % as.size()] + bs[i % bs.size()];
  detail::count_flops(static_cast<std::int64_t>(n));
  Tensor y(shape, std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  detail::record("add", {&a, &b}, {&y}, [ai, bi, yi] {
    detail::binary_backward(ai, bi, yi, [](auto, auto) { return 1.0; }, [](auto, auto) { return 1.0; });
  });
  return y;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  const Shape shape = detail::binary_shape(a, b, "sub");
  const auto n = numel_of(shape);
  const auto as = a.data(), bs = b.data();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = as[i % as.size()] - bs[i % bs.size()];
  detail::count_flops(static_cast<std::int64_t>(n));
  Tensor y(shape, std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  detail::record("sub", {&a, &b}, {&y}, [ai, bi, yi] {
    detail::binary_backward(ai, bi, yi, [](auto, auto) { return 1.0; }, [](auto, auto) { return -1.0; });
  });
  return y;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  const Shape shape = detail::binary_shape(a, b, "mul");
  const auto n = numel_of(shape);
  const auto as = a.data(), bs = b.data();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = as[i % as.size()] * bs[i % bs.size()];
  detail::count_flops(static_cast<std::int64_t>(n));
  Tensor y(shape, std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  detail::record("mul", {&a, &b}, {&y}, [ai, bi, yi] {
    const auto& ad = ai->data;
    const auto& bd = bi->data;
    detail::binary_backward(
        ai, bi, yi, [&](std::size_t, std::size_t j) { return static_cast<double>(bd[j]); },
        [&](std::size_t i, std::size_t) { return static_cast<double>(ad[i]); });
  });
  return y;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  const Shape shape = detail::binary_shape(a, b, "div");
  const auto n = numel_of(shape);
  const auto as = a.data(), bs = b.data();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = as[i % as.size()] / bs[i % bs.size()];
  detail::count_flops(static_cast<std::int64_t>(n));
  Tensor y(shape, std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  detail::record("div", {&a, &b}, {&y}, [ai, bi, yi] {
    const auto& ad = ai->data;
    const auto& bd = bi->data;
    detail::binary_backward(
        ai, bi, yi, [&](std::size_t, std::size_t j) { return 1.0 / bd[j]; },
        [&](std::size_t i, std::size_t j) {
          const double bv = bd[j];
          return -static_cast<double>(ad[i]) / (bv * bv);
        });
  });
  return y;
}

inline Tensor scale(const Tensor& x, float c) {
  return detail::unary(
      "scale", x, [c](float v) { return static_cast<double>(v) * c; },
      [c](float, float) { return static_cast<double>(c); });
}

inline Tensor add_scalar(const Tensor& x, float c) {
  return detail::unary(
      "add_scalar", x, [c](float v) { return static_cast<double>(v) + c; },
      [](float, float) { return 1.0; });
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0f); }

// ---------------------------------------------------------------------------
// Pointwise nonlinearities.

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      "exp", x, [](float v) { return std::exp(static_cast<double>(v)); },
      [](float, float y) { return static_cast<double>(y); });
}

inline Tensor log(const Tensor& x) {
  return detail::unary(
      "log", x, [](float v) { return std::log(static_cast<double>(v)); },
      [](float v, float) { return 1.0 / v; });
}

inline double softplus_value(double v) { return v > 20.0 ? v : std::log1p(std::exp(v)); }
inline double sigmoid_value(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor softplus(const Tensor& x) {
  return detail::unary(
      "softplus", x, [](float v) { return softplus_value(v); },
      [](float v, float) { return sigmoid_value(v); });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      "sigmoid", x, [](float v) { return sigmoid_value(v); },
      [](float, float y) { return static_cast<double>(y) * (1.0 - y); });
}

inline Tensor silu(const Tensor& x) {
  return detail::unary(
      "silu", x, [](float v) { return v * sigmoid_value(v); },
      [](float v, float) {
        const double s = sigmoid_value(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

/// Exact (erf) GELU.
inline Tensor gelu(const Tensor& x) {
  return detail::unary(
      "gelu", x,
      [](float v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](float v, float) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * static_cast<double>(v) * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

/// |x| with the subgradient at 0 fixed to 0.
inline Tensor abs(const Tensor& x) {
  return detail::unary(
      "abs", x, [](float v) { return std::fabs(static_cast<double>(v)); },
      [](float v, float) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(
      "square", x, [](float v) { return static_cast<double>(v) * v; },
      [](float v, float) { return 2.0 * v; });
}

// ---------------------------------------------------------------------------
// Reductions.

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  detail::count_flops(static_cast<std::int64_t>(x.numel()));
  Tensor y = Tensor::scalar(static_cast<float>(acc));
  auto xi = x.impl(), yi = y.impl();
  detail::record("sum", {&x}, {&y}, [xi, yi] {
    auto gx = detail::sink(xi);
    const float g = yi->grad[0];
    for (auto& v : gx) v += g;
  });
  return y;
}

inline Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  detail::count_flops(static_cast<std::int64_t>(x.numel()));
  Tensor y = Tensor::scalar(static_cast<float>(acc / n));
  auto xi = x.impl(), yi = y.impl();
  detail::record("mean", {&x}, {&y}, [xi, yi, n] {
    auto gx = detail::sink(xi);
    const float g = static_cast<float>(yi->grad[0] / n);
    for (auto& v : gx) v += g;
  });
  return y;
}

/// Sums over one axis, removing it (a rank-1 input yields shape [1]).
inline Tensor sum_axis(const Tensor& x, std::int64_t axis) {
  axis = detail::normalize_axis(axis, x.rank(), "sum_axis");
  const auto& s = x.shape();
  const std::size_t outer = detail::product(s, 0, axis), mid = s[axis],
                    inner = detail::product(s, axis + 1, s.size());
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (static_cast<std::int64_t>(i) != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<float> out(outer * inner);
  const auto xs = x.data();
  std::vector<double> acc(inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t m = 0; m < mid; ++m) {
      const float* row = xs.data() + (o * mid + m) * inner;
      for (std::size_t i = 0; i < inner; ++i) acc[i] += row[i];
    }
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = static_cast<float>(acc[i]);
  }
  detail::count_flops(static_cast<std::int64_t>(x.numel()));
  Tensor y(out_shape, std::move(out));
  auto xi = x.impl(), yi = y.impl();
  detail::record("sum_axis", {&x}, {&y}, [xi, yi, outer, mid, inner] {
    auto gx = detail::sink(xi);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t m = 0; m < mid; ++m)
        for (std::size_t i = 0; i < inner; ++i) gx[(o * mid + m) * inner + i] += yi->grad[o * inner + i];
  });
  return y;
}

// ---------------------------------------------------------------------------
// Matrix products.

/// Batched matrix product over matching leading dims:
/// [..., M, K] x [..., K, N] -> [..., M, N], with optional operand transposes.
inline Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false) {
  if (a.rank() < 2 || a.rank() != b.rank())
    throw ShapeError("bmm: ranks " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const auto r = as.size();
  for (std::size_t i = 0; i + 2 < r; ++i)
    if (as[i] != bs[i]) throw ShapeError("bmm: batch dims differ " + shape_str(as) + " vs " + shape_str(bs));
  const std::size_t M = trans_a ? as[r - 1] : as[r - 2];
  const std::size_t K = trans_a ? as[r - 2] : as[r - 1];
  const std::size_t Kb = trans_b ? bs[r - 1] : bs[r - 2];
  const std::size_t N = trans_b ? bs[r - 2] : bs[r - 1];
  if (K != Kb) throw ShapeError("bmm: inner dims differ " + shape_str(as) + " vs " + shape_str(bs));
  const std::size_t batch = detail::product(as, 0, r - 2);
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(static_cast<std::int64_t>(M));
  out_shape.push_back(static_cast<std::int64_t>(N));
  std::vector<float> out(batch * M * N);
  const auto ad = a.data(), bd = b.data();
  for (std::size_t p = 0; p < batch; ++p)
    detail::gemm(ad.data() + p * M * K, bd.data() + p * K * N, out.data() + p * M * N, M, N, K, trans_a,
                 trans_b, false);
  Tensor y(out_shape, std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  detail::record("bmm", {&a, &b}, {&y}, [ai, bi, yi, batch, M, N, K, trans_a, trans_b] {
    const float* g = yi->grad.data();
    if (auto ga = detail::sink(ai); !ga.empty()) {
      for (std::size_t p = 0; p < batch; ++p) {
        const float* bp = bi->data.data() + p * K * N;
        const float* gp = g + p * M * N;
        float* dst = ga.data() + p * M * K;
        if (!trans_a)  // dA[M,K] = G[M,N] * op(B)^T
          detail::gemm(gp, bp, dst, M, K, N, false, !trans_b, true);
        else  // dA stored K x M = op(B) * G^T
          detail::gemm(bp, gp, dst, K, M, N, trans_b, true, true);
      }
    }
    if (auto gb = detail::sink(bi); !gb.empty()) {
      for (std::size_t p = 0; p < batch; ++p) {
        const float* ap = ai->data.data() + p * M * K;
        const float* gp = g + p * M * N;
        float* dst = gb.data() + p * K * N;
        if (!trans_b)  // dB[K,N] = op(A)^T * G
          detail::gemm(ap, gp, dst, K, N, M, !trans_a, false, true);
        else  // dB stored N x K = G^T * op(A)
          detail::gemm(gp, ap, dst, N, K, M, true, trans_a, true);
      }
    }
  });
  return y;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expects 2-D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  return bmm(a, b);
}

namespace detail {

// y[b,g,o,l] = sum_i W[g,o,i] x[b,g,i,l] + bias[g,o]
inline Tensor channel_linear_core(std::string_view op, const Tensor& x, const Tensor& w, const Tensor* bias,
                                  std::size_t batch, std::size_t groups, std::size_t din, std::size_t dout,
                                  std::size_t len, Shape out_shape) {
  std::vector<float> out(batch * groups * dout * len);
  const auto xd = x.data(), wd = w.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t g = 0; g < groups; ++g) {
      float* dst = out.data() + (b * groups + g) * dout * len;
      gemm(wd.data() + g * dout * din, xd.data() + (b * groups + g) * din * len, dst, dout, len, din, false,
           false, false);
      if (bias) {
        const auto bd = bias->data();
        for (std::size_t o = 0; o < dout; ++o)
          for (std::size_t l = 0; l < len; ++l) dst[o * len + l] += bd[g * dout + o];
      }
    }
  Tensor y(std::move(out_shape), std::move(out));
  auto xi = x.impl(), wi = w.impl(), yi = y.impl();
  ImplPtr bi = bias ? bias->impl() : nullptr;
  record(op, {&x, &w, bias}, {&y}, [xi, wi, bi, yi, batch, groups, din, dout, len] {
    const float* gy = yi->grad.data();
    auto gx = sink(xi);
    auto gw = sink(wi);
    auto gb = sink(bi);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t g = 0; g < groups; ++g) {
        const float* gyp = gy + (b * groups + g) * dout * len;
        if (!gx.empty())
          gemm(wi->data.data() + g * dout * din, gyp, gx.data() + (b * groups + g) * din * len, din, len, dout,
               true, false, true);
        if (!gw.empty())
          gemm(gyp, xi->data.data() + (b * groups + g) * din * len, gw.data() + g * dout * din, dout, din, len,
               false, true, true);
        if (!gb.empty())
          for (std::size_t o = 0; o < dout; ++o) {
            double acc = 0.0;
            for (std::size_t l = 0; l < len; ++l) acc += gyp[o * len + l];
            gb[g * dout + o] += static_cast<float>(acc);
          }
      }
  });
  return y;
}

}  // namespace detail

/// Grouped linear map along axis 2: x [B, G, Din, ...] with W [G, Dout, Din]
/// and optional bias [G, Dout] gives [B, G, Dout, ...]. Group g only sees its
/// own weight slice.
inline Tensor grouped_linear(const Tensor& x, const Tensor& w, const Tensor& bias = {}) {
  if (x.rank() < 3 || w.rank() != 3 || w.dim(0) != x.dim(1) || w.dim(2) != x.dim(2))
    throw ShapeError("grouped_linear: x " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  if (bias.defined() && bias.shape() != Shape{w.dim(0), w.dim(1)})
    throw ShapeError("grouped_linear: bias " + shape_str(bias.shape()));
  Shape out_shape = x.shape();
  out_shape[2] = w.dim(1);
  return detail::channel_linear_core("grouped_linear", x, w, bias.defined() ? &bias : nullptr, x.dim(0), x.dim(1),
                                     x.dim(2), w.dim(1), detail::product(x.shape(), 3, x.shape().size()),
                                     std::move(out_shape));
}

/// Linear map along the channel axis 1: x [B, Din, ...], W [Dout, Din].
inline Tensor channel_linear(const Tensor& x, const Tensor& w, const Tensor& bias = {}) {
  if (x.rank() < 2 || w.rank() != 2 || w.dim(1) != x.dim(1))
    throw ShapeError("channel_linear: x " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  if (bias.defined() && bias.shape() != Shape{w.dim(0)})
    throw ShapeError("channel_linear: bias " + shape_str(bias.shape()));
  Shape out_shape = x.shape();
  out_shape[1] = w.dim(0);
  return detail::channel_linear_core("channel_linear", x, w, bias.defined() ? &bias : nullptr, x.dim(0), 1,
                                     x.dim(1), w.dim(0), detail::product(x.shape(), 2, x.shape().size()),
                                     std::move(out_shape));
}

/// Linear map on the last axis: x [..., Din], W [Dout, Din], bias [Dout].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {}) {
  if (w.rank() != 2 || x.dim(-1) != w.dim(1))
    throw ShapeError("linear: x " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  if (bias.defined() && bias.shape() != Shape{w.dim(0)}) throw ShapeError("linear: bias " + shape_str(bias.shape()));
  const std::size_t din = w.dim(1), dout = w.dim(0), rows = x.numel() / din;
  std::vector<float> out(rows * dout);
  detail::gemm(x.data().data(), w.data().data(), out.data(), rows, dout, din, false, true, false);
  if (bias.defined())
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < dout; ++o) out[r * dout + o] += bias[o];
  Shape out_shape = x.shape();
  out_shape.back() = static_cast<std::int64_t>(dout);
  Tensor y(out_shape, std::move(out));
  auto xi = x.impl(), wi = w.impl(), yi = y.impl();
  detail::ImplPtr bi = bias.defined() ? bias.impl() : nullptr;
  detail::record("linear", {&x, &w, &bias}, {&y}, [xi, wi, bi, yi, rows, din, dout] {
    const float* g = yi->grad.data();
    if (auto gx = detail::sink(xi); !gx.empty())
      detail::gemm(g, wi->data.data(), gx.data(), rows, din, dout, false, false, true);
    if (auto gw = detail::sink(wi); !gw.empty())
      detail::gemm(g, xi->data.data(), gw.data(), dout, din, rows, true, false, true);
    if (auto gb = detail::sink(bi); !gb.empty()) {
      std::vector<double> acc(dout, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < dout; ++o) acc[o] += g[r * dout + o];
      detail::accumulate_broadcast(gb, acc);
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Block broadcasts: v covers x.shape[axis, axis + rank(v)).

namespace detail {
inline void block_extent(const Tensor& x, const Tensor& v, std::int64_t axis, std::string_view op,
                         std::size_t& outer, std::size_t& mid, std::size_t& inner) {
  axis = normalize_axis(axis, x.rank(), op);
  const auto& xs = x.shape();
  const auto& vs = v.shape();
  if (axis + v.rank() > x.rank() || !std::equal(vs.begin(), vs.end(), xs.begin() + axis))
    throw ShapeError(std::string(op) + ": " + shape_str(vs) + " does not match " + shape_str(xs) + " at axis " +
                     std::to_string(axis));
  outer = product(xs, 0, axis);
  mid = v.numel();
  inner = product(xs, axis + v.rank(), xs.size());
}
}  // namespace detail

inline Tensor broadcast_add(const Tensor& x, const Tensor& v, std::int64_t axis) {
  std::size_t outer, mid, inner;
  detail::block_extent(x, v, axis, "broadcast_add", outer, mid, inner);
  std::vector<float> out(x.numel());
  const auto xd = x.data(), vd = v.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t m = 0; m < mid; ++m)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = (o * mid + m) * inner + i;
        out[k] = xd[k] + vd[m];
      }
  detail::count_flops(static_cast<std::int64_t>(x.numel()));
  Tensor y(x.shape(), std::move(out));
  auto xi = x.impl(), vi = v.impl(), yi = y.impl();
  detail::record("broadcast_add", {&x, &v}, {&y}, [xi, vi, yi, outer, mid, inner] {
    const auto& g = yi->grad;
    if (auto gx = detail::sink(xi); !gx.empty())
      for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k];
    if (auto gv = detail::sink(vi); !gv.empty()) {
      std::vector<double> acc(mid, 0.0);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t m = 0; m < mid; ++m)
          for (std::size_t i = 0; i < inner; ++i) acc[m] += g[(o * mid + m) * inner + i];
      detail::accumulate_broadcast(gv, acc);
    }
  });
  return y;
}

inline Tensor broadcast_mul(const Tensor& x, const Tensor& v, std::int64_t axis) {
  std::size_t outer, mid, inner;
  detail::block_extent(x, v, axis, "broadcast_mul", outer, mid, inner);
  std::vector<float> out(x.numel());
  const auto xd = x.data(), vd = v.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t m = 0; m < mid; ++m)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = (o * mid + m) * inner + i;
        out[k] = xd[k] * vd[m];
      }
  detail::count_flops(static_cast<std::int64_t>(x.numel()));
  Tensor y(x.shape(), std::move(out));
  auto xi = x.impl(), vi = v.impl(), yi = y.impl();
  detail::record("broadcast_mul", {&x, &v}, {&y}, [xi, vi, yi, outer, mid, inner] {
    const auto& g = yi->grad;
    if (auto gx = detail::sink(xi); !gx.empty())
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t m = 0; m < mid; ++m)
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t k = (o * mid + m) * inner + i;
            gx[k] += g[k] * vi->data[m];
          }
    if (auto gv = detail::sink(vi); !gv.empty()) {
      std::vector<double> acc(mid, 0.0);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t m = 0; m < mid; ++m)
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t k = (o * mid + m) * inner + i;
            acc[m] += static_cast<double>(g[k]) * xi->data[k];
          }
      detail::accumulate_broadcast(gv, acc);
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Index-driven data movement.

/// out[i] = index[i] >= 0 ? x[index[i]] : 0. Backward scatters (adds) back.
inline Tensor gather(const Tensor& x, const Index& index, Shape out_shape) {
  if (index->size() != numel_of(out_shape))
    throw ShapeError("gather: index size " + std::to_string(index->size()) + " vs output " + shape_str(out_shape));
  const auto xd = x.data();
  const auto n = static_cast<std::int64_t>(xd.size());
  std::vector<float> out(index->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto j = (*index)[i];
    if (j >= n) throw ShapeError("gather: index out of range");
    out[i] = j >= 0 ? xd[j] : 0.0f;
  }
  Tensor y(std::move(out_shape), std::move(out));
  auto xi = x.impl(), yi = y.impl();
  detail::record("gather", {&x}, {&y}, [xi, yi, index] {
    auto gx = detail::sink(xi);
    if (gx.empty()) return;
    std::vector<double> acc(gx.size(), 0.0);
    for (std::size_t i = 0; i < index->size(); ++i)
      if ((*index)[i] >= 0) acc[(*index)[i]] += yi->grad[i];
    detail::accumulate_broadcast(gx, acc);
  });
  return y;
}

/// out[index[i]] += x[i] (entries with index < 0 are dropped). Sums are
/// formed in double and rounded once.
inline Tensor scatter_add(const Tensor& x, const Index& index, Shape out_shape) {
  if (index->size() != x.numel())
    throw ShapeError("scatter_add: index size " + std::to_string(index->size()) + " vs input " +
                     shape_str(x.shape()));
  const auto n = numel_of(out_shape);
  std::vector<double> acc(n, 0.0);
  const auto xd = x.data();
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const auto j = (*index)[i];
    if (j >= static_cast<std::int64_t>(n)) throw ShapeError("scatter_add: index out of range");
    if (j >= 0) acc[j] += xd[i];
  }
  detail::count_flops(static_cast<std::int64_t>(xd.size()));
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(acc[i]);
  Tensor y(std::move(out_shape), std::move(out));
  auto xi = x.impl(), yi = y.impl();
  detail::record("scatter_add", {&x}, {&y}, [xi, yi, index] {
    auto gx = detail::sink(xi);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if ((*index)[i] >= 0) gx[i] += yi->grad[(*index)[i]];
  });
  return y;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor y(std::move(shape), std::vector<float>(x.data().begin(), x.data().end()));
  auto xi = x.impl(), yi = y.impl();
  detail::record("reshape", {&x}, {&y}, [xi, yi] {
    auto gx = detail::sink(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yi->grad[i];
  });
  return y;
}

/// Swaps two axes.
inline Tensor transpose(const Tensor& x, std::int64_t d0, std::int64_t d1) {
  d0 = detail::normalize_axis(d0, x.rank(), "transpose");
  d1 = detail::normalize_axis(d1, x.rank(), "transpose");
  const Shape& in = x.shape();
  Shape out = in;
  std::swap(out[d0], out[d1]);
  const std::size_t r = in.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i > 0; --i) in_stride[i - 1] = in_stride[i] * in[i];
  auto perm_stride = in_stride;
  std::swap(perm_stride[d0], perm_stride[d1]);
  auto index = std::make_shared<std::vector<std::int64_t>>(x.numel());
  std::vector<std::int64_t> coord(r, 0);
  for (std::size_t i = 0; i < index->size(); ++i) {
    std::int64_t src = 0;
    for (std::size_t k = 0; k < r; ++k) src += coord[k] * perm_stride[k];
    (*index)[i] = src;
    for (std::size_t k = r; k-- > 0;) {
      if (++coord[k] < out[k]) break;
      coord[k] = 0;
    }
  }
  return gather(x, index, out);
}

inline Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  axis = detail::normalize_axis(axis, parts[0].rank(), "concat");
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) throw ShapeError("concat: rank mismatch");
    for (std::int64_t d = 0; d < p.rank(); ++d)
      if (d != axis && p.dim(d) != parts[0].dim(d))
        throw ShapeError("concat: " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    out_shape[axis] += p.dim(axis);
  }
  const std::size_t outer = detail::product(out_shape, 0, axis);
  const std::size_t inner = detail::product(out_shape, axis + 1, out_shape.size());
  const std::size_t total = out_shape[axis];
  std::vector<float> out(numel_of(out_shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis);
    const auto pd = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pd.begin() + o * w * inner, w * inner, out.begin() + (o * total + offset) * inner);
    offsets.push_back(offset);
    offset += w;
  }
  Tensor y(out_shape, std::move(out));
  auto yi = y.impl();
  std::vector<detail::ImplPtr> impls;
  bool tracked = false;
  for (const auto& p : parts) {
    impls.push_back(p.impl());
    tracked = tracked || p.requires_grad();
  }
  if (tracked && grad_enabled()) {
    const Tensor* first = nullptr;
    for (const auto& p : parts)
      if (p.requires_grad()) first = &p;
    detail::record("concat", {first}, {&y}, [impls, offsets, yi, outer, inner, total, axis] {
      for (std::size_t k = 0; k < impls.size(); ++k) {
        auto gp = detail::sink(impls[k]);
        if (gp.empty()) continue;
        const std::size_t w = impls[k]->shape[axis];
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < w * inner; ++i)
            gp[o * w * inner + i] += yi->grad[(o * total + offsets[k]) * inner + i];
      }
    });
  }
  return y;
}

/// x[..., start:end, ...] along one axis.
inline Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t end) {
  axis = detail::normalize_axis(axis, x.rank(), "slice");
  if (start < 0 || end > x.dim(axis) || start >= end)
    throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(end) + ") outside " +
                     shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = end - start;
  const std::size_t outer = detail::product(x.shape(), 0, axis);
  const std::size_t inner = detail::product(x.shape(), axis + 1, x.shape().size());
  const std::size_t total = x.dim(axis), w = end - start;
  std::vector<float> out(numel_of(out_shape));
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xd.begin() + (o * total + start) * inner, w * inner, out.begin() + o * w * inner);
  Tensor y(out_shape, std::move(out));
  auto xi = x.impl(), yi = y.impl();
  detail::record("slice", {&x}, {&y}, [xi, yi, outer, inner, total, w, start] {
    auto gx = detail::sink(xi);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < w * inner; ++i) gx[(o * total + start) * inner + i] += yi->grad[o * w * inner + i];
  });
  return y;
}

// ---------------------------------------------------------------------------
// Normalization and activation helpers.

/// Layer norm over `axis` with affine gamma/beta of length x.dim(axis).
inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::int64_t axis = -1,
                        float eps = 1e-5f) {
  axis = detail::normalize_axis(axis, x.rank(), "layernorm");
  const std::size_t C = x.dim(axis);
  if (gamma.shape() != Shape{x.dim(axis)} || beta.shape() != Shape{x.dim(axis)})
    throw ShapeError("layernorm: affine params must be [" + std::to_string(C) + "]");
  const std::size_t outer = detail::product(x.shape(), 0, axis);
  const std::size_t inner = detail::product(x.shape(), axis + 1, x.shape().size());
  const auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  std::vector<float> out(x.numel());
  auto xhat = std::make_shared<std::vector<float>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(outer * inner);
  std::vector<double> mu(inner), var(inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::fill(mu.begin(), mu.end(), 0.0);
    std::fill(var.begin(), var.end(), 0.0);
    const float* base = xd.data() + o * C * inner;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < inner; ++i) mu[i] += base[c * inner + i];
    for (std::size_t i = 0; i < inner; ++i) mu[i] /= static_cast<double>(C);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < inner; ++i) {
        const double d = base[c * inner + i] - mu[i];
        var[i] += d * d;
      }
    for (std::size_t i = 0; i < inner; ++i)
      (*inv_std)[o * inner + i] = 1.0 / std::sqrt(var[i] / static_cast<double>(C) + eps);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = (o * C + c) * inner + i;
        const double xh = (base[c * inner + i] - mu[i]) * (*inv_std)[o * inner + i];
        (*xhat)[k] = static_cast<float>(xh);
        out[k] = static_cast<float>(xh * gd[c] + bd[c]);
      }
  }
  detail::count_flops(static_cast<std::int64_t>(5 * x.numel()));
  Tensor y(x.shape(), std::move(out));
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), yi = y.impl();
  detail::record("layernorm", {&x, &gamma, &beta}, {&y}, [xi, gi, bi, yi, xhat, inv_std, outer, C, inner] {
    const auto& g = yi->grad;
    auto gx = detail::sink(xi);
    auto gg = detail::sink(gi);
    auto gb = detail::sink(bi);
    std::vector<double> acc_g(C, 0.0), acc_b(C, 0.0);
    std::vector<double> m1(inner), m2(inner);
    for (std::size_t o = 0; o < outer; ++o) {
      std::fill(m1.begin(), m1.end(), 0.0);
      std::fill(m2.begin(), m2.end(), 0.0);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t k = (o * C + c) * inner + i;
          const double dxh = static_cast<double>(g[k]) * gi->data[c];
          m1[i] += dxh;
          m2[i] += dxh * (*xhat)[k];
          acc_g[c] += static_cast<double>(g[k]) * (*xhat)[k];
          acc_b[c] += g[k];
        }
      if (gx.empty()) continue;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t k = (o * C + c) * inner + i;
          const double dxh = static_cast<double>(g[k]) * gi->data[c];
          const double v = (*inv_std)[o * inner + i] *
                           (dxh - m1[i] / static_cast<double>(C) - (*xhat)[k] * m2[i] / static_cast<double>(C));
          gx[k] += static_cast<float>(v);
        }
    }
    if (!gg.empty()) detail::accumulate_broadcast(gg, acc_g);
    if (!gb.empty()) detail::accumulate_broadcast(gb, acc_b);
  });
  return y;
}

/// Softmax over the last axis.
inline Tensor softmax(const Tensor& x) {
  const std::size_t n = x.dim(-1), rows = x.numel() / n;
  const auto xd = x.data();
  std::vector<float> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = xd.data() + r * n;
    const float mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / z);
  }
  detail::count_flops(static_cast<std::int64_t>(3 * x.numel()));
  Tensor y(x.shape(), std::move(out));
  auto xi = x.impl(), yi = y.impl();
  detail::record("softmax", {&x}, {&y}, [xi, yi, rows, n] {
    auto gx = detail::sink(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* yr = yi->data.data() + r * n;
      const float* gr = yi->grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(gr[j]) * yr[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += static_cast<float>(yr[j] * (gr[j] - dot));
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Convolutions (NCHW, stride 1, symmetric zero padding).

/// Per-channel 2-D convolution (cross-correlation): x [B, C, H, W], w [C, kh, kw].
inline Tensor conv2d_depthwise(const Tensor& x, const Tensor& w, std::int64_t pad = 0) {
  if (x.rank() != 4 || w.rank() != 3 || w.dim(0) != x.dim(1))
    throw ShapeError("conv2d_depthwise: x " + shape_str(x.shape()) + " vs kernel " + shape_str(w.shape()));
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), kh = w.dim(1), kw = w.dim(2);
  const std::int64_t Ho = H + 2 * pad - kh + 1, Wo = W + 2 * pad - kw + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d_depthwise: kernel larger than padded input");
  std::vector<float> out(B * C * Ho * Wo);
  const auto xd = x.data(), wd = w.data();
  for (std::int64_t p = 0; p < B * C; ++p) {
    const std::int64_t c = p % C;
    const float* xp = xd.data() + p * H * W;
    const float* wp = wd.data() + c * kh * kw;
    for (std::int64_t i = 0; i < Ho; ++i)
      for (std::int64_t j = 0; j < Wo; ++j) {
        double acc = 0.0;
        for (std::int64_t u = 0; u < kh; ++u) {
          const std::int64_t yy = i + u - pad;
          if (yy < 0 || yy >= H) continue;
          for (std::int64_t v = 0; v < kw; ++v) {
            const std::int64_t xx = j + v - pad;
            if (xx < 0 || xx >= W) continue;
            acc += static_cast<double>(wp[u * kw + v]) * xp[yy * W + xx];
          }
        }
        out[(p * Ho + i) * Wo + j] = static_cast<float>(acc);
      }
  }
  detail::count_flops(B * C * Ho * Wo * kh * kw);
  Tensor y(Shape{B, C, Ho, Wo}, std::move(out));
  auto xi = x.impl(), wi = w.impl(), yi = y.impl();
  detail::record("conv2d_depthwise", {&x, &w}, {&y}, [=] {
    auto gx = detail::sink(xi);
    auto gw = detail::sink(wi);
    std::vector<double> accw(gw.size(), 0.0);
    for (std::int64_t p = 0; p < B * C; ++p) {
      const std::int64_t c = p % C;
      const float* xp = xi->data.data() + p * H * W;
      const float* wp = wi->data.data() + c * kh * kw;
      for (std::int64_t i = 0; i < Ho; ++i)
        for (std::int64_t j = 0; j < Wo; ++j) {
          const double g = yi->grad[(p * Ho + i) * Wo + j];
          for (std::int64_t u = 0; u < kh; ++u) {
            const std::int64_t yy = i + u - pad;
            if (yy < 0 || yy >= H) continue;
            for (std::int64_t v = 0; v < kw; ++v) {
              const std::int64_t xx = j + v - pad;
              if (xx < 0 || xx >= W) continue;
              if (!gx.empty()) gx[p * H * W + yy * W + xx] += static_cast<float>(g * wp[u * kw + v]);
              if (!gw.empty()) accw[c * kh * kw + u * kw + v] += g * xp[yy * W + xx];
            }
          }
        }
    }
    if (!gw.empty()) detail::accumulate_broadcast(gw, accw);
  });
  return y;
}

/// Dense 2-D convolution: x [B, Cin, H, W], w [Cout, Cin, k, k].
inline Tensor conv2d(const Tensor& x, const Tensor& w, std::int64_t pad = 0) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1))
    throw ShapeError("conv2d: x " + shape_str(x.shape()) + " vs kernel " + shape_str(w.shape()));
  const std::int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::int64_t Ho = H + 2 * pad - kh + 1, Wo = W + 2 * pad - kw + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");
  std::vector<float> out(B * Cout * Ho * Wo);
  const auto xd = x.data(), wd = w.data();
  std::vector<double> acc(Ho * Wo);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t o = 0; o < Cout; ++o) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::int64_t c = 0; c < Cin; ++c) {
        const float* xp = xd.data() + (b * Cin + c) * H * W;
        for (std::int64_t u = 0; u < kh; ++u)
          for (std::int64_t v = 0; v < kw; ++v) {
            const double wv = wd[((o * Cin + c) * kh + u) * kw + v];
            for (std::int64_t i = 0; i < Ho; ++i) {
              const std::int64_t yy = i + u - pad;
              if (yy < 0 || yy >= H) continue;
              for (std::int64_t j = 0; j < Wo; ++j) {
                const std::int64_t xx = j + v - pad;
                if (xx < 0 || xx >= W) continue;
                acc[i * Wo + j] += wv * xp[yy * W + xx];
              }
            }
          }
      }
      for (std::int64_t k = 0; k < Ho * Wo; ++k) out[(b * Cout + o) * Ho * Wo + k] = static_cast<float>(acc[k]);
    }
  // Multiply-adds of the full (padded) kernel footprint.
  detail::count_flops(B * Ho * Wo * kh * kw * Cin * Cout);
  Tensor y(Shape{B, Cout, Ho, Wo}, std::move(out));
  auto xi = x.impl(), wi = w.impl(), yi = y.impl();
  detail::record("conv2d", {&x, &w}, {&y}, [=] {
    auto gx = detail::sink(xi);
    auto gw = detail::sink(wi);
    std::vector<double> accw(gw.size(), 0.0);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t o = 0; o < Cout; ++o)
        for (std::int64_t c = 0; c < Cin; ++c) {
          const float* xp = xi->data.data() + (b * Cin + c) * H * W;
          for (std::int64_t u = 0; u < kh; ++u)
            for (std::int64_t v = 0; v < kw; ++v) {
              const std::size_t widx = ((o * Cin + c) * kh + u) * kw + v;
              const double wv = wi->data[widx];
              double gacc = 0.0;
              for (std::int64_t i = 0; i < Ho; ++i) {
                const std::int64_t yy = i + u - pad;
                if (yy < 0 || yy >= H) continue;
                for (std::int64_t j = 0; j < Wo; ++j) {
                  const std::int64_t xx = j + v - pad;
                  if (xx < 0 || xx >= W) continue;
                  const double g = yi->grad[((b * Cout + o) * Ho + i) * Wo + j];
                  if (!gx.empty()) gx[(b * Cin + c) * H * W + yy * W + xx] += static_cast<float>(g * wv);
                  gacc += g * xp[yy * W + xx];
                }
              }
              if (!gw.empty()) accw[widx] += gacc;
            }
        }
    if (!gw.empty()) detail::accumulate_broadcast(gw, accw);
  });
  return y;
}

}  // namespace lemamba
