#pragma once

// Fixed (weight-free) resamplers applied to input imagery. These operate on
// values only and never record on the graph.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lemamba/tensor.hpp"

namespace lemamba {

namespace detail {

// Keys cubic convolution kernel with a = -0.5.
inline double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::fabs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::int64_t index[4];
  double weight[4];
};

// Half-pixel aligned taps for output position i at integer scale r, borders clamped.
inline std::vector<Taps> cubic_taps(std::int64_t in, std::int64_t r) {
  std::vector<Taps> taps(in * r);
  for (std::int64_t i = 0; i < in * r; ++i) {
    const double src = (i + 0.5) / static_cast<double>(r) - 0.5;
    const auto base = static_cast<std::int64_t>(std::floor(src));
    for (int k = 0; k < 4; ++k) {
      const std::int64_t j = base - 1 + k;
      taps[i].index[k] = std::clamp<std::int64_t>(j, 0, in - 1);
      taps[i].weight[k] = cubic_weight(src - static_cast<double>(j));
    }
  }
  return taps;
}

inline void check_image(const Tensor& x, const char* op) {
  if (x.rank() < 2) throw ShapeError(std::string(op) + ": expects [..., H, W], got " + shape_str(x.shape()));
}

}  // namespace detail

/// Bicubic upsampling of the two trailing axes by an integer factor r.
inline Tensor bicubic_upsample(const Tensor& x, std::int64_t r) {
  detail::check_image(x, "bicubic_upsample");
  if (r < 1) throw DomainError("bicubic_upsample: factor must be >= 1");
  const std::int64_t h = x.dim(-2), w = x.dim(-1), H = h * r, W = w * r;
  const std::int64_t planes = static_cast<std::int64_t>(x.numel()) / (h * w);
  const auto th = detail::cubic_taps(h, r), tw = detail::cubic_taps(w, r);
  Shape shape = x.shape();
  shape[shape.size() - 2] = H;
  shape[shape.size() - 1] = W;
  std::vector<float> out(numel_of(shape));
  std::vector<double> rows(h * W);
  const auto src = x.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    const float* in = src.data() + p * h * w;
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < W; ++j) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += tw[j].weight[k] * in[i * w + tw[j].index[k]];
        rows[i * W + j] = acc;
      }
    float* o = out.data() + p * H * W;
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < W; ++j) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += th[i].weight[k] * rows[th[i].index[k] * W + j];
        o[i * W + j] = static_cast<float>(acc);
      }
  }
  return Tensor(std::move(shape), std::move(out));
}

/// Mean over non-overlapping f x f blocks of the two trailing axes.
inline Tensor area_downsample(const Tensor& x, std::int64_t f) {
  detail::check_image(x, "area_downsample");
  const std::int64_t H = x.dim(-2), W = x.dim(-1);
  if (f < 1 || H % f || W % f) throw ShapeError("area_downsample: extent not divisible by factor");
  const std::int64_t h = H / f, w = W / f;
  const std::int64_t planes = static_cast<std::int64_t>(x.numel()) / (H * W);
  Shape shape = x.shape();
  shape[shape.size() - 2] = h;
  shape[shape.size() - 1] = w;
  std::vector<float> out(numel_of(shape));
  const auto src = x.data();
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        double acc = 0.0;
        for (std::int64_t a = 0; a < f; ++a)
          for (std::int64_t b = 0; b < f; ++b) acc += src[(p * H + i * f + a) * W + j * f + b];
        out[(p * h + i) * w + j] = static_cast<float>(acc / static_cast<double>(f * f));
      }
  return Tensor(std::move(shape), std::move(out));
}

/// Zero-pads the two trailing axes at the bottom/right to (H, W).
inline Tensor zero_pad(const Tensor& x, std::int64_t H, std::int64_t W) {
  detail::check_image(x, "zero_pad");
  const std::int64_t h = x.dim(-2), w = x.dim(-1);
  if (H < h || W < w) throw ShapeError("zero_pad: target smaller than input");
  if (H == h && W == w) return x.detach();
  const std::int64_t planes = static_cast<std::int64_t>(x.numel()) / (h * w);
  Shape shape = x.shape();
  shape[shape.size() - 2] = H;
  shape[shape.size() - 1] = W;
  std::vector<float> out(numel_of(shape), 0.0f);
  const auto src = x.data();
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < h; ++i)
      std::copy_n(src.data() + (p * h + i) * w, w, out.data() + (p * H + i) * W);
  return Tensor(std::move(shape), std::move(out));
}

inline std::int64_t round_up(std::int64_t v, std::int64_t m) { return (v + m - 1) / m * m; }

}  // namespace lemamba
