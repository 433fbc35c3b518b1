#pragma once

// Bijections between 2-D feature maps and token sequences. All maps are
// expressed as index tables driving gather/scatter_add, so gradients are the
// transposed permutation.

#include <cstdint>
#include <memory>
#include <vector>

#include "lemamba/ops.hpp"

namespace lemamba {

inline constexpr std::int64_t kScanDirections = 4;

namespace detail {

// Pixel visited at step l of direction k on an H x W grid.
//   0: row-major, 1: column-major, 2: reversed row-major, 3: reversed column-major.
inline std::int64_t scan_pixel(std::int64_t k, std::int64_t l, std::int64_t H, std::int64_t W) {
  const std::int64_t L = H * W;
  if (k >= 2) l = L - 1 - l;
  if (k % 2 == 0) return l;
  const std::int64_t j = l / H, i = l % H;
  return i * W + j;
}

inline Index cross_scan_index(std::int64_t B, std::int64_t D, std::int64_t H, std::int64_t W) {
  const std::int64_t L = H * W;
  auto index = std::make_shared<std::vector<std::int64_t>>(B * kScanDirections * D * L);
  std::vector<std::int64_t> order(kScanDirections * L);
  for (std::int64_t k = 0; k < kScanDirections; ++k)
    for (std::int64_t l = 0; l < L; ++l) order[k * L + l] = scan_pixel(k, l, H, W);
  std::size_t i = 0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t k = 0; k < kScanDirections; ++k)
      for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t l = 0; l < L; ++l) (*index)[i++] = (b * D + d) * L + order[k * L + l];
  return index;
}

}  // namespace detail

/// [B, D, H, W] -> [B, 4, D, H*W] in the four fixed scan orders.
inline Tensor cross_scan(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("cross_scan: expects [B,D,H,W], got " + shape_str(x.shape()));
  const std::int64_t B = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  return gather(x, detail::cross_scan_index(B, D, H, W), {B, kScanDirections, D, H * W});
}

/// [B, 4, D, L] -> [B, D, H, W]: undoes each direction's ordering and sums
/// the four maps.
inline Tensor cross_merge(const Tensor& y, std::int64_t H, std::int64_t W) {
  if (y.rank() != 4 || y.dim(1) != kScanDirections)
    throw ShapeError("cross_merge: expects [B,4,D,L], got " + shape_str(y.shape()));
  if (y.dim(3) != H * W)
    throw ShapeError("cross_merge: L=" + std::to_string(y.dim(3)) + " does not equal H*W=" + std::to_string(H * W));
  const std::int64_t B = y.dim(0), D = y.dim(2);
  return scatter_add(y, detail::cross_scan_index(B, D, H, W), {B, D, H, W});
}

enum class Layout { channels_first, channels_last };

/// Windows folded into the batch axis, plus what is needed to undo it.
struct WindowGrid {
  Tensor windows;  // channels_first: [B*P, D, h, w]; channels_last: [B*P, h, w, D]
  std::int64_t batch = 0, channels = 0;
  std::int64_t height = 0, width = 0;        // original extent
  std::int64_t win_h = 0, win_w = 0;         // window extent
  std::int64_t grid_h = 0, grid_w = 0;       // windows per column / row after padding
  Layout layout = Layout::channels_first;

  std::int64_t count() const { return grid_h * grid_w; }
};

namespace detail {

inline std::int64_t flat_pixel(Layout layout, std::int64_t b, std::int64_t d, std::int64_t i, std::int64_t j,
                               std::int64_t D, std::int64_t H, std::int64_t W) {
  return layout == Layout::channels_first ? ((b * D + d) * H + i) * W + j : ((b * H + i) * W + j) * D + d;
}

}  // namespace detail

/// Zero-pads H, W up to multiples of (h, w) and cuts non-overlapping windows,
/// window-row-major, each window row-major inside.
inline WindowGrid window_partition(const Tensor& x, std::int64_t h, std::int64_t w,
                                   Layout layout = Layout::channels_first) {
  if (h <= 0 || w <= 0) throw DomainError("window_partition: window dims must be positive");
  if (x.rank() != 4) throw ShapeError("window_partition: expects a rank-4 map, got " + shape_str(x.shape()));
  WindowGrid g;
  g.layout = layout;
  g.batch = x.dim(0);
  g.channels = layout == Layout::channels_first ? x.dim(1) : x.dim(3);
  g.height = layout == Layout::channels_first ? x.dim(2) : x.dim(1);
  g.width = layout == Layout::channels_first ? x.dim(3) : x.dim(2);
  g.win_h = h;
  g.win_w = w;
  g.grid_h = (g.height + h - 1) / h;
  g.grid_w = (g.width + w - 1) / w;
  const std::int64_t B = g.batch, D = g.channels, H = g.height, W = g.width, P = g.count();
  auto index = std::make_shared<std::vector<std::int64_t>>(B * P * D * h * w);
  std::size_t n = 0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t p = 0; p < P; ++p) {
      const std::int64_t oi = (p / g.grid_w) * h, oj = (p % g.grid_w) * w;
      auto src = [&](std::int64_t d, std::int64_t r, std::int64_t c) -> std::int64_t {
        const std::int64_t i = oi + r, j = oj + c;
        if (i >= H || j >= W) return -1;
        return detail::flat_pixel(layout, b, d, i, j, D, H, W);
      };
      if (layout == Layout::channels_first) {
        for (std::int64_t d = 0; d < D; ++d)
          for (std::int64_t r = 0; r < h; ++r)
            for (std::int64_t c = 0; c < w; ++c) (*index)[n++] = src(d, r, c);
      } else {
        for (std::int64_t r = 0; r < h; ++r)
          for (std::int64_t c = 0; c < w; ++c)
            for (std::int64_t d = 0; d < D; ++d) (*index)[n++] = src(d, r, c);
      }
    }
  const Shape shape = layout == Layout::channels_first ? Shape{B * P, D, h, w} : Shape{B * P, h, w, D};
  g.windows = gather(x, index, shape);
  return g;
}

/// Inverse of window_partition restricted to the unpadded region.
inline Tensor window_merge(const WindowGrid& g) {
  const std::int64_t B = g.batch, D = g.channels, H = g.height, W = g.width, P = g.count();
  const std::int64_t h = g.win_h, w = g.win_w;
  const Shape expected = g.layout == Layout::channels_first ? Shape{B * P, D, h, w} : Shape{B * P, h, w, D};
  if (!g.windows.defined() || g.windows.shape() != expected || g.grid_h * h < H || g.grid_w * w < W ||
      (g.grid_h - 1) * h >= H || (g.grid_w - 1) * w >= W)
    throw ContractError("window_merge: window tensor does not match grid metadata");
  auto index = std::make_shared<std::vector<std::int64_t>>(B * D * H * W);
  auto window_flat = [&](std::int64_t b, std::int64_t d, std::int64_t i, std::int64_t j) {
    const std::int64_t p = (i / h) * g.grid_w + (j / w);
    const std::int64_t r = i % h, c = j % w;
    return g.layout == Layout::channels_first ? (((b * P + p) * D + d) * h + r) * w + c
                                              : (((b * P + p) * h + r) * w + c) * D + d;
  };
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t d = 0; d < D; ++d)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) (*index)[detail::flat_pixel(g.layout, b, d, i, j, D, H, W)] =
            window_flat(b, d, i, j);
  const Shape shape = g.layout == Layout::channels_first ? Shape{B, D, H, W} : Shape{B, H, W, D};
  return gather(g.windows, index, shape);
}

}  // namespace lemamba
