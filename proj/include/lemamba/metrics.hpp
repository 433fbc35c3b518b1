#pragma once

// Reduced-resolution fusion quality metrics. Images are [C, H, W]; every
// computation runs in double and is independent of the autograd ops.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include "lemamba/tensor.hpp"

namespace lemamba {

inline constexpr double kPsnrCap = 99.0;
inline constexpr double kSamEps = 1e-8;

struct MetricReport {
  double sam_deg = 0.0;
  double ergas = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double scc = 0.0;
};

namespace detail {

inline bool& metric_warnings_enabled() {
  static bool on = true;
  return on;
}

inline void metric_warning(const std::string& msg) {
  if (metric_warnings_enabled()) std::cerr << "warning: " << msg << "\n";
}

inline void check_pair(const Tensor& x, const Tensor& y, const char* op) {
  if (x.shape() != y.shape() || x.rank() != 3)
    throw ShapeError(std::string(op) + ": expects matching [C,H,W], got " + shape_str(x.shape()) + " and " +
                     shape_str(y.shape()));
}

// Plane c of a [C, H, W] tensor as doubles.
inline std::vector<double> band(const Tensor& x, std::int64_t c) {
  const std::int64_t n = x.dim(1) * x.dim(2);
  const auto d = x.data();
  return std::vector<double>(d.begin() + c * n, d.begin() + (c + 1) * n);
}

}  // namespace detail

/// Mean spectral angle in degrees. Pixels where either spectrum has
/// (near-)zero norm are skipped.
inline double sam(const Tensor& x, const Tensor& y) {
  detail::check_pair(x, y, "sam");
  const std::int64_t C = x.dim(0), P = x.dim(1) * x.dim(2);
  const auto xd = x.data(), yd = y.data();
  double total = 0.0;
  std::int64_t counted = 0;
  for (std::int64_t p = 0; p < P; ++p) {
    double dot = 0.0, xx = 0.0, yy = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      const double a = xd[c * P + p], b = yd[c * P + p];
      dot += a * b;
      xx += a * a;
      yy += b * b;
    }
    const double denom = std::sqrt(xx * yy);
    if (denom <= kSamEps) continue;
    total += std::acos(std::clamp(dot / denom, -1.0, 1.0));
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) * 180.0 / std::numbers::pi : 0.0;
}

/// 100/ratio * sqrt(mean_b (RMSE_b / mean(gt_b))^2). gt is the reference.
inline double ergas(const Tensor& x, const Tensor& gt, std::int64_t ratio) {
  detail::check_pair(x, gt, "ergas");
  if (ratio < 1) throw DomainError("ergas: ratio must be >= 1");
  const std::int64_t C = x.dim(0);
  double acc = 0.0;
  std::int64_t used = 0;
  for (std::int64_t c = 0; c < C; ++c) {
    const auto a = detail::band(x, c), b = detail::band(gt, c);
    double se = 0.0, mu = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      se += (a[i] - b[i]) * (a[i] - b[i]);
      mu += b[i];
    }
    mu /= static_cast<double>(b.size());
    if (mu == 0.0) {
      detail::metric_warning("ergas: band " + std::to_string(c) + " has zero mean, skipped");
      continue;
    }
    acc += se / static_cast<double>(a.size()) / (mu * mu);
    ++used;
  }
  return used ? 100.0 / static_cast<double>(ratio) * std::sqrt(acc / static_cast<double>(used)) : 0.0;
}

/// 10 log10(peak^2 / MSE), capped for exact matches.
inline double psnr(const Tensor& x, const Tensor& gt, double peak = 1.0) {
  detail::check_pair(x, gt, "psnr");
  const auto a = x.data(), b = gt.data();
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (static_cast<double>(a[i]) - b[i]) * (static_cast<double>(a[i]) - b[i]);
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

namespace detail {

inline std::vector<double> gaussian_1d(std::int64_t k, double sigma) {
  std::vector<double> g(k);
  double total = 0.0;
  for (std::int64_t i = 0; i < k; ++i) {
    const double t = static_cast<double>(i - k / 2);
    g[i] = std::exp(-t * t / (2.0 * sigma * sigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

// Separable valid-region filtering of an H x W plane.
inline std::vector<double> filter_valid(const std::vector<double>& img, std::int64_t H, std::int64_t W,
                                        const std::vector<double>& g) {
  const std::int64_t k = static_cast<std::int64_t>(g.size()), Ho = H - k + 1, Wo = W - k + 1;
  std::vector<double> tmp(H * Wo), out(Ho * Wo);
  for (std::int64_t i = 0; i < H; ++i)
    for (std::int64_t j = 0; j < Wo; ++j) {
      double acc = 0.0;
      for (std::int64_t v = 0; v < k; ++v) acc += g[v] * img[i * W + j + v];
      tmp[i * Wo + j] = acc;
    }
  for (std::int64_t i = 0; i < Ho; ++i)
    for (std::int64_t j = 0; j < Wo; ++j) {
      double acc = 0.0;
      for (std::int64_t u = 0; u < k; ++u) acc += g[u] * tmp[(i + u) * Wo + j];
      out[i * Wo + j] = acc;
    }
  return out;
}

}  // namespace detail

/// Side of the Gaussian SSIM window for an H x W image (11, shrunk to the
/// largest odd size that fits).
inline std::int64_t metric_ssim_window(std::int64_t H, std::int64_t W) {
  std::int64_t k = std::min<std::int64_t>({11, H, W});
  if (k % 2 == 0) --k;
  return std::max<std::int64_t>(k, 1);
}

/// SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// dynamic range 1, mean over the valid region and over bands.
inline double ssim(const Tensor& x, const Tensor& y) {
  detail::check_pair(x, y, "ssim");
  const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const auto g = detail::gaussian_1d(metric_ssim_window(H, W), 1.5);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  for (std::int64_t c = 0; c < C; ++c) {
    const auto a = detail::band(x, c), b = detail::band(y, c);
    std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto ma = detail::filter_valid(a, H, W, g), mb = detail::filter_valid(b, H, W, g);
    const auto saa = detail::filter_valid(aa, H, W, g), sbb = detail::filter_valid(bb, H, W, g),
               sab = detail::filter_valid(ab, H, W, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
      acc += (2.0 * ma[i] * mb[i] + c1) * (2.0 * cov + c2) /
             ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
    }
    total += acc / static_cast<double>(ma.size());
  }
  return total / static_cast<double>(C);
}

/// Spatial correlation coefficient: Pearson correlation of Laplacian
/// high-pass images over the valid region, mean over bands.
inline double scc(const Tensor& x, const Tensor& y) {
  detail::check_pair(x, y, "scc");
  const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H < 3 || W < 3) throw ShapeError("scc: image smaller than the 3x3 Laplacian");
  auto laplace = [&](const std::vector<double>& p) {
    std::vector<double> out((H - 2) * (W - 2));
    for (std::int64_t i = 1; i < H - 1; ++i)
      for (std::int64_t j = 1; j < W - 1; ++j)
        out[(i - 1) * (W - 2) + j - 1] =
            4.0 * p[i * W + j] - p[(i - 1) * W + j] - p[(i + 1) * W + j] - p[i * W + j - 1] - p[i * W + j + 1];
    return out;
  };
  double total = 0.0;
  for (std::int64_t c = 0; c < C; ++c) {
    const auto a = laplace(detail::band(x, c)), b = laplace(detail::band(y, c));
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) {
      detail::metric_warning("scc: band " + std::to_string(c) + " has zero high-pass variance, scored 0");
      continue;
    }
    total += sab / std::sqrt(saa * sbb);
  }
  return total / static_cast<double>(C);
}

inline MetricReport evaluate_pair(const Tensor& x, const Tensor& gt, std::int64_t ratio) {
  return {sam(x, gt), ergas(x, gt, ratio), psnr(x, gt), ssim(x, gt), scc(x, gt)};
}

}  // namespace lemamba
