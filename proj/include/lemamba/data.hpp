#pragma once

// Wald-protocol degradation, the procedural multiband texture generator and
// dataset manifests.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "lemamba/rng.hpp"
#include "lemamba/tensor_io.hpp"

namespace lemamba {

struct FusionSample {
  std::string id;
  Tensor lrms;  // [S, H/r, W/r]
  Tensor pan;   // [P, H, W]
  Tensor gt;    // [S, H, W]
};

/// Blur width used by the degradation for a given ratio.
inline double wald_sigma(std::int64_t ratio) { return static_cast<double>(ratio) / 2.0; }

/// Separable Gaussian blur of each [H, W] plane, radius ceil(3 sigma),
/// replicate borders. sigma <= 0 returns a copy.
inline Tensor gaussian_blur(const Tensor& x, double sigma) {
  if (x.rank() < 2) throw ShapeError("gaussian_blur: expects [..., H, W]");
  if (!(sigma > 0.0)) return x.detach();
  const auto R = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> g(2 * R + 1);
  double total = 0.0;
  for (std::int64_t i = -R; i <= R; ++i) total += g[i + R] = std::exp(-0.5 * (i * i) / (sigma * sigma));
  for (auto& v : g) v /= total;
  const std::int64_t H = x.dim(-2), W = x.dim(-1), planes = static_cast<std::int64_t>(x.numel()) / (H * W);
  std::vector<float> out(x.numel());
  std::vector<double> tmp(H * W);
  const auto src = x.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    const float* in = src.data() + p * H * W;
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < W; ++j) {
        double acc = 0.0;
        for (std::int64_t k = -R; k <= R; ++k) acc += g[k + R] * in[i * W + std::clamp<std::int64_t>(j + k, 0, W - 1)];
        tmp[i * W + j] = acc;
      }
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < W; ++j) {
        double acc = 0.0;
        for (std::int64_t k = -R; k <= R; ++k) acc += g[k + R] * tmp[std::clamp<std::int64_t>(i + k, 0, H - 1) * W + j];
        out[p * H * W + i * W + j] = static_cast<float>(acc);
      }
  }
  return Tensor(x.shape(), std::move(out));
}

/// Keeps one value per r x r block: the mean of the blurred samples at the
/// block centre (offsets floor and ceil of (r-1)/2 along each axis).
inline Tensor decimate(const Tensor& x, std::int64_t r) {
  const std::int64_t H = x.dim(-2), W = x.dim(-1);
  if (r < 1 || H % r || W % r) throw ShapeError("decimate: extent not divisible by ratio");
  const std::int64_t lo = (r - 1) / 2, hi = r / 2, h = H / r, w = W / r;
  const std::int64_t planes = static_cast<std::int64_t>(x.numel()) / (H * W);
  Shape shape = x.shape();
  shape[shape.size() - 2] = h;
  shape[shape.size() - 1] = w;
  std::vector<float> out(numel_of(shape));
  const auto src = x.data();
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        const std::int64_t rows[2] = {i * r + lo, i * r + hi}, cols[2] = {j * r + lo, j * r + hi};
        double acc = 0.0;
        for (auto a : rows)
          for (auto b : cols) acc += src[(p * H + a) * W + b];
        out[(p * h + i) * w + j] = static_cast<float>(acc / 4.0);
      }
  return Tensor(std::move(shape), std::move(out));
}

/// Guide image from a [S, H, W] cube: the band mean (1 band) or the means of
/// three contiguous band groups (3 bands).
inline Tensor synthesize_pan(const Tensor& gt, std::int64_t pan_bands) {
  const std::int64_t S = gt.dim(0), HW = gt.dim(1) * gt.dim(2);
  if (pan_bands != 1 && pan_bands != 3) throw DomainError("pan: pan_bands must be 1 or 3");
  if (S < pan_bands) throw ShapeError("pan: fewer spectral bands than guide bands");
  std::vector<float> out(pan_bands * HW);
  const auto src = gt.data();
  for (std::int64_t g = 0; g < pan_bands; ++g) {
    const std::int64_t b0 = g * S / pan_bands, b1 = (g + 1) * S / pan_bands;
    for (std::int64_t i = 0; i < HW; ++i) {
      double acc = 0.0;
      for (std::int64_t b = b0; b < b1; ++b) acc += src[b * HW + i];
      out[g * HW + i] = static_cast<float>(acc / static_cast<double>(b1 - b0));
    }
  }
  return Tensor({pan_bands, gt.dim(1), gt.dim(2)}, std::move(out));
}

/// lrms = decimate(blur(gt, sigma), ratio); pan from gt.
inline FusionSample wald_simulate(const Tensor& gt, std::int64_t ratio, double blur_sigma, std::int64_t pan_bands = 1) {
  if (gt.rank() != 3) throw ShapeError("wald_simulate: gt must be [S,H,W], got " + shape_str(gt.shape()));
  if (ratio < 1 || gt.dim(1) % ratio || gt.dim(2) % ratio)
    throw ShapeError("wald_simulate: " + shape_str(gt.shape()) + " not divisible by ratio " + std::to_string(ratio));
  FusionSample s;
  s.gt = gt.detach();
  s.lrms = decimate(gaussian_blur(gt, blur_sigma), ratio);
  s.pan = synthesize_pan(gt, pan_bands);
  return s;
}

/// Procedural multiband texture [S, H, W] in [0, 1]: band-correlated Gaussian
/// blobs, a linear gradient, step edges and a fine grating.
inline Tensor synthetic_texture(std::int64_t S, std::int64_t H, std::int64_t W, Rng& rng) {
  std::vector<double> img(S * H * W, 0.0);
  auto add = [&](const std::vector<double>& gain, auto&& field) {
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < W; ++j) {
        const double v = field(static_cast<double>(i), static_cast<double>(j));
        for (std::int64_t b = 0; b < S; ++b) img[(b * H + i) * W + j] += gain[b] * v;
      }
  };
  // Gains share a common factor so the bands stay correlated.
  auto gains = [&](double scale) {
    const double common = rng.uniform(0.5, 1.0);
    std::vector<double> g(S);
    for (auto& v : g) v = scale * common * (1.0 + 0.3 * rng.normal());
    return g;
  };
  const double extent = static_cast<double>(std::max(H, W));
  for (int k = 0; k < 6; ++k) {
    const double ci = rng.uniform(0, H), cj = rng.uniform(0, W);
    const double s = rng.uniform(extent / 16.0, extent / 4.0);
    add(gains(rng.uniform(0.2, 0.5)), [&](double i, double j) {
      return std::exp(-((i - ci) * (i - ci) + (j - cj) * (j - cj)) / (2.0 * s * s));
    });
  }
  {
    const double th = rng.uniform(0.0, 2.0 * std::numbers::pi);
    add(gains(0.3), [&](double i, double j) { return (std::cos(th) * i + std::sin(th) * j) / extent; });
  }
  for (int k = 0; k < 3; ++k) {
    const double th = rng.uniform(0.0, 2.0 * std::numbers::pi), off = rng.uniform(-0.3, 0.3) * extent;
    const double ci = H / 2.0, cj = W / 2.0;
    add(gains(rng.uniform(0.1, 0.25)), [&](double i, double j) {
      return std::cos(th) * (i - ci) + std::sin(th) * (j - cj) > off ? 1.0 : 0.0;
    });
  }
  {
    const double period = rng.uniform(3.0, 8.0), th = rng.uniform(0.0, std::numbers::pi);
    const double w = 2.0 * std::numbers::pi / period;
    add(gains(0.08), [&](double i, double j) { return std::sin(w * (std::cos(th) * i + std::sin(th) * j)); });
  }
  std::vector<float> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<float>(std::clamp(0.15 + img[i], 0.0, 1.0));
  return Tensor({S, H, W}, std::move(out));
}

struct DatasetSpec {
  std::int64_t n = 64;
  std::int64_t bands = 4;
  std::int64_t height = 64, width = 64;
  std::int64_t ratio = 4;
  std::int64_t pan_bands = 1;
  std::uint64_t seed = 0;
};

struct ManifestEntry {
  std::string id;
  std::filesystem::path lrms, pan, gt;
};

/// Number of (train, val, test) samples for a dataset of n.
inline std::array<std::int64_t, 3> split_sizes(std::int64_t n) {
  const std::int64_t held = n >= 3 ? std::max<std::int64_t>(1, n / 8) : 0;
  return {n - 2 * held, held, held};
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write manifest " + path.string());
  for (const auto& e : entries)
    os << e.id << ' ' << e.lrms.string() << ' ' << e.pan.string() << ' ' << e.gt.string() << '\n';
}

/// Reads `<id> <lrms> <pan> <gt>` lines. Relative paths resolve against the
/// manifest's directory. Blank lines and '#' comments are skipped.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string a, b, c, extra;
    if (!(ls >> e.id >> a >> b >> c) || (ls >> extra))
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected '<id> <lrms> <pan> <gt>'");
    auto resolve = [&](const std::string& p) {
      std::filesystem::path q(p);
      return q.is_absolute() ? q : base / q;
    };
    e.lrms = resolve(a);
    e.pan = resolve(b);
    e.gt = resolve(c);
    out.push_back(std::move(e));
  }
  return out;
}

inline FusionSample load_sample(const ManifestEntry& e) {
  FusionSample s{e.id, load_tensor(e.lrms), load_tensor(e.pan), load_tensor(e.gt)};
  if (s.gt.rank() != 3 || s.lrms.rank() != 3 || s.pan.rank() != 3)
    throw FormatError("sample " + e.id + ": expected rank-3 tensors");
  return s;
}

inline std::vector<FusionSample> load_split(const std::filesystem::path& manifest) {
  std::vector<FusionSample> out;
  for (const auto& e : read_manifest(manifest)) out.push_back(load_sample(e));
  return out;
}

/// Writes n simulated samples under dir plus train.txt / val.txt / test.txt.
/// Sample i depends only on (seed, i).
inline void gen_synthetic_dataset(const DatasetSpec& spec, const std::filesystem::path& dir) {
  if (spec.n < 1 || spec.bands < 1 || spec.height < 1 || spec.width < 1)
    throw ValidationError("gen-data: n, bands, height and width must be >= 1");
  if (spec.height % spec.ratio || spec.width % spec.ratio)
    throw ValidationError("gen-data: height and width must be divisible by ratio");
  std::filesystem::create_directories(dir);
  const auto sizes = split_sizes(spec.n);
  std::vector<ManifestEntry> splits[3];
  for (std::int64_t i = 0; i < spec.n; ++i) {
    Rng rng = Rng::derive(spec.seed, static_cast<std::uint64_t>(i));
    const Tensor gt = synthetic_texture(spec.bands, spec.height, spec.width, rng);
    const FusionSample s = wald_simulate(gt, spec.ratio, wald_sigma(spec.ratio), spec.pan_bands);
    std::string id = std::to_string(i);
    id = "s" + std::string(id.size() < 4 ? 4 - id.size() : 0, '0') + id;
    ManifestEntry e{id, id + "_lrms.lmt", id + "_pan.lmt", id + "_gt.lmt"};
    save_tensor(dir / e.lrms, s.lrms);
    save_tensor(dir / e.pan, s.pan);
    save_tensor(dir / e.gt, s.gt);
    const int split = i < sizes[0] ? 0 : (i < sizes[0] + sizes[1] ? 1 : 2);
    splits[split].push_back(std::move(e));
  }
  write_manifest(dir / "train.txt", splits[0]);
  write_manifest(dir / "val.txt", splits[1]);
  write_manifest(dir / "test.txt", splits[2]);
}

}  // namespace lemamba
