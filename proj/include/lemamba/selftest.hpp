#pragma once

// Built-in checks run by `lemamba selftest`: scan against its convolutional
// form, a hand-worked scan, gradients of every registered op, the scan and
// one LEVM block, and the geometry roundtrips.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "lemamba/blocks.hpp"
#include "lemamba/grad_check.hpp"
#include "lemamba/op_registry.hpp"

namespace lemamba {

struct CheckResult {
  std::string name;
  bool ok = false;
  double value = 0.0;   // measured error
  double limit = 0.0;
};

namespace detail {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(numel_of(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(v));
}

// Time-invariant scan parameters: B, C, delta repeated along L.
inline SSMParams invariant_params(std::int64_t K, std::int64_t D, std::int64_t N, std::int64_t L, Rng& rng) {
  SSMParams p;
  p.A = random_tensor({K, D, N}, rng, -2.0, -0.05);
  auto repeated = [&](std::int64_t rows, double lo, double hi) {
    std::vector<float> v(rows * L);
    for (std::int64_t r = 0; r < rows; ++r) {
      const float c = static_cast<float>(rng.uniform(lo, hi));
      for (std::int64_t t = 0; t < L; ++t) v[r * L + t] = c;
    }
    return v;
  };
  p.B = Tensor({1, K, N, L}, repeated(K * N, -1.0, 1.0));
  p.C = Tensor({1, K, N, L}, repeated(K * N, -1.0, 1.0));
  p.delta = Tensor({1, K, D, L}, repeated(K * D, 0.01, 0.5));
  return p;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
  return m;
}

// Random signs with magnitudes in [0.5, 1], so the probed gradient has no
// accidental near-zero coordinates from the reduction weights.
inline Tensor probe_weights(Shape shape, Rng& rng) {
  std::vector<float> v(numel_of(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(0.5, 1.0) * (rng.below(2) ? 1.0 : -1.0));
  return Tensor(std::move(shape), std::move(v));
}

// sum(y * w) - offset, reduced in one double accumulation. With offset set
// to the unperturbed value the scalar stays near zero, so its float rounding
// does not swamp small finite differences.
inline Tensor centered_probe(const Tensor& y, const Tensor& w, float offset) {
  const Tensor flat = reshape(mul(y, w), {static_cast<std::int64_t>(y.numel())});
  return sum(concat({flat, Tensor({1}, std::vector<float>{-offset})}, 0));
}

// Scalar probe of g around x: f(v) = sum(g(v) * w) - sum(g(x) * w).
inline std::function<Tensor(const Tensor&)> probe(std::function<Tensor(const Tensor&)> g, const Tensor& x,
                                                  const Tensor& w) {
  float offset = 0.0f;
  {
    NoGradGuard guard;
    offset = sum(mul(g(x), w)).item();
  }
  return [g = std::move(g), w, offset](const Tensor& v) { return centered_probe(g(v), w, offset); };
}

}  // namespace detail

/// Max |selective_scan - kernel_scan| over `instances` random time-invariant
/// problems with L <= 128, N <= 32, D <= 8.
inline double scan_oracle_error(int instances, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  NoGradGuard guard;
  for (int i = 0; i < instances; ++i) {
    const std::int64_t K = 1 + static_cast<std::int64_t>(rng.below(4));
    const std::int64_t D = 1 + static_cast<std::int64_t>(rng.below(8));
    const std::int64_t N = 1 + static_cast<std::int64_t>(rng.below(32));
    const std::int64_t L = 1 + static_cast<std::int64_t>(rng.below(128));
    const SSMParams p = detail::invariant_params(K, D, N, L, rng);
    const Tensor x = detail::random_tensor({1, K, D, L}, rng);
    worst = std::max(worst, detail::max_abs_diff(selective_scan(x, p).y, kernel_scan(x, p)));
  }
  return worst;
}

/// Scan with A_bar = 0.5, B_bar = 0.5, C = 1 on x = [1, 1, 1]. With delta = 1,
/// A = ln 0.5 and B = B_bar A / (A_bar - 1).
inline Tensor hand_scan_output() {
  NoGradGuard guard;
  const double a = std::log(0.5);
  SSMParams p;
  p.A = Tensor({1, 1, 1}, std::vector<float>{static_cast<float>(a)});
  p.B = Tensor({1, 1, 1, 3}, static_cast<float>(0.5 * a / (0.5 - 1.0)));
  p.C = Tensor({1, 1, 1, 3}, 1.0f);
  p.delta = Tensor({1, 1, 1, 3}, 1.0f);
  return selective_scan(Tensor({1, 1, 1, 3}, 1.0f), p).y;
}

/// Gradient check of each registered op on small random inputs. Every input
/// is perturbed in turn; the result is the worst relative error per op.
inline constexpr double kGradStep = 1e-2;

inline std::vector<CheckResult> op_gradient_checks(std::uint64_t seed, double limit = 1e-3) {
  std::vector<CheckResult> out;
  for (const auto& name : forward_op_names()) {
    if (name == "selective_scan") continue;
    Rng rng(seed);
    std::vector<Tensor> inputs;
    OpAttrs attrs;
    if (name == "add" || name == "mul") inputs = {detail::probe_weights({2, 3}, rng), detail::probe_weights({2, 3}, rng)};
    else if (name == "matmul") inputs = {detail::probe_weights({2, 3}, rng), detail::probe_weights({3, 4}, rng)};
    else if (name == "log") inputs = {detail::random_tensor({2, 3}, rng, 0.5, 2.0)};
    else if (name == "reshape") {
      inputs = {detail::probe_weights({2, 3}, rng)};
      attrs.shape = {3, 2};
    } else if (name == "transpose") {
      inputs = {detail::probe_weights({2, 3, 2}, rng)};
      attrs.axis = 0;
      attrs.axis2 = 2;
    } else if (name == "concat") {
      inputs = {detail::probe_weights({2, 2}, rng), detail::probe_weights({2, 3}, rng)};
      attrs.axis = 1;
    } else if (name == "slice") {
      inputs = {detail::probe_weights({3, 4}, rng)};
      attrs.axis = 1;
      attrs.start = 1;
      attrs.end = 3;
    } else if (name == "layernorm") {
      inputs = {detail::probe_weights({2, 5}, rng), detail::random_tensor({5}, rng, 0.5, 1.5),
                detail::probe_weights({5}, rng)};
    } else if (name == "conv2d_depthwise") {
      inputs = {detail::probe_weights({1, 2, 4, 4}, rng), detail::probe_weights({2, 3, 3}, rng)};
      attrs.pad = 1;
    } else if (name == "linear") {
      inputs = {detail::probe_weights({2, 3}, rng), detail::probe_weights({4, 3}, rng), detail::probe_weights({4}, rng)};
    } else inputs = {detail::probe_weights({2, 3}, rng)};
    const Tensor weights = [&] {
      NoGradGuard guard;
      return detail::probe_weights(forward_op(name, inputs, attrs).shape(), rng);
    }();
    double worst = 0.0;
    for (std::size_t slot = 0; slot < inputs.size(); ++slot) {
      auto g = [&, slot](const Tensor& v) {
        std::vector<Tensor> in = inputs;
        in[slot] = v;
        return forward_op(name, in, attrs);
      };
      worst = std::max(worst, finite_diff_check(detail::probe(g, inputs[slot], weights), inputs[slot], kGradStep));
    }
    out.push_back({"grad " + name, worst <= limit, worst, limit});
  }
  return out;
}

/// Gradient check of selective_scan with respect to x, A, B, C and delta at L = 12.
inline CheckResult scan_gradient_check(std::uint64_t seed, double limit = 1e-2) {
  Rng rng(seed);
  const std::int64_t K = 2, D = 2, N = 3, L = 12;
  std::vector<Tensor> in = {detail::random_tensor({1, K, D, L}, rng), detail::random_tensor({K, D, N}, rng, -1.5, -0.2),
                            detail::random_tensor({1, K, N, L}, rng), detail::random_tensor({1, K, N, L}, rng),
                            detail::random_tensor({1, K, D, L}, rng, 0.05, 0.6)};
  const Tensor weights = detail::probe_weights({1, K, D, L}, rng);
  double worst = 0.0;
  for (std::size_t slot = 0; slot < in.size(); ++slot) {
    auto g = [&, slot](const Tensor& v) {
      std::vector<Tensor> args = in;
      args[slot] = v;
      return forward_op("selective_scan", args);
    };
    worst = std::max(worst, finite_diff_check(detail::probe(g, in[slot], weights), in[slot], kGradStep));
  }
  return {"grad selective_scan", worst <= limit, worst, limit};
}

/// Gradient check of one LEVM block (2x2 windows, adjacent states) on a
/// 4-channel 4x2 map, with respect to its input.
inline CheckResult levm_gradient_check(std::uint64_t seed, double limit = 1e-2) {
  Rng rng(seed);
  BlockOptions o;
  o.dim = 4;
  o.state_dim = 4;
  o.state_share = true;
  LevmWeights w{make_block_weights(o, rng), make_block_weights(o, rng)};
  // Lift the small initial alpha so the state path carries gradient.
  for (BlockWeights* b : {&w.local, &w.global}) {
    auto a = b->share.alpha.data_mut();
    std::fill(a.begin(), a.end(), 0.5f);
  }
  const Tensor x = detail::random_tensor({1, 4, 4, 2}, rng);
  const Tensor hl = detail::random_tensor({1, kScanDirections, 4, 4}, rng);
  const Tensor hg = detail::random_tensor({1, kScanDirections, 4, 4}, rng);
  const Tensor weights = detail::probe_weights({1, 4, 4, 2}, rng);
  auto g = [&](const Tensor& v) { return levm_block(v, LevmStates{hl, hg, {}}, 2, 2, w).x; };
  const double worst = finite_diff_check(detail::probe(g, x, weights), x, kGradStep);
  return {"grad levm_block", worst <= limit, worst, limit};
}

/// Roundtrip errors of the window and cross-scan transforms over random
/// shapes, including ones that need padding. Zero means bit-exact.
inline CheckResult geometry_roundtrips(int shapes, std::uint64_t seed) {
  Rng rng(seed);
  NoGradGuard guard;
  double worst = 0.0;
  for (int i = 0; i < shapes; ++i) {
    const std::int64_t B = 1 + rng.below(2), D = 1 + rng.below(3);
    const std::int64_t H = 1 + rng.below(9), W = 1 + rng.below(9);
    const std::int64_t h = 1 + rng.below(4), w = 1 + rng.below(4);
    const Tensor x = detail::random_tensor({B, D, H, W}, rng);
    worst = std::max(worst, detail::max_abs_diff(window_merge(window_partition(x, h, w)), x));
    const Tensor cl = transpose(transpose(x, 1, 2), 2, 3);
    worst = std::max(worst, detail::max_abs_diff(window_merge(window_partition(cl, h, w, Layout::channels_last)), cl));
    worst = std::max(worst, detail::max_abs_diff(cross_merge(cross_scan(x), H, W), scale(x, 4.0f)));
  }
  return {"geometry roundtrips", worst == 0.0, worst, 0.0};
}

inline std::vector<CheckResult> run_selftest(std::uint64_t seed = 0) {
  std::vector<CheckResult> out;
  const double scan_err = scan_oracle_error(100, seed);
  out.push_back({"scan vs kernel oracle", scan_err <= 1e-5, scan_err, 1e-5});
  const Tensor y = hand_scan_output();
  const double hand = std::max({std::fabs(y[0] - 0.5), std::fabs(y[1] - 0.75), std::fabs(y[2] - 0.875)});
  out.push_back({"hand-worked scan", hand <= 1e-7, hand, 1e-7});
  for (auto& r : op_gradient_checks(seed)) out.push_back(r);
  out.push_back(scan_gradient_check(seed));
  out.push_back(levm_gradient_check(seed));
  out.push_back(geometry_roundtrips(50, seed));
  Graph::current().clear();
  return out;
}

inline std::string format_check(const CheckResult& r) {
  std::ostringstream os;
  os << (r.ok ? "PASS " : "FAIL ") << r.name << "  err=" << r.value << " limit=" << r.limit;
  return os.str();
}

}  // namespace lemamba
