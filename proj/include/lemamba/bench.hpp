#pragma once

// Activation-memory and FLOP measurements for conv, self-attention, VMamba
// and LEVM operators, next to their symbolic cost formulas.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "lemamba/blocks.hpp"

namespace lemamba {

/// Counts live float elements of tensors created while in scope and records
/// the peak. Tensors that already existed (weights) are not counted.
class MemoryProbe {
 public:
  MemoryProbe() {
    auto& c = detail::counters();
    if (c.mem_active) throw ContractError("MemoryProbe: probes do not nest");
    ++c.mem_generation;
    c.mem_active = true;
    c.live = 0;
    c.peak = 0;
  }
  ~MemoryProbe() { detail::counters().mem_active = false; }
  MemoryProbe(const MemoryProbe&) = delete;
  MemoryProbe& operator=(const MemoryProbe&) = delete;

  std::int64_t peak() const { return detail::counters().peak; }
  std::int64_t live() const { return detail::counters().live; }
};

/// Multiply-add counter fed by the instrumented ops.
class FlopCounter {
 public:
  FlopCounter() {
    auto& c = detail::counters();
    if (c.flops_active) throw ContractError("FlopCounter: counters do not nest");
    c.flops_active = true;
    c.flops = 0;
  }
  ~FlopCounter() { detail::counters().flops_active = false; }
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  std::int64_t count() const { return detail::counters().flops; }
};

enum class BenchOp { conv, self_attention, vmamba, levm };

inline const char* to_string(BenchOp op) {
  switch (op) {
    case BenchOp::conv: return "conv";
    case BenchOp::self_attention: return "self_attention";
    case BenchOp::vmamba: return "vmamba";
    case BenchOp::levm: return "levm";
  }
  return "?";
}

inline BenchOp parse_bench_op(const std::string& s) {
  if (s == "conv") return BenchOp::conv;
  if (s == "attention" || s == "self_attention") return BenchOp::self_attention;
  if (s == "vmamba") return BenchOp::vmamba;
  if (s == "levm") return BenchOp::levm;
  throw ValidationError("unknown bench operator '" + s + "' (conv, attention, vmamba, levm)");
}

struct BenchShape {
  std::int64_t B = 1;
  std::int64_t H = 8, W = 8;  // L = H * W
  std::int64_t D = 8;
  std::int64_t N = 8;
  std::int64_t k = 3;          // conv kernel side
  std::int64_t win = 4;        // LEVM window side

  std::int64_t L() const { return H * W; }
};

struct BenchRecord {
  BenchOp op = BenchOp::conv;
  BenchShape shape;
  std::int64_t peak_units = 0;
  std::int64_t flops_measured = 0;
  std::int64_t flops_formula = 0;
  std::int64_t space_formula = 0;

  double flop_ratio() const { return static_cast<double>(flops_measured) / static_cast<double>(flops_formula); }
};

/// Symbolic FLOP predictions.
inline std::int64_t flops_formula(BenchOp op, const BenchShape& s) {
  const std::int64_t B = s.B, L = s.L(), D = s.D, N = s.N, k = s.k;
  switch (op) {
    case BenchOp::conv: return B * L * k * k * D * N;
    case BenchOp::self_attention: return B * (L * L + 5 * L * D * N);
    case BenchOp::vmamba: return 4 * B * L * D * N + 2 * L * D * N;
    case BenchOp::levm: return 10 * B * L * N + 2 * L * D + 2 * D * N;
  }
  return 0;
}

/// Symbolic activation-space predictions.
inline std::int64_t space_formula(BenchOp op, const BenchShape& s) {
  const std::int64_t B = s.B, L = s.L(), D = s.D;
  return op == BenchOp::self_attention ? B * (L * L + L * D) : B * L * D;
}

inline constexpr std::int64_t kAttentionMaxL = 16384;

/// Plain single-head self-attention over [B, L, D] tokens with hidden size N:
/// softmax(Q K^T / sqrt(N)) V projected back to D. Materializes the L x L scores.
inline Tensor self_attention(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv, const Tensor& wo) {
  if (x.rank() != 3) throw ShapeError("self_attention: expects [B,L,D], got " + shape_str(x.shape()));
  if (x.dim(1) > kAttentionMaxL)
    throw DomainError("self_attention: L=" + std::to_string(x.dim(1)) + " exceeds the L x L guard of " +
                      std::to_string(kAttentionMaxL));
  Tensor q = linear(x, wq), k = linear(x, wk), v = linear(x, wv);
  Tensor scores = scale(bmm(q, k, false, true), 1.0f / std::sqrt(static_cast<float>(wq.dim(0))));
  Tensor attn = softmax(scores);
  scores = Tensor{};
  return linear(bmm(attn, v), wo);
}

/// One forward pass of op at shape s (no graph recording), measuring peak
/// activation floats and instrumented multiply-adds.
inline BenchRecord run_bench(BenchOp op, const BenchShape& s, std::uint64_t seed = 0) {
  if (s.B < 1 || s.H < 1 || s.W < 1 || s.D < 1 || s.N < 1) throw ValidationError("bench: dims must be >= 1");
  NoGradGuard no_grad;
  Rng rng(seed);
  BenchRecord rec;
  rec.op = op;
  rec.shape = s;
  rec.flops_formula = flops_formula(op, s);
  rec.space_formula = space_formula(op, s);
  const double bd = 1.0 / std::sqrt(static_cast<double>(s.D));
  auto input = [&](Shape shape) { return uniform_tensor(std::move(shape), 1.0, rng).requires_grad_(false); };
  switch (op) {
    case BenchOp::conv: {
      Tensor w = uniform_tensor({s.N, s.D, s.k, s.k}, bd, rng);
      MemoryProbe mem;
      Tensor x = input({s.B, s.D, s.H, s.W});
      FlopCounter flops;
      Tensor y = conv2d(x, w, s.k / 2);
      rec.flops_measured = flops.count();
      rec.peak_units = mem.peak();
      break;
    }
    case BenchOp::self_attention: {
      if (s.L() > kAttentionMaxL) throw DomainError("bench: attention L above guard");
      Tensor wq = uniform_tensor({s.N, s.D}, bd, rng), wk = uniform_tensor({s.N, s.D}, bd, rng);
      Tensor wv = uniform_tensor({s.N, s.D}, bd, rng);
      Tensor wo = uniform_tensor({s.D, s.N}, 1.0 / std::sqrt(static_cast<double>(s.N)), rng);
      MemoryProbe mem;
      Tensor x = input({s.B, s.L(), s.D});
      FlopCounter flops;
      Tensor y = self_attention(x, wq, wk, wv, wo);
      rec.flops_measured = flops.count();
      rec.peak_units = mem.peak();
      break;
    }
    case BenchOp::vmamba: {
      BlockOptions o;
      o.dim = s.D;
      o.state_dim = s.N;
      o.state_share = false;
      const BlockWeights w = make_block_weights(o, rng);
      MemoryProbe mem;
      Tensor x = input({s.B, s.D, s.H, s.W});
      FlopCounter flops;
      BlockOutput y = vmamba_block(x, {}, w);
      rec.flops_measured = flops.count();
      rec.peak_units = mem.peak();
      break;
    }
    case BenchOp::levm: {
      BlockOptions o;
      o.dim = s.D;
      o.state_dim = s.N;
      o.state_share = true;
      LevmWeights w{make_block_weights(o, rng), make_block_weights(o, rng)};
      const Tensor hl = input({s.B, kScanDirections, s.D, s.N}), hg = input({s.B, kScanDirections, s.D, s.N});
      MemoryProbe mem;
      Tensor x = input({s.B, s.D, s.H, s.W});
      FlopCounter flops;
      LevmOutput y = levm_block(x, LevmStates{hl, hg, {}}, s.win, s.win, w);
      rec.flops_measured = flops.count();
      rec.peak_units = mem.peak();
      break;
    }
  }
  return rec;
}

inline void write_bench_header(std::ostream& os) { os << "operator,B,L,D,N,peak_units,flops_measured,flops_formula\n"; }

inline void write_bench_row(std::ostream& os, const BenchRecord& r) {
  os << to_string(r.op) << ',' << r.shape.B << ',' << r.shape.L() << ',' << r.shape.D << ',' << r.shape.N << ','
     << r.peak_units << ',' << r.flops_measured << ',' << r.flops_formula << '\n';
}

/// Near-square H x W with H * W = L (L a power of two).
inline std::pair<std::int64_t, std::int64_t> grid_for_length(std::int64_t L) {
  if (L < 1 || (L & (L - 1)) != 0) throw ValidationError("bench: L must be a power of two, got " + std::to_string(L));
  std::int64_t h = 1;
  while (h * h * 4 <= L) h *= 2;
  return {h, L / h};
}

/// Parses an L sweep: "a..b" doubles from a up to b, otherwise a comma list.
inline std::vector<std::int64_t> parse_length_sweep(const std::string& text) {
  auto number = [&](const std::string& t) -> std::int64_t {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != t.size() || v < 1) throw ValidationError("bench: bad length '" + t + "' in '" + text + "'");
    return v;
  };
  std::vector<std::int64_t> out;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const std::int64_t lo = number(text.substr(0, dots)), hi = number(text.substr(dots + 2));
    if (hi < lo) throw ValidationError("bench: empty range '" + text + "'");
    for (std::int64_t L = lo; L <= hi; L *= 2) out.push_back(L);
  } else {
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto comma = text.find(',', start);
      out.push_back(number(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  return out;
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("loglog_slope: need two or more points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace lemamba
