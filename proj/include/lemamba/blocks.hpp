#pragma once

// Vision Mamba block with state sharing, and the local-enhanced block that
// runs it once over windows and once over the whole map.

#include <cmath>
#include <cstdint>
#include <string>

#include "lemamba/geometry.hpp"
#include "lemamba/rng.hpp"
#include "lemamba/ssm.hpp"

namespace lemamba {

inline constexpr float kAlphaInit = 1e-2f;
inline constexpr std::int64_t kFfnExpansion = 4;

enum class Scope { local, global };

/// Final scan state handed to later layers.
struct HiddenState {
  Tensor h;  // [B, K, D, N]
  Scope scope = Scope::global;
  int layer_index = 0;
};

/// S2L weights: the state is mixed along N, the input is projected D -> N.
struct StateShareWeights {
  Tensor w_state;  // [K, N, N]
  Tensor w_input;  // [K, N, D]
  Tensor alpha;    // [D]
  Tensor proj;     // [K, D, D'] when the incoming state has width D' != D
  Tensor w_skip;   // [K, N, N] for a skip-connected encoder state

  bool enabled() const { return w_state.defined(); }
};

struct FeedForwardWeights {
  Tensor w1, b1;  // [4D, D], [4D]
  Tensor w2, b2;  // [D, 4D], [D]
};

struct BlockWeights {
  std::int64_t dim = 0;
  std::int64_t state_dim = 0;
  Tensor norm_in_g, norm_in_b;    // [D]
  Tensor norm_ffn_g, norm_ffn_b;  // [D]
  ParamFnWeights ssm;
  Tensor param_a;                 // [K, D, N]
  Tensor param_delta;             // [K, D]
  StateShareWeights share;
  FeedForwardWeights ffn;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "norm_in.g", norm_in_g);
    f(prefix + "norm_in.b", norm_in_b);
    f(prefix + "ssm.w_b", ssm.w_b);
    f(prefix + "ssm.w_c", ssm.w_c);
    f(prefix + "ssm.w_delta", ssm.w_delta);
    f(prefix + "ssm.param_a", param_a);
    f(prefix + "ssm.param_delta", param_delta);
    if (share.w_state.defined()) f(prefix + "share.w_state", share.w_state);
    if (share.w_input.defined()) f(prefix + "share.w_input", share.w_input);
    if (share.alpha.defined()) f(prefix + "share.alpha", share.alpha);
    if (share.proj.defined()) f(prefix + "share.proj", share.proj);
    if (share.w_skip.defined()) f(prefix + "share.w_skip", share.w_skip);
    f(prefix + "norm_ffn.g", norm_ffn_g);
    f(prefix + "norm_ffn.b", norm_ffn_b);
    f(prefix + "ffn.w1", ffn.w1);
    f(prefix + "ffn.b1", ffn.b1);
    f(prefix + "ffn.w2", ffn.w2);
    f(prefix + "ffn.b2", ffn.b2);
  }
};

struct BlockOptions {
  std::int64_t dim = 16;
  std::int64_t state_dim = 16;
  bool state_share = true;
  std::int64_t incoming_dim = 0;  // width of the adjacent state; 0 means dim
  bool skip_state = false;
};

inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<float> v(numel_of(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor(std::move(shape), std::move(v)).requires_grad_();
}

inline Tensor constant_tensor(Shape shape, float value) { return Tensor(std::move(shape), value).requires_grad_(); }

inline BlockWeights make_block_weights(const BlockOptions& opt, Rng& rng) {
  const std::int64_t D = opt.dim, N = opt.state_dim, K = kScanDirections, F = kFfnExpansion * D;
  const double bd = 1.0 / std::sqrt(static_cast<double>(D));
  BlockWeights w;
  w.dim = D;
  w.state_dim = N;
  w.norm_in_g = constant_tensor({D}, 1.0f);
  w.norm_in_b = constant_tensor({D}, 0.0f);
  w.ssm.w_b = uniform_tensor({K, N, D}, bd, rng);
  w.ssm.w_c = uniform_tensor({K, N, D}, bd, rng);
  w.ssm.w_delta = uniform_tensor({K, D, D}, bd, rng);
  // A_n = -n per channel.
  std::vector<float> pa(K * D * N);
  for (std::size_t i = 0; i < pa.size(); ++i) pa[i] = static_cast<float>(std::log(static_cast<double>(i % N + 1)));
  w.param_a = Tensor({K, D, N}, std::move(pa)).requires_grad_();
  // softplus(param_delta) log-uniform in [1e-3, 1e-1].
  std::vector<float> pd(K * D);
  for (auto& v : pd) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    v = static_cast<float>(dt + std::log(-std::expm1(-dt)));
  }
  w.param_delta = Tensor({K, D}, std::move(pd)).requires_grad_();
  if (opt.state_share) {
    const double bn = 1.0 / std::sqrt(static_cast<double>(N));
    w.share.w_state = uniform_tensor({K, N, N}, bn, rng);
    w.share.w_input = uniform_tensor({K, N, D}, bd, rng);
    w.share.alpha = constant_tensor({D}, kAlphaInit);
    if (opt.incoming_dim > 0 && opt.incoming_dim != D)
      w.share.proj = uniform_tensor({K, D, opt.incoming_dim}, 1.0 / std::sqrt(static_cast<double>(opt.incoming_dim)), rng);
    if (opt.skip_state) w.share.w_skip = uniform_tensor({K, N, N}, bn, rng);
  }
  w.norm_ffn_g = constant_tensor({D}, 1.0f);
  w.norm_ffn_b = constant_tensor({D}, 0.0f);
  w.ffn.w1 = uniform_tensor({F, D}, bd, rng);
  w.ffn.b1 = constant_tensor({F}, 0.0f);
  w.ffn.w2 = uniform_tensor({D, F}, 1.0 / std::sqrt(static_cast<double>(F)), rng);
  w.ffn.b2 = constant_tensor({D}, 0.0f);
  return w;
}

/// States entering one VMamba pass. Undefined tensors are absent.
struct StateInputs {
  Tensor adjacent;  // [B, K, D', N]
  Tensor skip;      // [B, K, D, N]

  bool any() const { return adjacent.defined() || skip.defined(); }
};

/// Spatial-spectral state sharing: x + alpha * (h g), where h is the mixed
/// previous state [B, K, D, N] and g = Linear(x) [B, K, N, L].
/// x: [B, K, D, L]. Adjacent and skip states are summed after their own mixes.
inline Tensor s2l_state_share(const Tensor& x, const StateInputs& states, const StateShareWeights& w) {
  if (!w.enabled()) throw WiringError("s2l_state_share: block has no state-sharing weights");
  if (x.rank() != 4) throw ShapeError("s2l_state_share: x must be [B,K,D,L], got " + shape_str(x.shape()));
  const std::int64_t N = w.w_state.dim(1);
  auto mixed = [&](Tensor h, const Tensor& mix, const Tensor& proj) {
    if (h.rank() != 4 || h.dim(0) != x.dim(0) || h.dim(1) != x.dim(1))
      throw ShapeError("s2l_state_share: state " + shape_str(h.shape()) + " vs input " + shape_str(x.shape()));
    if (h.dim(3) != N)
      throw ShapeError("s2l_state_share: state size N=" + std::to_string(h.dim(3)) + " but weights expect " +
                       std::to_string(N));
    if (proj.defined()) h = grouped_linear(h, proj);
    if (h.dim(2) != x.dim(2))
      throw ShapeError("s2l_state_share: state width " + std::to_string(h.dim(2)) + " vs input width " +
                       std::to_string(x.dim(2)) + " without a projection");
    // Mix along N: [B,K,N,D] -> grouped linear over N.
    return grouped_linear(transpose(h, 2, 3), mix);
  };
  Tensor h_t;  // [B, K, N, D]
  if (states.adjacent.defined()) h_t = mixed(states.adjacent, w.w_state, w.proj);
  if (states.skip.defined()) {
    if (!w.w_skip.defined()) throw WiringError("s2l_state_share: skip state given but block has no skip weights");
    Tensor s = mixed(states.skip, w.w_skip, Tensor{});
    h_t = h_t.defined() ? add(h_t, s) : s;
  }
  if (!h_t.defined()) return x;
  Tensor g = grouped_linear(x, w.w_input);    // [B, K, N, L]
  Tensor hg = bmm(h_t, g, /*trans_a=*/true);  // [B, K, D, L]
  return add(x, broadcast_mul(hg, w.alpha, 2));
}

struct BlockOutput {
  Tensor x;  // [B, D, H, W]
  Tensor h;  // [B, K, D, N]
};

inline Tensor feed_forward(const Tensor& x, const FeedForwardWeights& w) {
  return channel_linear(gelu(channel_linear(x, w.w1, w.b1)), w.w2, w.b2);
}

/// norm -> cross-scan -> state sharing -> parametrize -> per-direction
/// selective scan -> cross-merge -> residual -> FFN with residual.
/// The scan starts from a zero state; previous states only enter through
/// state sharing.
inline BlockOutput vmamba_block(const Tensor& x, const StateInputs& states, const BlockWeights& w) {
  if (x.rank() != 4 || x.dim(1) != w.dim)
    throw ShapeError("vmamba_block: input " + shape_str(x.shape()) + " vs block width " + std::to_string(w.dim));
  check_finite(x, "vmamba_block input");
  const std::int64_t H = x.dim(2), W = x.dim(3);
  Tensor seq = cross_scan(layernorm(x, w.norm_in_g, w.norm_in_b, 1));
  if (states.any()) seq = s2l_state_share(seq, states, w.share);
  const SSMParams p = param_fn(seq, w.ssm, w.param_a, w.param_delta);
  ScanOutput scan = selective_scan(seq, p);
  Tensor merged = add(cross_merge(scan.y, H, W), x);
  Tensor out = add(feed_forward(layernorm(merged, w.norm_ffn_g, w.norm_ffn_b, 1), w.ffn), merged);
  return {out, scan.h_final};
}

struct LevmWeights {
  BlockWeights local;
  BlockWeights global;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    local.visit(prefix + "local.", f);
    global.visit(prefix + "global.", f);
  }
};

struct LevmStates {
  Tensor local;   // adjacent local state [B, K, D', N]
  Tensor global;  // adjacent global state [B, K, D', N]
  Tensor skip;    // skip-connected encoder state [B, K, D, N]
};

struct LevmOutput {
  Tensor x;
  HiddenState local;
  HiddenState global;
};

namespace detail {

// [B, ...] -> [B*P, ...], each batch entry repeated P times.
inline Tensor repeat_per_window(const Tensor& h, std::int64_t P) {
  const std::int64_t B = h.dim(0);
  const std::int64_t inner = static_cast<std::int64_t>(h.numel()) / B;
  auto index = std::make_shared<std::vector<std::int64_t>>(B * P * inner);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t p = 0; p < P; ++p)
      for (std::int64_t i = 0; i < inner; ++i) (*index)[(b * P + p) * inner + i] = b * inner + i;
  Shape shape = h.shape();
  shape[0] = B * P;
  return gather(h, index, shape);
}

// [B*P, ...] -> [B, ...] by averaging over the P windows of each entry.
inline Tensor mean_over_windows(const Tensor& h, std::int64_t B) {
  const std::int64_t P = h.dim(0) / B;
  Shape out_shape = h.shape();
  out_shape[0] = B;
  const std::int64_t inner = static_cast<std::int64_t>(h.numel()) / h.dim(0);
  Tensor pooled = sum_axis(reshape(h, {B, P, inner}), 1);
  return reshape(scale(pooled, 1.0f / static_cast<float>(P)), out_shape);
}

}  // namespace detail

/// Local pass over (h, w) windows, merge with residual, then a global pass.
inline LevmOutput levm_block(const Tensor& x, const LevmStates& states, std::int64_t win_h, std::int64_t win_w,
                             const LevmWeights& w, int layer_index = 0) {
  if (win_h < 1 || win_w < 1) throw DomainError("levm_block: window dims must be >= 1");
  const std::int64_t B = x.dim(0);
  WindowGrid grid = window_partition(x, win_h, win_w);
  StateInputs local_in;
  if (states.local.defined()) local_in.adjacent = detail::repeat_per_window(states.local, grid.count());
  BlockOutput local = vmamba_block(grid.windows, local_in, w.local);
  grid.windows = local.x;
  Tensor mid = add(window_merge(grid), x);
  BlockOutput global = vmamba_block(mid, StateInputs{states.global, states.skip}, w.global);
  LevmOutput out;
  out.x = global.x;
  out.local = HiddenState{detail::mean_over_windows(local.h, B), Scope::local, layer_index};
  out.global = HiddenState{global.h, Scope::global, layer_index};
  return out;
}

}  // namespace lemamba
