#pragma once

// Multi-scale encoder/decoder built from LEVM blocks, the state bus carrying
// hidden states between layers, and the training loss.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lemamba/blocks.hpp"
#include "lemamba/config.hpp"
#include "lemamba/resample.hpp"
#include "lemamba/tensor_io.hpp"

namespace lemamba {

/// Adjacent states flow block to block; skip entries go from the encoder at a
/// scale to the decoder at the same scale and are read exactly once.
class StateBus {
 public:
  struct Skip {
    Tensor features;  // [B, D_s, H_s, W_s]
    Tensor h;         // global state of the last encoder block, [B, K, D_s, N]
  };

  Tensor local, global;  // latest adjacent states

  void write_skip(std::int64_t scale, Skip entry) {
    if (!skip_.emplace(scale, Slot{std::move(entry), false}).second)
      throw WiringError("state bus: skip entry for scale " + std::to_string(scale) + " written twice");
  }

  Skip read_skip(std::int64_t scale) {
    auto it = skip_.find(scale);
    if (it == skip_.end()) throw WiringError("state bus: no skip entry for scale " + std::to_string(scale));
    if (it->second.consumed)
      throw WiringError("state bus: skip entry for scale " + std::to_string(scale) + " read twice");
    it->second.consumed = true;
    return it->second.entry;
  }

  /// Throws unless every written skip entry has been consumed.
  void check_drained() const {
    for (const auto& [scale, slot] : skip_)
      if (!slot.consumed) throw WiringError("state bus: skip entry for scale " + std::to_string(scale) + " unread");
  }

  std::size_t pending() const {
    std::size_t n = 0;
    for (const auto& kv : skip_) n += kv.second.consumed ? 0 : 1;
    return n;
  }

 private:
  struct Slot {
    Skip entry;
    bool consumed;
  };
  std::map<std::int64_t, Slot> skip_;
};

struct Projection {
  Tensor w;  // [Dout, Din]
  Tensor b;  // [Dout]

  Tensor operator()(const Tensor& x) const { return channel_linear(x, w, b); }
};

struct EncoderWeights {
  Projection down;  // 4 * D_{s-1} -> D_s, absent at scale 0
  Projection in;    // (D_s or S) + pan_bands -> D_s
  std::vector<LevmWeights> blocks;
};

struct DecoderWeights {
  Projection up;  // D_{s+1} -> D_s
  Projection in;  // 2 * D_s -> D_s
  std::vector<LevmWeights> blocks;
};

struct NetWeights {
  std::vector<EncoderWeights> encoder;  // index = scale
  std::vector<DecoderWeights> decoder;  // index = scale, 0..num_scales-2
  Projection head;                      // D_0 -> S

  template <class F>
  void visit(F&& f) {
    auto proj = [&](const std::string& name, Projection& p) {
      if (!p.w.defined()) return;
      f(name + ".w", p.w);
      f(name + ".b", p.b);
    };
    for (std::size_t s = 0; s < encoder.size(); ++s) {
      const std::string e = "enc" + std::to_string(s);
      proj(e + ".down", encoder[s].down);
      proj(e + ".in", encoder[s].in);
      for (std::size_t i = 0; i < encoder[s].blocks.size(); ++i)
        encoder[s].blocks[i].visit(e + ".block" + std::to_string(i) + ".", f);
    }
    for (std::size_t s = decoder.size(); s-- > 0;) {
      const std::string d = "dec" + std::to_string(s);
      proj(d + ".up", decoder[s].up);
      proj(d + ".in", decoder[s].in);
      for (std::size_t i = 0; i < decoder[s].blocks.size(); ++i)
        decoder[s].blocks[i].visit(d + ".block" + std::to_string(i) + ".", f);
    }
    proj("head", head);
  }

  /// Parameters in a fixed order, with stable names.
  std::vector<std::pair<std::string, Tensor>> parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
  }

  std::int64_t parameter_count() {
    std::int64_t n = 0;
    visit([&](const std::string&, Tensor& t) { n += static_cast<std::int64_t>(t.numel()); });
    return n;
  }
};

namespace detail {

inline Projection make_projection(std::int64_t din, std::int64_t dout, Rng& rng) {
  return {uniform_tensor({dout, din}, 1.0 / std::sqrt(static_cast<double>(din)), rng), constant_tensor({dout}, 0.0f)};
}

// Width of the adjacent state arriving at the next block, tracked while building.
struct ChainCursor {
  std::int64_t width = 0;  // 0 = no state yet
};

inline LevmWeights make_levm(const NetConfig& cfg, std::int64_t dim, bool skip, ChainCursor& cur, Rng& rng) {
  const bool share = cfg.state_share != StateShare::none;
  BlockOptions local;
  local.dim = dim;
  local.state_dim = cfg.state_dim;
  local.state_share = share && cur.width > 0;
  local.incoming_dim = cur.width;
  BlockOptions global = local;
  global.skip_state = share && skip && cfg.state_share == StateShare::full;
  global.state_share = local.state_share || global.skip_state;
  LevmWeights w;
  w.local = make_block_weights(local, rng);
  w.global = make_block_weights(global, rng);
  cur.width = dim;
  return w;
}

}  // namespace detail

/// Fresh weights for cfg, drawn from a generator seeded with cfg.seed.
inline NetWeights init_net(const NetConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  NetWeights w;
  const std::int64_t S = cfg.num_scales;
  detail::ChainCursor cur;
  w.encoder.resize(S);
  for (std::int64_t s = 0; s < S; ++s) {
    auto& e = w.encoder[s];
    const std::int64_t D = cfg.dims[s];
    if (s > 0) e.down = detail::make_projection(4 * cfg.dims[s - 1], D, rng);
    e.in = detail::make_projection((s == 0 ? cfg.spectral_bands : D) + cfg.pan_bands, D, rng);
    for (std::int64_t i = 0; i < cfg.blocks_per_scale[s]; ++i) e.blocks.push_back(detail::make_levm(cfg, D, false, cur, rng));
  }
  w.decoder.resize(S - 1);
  for (std::int64_t s = S - 2; s >= 0; --s) {
    auto& d = w.decoder[s];
    const std::int64_t D = cfg.dims[s];
    d.up = detail::make_projection(cfg.dims[s + 1], D, rng);
    d.in = detail::make_projection(2 * D, D, rng);
    for (std::int64_t i = 0; i < cfg.blocks_per_scale[s]; ++i)
      d.blocks.push_back(detail::make_levm(cfg, D, i == 0, cur, rng));
  }
  w.head = detail::make_projection(cfg.dims[0], cfg.spectral_bands, rng);
  return w;
}

/// 2x2 non-overlapping patch fold [B, D, H, W] -> [B, 4D, H/2, W/2] (channel
/// order d, row offset, column offset) followed by a linear map. Odd extents
/// are zero-padded first.
inline Tensor downsample(const Tensor& x, const Projection& p) {
  if (x.rank() != 4) throw ShapeError("downsample: expects [B,D,H,W], got " + shape_str(x.shape()));
  const std::int64_t B = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t h = (H + 1) / 2, w = (W + 1) / 2;
  auto index = std::make_shared<std::vector<std::int64_t>>(B * 4 * D * h * w);
  std::size_t n = 0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t d = 0; d < D; ++d)
      for (std::int64_t o = 0; o < 4; ++o)
        for (std::int64_t i = 0; i < h; ++i)
          for (std::int64_t j = 0; j < w; ++j) {
            const std::int64_t r = 2 * i + o / 2, c = 2 * j + o % 2;
            (*index)[n++] = (r < H && c < W) ? ((b * D + d) * H + r) * W + c : -1;
          }
  return p(gather(x, index, {B, 4 * D, h, w}));
}

/// Nearest-neighbour 2x upsampling followed by a linear map.
inline Tensor upsample(const Tensor& x, const Projection& p) {
  if (x.rank() != 4) throw ShapeError("upsample: expects [B,D,H,W], got " + shape_str(x.shape()));
  const std::int64_t B = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto index = std::make_shared<std::vector<std::int64_t>>(B * D * 4 * H * W);
  std::size_t n = 0;
  for (std::int64_t bd = 0; bd < B * D; ++bd)
    for (std::int64_t i = 0; i < 2 * H; ++i)
      for (std::int64_t j = 0; j < 2 * W; ++j) (*index)[n++] = (bd * H + i / 2) * W + j / 2;
  return p(gather(x, index, {B, D, 2 * H, 2 * W}));
}

namespace detail {

inline Tensor run_blocks(Tensor x, const std::vector<LevmWeights>& blocks, const NetConfig& cfg, StateBus& bus,
                         const Tensor& skip_h, int& layer) {
  const bool share = cfg.state_share != StateShare::none;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    LevmStates st;
    if (share) {
      st.local = bus.local;
      st.global = bus.global;
      if (i == 0 && cfg.state_share == StateShare::full) st.skip = skip_h;
    }
    LevmOutput out = levm_block(x, st, cfg.win_h, cfg.win_w, blocks[i], layer++);
    x = out.x;
    bus.local = out.local.h;
    bus.global = out.global.h;
  }
  return x;
}

inline void check_inputs(const Tensor& lrms, const Tensor& pan, const NetConfig& cfg) {
  if (lrms.rank() != 4 || lrms.dim(1) != cfg.spectral_bands)
    throw ShapeError("forward_fuse: lrms must be [B," + std::to_string(cfg.spectral_bands) + ",h,w], got " +
                     shape_str(lrms.shape()));
  if (pan.rank() != 4 || pan.dim(0) != lrms.dim(0) || pan.dim(1) != cfg.pan_bands ||
      pan.dim(2) != lrms.dim(2) * cfg.ratio || pan.dim(3) != lrms.dim(3) * cfg.ratio)
    throw ShapeError("forward_fuse: pan " + shape_str(pan.shape()) + " does not match lrms " +
                     shape_str(lrms.shape()) + " at ratio " + std::to_string(cfg.ratio));
}

}  // namespace detail

/// Encoder at one scale: concat(x, pan) -> linear -> LEVM blocks.
inline Tensor encoder_layer(const Tensor& x, const Tensor& pan, const EncoderWeights& w, const NetConfig& cfg,
                            StateBus& bus, int& layer) {
  if (x.dim(2) != pan.dim(2) || x.dim(3) != pan.dim(3))
    throw ShapeError("encoder_layer: pan " + shape_str(pan.shape()) + " not at the scale of " + shape_str(x.shape()));
  Tensor h = w.in(concat({x, pan}, 1));
  return detail::run_blocks(h, w.blocks, cfg, bus, Tensor{}, layer);
}

/// Decoder at one scale: concat(x, x_enc) -> linear -> LEVM blocks, the first
/// block also receiving the encoder's state.
inline Tensor decoder_layer(const Tensor& x, const StateBus::Skip& enc, const DecoderWeights& w, const NetConfig& cfg,
                            StateBus& bus, int& layer) {
  Tensor h = w.in(concat({x, enc.features}, 1));
  return detail::run_blocks(h, w.blocks, cfg, bus, enc.h, layer);
}

/// lrms [B, S, h, w], pan [B, P, h*r, w*r] -> fused [B, S, h*r, w*r].
/// fused = head(decoder(encoder(...))) + bicubic(lrms).
inline Tensor forward_fuse(const Tensor& lrms, const Tensor& pan, const NetWeights& w, const NetConfig& cfg) {
  detail::check_inputs(lrms, pan, cfg);
  const std::int64_t H = pan.dim(2), W = pan.dim(3), S = cfg.num_scales;
  const std::int64_t Hp = round_up(H, cfg.ladder_multiple()), Wp = round_up(W, cfg.ladder_multiple());
  const Tensor up = bicubic_upsample(lrms, cfg.ratio);
  const Tensor pan_p = zero_pad(pan, Hp, Wp);
  StateBus bus;
  int layer = 0;
  Tensor x = zero_pad(up, Hp, Wp);
  for (std::int64_t s = 0; s < S; ++s) {
    if (s > 0) x = downsample(x, w.encoder[s].down);
    const Tensor pan_s = s == 0 ? pan_p : area_downsample(pan_p, std::int64_t{1} << s);
    x = encoder_layer(x, pan_s, w.encoder[s], cfg, bus, layer);
    if (s < S - 1) bus.write_skip(s, {x, bus.global});
  }
  for (std::int64_t s = S - 2; s >= 0; --s) {
    x = upsample(x, w.decoder[s].up);
    x = decoder_layer(x, bus.read_skip(s), w.decoder[s], cfg, bus, layer);
  }
  bus.check_drained();
  Tensor out = w.head(x);
  if (Hp != H) out = slice(out, 2, 0, H);
  if (Wp != W) out = slice(out, 3, 0, W);
  return add(out, up);
}

/// Single-sample convenience: lrms [S, h, w], pan [P, H, W] -> [S, H, W].
inline Tensor fuse_sample(const Tensor& lrms, const Tensor& pan, const NetWeights& w, const NetConfig& cfg) {
  auto batched = [](const Tensor& t) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    return reshape(t, s);
  };
  Tensor y = forward_fuse(batched(lrms), batched(pan), w, cfg);
  return reshape(y, Shape(y.shape().begin() + 1, y.shape().end()));
}

inline void zero_weights(NetWeights& w) {
  w.visit([](const std::string&, Tensor& t) {
    auto d = t.data_mut();
    std::fill(d.begin(), d.end(), 0.0f);
  });
}

// ---------------------------------------------------------------------------
// Checkpoint mapping.

inline TensorMap weights_to_map(NetWeights& w) {
  TensorMap out;
  w.visit([&](const std::string& name, Tensor& t) { out.emplace(name, t.detach()); });
  return out;
}

/// Copies matching entries into w. Every parameter must be present with the
/// right shape; extra entries (optimizer state, metadata) are ignored.
inline void load_weights(NetWeights& w, const TensorMap& m) {
  w.visit([&](const std::string& name, Tensor& t) {
    auto it = m.find(name);
    if (it == m.end()) throw FormatError("checkpoint: missing parameter " + name);
    if (it->second.shape() != t.shape())
      throw FormatError("checkpoint: " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                        shape_str(t.shape()));
    auto dst = t.data_mut();
    std::copy(it->second.data().begin(), it->second.data().end(), dst.begin());
  });
}

// ---------------------------------------------------------------------------
// Loss.

inline constexpr double kSsimSigma = 1.5;
inline constexpr std::int64_t kSsimWindow = 11;
inline constexpr double kSsimK1 = 0.01, kSsimK2 = 0.03;

/// Odd window side used for an H x W image: 11, or the largest odd size that fits.
inline std::int64_t ssim_window_size(std::int64_t H, std::int64_t W) {
  std::int64_t k = std::min({kSsimWindow, H, W});
  if (k % 2 == 0) --k;
  return std::max<std::int64_t>(k, 1);
}

namespace detail {

inline Tensor gaussian_kernel_2d(std::int64_t channels, std::int64_t k, double sigma) {
  std::vector<double> g(k);
  double total = 0.0;
  for (std::int64_t i = 0; i < k; ++i) {
    const double t = static_cast<double>(i - k / 2);
    g[i] = std::exp(-t * t / (2.0 * sigma * sigma));
    total += g[i];
  }
  std::vector<float> w(channels * k * k);
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t i = 0; i < k; ++i)
      for (std::int64_t j = 0; j < k; ++j) w[(c * k + i) * k + j] = static_cast<float>(g[i] * g[j] / (total * total));
  return Tensor({channels, k, k}, std::move(w));
}

}  // namespace detail

/// Differentiable mean SSIM over [B, C, H, W] (valid-region Gaussian windows).
inline Tensor ssim_tensor(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape() || x.rank() != 4)
    throw ShapeError("ssim: expects matching [B,C,H,W], got " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
  const std::int64_t k = ssim_window_size(x.dim(2), x.dim(3));
  const Tensor g = detail::gaussian_kernel_2d(x.dim(1), k, kSsimSigma);
  const float c1 = static_cast<float>(kSsimK1 * kSsimK1), c2 = static_cast<float>(kSsimK2 * kSsimK2);
  auto blur = [&](const Tensor& t) { return conv2d_depthwise(t, g); };
  Tensor mx = blur(x), my = blur(y);
  Tensor mxx = mul(mx, mx), myy = mul(my, my), mxy = mul(mx, my);
  Tensor sxx = sub(blur(mul(x, x)), mxx);
  Tensor syy = sub(blur(mul(y, y)), myy);
  Tensor sxy = sub(blur(mul(x, y)), mxy);
  Tensor num = mul(add_scalar(scale(mxy, 2.0f), c1), add_scalar(scale(sxy, 2.0f), c2));
  Tensor den = mul(add_scalar(add(mxx, myy), c1), add_scalar(add(sxx, syy), c2));
  return mean(div(num, den));
}

struct LossTerms {
  Tensor total;
  Tensor l1;         // mean |fused - gt|
  Tensor ssim_loss;  // 1 - SSIM
};

/// mean L1 + lambda * (1 - SSIM).
inline LossTerms fusion_loss(const Tensor& fused, const Tensor& gt, double lambda) {
  if (fused.shape() != gt.shape())
    throw ShapeError("loss: fused " + shape_str(fused.shape()) + " vs gt " + shape_str(gt.shape()));
  auto as4 = [](const Tensor& t) {
    if (t.rank() == 4) return t;
    if (t.rank() == 3) return reshape(t, {1, t.dim(0), t.dim(1), t.dim(2)});
    throw ShapeError("loss: expects [C,H,W] or [B,C,H,W]");
  };
  LossTerms out;
  out.l1 = mean(abs(sub(fused, gt)));
  out.ssim_loss = add_scalar(neg(ssim_tensor(as4(fused), as4(gt))), 1.0f);
  out.total = add(out.l1, scale(out.ssim_loss, static_cast<float>(lambda)));
  return out;
}

}  // namespace lemamba
