#pragma once

// Training loop, checkpoints and evaluation.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "lemamba/data.hpp"
#include "lemamba/metrics.hpp"
#include "lemamba/net.hpp"
#include "lemamba/optim.hpp"

namespace lemamba {

struct LossRow {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  double l1 = 0.0;
  double ssim_loss = 0.0;
  double total = 0.0;
};

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRow>& rows) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  os << "step,epoch,lr,l1,ssim_loss,total\n" << std::setprecision(9);
  for (const auto& r : rows)
    os << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.l1 << ',' << r.ssim_loss << ',' << r.total << '\n';
}

/// One minibatch in network layout.
struct Batch {
  Tensor lrms;  // [B, S, c/r, c/r]
  Tensor pan;   // [B, P, c, c]
  Tensor gt;    // [B, S, c, c]
};

namespace detail {

// Copies the [C, h, w] window at (i0, j0) of a [C, H, W] tensor into dst.
inline void copy_window(const Tensor& src, std::int64_t i0, std::int64_t j0, std::int64_t h, std::int64_t w,
                        float* dst) {
  const std::int64_t C = src.dim(0), H = src.dim(1), W = src.dim(2);
  if (i0 + h > H || j0 + w > W) throw ShapeError("crop window outside image");
  const auto d = src.data();
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t i = 0; i < h; ++i)
      std::copy_n(d.data() + (c * H + i0 + i) * W + j0, w, dst + (c * h + i) * w);
}

}  // namespace detail

/// Stacks samples, each cropped to a crop x crop GT window at a ratio-aligned
/// offset drawn from rng (crop = 0 keeps full images).
inline Batch make_batch(const std::vector<const FusionSample*>& samples, std::int64_t crop, std::int64_t ratio, Rng& rng) {
  const FusionSample& first = *samples.front();
  const std::int64_t S = first.gt.dim(0), P = first.pan.dim(0);
  const std::int64_t ch = crop ? crop : first.gt.dim(1), cw = crop ? crop : first.gt.dim(2);
  const std::int64_t B = static_cast<std::int64_t>(samples.size()), lh = ch / ratio, lw = cw / ratio;
  std::vector<float> lrms(B * S * lh * lw), pan(B * P * ch * cw), gt(B * S * ch * cw);
  for (std::int64_t b = 0; b < B; ++b) {
    const FusionSample& s = *samples[b];
    if (s.gt.dim(1) < ch || s.gt.dim(2) < cw || s.gt.dim(0) != S || s.pan.dim(0) != P)
      throw ShapeError("batch: sample " + s.id + " does not fit the crop or band layout");
    if (s.lrms.dim(1) * ratio != s.gt.dim(1) || s.lrms.dim(2) * ratio != s.gt.dim(2))
      throw ShapeError("batch: sample " + s.id + " lrms/gt extents disagree with ratio " + std::to_string(ratio));
    const std::int64_t ni = (s.gt.dim(1) - ch) / ratio + 1, nj = (s.gt.dim(2) - cw) / ratio + 1;
    const std::int64_t oi = static_cast<std::int64_t>(rng.below(ni)), oj = static_cast<std::int64_t>(rng.below(nj));
    detail::copy_window(s.lrms, oi, oj, lh, lw, lrms.data() + b * S * lh * lw);
    detail::copy_window(s.pan, oi * ratio, oj * ratio, ch, cw, pan.data() + b * P * ch * cw);
    detail::copy_window(s.gt, oi * ratio, oj * ratio, ch, cw, gt.data() + b * S * ch * cw);
  }
  return {Tensor({B, S, lh, lw}, std::move(lrms)), Tensor({B, P, ch, cw}, std::move(pan)),
          Tensor({B, S, ch, cw}, std::move(gt))};
}

/// Model, optimizer and loop position; everything a checkpoint restores.
struct TrainState {
  NetWeights weights;
  OptimState opt;
  std::int64_t step = 0;   // optimizer steps taken
  std::int64_t epoch = 0;  // current epoch
  std::int64_t batch = 0;  // next batch index inside the epoch
};

inline TrainState init_train_state(const Config& cfg) {
  TrainState st;
  st.weights = init_net(cfg.net);
  st.opt.lr = cfg.train.lr;
  st.opt.weight_decay = cfg.train.weight_decay;
  return st;
}

inline TensorMap state_to_map(TrainState& st) {
  TensorMap m = weights_to_map(st.weights);
  const auto params = st.weights.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Shape& shape = params[k].second.shape();
    const bool have = k < st.opt.m.size() && !st.opt.m[k].empty();
    m.emplace("opt.m." + params[k].first, have ? Tensor(shape, st.opt.m[k]) : Tensor(shape, 0.0f));
    m.emplace("opt.v." + params[k].first, have ? Tensor(shape, st.opt.v[k]) : Tensor(shape, 0.0f));
  }
  // Counters are stored as two 24-bit halves so they stay exact in float32.
  auto counter = [&](const std::string& name, std::int64_t v) {
    m.emplace(name, Tensor({2}, std::vector<float>{static_cast<float>(v >> 24), static_cast<float>(v & 0xffffff)}));
  };
  counter("meta.step", st.step);
  counter("meta.epoch", st.epoch);
  counter("meta.batch", st.batch);
  counter("meta.opt_step", st.opt.step);
  return m;
}

inline void load_state(TrainState& st, const TensorMap& m) {
  load_weights(st.weights, m);
  auto params = st.weights.parameters();
  st.opt.m.assign(params.size(), {});
  st.opt.v.assign(params.size(), {});
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto im = m.find("opt.m." + params[k].first), iv = m.find("opt.v." + params[k].first);
    if (im == m.end() || iv == m.end()) continue;
    st.opt.m[k].assign(im->second.data().begin(), im->second.data().end());
    st.opt.v[k].assign(iv->second.data().begin(), iv->second.data().end());
  }
  auto counter = [&](const std::string& name) -> std::int64_t {
    auto it = m.find(name);
    if (it == m.end()) return 0;
    if (it->second.numel() != 2) throw FormatError("checkpoint: bad counter " + name);
    return (static_cast<std::int64_t>(it->second[0]) << 24) + static_cast<std::int64_t>(it->second[1]);
  };
  st.step = counter("meta.step");
  st.epoch = counter("meta.epoch");
  st.batch = counter("meta.batch");
  st.opt.step = counter("meta.opt_step");
}

struct TrainOptions {
  std::filesystem::path out_dir;     // checkpoints and loss.csv; empty = write nothing
  std::filesystem::path resume;      // checkpoint to continue from
  std::function<void(const LossRow&)> on_step;
};

struct TrainResult {
  std::vector<LossRow> curve;
  TrainState state;
};

namespace detail {

// Sample order for an epoch depends only on (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, std::int64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::derive(seed, 1, static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

}  // namespace detail

/// Minibatch AdamW with global-norm clipping. Runs until `epochs` epochs or
/// `max_steps` steps. Deterministic in (config, data); resuming from a
/// checkpoint continues the identical sequence.
inline TrainResult train(const Config& cfg, const std::vector<FusionSample>& data, const TrainOptions& opt = {}) {
  cfg.validate();
  if (data.empty()) throw ValidationError("train: empty training split");
  TrainResult res;
  TrainState& st = res.state;
  st = init_train_state(cfg);
  if (!opt.resume.empty()) load_state(st, load_checkpoint(opt.resume));
  if (!opt.out_dir.empty()) std::filesystem::create_directories(opt.out_dir);
  auto params = st.weights.parameters();
  const std::int64_t B = cfg.train.batch;
  const std::int64_t batches = (static_cast<std::int64_t>(data.size()) + B - 1) / B;
  auto done = [&] {
    return st.epoch >= cfg.train.epochs || (cfg.train.max_steps > 0 && st.step >= cfg.train.max_steps);
  };
  auto save = [&](const std::string& name) {
    if (!opt.out_dir.empty()) save_checkpoint(opt.out_dir / name, state_to_map(st));
  };
  Graph::current().clear();
  while (!done()) {
    const auto order = detail::epoch_order(cfg.net.seed, st.epoch, data.size());
    st.opt.lr = lr_schedule(st.epoch, cfg.train.epochs, cfg.train.lr);
    for (; st.batch < batches && !done(); ++st.batch) {
      std::vector<const FusionSample*> members;
      for (std::int64_t i = st.batch * B; i < std::min<std::int64_t>((st.batch + 1) * B, data.size()); ++i)
        members.push_back(&data[order[i]]);
      Rng crop_rng = Rng::derive(cfg.net.seed, 2, static_cast<std::uint64_t>(st.step));
      const Batch batch = make_batch(members, cfg.train.crop, cfg.net.ratio, crop_rng);
      zero_grads(params);
      const Tensor fused = forward_fuse(batch.lrms, batch.pan, st.weights, cfg.net);
      const LossTerms loss = fusion_loss(fused, batch.gt, cfg.net.lambda);
      LossRow row{st.step, st.epoch, st.opt.lr, loss.l1.item(), loss.ssim_loss.item(), loss.total.item()};
      if (!std::isfinite(row.total)) {
        Graph::current().clear();
        save("last_good.lmck");
        throw NumericalError("train: loss diverged at step " + std::to_string(st.step) +
                             (opt.out_dir.empty() ? std::string() : "; last good state in last_good.lmck"));
      }
      backward(loss.total);
      clip_grad_norm(params, cfg.train.clip_norm);
      adamw_step(params, st.opt);
      ++st.step;
      res.curve.push_back(row);
      if (opt.on_step) opt.on_step(row);
    }
    if (st.batch >= batches) {
      st.batch = 0;
      ++st.epoch;
      if (cfg.train.checkpoint_every > 0 && st.epoch % cfg.train.checkpoint_every == 0)
        save("epoch" + std::to_string(st.epoch) + ".lmck");
    }
  }
  zero_grads(params);
  save("final.lmck");
  if (!opt.out_dir.empty()) write_loss_csv(opt.out_dir / "loss.csv", res.curve);
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct MetricStats {
  MetricReport mean;
  MetricReport std;
  std::size_t count = 0;
};

inline MetricStats summarize(const std::vector<MetricReport>& rows) {
  MetricStats s;
  s.count = rows.size();
  if (rows.empty()) return s;
  auto field = [&](double MetricReport::*f, double& mean, double& sd) {
    double acc = 0.0;
    for (const auto& r : rows) acc += r.*f;
    mean = acc / static_cast<double>(rows.size());
    double var = 0.0;
    for (const auto& r : rows) var += (r.*f - mean) * (r.*f - mean);
    sd = std::sqrt(var / static_cast<double>(rows.size()));
  };
  field(&MetricReport::sam_deg, s.mean.sam_deg, s.std.sam_deg);
  field(&MetricReport::ergas, s.mean.ergas, s.std.ergas);
  field(&MetricReport::psnr_db, s.mean.psnr_db, s.std.psnr_db);
  field(&MetricReport::ssim, s.mean.ssim, s.std.ssim);
  field(&MetricReport::scc, s.mean.scc, s.std.scc);
  return s;
}

/// Fused predictions for each sample, without recording gradients.
inline std::vector<Tensor> predict(const NetWeights& w, const NetConfig& cfg, const std::vector<FusionSample>& data) {
  NoGradGuard guard;
  std::vector<Tensor> out;
  for (const auto& s : data) out.push_back(fuse_sample(s.lrms, s.pan, w, cfg));
  return out;
}

inline MetricStats evaluate_predictions(const std::vector<Tensor>& fused, const std::vector<FusionSample>& data,
                                        std::int64_t ratio) {
  std::vector<MetricReport> rows;
  for (std::size_t i = 0; i < data.size(); ++i) rows.push_back(evaluate_pair(fused[i], data[i].gt, ratio));
  return summarize(rows);
}

inline MetricStats evaluate(const NetWeights& w, const NetConfig& cfg, const std::vector<FusionSample>& data) {
  return evaluate_predictions(predict(w, cfg, data), data, cfg.ratio);
}

/// Metrics of plain bicubic upsampling of the LRMS input.
inline MetricStats evaluate_bicubic(const std::vector<FusionSample>& data, std::int64_t ratio) {
  std::vector<Tensor> up;
  for (const auto& s : data) up.push_back(bicubic_upsample(s.lrms, ratio));
  return evaluate_predictions(up, data, ratio);
}

/// Mean absolute error over a split.
inline double mean_l1(const std::vector<Tensor>& fused, const std::vector<FusionSample>& data) {
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto a = fused[i].data(), b = data[i].gt.data();
    for (std::size_t k = 0; k < a.size(); ++k) acc += std::fabs(static_cast<double>(a[k]) - b[k]);
    n += a.size();
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

inline std::string format_report(const std::string& label, const MetricStats& s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << label << " (n=" << s.count << ")\n";
  auto line = [&](const char* name, double m, double sd) { os << "  " << std::left << std::setw(6) << name << m << " ± " << sd << "\n"; };
  line("SAM", s.mean.sam_deg, s.std.sam_deg);
  line("ERGAS", s.mean.ergas, s.std.ergas);
  line("PSNR", s.mean.psnr_db, s.std.psnr_db);
  line("SSIM", s.mean.ssim, s.std.ssim);
  line("SCC", s.mean.scc, s.std.scc);
  return os.str();
}

}  // namespace lemamba
