// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <map>
#include <iostream>
#include <sstream>
#include <string>

#include "test_util.hpp"

using namespace lemamba;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  failures += !ok;
}

void criterion(const std::string& name, const std::function<bool(std::ostringstream&)>& body) {
  std::ostringstream detail;
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail << "exception: " << e.what();
  }
  report(name, ok, detail.str());
}

const std::vector<FusionSample>& split(const std::string& name) {
  static std::map<std::string, std::vector<FusionSample>> cache;
  static const auto dir = [] {
    const auto d = tu::scratch("dataset");
    DatasetSpec spec;
    gen_synthetic_dataset(spec, d);
    return d;
  }();
  auto it = cache.find(name);
  if (it == cache.end()) it = cache.emplace(name, load_split(dir / (name + ".txt"))).first;
  return it->second;
}

Config toy_config() {
  Config c;
  c.train.max_steps = 200;
  return c;
}

BenchShape bench_shape(std::int64_t L, std::int64_t D, std::int64_t N) {
  BenchShape s;
  std::tie(s.H, s.W) = grid_for_length(L);
  s.D = D;
  s.N = N;
  return s;
}

}  // namespace

int main() {
  std::cout.setf(std::ios::fixed);
  std::cout.precision(4);

  criterion("scan matches convolution-kernel oracle", [](auto& d) {
    const auto t0 = Clock::now();
    const double err = scan_oracle_error(100, 0);
    const double t = seconds_since(t0);
    d << "100 instances, max err " << err << " (limit 1e-5), " << t << " s (limit 10)";
    return err <= 1e-5 && t < 10.0;
  });

  criterion("hand-worked scan", [](auto& d) {
    const Tensor y = hand_scan_output();
    const double err = std::max({std::fabs(y[0] - 0.5), std::fabs(y[1] - 0.75), std::fabs(y[2] - 0.875)});
    d << "y = [" << y[0] << ", " << y[1] << ", " << y[2] << "], err " << err << " (limit 1e-7)";
    return err <= 1e-7;
  });

  criterion("gradient checks", [](auto& d) {
    const auto t0 = Clock::now();
    auto checks = op_gradient_checks(0);
    checks.push_back(scan_gradient_check(0));
    checks.push_back(levm_gradient_check(0));
    Graph::current().clear();
    const double t = seconds_since(t0);
    bool ok = t < 60.0;
    int failed = 0;
    double worst_op = 0.0;
    for (const auto& c : checks) {
      ok = ok && c.ok;
      failed += !c.ok;
      if (!c.ok) d << c.name << " err " << c.value << "; ";
      if (c.name.find("selective_scan") == std::string::npos && c.name.find("levm") == std::string::npos)
        worst_op = std::max(worst_op, c.value);
    }
    d << checks.size() << " checks, " << failed << " failed, worst op err " << worst_op << " (limit 1e-3), scan "
      << checks[checks.size() - 2].value << ", levm " << checks.back().value << " (limit 1e-2), " << t
      << " s (limit 60)";
    return ok;
  });

  criterion("geometry roundtrips", [](auto& d) {
    const CheckResult r = geometry_roundtrips(50, 0);
    d << "50 shapes, max err " << r.value << " (must be 0)";
    return r.ok;
  });

  criterion("state sharing identity", [](auto& d) {
    Rng rng(0);
    BlockOptions o;
    o.dim = 8;
    o.state_dim = 4;
    o.state_share = true;
    BlockWeights w = make_block_weights(o, rng);
    const Tensor x = tu::rand({2, 4, 8, 16}, rng), h = tu::rand({2, 4, 8, 4}, rng);
    const bool zero_state = s2l_state_share(x, {Tensor({2, 4, 8, 4}, 0.0f), {}}, w.share).same_values(x);
    for (auto& a : w.share.alpha.data_mut()) a = 0.0f;
    const bool zero_alpha = s2l_state_share(x, {h, {}}, w.share).same_values(x);
    d << "zero state bit-identical " << zero_state << ", zero alpha bit-identical " << zero_alpha;
    return zero_state && zero_alpha;
  });

  criterion("residual identity and zero loss", [](auto& d) {
    const Config c;
    NetWeights w = init_net(c.net);
    zero_weights(w);
    Rng rng(0);
    const Tensor lrms = tu::rand({2, 4, 8, 8}, rng, 0, 1), pan = tu::rand({2, 1, 32, 32}, rng, 0, 1);
    const double err = tu::max_abs(forward_fuse(lrms, pan, w, c.net), bicubic_upsample(lrms, 4));
    const Tensor gt = tu::rand({2, 4, 32, 32}, rng, 0, 1);
    const float loss = fusion_loss(gt, gt, c.net.lambda).total.item();
    Graph::current().clear();
    d << "zero-weight output vs bicubic max err " << err << " (limit 1e-6), loss(gt, gt) = " << loss;
    return err <= 1e-6 && loss == 0.0f;
  });

  criterion("toy training", [](auto& d) {
    const Config c = toy_config();
    const auto t0 = Clock::now();
    const TrainResult r = train(c, split("train"), {tu::scratch("toy_run"), {}, {}});
    const double t = seconds_since(t0);
    const double first = r.curve.front().total, last = r.curve.back().total;
    const MetricStats net = evaluate(r.state.weights, c.net, split("test"));
    const MetricStats bic = evaluate_bicubic(split("test"), c.net.ratio);
    d << r.curve.size() << " steps, loss " << first << " -> " << last << " (limit " << 0.5 * first << "), test PSNR "
      << net.mean.psnr_db << " dB vs bicubic " << bic.mean.psnr_db << " dB (need +1), " << t << " s (limit 900)";
    return r.curve.size() == 200 && last <= 0.5 * first && net.mean.psnr_db >= bic.mean.psnr_db + 1.0 && t < 900.0;
  });

  criterion("state-sharing ablation", [](auto& d) {
    std::vector<std::vector<Tensor>> preds;
    bool ok = true;
    for (StateShare s : {StateShare::none, StateShare::adjacent, StateShare::full}) {
      Config c = toy_config();
      c.net.state_share = s;
      c.train.max_steps = 10;
      const TrainResult r = train(c, split("train"));
      preds.push_back(predict(r.state.weights, c.net, split("test")));
      const double l1 = mean_l1(preds.back(), split("test"));
      d << to_string(s) << " test L1 " << l1 << "; ";
      ok = ok && std::isfinite(l1);
    }
    double min_gap = INFINITY;
    for (std::size_t a = 0; a < preds.size(); ++a)
      for (std::size_t b = a + 1; b < preds.size(); ++b) {
        double gap = 0.0;
        for (std::size_t i = 0; i < preds[a].size(); ++i) gap = std::max(gap, tu::max_abs(preds[a][i], preds[b][i]));
        min_gap = std::min(min_gap, gap);
      }
    d << "smallest pairwise max difference " << min_gap;
    return ok && min_gap > 0.0;
  });

  criterion("complexity scaling", [](auto& d) {
    const auto t0 = Clock::now();
    std::vector<double> Ls, att, levm;
    for (const std::int64_t L : parse_length_sweep("256..4096")) {
      Ls.push_back(static_cast<double>(L));
      att.push_back(static_cast<double>(run_bench(BenchOp::self_attention, bench_shape(L, 32, 16)).peak_units));
      levm.push_back(static_cast<double>(run_bench(BenchOp::levm, bench_shape(L, 32, 16)).peak_units));
    }
    const double sa = loglog_slope(Ls, att), sl = loglog_slope(Ls, levm);
    bool ok = sa >= 1.8 && sa <= 2.2 && sl >= 0.9 && sl <= 1.1;
    d << "memory slope attention " << sa << " [1.8, 2.2], levm " << sl << " [0.9, 1.1]; FLOP ratios";
    for (BenchOp op : {BenchOp::conv, BenchOp::self_attention, BenchOp::vmamba, BenchOp::levm}) {
      std::vector<double> ratios;
      for (std::int64_t L : {64, 256, 1024}) ratios.push_back(run_bench(op, bench_shape(L, 2, 2)).flop_ratio());
      std::vector<double> sorted = ratios;
      std::sort(sorted.begin(), sorted.end());
      d << " " << to_string(op) << " {";
      for (std::size_t i = 0; i < ratios.size(); ++i) {
        d << (i ? ", " : "") << ratios[i];
        ok = ok && std::fabs(ratios[i] / sorted[1] - 1.0) <= 0.2;
      }
      d << "}";
    }
    const double t = seconds_since(t0);
    d << " (within 20% of median); " << t << " s (limit 300)";
    return ok && t < 300.0;
  });

  criterion("metric sanity", [](auto& d) {
    Rng rng(0);
    const Tensor x = tu::rand({4, 16, 16}, rng, 0.1, 1.0);
    const MetricReport ideal = evaluate_pair(x, x, 4);
    const bool ideals = ideal.sam_deg == 0.0 && ideal.ergas == 0.0 && ideal.psnr_db == kPsnrCap &&
                        std::fabs(ideal.ssim - 1.0) <= 1e-12 && std::fabs(ideal.scc - 1.0) <= 1e-12;
    const Tensor gt({4, 8, 8}, 1.0f);
    const double e = ergas(add_scalar(gt, 0.04f), gt, 4);
    const auto [a, b] = tu::ssim_pair();
    const double s = ssim(a, b);
    d << "ideals " << ideals << ", ERGAS " << std::setprecision(9) << e << std::setprecision(4) << " (1.0 within 1e-6), SSIM " << s << " vs skimage "
      << tu::kSkimageSsim << " (within 1e-4)";
    return ideals && std::fabs(e - 1.0) <= 1e-6 && std::fabs(s - tu::kSkimageSsim) <= 1e-4;
  });

  criterion("deterministic training", [](auto& d) {
    Config c = toy_config();
    c.train.max_steps = 5;
    const auto a = tu::scratch("det_a"), b = tu::scratch("det_b");
    train(c, split("train"), {a, {}, {}});
    train(c, split("train"), {b, {}, {}});
    const std::string ca = tu::slurp(a / "final.lmck"), cb = tu::slurp(b / "final.lmck");
    d << "two 5-step runs, checkpoints " << ca.size() << " bytes, identical " << (ca == cb);
    return !ca.empty() && ca == cb;
  });

  std::cout << (failures ? "acceptance FAILED (" + std::to_string(failures) + ")" : std::string("acceptance passed"))
            << std::endl;
  return failures ? 1 : 0;
}
