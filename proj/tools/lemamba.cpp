// lemamba command-line tool: data generation, training, evaluation, fusion,
// complexity benchmarks and the built-in self-test.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lemamba/lemamba.hpp"

namespace fs = std::filesystem;
using namespace lemamba;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* sub, Common& c, const std::string& out_help) {
  sub->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "overrides the config seed");
  sub->add_option("--out", c.out, out_help);
}

Config resolve_config(const Common& c) {
  Config cfg = c.config.empty() ? Config{} : load_config(c.config);
  if (c.seed) cfg.net.seed = *c.seed;
  cfg.validate();
  return cfg;
}

// Writes text to --out when given, else to stdout.
void emit(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream os(out);
  if (!os) throw FormatError("cannot write " + out);
  os << text;
  std::cout << text;
}

NetWeights load_net(const std::string& checkpoint, const Config& cfg) {
  NetWeights w = init_net(cfg.net);
  load_weights(w, load_checkpoint(checkpoint));
  return w;
}

int run_gen_data(const Common& c) {
  const Config cfg = resolve_config(c);
  DatasetSpec spec;
  spec.n = cfg.data.samples;
  spec.bands = cfg.net.spectral_bands;
  spec.height = cfg.data.height;
  spec.width = cfg.data.width;
  spec.ratio = cfg.net.ratio;
  spec.pan_bands = cfg.net.pan_bands;
  spec.seed = cfg.net.seed;
  const fs::path dir = c.out.empty() ? fs::path("data") : fs::path(c.out);
  gen_synthetic_dataset(spec, dir);
  const auto sizes = split_sizes(spec.n);
  std::cout << "wrote " << spec.n << " samples to " << dir.string() << " (train " << sizes[0] << ", val "
            << sizes[1] << ", test " << sizes[2] << ")\n";
  return 0;
}

struct TrainArgs {
  std::string data, resume;
  std::optional<std::int64_t> max_steps;
  int log_every = 10;
};

int run_train(const Common& c, const TrainArgs& a) {
  Config cfg = resolve_config(c);
  if (a.max_steps) cfg.train.max_steps = *a.max_steps;
  cfg.validate();
  const std::string manifest = a.data.empty() ? cfg.train.data : a.data;
  if (manifest.empty()) throw ValidationError("train: no training manifest (--data or data = ...)");
  const auto data = load_split(manifest);
  const fs::path out = c.out.empty() ? fs::path("run") : fs::path(c.out);
  fs::create_directories(out);
  {
    std::ofstream os(out / "config.txt");
    os << format_config(cfg);
  }
  TrainOptions opt;
  opt.out_dir = out;
  opt.resume = a.resume;
  opt.on_step = [&](const LossRow& r) {
    if (a.log_every > 0 && r.step % a.log_every == 0)
      std::cerr << "step " << r.step << " epoch " << r.epoch << " lr " << r.lr << " loss " << r.total << " (l1 "
                << r.l1 << ", 1-ssim " << r.ssim_loss << ")\n";
  };
  const TrainResult res = train(cfg, data, opt);
  std::cout << "trained " << res.curve.size() << " steps; final.lmck and loss.csv in " << out.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data;
};

int run_eval(const Common& c, const EvalArgs& a) {
  const Config cfg = resolve_config(c);
  const NetWeights w = load_net(a.checkpoint, cfg);
  const auto data = load_split(a.data);
  if (data.empty()) throw ValidationError("eval: empty split " + a.data);
  std::ostringstream os;
  os << format_report("bicubic", evaluate_bicubic(data, cfg.net.ratio));
  os << format_report("net", evaluate(w, cfg.net, data));
  emit(c.out, os.str());
  return 0;
}

struct FuseArgs {
  std::string lrms, pan, checkpoint;
};

int run_fuse(const Common& c, const FuseArgs& a) {
  const Config cfg = resolve_config(c);
  if (c.out.empty()) throw ValidationError("fuse: --out is required");
  const NetWeights w = load_net(a.checkpoint, cfg);
  const Tensor lrms = load_tensor(a.lrms), pan = load_tensor(a.pan);
  if (lrms.rank() != 3 || pan.rank() != 3) throw ValidationError("fuse: LRMS and PAN must be [C,H,W] tensors");
  NoGradGuard guard;
  const Tensor fused = fuse_sample(lrms, pan, w, cfg.net);
  save_tensor(c.out, fused);
  std::cout << "wrote " << shape_str(fused.shape()) << " to " << c.out << "\n";
  return 0;
}

struct BenchArgs {
  std::vector<std::string> ops;
  std::string lengths;
  std::int64_t B = 1, D = 32, N = 16, k = 3, win = 4;
};

BenchShape shape_for(const BenchArgs& a, std::int64_t L) {
  BenchShape s;
  const auto [h, w] = grid_for_length(L);
  s.B = a.B;
  s.H = h;
  s.W = w;
  s.D = a.D;
  s.N = a.N;
  s.k = a.k;
  s.win = a.win;
  return s;
}

int run_bench_mem(const Common& c, const BenchArgs& a) {
  const std::uint64_t seed = c.seed.value_or(0);
  std::ostringstream csv;
  write_bench_header(csv);
  for (const auto& name : a.ops) {
    const BenchOp op = parse_bench_op(name);
    std::vector<double> xs, ys;
    for (const std::int64_t L : parse_length_sweep(a.lengths)) {
      const BenchRecord r = run_bench(op, shape_for(a, L), seed);
      write_bench_row(csv, r);
      xs.push_back(static_cast<double>(L));
      ys.push_back(static_cast<double>(r.peak_units));
    }
    if (xs.size() >= 2) std::cerr << to_string(op) << " memory slope " << loglog_slope(xs, ys) << "\n";
  }
  emit(c.out, csv.str());
  return 0;
}

int run_bench_flops(const Common& c, const BenchArgs& a) {
  const std::uint64_t seed = c.seed.value_or(0);
  std::ostringstream csv;
  write_bench_header(csv);
  for (const auto& name : a.ops) {
    const BenchOp op = parse_bench_op(name);
    for (const std::int64_t L : parse_length_sweep(a.lengths)) {
      const BenchRecord r = run_bench(op, shape_for(a, L), seed);
      write_bench_row(csv, r);
      std::cerr << to_string(op) << " L=" << L << " measured/formula " << r.flop_ratio() << "\n";
    }
  }
  emit(c.out, csv.str());
  return 0;
}

int run_self_test(const Common& c) {
  std::ostringstream os;
  bool ok = true;
  for (const auto& r : run_selftest(c.seed.value_or(0))) {
    os << format_check(r) << "\n";
    ok = ok && r.ok;
  }
  os << (ok ? "selftest passed\n" : "selftest FAILED\n");
  emit(c.out, os.str());
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pansharpening with local-enhanced vision Mamba blocks"};
  app.require_subcommand(1);
  std::function<int()> action;

  Common gen_c, train_c, eval_c, fuse_c, mem_c, flops_c, self_c;
  TrainArgs train_a;
  EvalArgs eval_a;
  FuseArgs fuse_a;
  BenchArgs mem_a{{"attention", "levm"}, "256..4096"};
  BenchArgs flops_a{{"conv", "attention", "vmamba", "levm"}, "64,256,1024", 1, 8, 8};

  auto* gen = app.add_subcommand("gen-data", "write a synthetic Wald-protocol dataset");
  add_common(gen, gen_c, "output directory (default: data)");
  gen->callback([&] { action = [&] { return run_gen_data(gen_c); }; });

  auto* tr = app.add_subcommand("train", "train the fusion network");
  add_common(tr, train_c, "run directory (default: run)");
  tr->add_option("--data", train_a.data, "training manifest")->check(CLI::ExistingFile);
  tr->add_option("--resume", train_a.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  tr->add_option("--max-steps", train_a.max_steps, "stop after this many optimizer steps");
  tr->add_option("--log-every", train_a.log_every, "progress line interval in steps (0 = quiet)");
  tr->callback([&] { action = [&] { return run_train(train_c, train_a); }; });

  auto* ev = app.add_subcommand("eval", "reduced-resolution metrics against bicubic");
  add_common(ev, eval_c, "also write the report here");
  ev->add_option("--checkpoint", eval_a.checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_a.data, "manifest of the evaluation split")->required()->check(CLI::ExistingFile);
  ev->callback([&] { action = [&] { return run_eval(eval_c, eval_a); }; });

  auto* fu = app.add_subcommand("fuse", "fuse one LRMS/PAN pair");
  add_common(fu, fuse_c, "fused LMT1 tensor");
  fu->add_option("--lrms", fuse_a.lrms, "LRMS tensor [S,h,w]")->required()->check(CLI::ExistingFile);
  fu->add_option("--pan", fuse_a.pan, "PAN tensor [P,H,W]")->required()->check(CLI::ExistingFile);
  fu->add_option("--checkpoint", fuse_a.checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  fu->callback([&] { action = [&] { return run_fuse(fuse_c, fuse_a); }; });

  auto add_bench = [&](CLI::App* sub, Common& c, BenchArgs& a) {
    add_common(sub, c, "CSV file (default: stdout)");
    sub->add_option("--op", a.ops, "conv, attention, vmamba or levm (repeatable)");
    sub->add_option("--L", a.lengths, "lengths: a..b (doubling) or a comma list");
    sub->add_option("--B", a.B, "batch");
    sub->add_option("--D", a.D, "channels");
    sub->add_option("--N", a.N, "state / hidden size");
    sub->add_option("--k", a.k, "conv kernel side");
    sub->add_option("--window", a.win, "LEVM window side");
  };
  auto* bm = app.add_subcommand("bench-mem", "peak activation memory over an L sweep");
  add_bench(bm, mem_c, mem_a);
  bm->callback([&] { action = [&] { return run_bench_mem(mem_c, mem_a); }; });

  auto* bf = app.add_subcommand("bench-flops", "instrumented FLOPs next to the symbolic formulas");
  add_bench(bf, flops_c, flops_a);
  bf->callback([&] { action = [&] { return run_bench_flops(flops_c, flops_a); }; });

  auto* st = app.add_subcommand("selftest", "oracle and gradient checks");
  add_common(st, self_c, "also write the report here");
  st->callback([&] { action = [&] { return run_self_test(self_c); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    return action();
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
