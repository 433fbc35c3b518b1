#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace lemamba;

namespace {

const char* kTinyConfig =
    "# tiny network\n"
    "num_scales = 2\n"
    "dims = 4, 6\n"
    "blocks_per_scale = 1, 1\n"
    "state_dim = 2\n"
    "samples = 8\n"
    "height = 16\n"
    "width = 16\n"
    "crop = 8\n"
    "batch = 2\n";

std::filesystem::path write_config(const std::filesystem::path& dir, const std::string& text) {
  std::ofstream os(dir / "cfg.txt");
  os << text;
  return dir / "cfg.txt";
}

std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST(Cli, SelftestPasses) {
  const auto dir = tu::scratch("cli_selftest");
  const tu::Run r = tu::cli("selftest --out " + q(dir / "report.txt"), dir / "log.txt");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(tu::slurp(dir / "report.txt").find("selftest passed"), std::string::npos);
}

TEST(Cli, UsageErrorsAreNonzero) {
  const auto dir = tu::scratch("cli_usage");
  EXPECT_NE(tu::cli("selftest --frobnicate", dir / "a.txt").code, 0);
  EXPECT_NE(tu::cli("train --config " + q(dir / "missing.txt"), dir / "b.txt").code, 0);
  EXPECT_NE(tu::cli("", dir / "c.txt").code, 0);
}

TEST(Cli, InvalidConfigExitsTwo) {
  const auto dir = tu::scratch("cli_invalid");
  const auto cfg = write_config(dir, "ratio = 3\n");
  const tu::Run r = tu::cli("gen-data --config " + q(cfg) + " --out " + q(dir / "ds"), dir / "log.txt");
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("validation error"), std::string::npos);
  const auto bad = write_config(dir, "unknown_key = 1\n");
  EXPECT_EQ(tu::cli("gen-data --config " + q(bad), dir / "log2.txt").code, 2);
}

TEST(Cli, GenerateTrainEvaluate) {
  const auto dir = tu::scratch("cli_pipeline");
  const auto cfg = write_config(dir, kTinyConfig);
  const auto ds = dir / "ds", run = dir / "run";
  tu::Run r = tu::cli("gen-data --config " + q(cfg) + " --seed 2 --out " + q(ds), dir / "gen.txt");
  ASSERT_EQ(r.code, 0) << r.out;
  ASSERT_TRUE(std::filesystem::exists(ds / "train.txt"));

  r = tu::cli("train --config " + q(cfg) + " --data " + q(ds / "train.txt") + " --max-steps 3 --out " + q(run),
              dir / "train.txt");
  ASSERT_EQ(r.code, 0) << r.out;
  ASSERT_TRUE(std::filesystem::exists(run / "final.lmck"));
  std::ifstream loss(run / "loss.csv");
  std::string header;
  std::getline(loss, header);
  EXPECT_EQ(header, "step,epoch,lr,l1,ssim_loss,total");

  r = tu::cli("eval --config " + q(cfg) + " --checkpoint " + q(run / "final.lmck") + " --data " +
                  q(ds / "test.txt") + " --out " + q(dir / "report.txt"),
              dir / "eval.txt");
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string report = tu::slurp(dir / "report.txt");
  for (const char* key : {"bicubic", "net", "SAM", "ERGAS", "PSNR", "SSIM", "SCC"})
    EXPECT_NE(report.find(key), std::string::npos) << key;
}

TEST(Cli, FuseWithZeroWeightsIsBicubicAndThreadInvariant) {
  const auto dir = tu::scratch("cli_fuse");
  const auto cfg = write_config(dir, kTinyConfig);
  std::istringstream cs(kTinyConfig);
  const Config c = parse_config(cs);
  NetWeights w = init_net(c.net);
  zero_weights(w);
  save_checkpoint(dir / "zero.lmck", weights_to_map(w));
  Rng rng(3);
  const Tensor lrms = tu::rand({4, 4, 4}, rng, 0, 1), pan = tu::rand({1, 16, 16}, rng, 0, 1);
  save_tensor(dir / "lrms.lmt", lrms);
  save_tensor(dir / "pan.lmt", pan);
  const std::string args = "fuse --config " + q(cfg) + " --lrms " + q(dir / "lrms.lmt") + " --pan " +
                           q(dir / "pan.lmt") + " --checkpoint " + q(dir / "zero.lmck") + " --out ";
  tu::Run r = tu::cli(args + q(dir / "fused.lmt"), dir / "log.txt");
  ASSERT_EQ(r.code, 0) << r.out;
  const Tensor fused = load_tensor(dir / "fused.lmt");
  const Tensor bic = bicubic_upsample(reshape(lrms, {1, 4, 4, 4}), 4);
  EXPECT_LE(tu::max_abs(reshape(fused, {1, 4, 16, 16}), bic), 1e-6);

  NetWeights rand = init_net(c.net);
  save_checkpoint(dir / "rand.lmck", weights_to_map(rand));
  const std::string rargs = "fuse --config " + q(cfg) + " --lrms " + q(dir / "lrms.lmt") + " --pan " +
                            q(dir / "pan.lmt") + " --checkpoint " + q(dir / "rand.lmck") + " --out ";
  const std::string one = "LEMAMBA_THREADS=1 ", four = "LEMAMBA_THREADS=4 ";
  const std::string cli = std::string("\"") + LEMAMBA_CLI_PATH + "\" ";
  ASSERT_EQ(std::system((one + cli + rargs + q(dir / "t1.lmt") + " > /dev/null 2>&1").c_str()), 0);
  ASSERT_EQ(std::system((four + cli + rargs + q(dir / "t4.lmt") + " > /dev/null 2>&1").c_str()), 0);
  EXPECT_EQ(tu::slurp(dir / "t1.lmt"), tu::slurp(dir / "t4.lmt"));
}

TEST(Cli, BenchMemCsv) {
  const auto dir = tu::scratch("cli_bench");
  const tu::Run r = tu::cli("bench-mem --op levm --op attention --L 256..1024 --out " + q(dir / "mem.csv"),
                            dir / "log.txt");
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream is(dir / "mem.csv");
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "operator,B,L,D,N,peak_units,flops_measured,flops_formula");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 6);
  EXPECT_NE(r.out.find("levm memory slope"), std::string::npos);
  EXPECT_EQ(tu::cli("bench-flops --op rnn", dir / "bad.txt").code, 2);
}
