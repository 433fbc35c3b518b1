#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace lemamba;

namespace {

Config tiny() {
  Config c;
  c.net.num_scales = 2;
  c.net.dims = {4, 6};
  c.net.blocks_per_scale = {1, 1};
  c.net.state_dim = 2;
  c.net.seed = 3;
  c.data.samples = 6;
  c.data.height = c.data.width = 16;
  c.train.crop = 8;
  c.train.batch = 2;
  c.train.epochs = 10;
  return c;
}

const std::vector<FusionSample>& tiny_data() {
  static const std::vector<FusionSample> data = [] {
    DatasetSpec spec;
    spec.n = 6;
    spec.height = spec.width = 16;
    const auto dir = tu::scratch("train_ds");
    gen_synthetic_dataset(spec, dir);
    return load_split(dir / "train.txt");
  }();
  return data;
}

bool same_maps(const TensorMap& a, const TensorMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    if (it == b.end() || !it->second.same_values(v)) return false;
  }
  return true;
}

}  // namespace

TEST(Train, RunsAndWritesArtifacts) {
  Config c = tiny();
  c.train.max_steps = 4;
  const auto dir = tu::scratch("train_run");
  TrainOptions opt;
  opt.out_dir = dir;
  int seen = 0;
  opt.on_step = [&](const LossRow&) { ++seen; };
  const TrainResult r = train(c, tiny_data(), opt);
  EXPECT_EQ(r.curve.size(), 4u);
  EXPECT_EQ(seen, 4);
  EXPECT_EQ(r.state.step, 4);
  EXPECT_TRUE(std::filesystem::exists(dir / "final.lmck"));
  std::ifstream is(dir / "loss.csv");
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "step,epoch,lr,l1,ssim_loss,total");
  int rows = 0;
  for (std::string line; std::getline(is, line);) ++rows;
  EXPECT_EQ(rows, 4);
  for (const auto& row : r.curve) {
    EXPECT_NEAR(row.total, row.l1 + c.net.lambda * row.ssim_loss, 1e-6);
    EXPECT_DOUBLE_EQ(row.lr, 1e-3);
  }
}

TEST(Train, BitIdenticalCheckpoints) {
  Config c = tiny();
  c.train.max_steps = 3;
  const auto a = tu::scratch("det_a"), b = tu::scratch("det_b");
  train(c, tiny_data(), {a, {}, {}});
  train(c, tiny_data(), {b, {}, {}});
  EXPECT_EQ(tu::slurp(a / "final.lmck"), tu::slurp(b / "final.lmck"));
  EXPECT_EQ(tu::slurp(a / "loss.csv"), tu::slurp(b / "loss.csv"));
}

TEST(Train, ResumeContinuesIdentically) {
  Config c = tiny();
  c.train.max_steps = 5;
  const auto straight = tu::scratch("resume_straight"), first = tu::scratch("resume_first"),
             second = tu::scratch("resume_second");
  train(c, tiny_data(), {straight, {}, {}});
  Config part = c;
  part.train.max_steps = 2;
  train(part, tiny_data(), {first, {}, {}});
  const TrainResult r = train(c, tiny_data(), {second, first / "final.lmck", {}});
  EXPECT_EQ(r.curve.size(), 3u);
  EXPECT_EQ(r.curve.front().step, 2);
  EXPECT_TRUE(same_maps(load_checkpoint(straight / "final.lmck"), load_checkpoint(second / "final.lmck")));
}

TEST(Train, ScheduleFollowsEpochs) {
  Config c = tiny();
  c.train.epochs = 4;
  const TrainResult r = train(c, tiny_data());
  // 4 training samples, batch 2 -> 2 steps per epoch; 30% of 4 epochs is 1.2
  ASSERT_EQ(r.curve.size(), 8u);
  EXPECT_DOUBLE_EQ(r.curve[1].lr, 1e-3);
  EXPECT_DOUBLE_EQ(r.curve[2].lr, 1e-3);
  EXPECT_DOUBLE_EQ(r.curve[4].lr, 1e-4);
  EXPECT_DOUBLE_EQ(r.curve[6].lr, 1e-5);
}

TEST(Train, DivergenceAbortsWithLastGoodState) {
  std::vector<FusionSample> data = tiny_data();
  Tensor gt(data[0].gt.shape(), NAN);
  for (auto& s : data) s.gt = gt;
  const auto dir = tu::scratch("diverge");
  EXPECT_THROW(train(tiny(), data, {dir, {}, {}}), NumericalError);
  EXPECT_TRUE(std::filesystem::exists(dir / "last_good.lmck"));
}

TEST(Train, EmptyDataIsValidationError) { EXPECT_THROW(train(tiny(), {}), ValidationError); }

TEST(Evaluate, GroundTruthIsIdeal) {
  const auto& data = tiny_data();
  std::vector<Tensor> gts;
  for (const auto& s : data) gts.push_back(s.gt);
  const MetricStats m = evaluate_predictions(gts, data, 4);
  EXPECT_EQ(m.mean.sam_deg, 0.0);
  EXPECT_EQ(m.mean.ergas, 0.0);
  EXPECT_EQ(m.mean.psnr_db, kPsnrCap);
  EXPECT_NEAR(m.mean.ssim, 1.0, 1e-12);
}

TEST(Evaluate, ZeroModelMatchesBicubicRow) {
  const Config c = tiny();
  NetWeights w = init_net(c.net);
  zero_weights(w);
  const MetricStats net = evaluate(w, c.net, tiny_data()), bic = evaluate_bicubic(tiny_data(), 4);
  EXPECT_NEAR(net.mean.psnr_db, bic.mean.psnr_db, 1e-4);
  EXPECT_NEAR(net.mean.sam_deg, bic.mean.sam_deg, 1e-4);
  EXPECT_NEAR(net.mean.ergas, bic.mean.ergas, 1e-4);
  EXPECT_EQ(format_report("net", evaluate(w, c.net, tiny_data())), format_report("net", net));
}

TEST(Batch, CropsAlignWithRatio) {
  const auto& data = tiny_data();
  Rng rng(1);
  const Batch b = make_batch({&data[0], &data[1]}, 8, 4, rng);
  EXPECT_EQ(b.lrms.shape(), (Shape{2, 4, 2, 2}));
  EXPECT_EQ(b.pan.shape(), (Shape{2, 1, 8, 8}));
  EXPECT_EQ(b.gt.shape(), (Shape{2, 4, 8, 8}));
}
