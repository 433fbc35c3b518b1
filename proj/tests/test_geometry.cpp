#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace lemamba;

TEST(CrossScan, TwoByTwoOrders) {
  // a b / c d as 1 2 / 3 4
  const Tensor y = cross_scan(tu::vals({1, 1, 2, 2}, {1, 2, 3, 4}));
  const std::vector<float> expect = {1, 2, 3, 4, 1, 3, 2, 4, 4, 3, 2, 1, 4, 2, 3, 1};
  EXPECT_EQ(std::vector<float>(y.data().begin(), y.data().end()), expect);
}

TEST(CrossScan, DegenerateHeight) {
  const Tensor y = cross_scan(tu::vals({1, 1, 1, 4}, {1, 2, 3, 4}));
  const std::vector<float> expect = {1, 2, 3, 4, 1, 2, 3, 4, 4, 3, 2, 1, 4, 3, 2, 1};
  EXPECT_EQ(std::vector<float>(y.data().begin(), y.data().end()), expect);
}

TEST(CrossMerge, SingleDirectionUnpermutes) {
  Rng rng(1);
  const std::int64_t H = 3, W = 5;
  const Tensor x = tu::rand({2, 3, H, W}, rng);
  const Tensor seq = cross_scan(x);
  for (std::int64_t k = 0; k < 4; ++k) {
    std::vector<Tensor> parts;
    for (std::int64_t j = 0; j < 4; ++j) {
      const Tensor part = slice(seq, 1, j, j + 1);
      parts.push_back(j == k ? part : Tensor(part.shape(), 0.0f));
    }
    EXPECT_TRUE(cross_merge(concat(parts, 1), H, W).same_values(x)) << k;
  }
}

TEST(CrossMerge, FourTimesIdentity) {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const std::int64_t H = 1 + rng.below(7), W = 1 + rng.below(7);
    const Tensor x = tu::rand({1 + static_cast<std::int64_t>(rng.below(2)), 2, H, W}, rng);
    EXPECT_TRUE(cross_merge(cross_scan(x), H, W).same_values(scale(x, 4.0f)));
  }
}

TEST(CrossMerge, EachPixelSumsFourTokens) {
  Rng rng(3);
  const std::int64_t H = 4, W = 3;
  const Tensor y = tu::rand({1, 4, 2, H * W}, rng);
  const Tensor merged = cross_merge(y, H, W);
  for (std::int64_t d = 0; d < 2; ++d)
    for (std::int64_t p = 0; p < H * W; ++p) {
      double acc = 0.0;
      int hits = 0;
      for (std::int64_t k = 0; k < 4; ++k)
        for (std::int64_t l = 0; l < H * W; ++l)
          if (detail::scan_pixel(k, l, H, W) == p) {
            acc += y[(k * 2 + d) * H * W + l];
            ++hits;
          }
      EXPECT_EQ(hits, 4);
      EXPECT_NEAR(merged[d * H * W + p], acc, 1e-6);
    }
  EXPECT_THROW(cross_merge(y, 5, 3), ShapeError);
}

TEST(Windows, ExactTiling) {
  std::vector<float> v(16);
  for (int i = 0; i < 16; ++i) v[i] = static_cast<float>(i);
  const WindowGrid g = window_partition(tu::vals({1, 1, 4, 4}, v), 2, 2);
  EXPECT_EQ(g.count(), 4);
  EXPECT_EQ(g.windows.shape(), (Shape{4, 1, 2, 2}));
  EXPECT_EQ(std::vector<float>(g.windows.data().begin(), g.windows.data().begin() + 4),
            (std::vector<float>{0, 1, 4, 5}));
}

TEST(Windows, SingleWindowIsIdentity) {
  Rng rng(4);
  const Tensor x = tu::rand({2, 3, 2, 2}, rng);
  const WindowGrid g = window_partition(x, 2, 2);
  EXPECT_TRUE(g.windows.same_values(x));
  EXPECT_TRUE(window_merge(g).same_values(x));
}

TEST(Windows, PaddingLayout) {
  std::vector<float> v(9);
  for (int i = 0; i < 9; ++i) v[i] = static_cast<float>(i + 1);
  const WindowGrid g = window_partition(tu::vals({1, 1, 3, 3}, v), 2, 2);
  EXPECT_EQ(g.count(), 4);
  const std::vector<float> expect = {1, 2, 4, 5, 3, 0, 6, 0, 7, 8, 0, 0, 9, 0, 0, 0};
  EXPECT_EQ(std::vector<float>(g.windows.data().begin(), g.windows.data().end()), expect);
}

TEST(Windows, ChannelsLastLayout) {
  Rng rng(5);
  const Tensor x = tu::rand({1, 5, 3, 2}, rng);  // [B, H, W, D]
  const WindowGrid g = window_partition(x, 2, 2, Layout::channels_last);
  EXPECT_EQ(g.windows.shape(), (Shape{6, 2, 2, 2}));
  EXPECT_EQ(g.windows[((3 * 2 + 1) * 2 + 0) * 2 + 1], x[((0 * 5 + 3) * 3 + 2) * 2 + 1]);
  EXPECT_TRUE(window_merge(g).same_values(x));
}

TEST(Windows, RandomRoundtrips) {
  const auto r = geometry_roundtrips(50, 6);
  EXPECT_TRUE(r.ok) << r.value;
}

TEST(Windows, Errors) {
  EXPECT_THROW(window_partition(Tensor({1, 1, 4, 4}), 0, 2), DomainError);
  WindowGrid g = window_partition(Tensor({1, 1, 4, 4}), 2, 2);
  g.windows = Tensor({3, 1, 2, 2});
  EXPECT_THROW(window_merge(g), ContractError);
}

TEST(Windows, GradientIsTransposedPermutation) {
  Rng rng(7);
  Tensor x = tu::rand({1, 2, 3, 5}, rng);
  x.requires_grad_();
  const WindowGrid g = window_partition(x, 2, 2);
  backward(sum(mul(g.windows, g.windows)));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_FLOAT_EQ(x.grad()[i], 2.0f * x[i]);
}
