#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace lemamba;

TEST(TensorCore, SoftplusAtZeroIsLn2) {
  const Tensor y = softplus(Tensor({1}, 0.0f));
  EXPECT_NEAR(y.item(), std::log(2.0), 1e-7);
}

TEST(TensorCore, MatmulIdentity) {
  Rng rng(3);
  const Tensor m = tu::rand({3, 3}, rng);
  const Tensor eye = tu::vals({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_TRUE(matmul(eye, m).same_values(m));
}

TEST(TensorCore, LayernormOfConstantIsZero) {
  const Tensor y = layernorm(Tensor({2, 5}, 3.25f), Tensor({5}, 1.0f), Tensor({5}, 0.0f));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(TensorCore, ShapeInvariants) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(add(Tensor({2, 3}), Tensor({3, 2})), ShapeError);
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
  Tensor bad({2}, std::vector<float>{1.0f, NAN});
  EXPECT_FALSE(bad.all_finite());
  EXPECT_THROW(check_finite(bad, "t"), NumericalError);
}

TEST(TensorCore, ShapeErrorNamesOpAndShapes) {
  try {
    add(Tensor({2, 3}), Tensor({4}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("add"), std::string::npos);
    EXPECT_NE(m.find("[2x3]"), std::string::npos) << m;
    EXPECT_NE(m.find("[4]"), std::string::npos) << m;
  }
}

TEST(TensorCore, Broadcasting) {
  const Tensor x = tu::vals({2, 2}, {1, 2, 3, 4});
  EXPECT_TRUE(add(x, Tensor({1}, 1.0f)).same_values(tu::vals({2, 2}, {2, 3, 4, 5})));
  EXPECT_TRUE(add(x, tu::vals({2}, {10, 20})).same_values(tu::vals({2, 2}, {11, 22, 13, 24})));
}

TEST(Backward, QuadraticGradient) {
  Tensor x = tu::vals({2}, {1, 2});
  x.requires_grad_();
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad(), (std::vector<float>{2, 4}));
  EXPECT_TRUE(Graph::current().empty());
}

TEST(Backward, SoftplusGradientAtZero) {
  Tensor x({1}, 0.0f);
  x.requires_grad_();
  backward(sum(softplus(x)));
  EXPECT_NEAR(x.grad()[0], 0.5, 1e-7);
}

TEST(Backward, L1SubgradientAtZeroIsZero) {
  Tensor x = tu::vals({3}, {0.5f, -1.0f, 2.0f});
  x.requires_grad_();
  const Tensor t = x.detach();
  backward(sum(abs(sub(x, t))));
  for (float g : x.grad()) EXPECT_EQ(g, 0.0f);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor x({3}, 1.0f);
  x.requires_grad_();
  const Tensor y = mul(x, x);
  EXPECT_THROW(backward(y), ContractError);
  Graph::current().clear();
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Tensor x = tu::vals({2}, {3, -1});
  x.requires_grad_();
  const Tensor e = exp(x);
  backward(sum(add(e, mul(e, x))));
  for (int i = 0; i < 2; ++i) {
    const double v = x[i];
    EXPECT_NEAR(x.grad()[i], std::exp(v) * (2.0 + v), 1e-4 * std::exp(v));
  }
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x({3}, 1.0f);
  x.requires_grad_();
  {
    NoGradGuard g;
    const Tensor y = sum(mul(x, x));
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(Graph::current().empty());
}

TEST(Roundtrip, ReshapeTransposeSliceExact) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t a = 1 + rng.below(5), b = 1 + rng.below(5), c = 1 + rng.below(5);
    const Tensor x = tu::rand({a, b, c}, rng);
    EXPECT_TRUE(reshape(reshape(x, {a * b * c}), {a, b, c}).same_values(x));
    EXPECT_TRUE(transpose(transpose(x, 0, 2), 0, 2).same_values(x));
    const std::int64_t cut = rng.below(b + 1);
    std::vector<Tensor> parts;
    if (cut > 0) parts.push_back(slice(x, 1, 0, cut));
    if (cut < b) parts.push_back(slice(x, 1, cut, b));
    EXPECT_TRUE(concat(parts, 1).same_values(x));
  }
}

TEST(Reductions, DoubleAccumulation) {
  // a float running sum drifts visibly over 65k small terms
  std::vector<float> v(1 << 16, 1e-4f);
  v[0] = 1.0f;
  const double exact = 1.0 + 1e-4 * ((1 << 16) - 1);
  EXPECT_NEAR(sum(Tensor({1 << 16}, v)).item(), exact, 1e-4);
}
