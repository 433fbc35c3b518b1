#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace lemamba;

namespace {

using Fn = std::function<Tensor(const Tensor&)>;

// Coordinates whose gradient is itself at float noise level get an absolute
// floor; elsewhere the relative bound applies.
void expect_gradient(const Fn& f, Tensor x, double rel, const std::string& what) {
  Graph::current().clear();
  x.zero_grad();
  x.requires_grad_(true);
  backward(f(x));
  const std::vector<float> a = x.grad();
  x.zero_grad();
  auto values = x.data_mut();
  auto eval = [&] {
    NoGradGuard g;
    return static_cast<double>(f(x).item());
  };
  auto central = [&](std::size_t i, double h) {
    const float orig = values[i];
    const float hi = static_cast<float>(orig + h), lo = static_cast<float>(orig - h);
    values[i] = hi;
    const double up = eval();
    values[i] = lo;
    const double down = eval();
    values[i] = orig;
    const double step = (static_cast<double>(hi) - lo) / 2.0;
    return std::pair{(up - down) / (2.0 * step), step};
  };
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto [d1, h1] = central(i, kGradStep);
    const auto [d2, h2] = central(i, 2 * kGradStep);
    const double fd = (h2 * h2 * d1 - h1 * h1 * d2) / (h2 * h2 - h1 * h1);
    EXPECT_LE(std::fabs(a[i] - fd), rel * (std::fabs(a[i]) + std::fabs(fd)) + 1e-5)
        << what << " coordinate " << i << " analytic " << a[i] << " fd " << fd;
  }
}

std::vector<Tensor> op_inputs(const std::string& name, Rng& rng, OpAttrs& attrs) {
  using detail::random_tensor;
  if (name == "add" || name == "mul") return {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
  if (name == "matmul") return {random_tensor({3, 5}, rng), random_tensor({5, 2}, rng)};
  if (name == "log") return {random_tensor({3, 4}, rng, 0.3, 3.0)};
  if (name == "reshape") {
    attrs.shape = {4, 3};
    return {random_tensor({3, 4}, rng)};
  }
  if (name == "transpose") {
    attrs.axis = 1;
    attrs.axis2 = 2;
    return {random_tensor({2, 3, 4}, rng)};
  }
  if (name == "concat") {
    attrs.axis = 0;
    return {random_tensor({2, 3}, rng), random_tensor({1, 3}, rng)};
  }
  if (name == "slice") {
    attrs.axis = 0;
    attrs.start = 1;
    attrs.end = 4;
    return {random_tensor({5, 2}, rng)};
  }
  if (name == "layernorm")
    return {random_tensor({3, 6}, rng, -2, 2), random_tensor({6}, rng, 0.5, 1.5), random_tensor({6}, rng)};
  if (name == "conv2d_depthwise") {
    attrs.pad = 1;
    return {random_tensor({2, 3, 5, 4}, rng), random_tensor({3, 3, 3}, rng)};
  }
  if (name == "linear") return {random_tensor({4, 3}, rng), random_tensor({2, 3}, rng), random_tensor({2}, rng)};
  if (name == "selective_scan")
    return {random_tensor({1, 2, 2, 10}, rng), random_tensor({2, 2, 3}, rng, -1.5, -0.2),
            random_tensor({1, 2, 3, 10}, rng), random_tensor({1, 2, 3, 10}, rng),
            random_tensor({1, 2, 2, 10}, rng, 0.05, 0.6)};
  return {random_tensor({3, 4}, rng, -3, 3)};
}

}  // namespace

TEST(GradCheck, SelftestOpsWithinTolerance) {
  for (const auto& r : op_gradient_checks(0)) EXPECT_TRUE(r.ok) << r.name << " " << r.value;
}

TEST(GradCheck, SelectiveScanWithinTolerance) {
  const auto r = scan_gradient_check(0);
  EXPECT_TRUE(r.ok) << r.value;
}

TEST(GradCheck, LevmBlockWithinTolerance) {
  const auto r = levm_gradient_check(0);
  EXPECT_TRUE(r.ok) << r.value;
}

TEST(GradCheck, SumOfXIsExact) {
  Rng rng(1);
  const Tensor x = tu::rand({4, 4}, rng);
  const Tensor ones(x.shape(), 1.0f);
  Fn id = [](const Tensor& v) { return v; };
  EXPECT_LE(finite_diff_check(detail::probe(id, x, ones), x, 1e-4), 1e-6);
}

TEST(GradCheck, SumOfExp) {
  Rng rng(2);
  const Tensor x = tu::rand({3, 5}, rng);
  const Tensor ones(x.shape(), 1.0f);
  Fn e = [](const Tensor& v) { return exp(v); };
  EXPECT_LE(finite_diff_check(detail::probe(e, x, ones), x, 1e-4), 1e-3);
}

TEST(GradCheck, StepOutsideRangeIsDomainError) {
  Fn f = [](const Tensor& v) { return sum(v); };
  EXPECT_THROW(finite_diff_check(f, Tensor({2}, 1.0f), 1e-7), DomainError);
  EXPECT_THROW(finite_diff_check(f, Tensor({2}, 1.0f), 0.1), DomainError);
}

TEST(GradCheck, NonFiniteIsNumericalError) {
  Fn f = [](const Tensor& v) { return sum(log(v)); };
  EXPECT_THROW(finite_diff_check(f, Tensor({2}, -1.0f), 1e-3), NumericalError);
  Graph::current().clear();
}

class OpGradientProperty : public ::testing::TestWithParam<std::string> {};

TEST_P(OpGradientProperty, RandomInputsAcrossSeeds) {
  const std::string name = GetParam();
  const double rel = name == "selective_scan" ? 1e-2 : 1e-3;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    OpAttrs attrs;
    const std::vector<Tensor> inputs = op_inputs(name, rng, attrs);
    Tensor w;
    {
      NoGradGuard g;
      w = detail::probe_weights(forward_op(name, inputs, attrs).shape(), rng);
    }
    for (std::size_t slot = 0; slot < inputs.size(); ++slot) {
      Fn g = [&, slot](const Tensor& v) {
        std::vector<Tensor> in = inputs;
        in[slot] = v;
        return forward_op(name, in, attrs);
      };
      expect_gradient(detail::probe(g, inputs[slot], w), inputs[slot], rel,
                      name + " seed " + std::to_string(seed) + " input " + std::to_string(slot));
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Registry, OpGradientProperty, ::testing::ValuesIn(forward_op_names()),
                         [](const auto& info) { return info.param; });

TEST(Registry, DeterministicBitIdentical) {
  for (const auto& name : forward_op_names()) {
    Rng a(7), b(7);
    OpAttrs attrs_a, attrs_b;
    const auto in_a = op_inputs(name, a, attrs_a), in_b = op_inputs(name, b, attrs_b);
    EXPECT_TRUE(forward_op(name, in_a, attrs_a).same_values(forward_op(name, in_b, attrs_b))) << name;
  }
}

TEST(Registry, UnknownOpAndArity) {
  EXPECT_THROW(forward_op("cumsum", {Tensor({2})}), ContractError);
  EXPECT_THROW(forward_op("add", {Tensor({2})}), ShapeError);
}

TEST(Registry, RecordsOnlyWhenTracked) {
  Graph::current().clear();
  forward_op("exp", {Tensor({3}, 1.0f)});
  EXPECT_TRUE(Graph::current().empty());
  Tensor x({3}, 1.0f);
  x.requires_grad_();
  forward_op("exp", {x});
  EXPECT_EQ(Graph::current().size(), 1u);
  Graph::current().clear();
}
