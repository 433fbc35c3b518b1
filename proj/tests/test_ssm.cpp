#include <gtest/gtest.h>

#include <cmath>

#include "reference_model.hpp"
#include "test_util.hpp"

using namespace lemamba;

namespace {

SSMParams random_params(std::int64_t B, std::int64_t K, std::int64_t D, std::int64_t N, std::int64_t L, Rng& rng) {
  return {tu::rand({K, D, N}, rng, -2.0, -0.05), tu::rand({B, K, N, L}, rng), tu::rand({B, K, N, L}, rng),
          tu::rand({B, K, D, L}, rng, 0.01, 0.8)};
}

}  // namespace

TEST(Discretize, HalfLife) {
  const auto p = discretize_zoh(Tensor({1, 1}, -1.0f), Tensor({1}, 1.0f), Tensor({1}, static_cast<float>(std::log(2.0))));
  EXPECT_NEAR(p.a_bar[0], 0.5, 1e-7);
  EXPECT_NEAR(p.b_bar[0], 0.5, 1e-7);
}

TEST(Discretize, SmallStepLimit) {
  const auto p = discretize_zoh(Tensor({1, 1}, -1.0f), Tensor({1}, 1.0f), Tensor({1}, 1e-9f));
  EXPECT_NEAR(p.a_bar[0], 1.0, 1e-7);
  EXPECT_NEAR(p.b_bar[0], 1e-9, 1e-15);
}

TEST(Discretize, FrozenDoubleOracle) {
  // Ā = e^-2, B̄ = (e^-2 - 1) / -2 * 1 * 3, evaluated in double precision
  const auto p = discretize_zoh(Tensor({1, 1}, -2.0f), Tensor({1}, 3.0f), Tensor({1}, 1.0f));
  EXPECT_NEAR(p.a_bar[0], 0.1353352832366127, 1e-7);
  EXPECT_NEAR(p.b_bar[0], 1.296997075145081, 1e-6);
}

TEST(Discretize, NonPositiveStepIsDomainError) {
  EXPECT_THROW(discretize_zoh(Tensor({1, 1}, -1.0f), Tensor({1}, 1.0f), Tensor({1}, 0.0f)), DomainError);
  EXPECT_THROW(discretize_zoh(Tensor({1, 1}, -1.0f), Tensor({1}, 1.0f), Tensor({1}, -0.1f)), DomainError);
}

TEST(Discretize, TransitionStrictlyInsideUnitInterval) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto p = discretize_zoh(tu::rand({3, 5}, rng, -8.0, -1e-3), tu::rand({5}, rng), tu::rand({3}, rng, 1e-3, 2.0));
    for (float a : p.a_bar.data()) {
      EXPECT_GT(a, 0.0f);
      EXPECT_LT(a, 1.0f);
    }
  }
}

TEST(Discretize, PhiMatchesClosedForm) {
  for (double z = -6.0; z < -1e-6; z *= 0.9) {
    const auto c = detail::zoh(z);
    EXPECT_NEAR(c.phi, std::expm1(z) / z, 1e-11) << z;
    EXPECT_NEAR(c.a_bar, std::exp(z), 1e-12 * std::exp(z) + 1e-300) << z;
  }
}

TEST(ParamFn, Examples) {
  Rng rng(5);
  const std::int64_t K = 2, D = 3, N = 4, L = 6;
  const Tensor x = tu::rand({1, K, D, L}, rng);
  ParamFnWeights w{Tensor({K, N, D}, 0.0f), tu::rand({K, N, D}, rng), Tensor({K, D, D}, 0.0f)};
  const SSMParams p = param_fn(x, w, Tensor({K, D, N}, 0.0f), Tensor({K, D}, 0.0f));
  for (float a : p.A.data()) EXPECT_EQ(a, -1.0f);
  for (float d : p.delta.data()) EXPECT_NEAR(d, std::log(2.0), 1e-7);
  for (float b : p.B.data()) EXPECT_EQ(b, 0.0f);
  const ScanOutput out = selective_scan(x, p);
  for (float y : out.y.data()) EXPECT_EQ(y, 0.0f);
}

TEST(ParamFn, GroupedPerDirection) {
  Rng rng(6);
  const std::int64_t K = 4, D = 2, N = 3, L = 5;
  const Tensor x = tu::rand({2, K, D, L}, rng);
  ParamFnWeights w{tu::rand({K, N, D}, rng), tu::rand({K, N, D}, rng), tu::rand({K, D, D}, rng)};
  const Tensor pa = tu::rand({K, D, N}, rng), pd = tu::rand({K, D}, rng);
  const SSMParams p = param_fn(x, w, pa, pd);
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t k = 0; k < K; ++k)
      for (std::int64_t l = 0; l < L; ++l) {
        for (std::int64_t n = 0; n < N; ++n) {
          double acc = 0.0;
          for (std::int64_t d = 0; d < D; ++d) acc += w.w_b[(k * N + n) * D + d] * x[((b * K + k) * D + d) * L + l];
          EXPECT_NEAR(p.B[((b * K + k) * N + n) * L + l], acc, 1e-6);
        }
        for (std::int64_t d = 0; d < D; ++d) {
          double acc = pd[k * D + d];
          for (std::int64_t e = 0; e < D; ++e) acc += w.w_delta[(k * D + d) * D + e] * x[((b * K + k) * D + e) * L + l];
          EXPECT_NEAR(p.delta[((b * K + k) * D + d) * L + l], ref::softplus(acc), 1e-6);
        }
      }
  EXPECT_THROW(param_fn(tu::rand({1, 3, D, L}, rng), w, pa, pd), ShapeError);
}

TEST(Scan, HandUnrolled) {
  const Tensor y = hand_scan_output();
  EXPECT_NEAR(y[0], 0.5, 1e-7);
  EXPECT_NEAR(y[1], 0.75, 1e-7);
  EXPECT_NEAR(y[2], 0.875, 1e-7);
}

TEST(Scan, HandUnrolledFinalState) {
  const double a = std::log(0.5);
  SSMParams p{Tensor({1, 1, 1}, static_cast<float>(a)), Tensor({1, 1, 1, 3}, static_cast<float>(0.5 * a / -0.5)),
              Tensor({1, 1, 1, 3}, 1.0f), Tensor({1, 1, 1, 3}, 1.0f)};
  const auto out = selective_scan(Tensor({1, 1, 1, 3}, 1.0f), p);
  EXPECT_NEAR(out.h_final[0], 0.875, 1e-7);
}

TEST(Scan, HomogeneousDecay) {
  Rng rng(8);
  const std::int64_t N = 4, L = 10;
  SSMParams p{tu::rand({1, 1, N}, rng, -1.0, -0.1), Tensor({1, 1, N, L}, 0.0f), Tensor({1, 1, N, L}, 1.0f),
              Tensor({1, 1, 1, L}, 0.5f)};
  const Tensor h0 = tu::rand({1, 1, 1, N}, rng, 0.5, 1.0);
  const auto out = selective_scan(Tensor({1, 1, 1, L}, 0.0f), p, h0);
  for (std::int64_t t = 0; t < L; ++t) {
    double expect = 0.0;
    for (std::int64_t n = 0; n < N; ++n) expect += std::pow(std::exp(0.5 * p.A[n]), t + 1) * h0[n];
    EXPECT_NEAR(out.y[t], expect, 1e-6);
    if (t > 0) {
      EXPECT_LT(out.y[t], out.y[t - 1]);
    }
  }
}

TEST(Scan, MatchesKernelFormSmall) {
  Rng rng(10);
  const SSMParams p = detail::invariant_params(1, 1, 4, 16, rng);
  const Tensor x = tu::rand({1, 1, 1, 16}, rng);
  EXPECT_LE(tu::max_abs(selective_scan(x, p).y, kernel_scan(x, p)), 1e-5);
}

TEST(Scan, MatchesKernelFormLarge) {
  Rng rng(11);
  const SSMParams p = detail::invariant_params(2, 8, 16, 64, rng);
  const Tensor x = tu::rand({1, 2, 8, 64}, rng);
  EXPECT_LE(tu::max_abs(selective_scan(x, p).y, kernel_scan(x, p)), 1e-5);
}

TEST(Scan, OracleSweep) { EXPECT_LE(scan_oracle_error(100, 1), 1e-5); }

TEST(Scan, TimeVaryingMatchesDoubleRecurrence) {
  Rng rng(12);
  for (int t = 0; t < 5; ++t) {
    const SSMParams p = random_params(2, 4, 3, 5, 40, rng);
    const Tensor x = tu::rand({2, 4, 3, 40}, rng);
    EXPECT_LE(ref::max_abs(ref::scan(x, p.A, p.B, p.C, p.delta), selective_scan(x, p).y), 1e-5);
  }
}

TEST(Scan, ResumesFromFinalState) {
  Rng rng(13);
  const SSMParams p = random_params(1, 2, 2, 3, 20, rng);
  const Tensor x = tu::rand({1, 2, 2, 20}, rng);
  auto part = [&](const Tensor& t, std::int64_t a, std::int64_t b) { return slice(t, 3, a, b); };
  auto params = [&](std::int64_t a, std::int64_t b) {
    return SSMParams{p.A, part(p.B, a, b), part(p.C, a, b), part(p.delta, a, b)};
  };
  const auto full = selective_scan(x, p);
  const auto first = selective_scan(part(x, 0, 8), params(0, 8));
  const auto second = selective_scan(part(x, 8, 20), params(8, 20), first.h_final);
  EXPECT_LE(tu::max_abs(part(full.y, 8, 20), second.y), 1e-6);
  EXPECT_LE(tu::max_abs(full.h_final, second.h_final), 1e-6);
}

TEST(Scan, ShapeErrors) {
  Rng rng(14);
  SSMParams p = random_params(1, 1, 2, 3, 5, rng);
  EXPECT_THROW(selective_scan(tu::rand({1, 1, 2, 6}, rng), p), ShapeError);
  EXPECT_THROW(selective_scan(tu::rand({1, 1, 2, 5}, rng), p, Tensor({1, 1, 2, 4})), ShapeError);
}

TEST(Kernel, Examples) {
  const auto k = structured_kernel({0.5}, {0.5}, {1.0}, 3);
  EXPECT_DOUBLE_EQ(k[0], 0.5);
  EXPECT_DOUBLE_EQ(k[1], 0.25);
  EXPECT_DOUBLE_EQ(k[2], 0.125);
  const auto y = causal_convolve({1, 1, 1}, k);
  EXPECT_DOUBLE_EQ(y[2], 0.875);
  const auto m = structured_kernel({0.0, 0.0}, {0.5, 2.0}, {3.0, 1.0}, 4);
  EXPECT_DOUBLE_EQ(m[0], 3.5);
  for (int j = 1; j < 4; ++j) EXPECT_EQ(m[j], 0.0);
}

TEST(Kernel, RejectsTimeVarying) {
  Rng rng(15);
  const SSMParams p = random_params(1, 1, 1, 2, 4, rng);
  EXPECT_THROW(kernel_scan(tu::rand({1, 1, 1, 4}, rng), p), ContractError);
}
