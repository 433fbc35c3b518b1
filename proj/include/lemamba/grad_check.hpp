#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>

#include "lemamba/ops.hpp"

namespace lemamba {

/// Compares the tape gradient of a scalar function against central
/// differences. Returns max_i |g_i - fd_i| / (|g_i| + |fd_i| + 1e-8).
/// fd is the Richardson combination of the central differences at steps eps
/// and 2 eps, which cancels the eps^2 error term.
/// x is left with its original values and no gradient.
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-2)) throw DomainError("finite_diff_check: eps must lie in [1e-6, 1e-2]");
  Graph::current().clear();
  x.zero_grad();
  x.requires_grad_(true);
  Tensor y = f(x);
  if (y.numel() != 1) throw ContractError("finite_diff_check: f must be scalar-valued");
  if (!y.all_finite()) throw NumericalError("finite_diff_check: non-finite output");
  backward(y);
  const std::vector<float> analytic = x.grad();
  x.zero_grad();

  auto eval = [&]() {
    NoGradGuard guard;
    Tensor v = f(x);
    if (!v.all_finite()) throw NumericalError("finite_diff_check: non-finite value under perturbation");
    return static_cast<double>(v.item());
  };
  double worst = 0.0;
  auto values = x.data_mut();
  // Central difference at step h; returns the slope and the half-step
  // actually taken after float rounding.
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
    const auto [d1, h1] = central(i, eps);
    const auto [d2, h2] = central(i, 2.0 * eps);
    const double fd = (h2 * h2 * d1 - h1 * h1 * d2) / (h2 * h2 - h1 * h1);
    const double a = analytic[i];
    worst = std::max(worst, std::fabs(a - fd) / (std::fabs(a) + std::fabs(fd) + 1e-8));
  }
  return worst;
}

}  // namespace lemamba
