#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lemamba/tensor.hpp"

namespace lemamba {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct OptimState {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
  std::int64_t step = 0;
  std::vector<std::vector<float>> m, v;  // parallel to the parameter list
};

/// Piecewise-constant schedule: base, base/10 from 30% of the horizon,
/// base/100 from 60%.
inline double lr_schedule(std::int64_t epoch, std::int64_t total_epochs, double base = 1e-3) {
  if (10 * epoch >= 6 * total_epochs) return base / 100.0;
  if (10 * epoch >= 3 * total_epochs) return base / 10.0;
  return base;
}

/// Global L2 norm of all parameter gradients.
inline double grad_norm(const NamedParams& params) {
  double acc = 0.0;
  for (const auto& [name, p] : params)
    if (p.has_grad())
      for (float g : p.impl()->grad) acc += static_cast<double>(g) * g;
  return std::sqrt(acc);
}

/// Rescales gradients so their global norm is at most max_norm. Returns the
/// norm before clipping.
inline double clip_grad_norm(NamedParams& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, p] : params)
      if (p.has_grad())
        for (auto& g : p.impl()->grad) g = static_cast<float>(g * s);
  }
  return norm;
}

/// Decoupled weight decay followed by a bias-corrected Adam update.
/// A non-finite gradient aborts before anything is modified.
inline void adamw_step(NamedParams& params, OptimState& s) {
  for (const auto& [name, p] : params)
    if (p.has_grad())
      for (float g : p.impl()->grad)
        if (!std::isfinite(g)) throw NumericalError("adamw: non-finite gradient in " + name + " at step " + std::to_string(s.step));
  if (s.m.size() != params.size()) {
    s.m.assign(params.size(), {});
    s.v.assign(params.size(), {});
  }
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k].second;
    auto theta = p.data_mut();
    auto& m = s.m[k];
    auto& v = s.v[k];
    if (m.size() != theta.size()) {
      m.assign(theta.size(), 0.0f);
      v.assign(theta.size(), 0.0f);
    }
    const std::vector<float>& grad = p.impl()->grad;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      const double mi = s.beta1 * m[i] + (1.0 - s.beta1) * g;
      const double vi = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double t = static_cast<double>(theta[i]) * (1.0 - s.lr * s.weight_decay);
      t -= s.lr * (mi / bc1) / (std::sqrt(vi / bc2) + s.eps);
      theta[i] = static_cast<float>(t);
    }
  }
}

inline void zero_grads(NamedParams& params) {
  for (auto& [name, p] : params) p.zero_grad();
}

}  // namespace lemamba
