#pragma once

// Name-based dispatch over the primitive ops, used by the self-test and the
// gradient sweep.

#include <string>
#include <string_view>
#include <vector>

#include "lemamba/ssm.hpp"

namespace lemamba {

struct OpAttrs {
  std::int64_t axis = -1;
  std::int64_t axis2 = 0;   // second axis for transpose
  std::int64_t start = 0;   // slice
  std::int64_t end = 0;     // slice
  std::int64_t pad = 0;     // conv2d_depthwise
  Shape shape;              // reshape target
};

inline const std::vector<std::string>& forward_op_names() {
  static const std::vector<std::string> names = {
      "add",    "mul",  "matmul",    "exp",   "log",       "softplus",         "silu",   "gelu",
      "sum",    "mean", "reshape",   "transpose", "concat", "slice", "layernorm", "conv2d_depthwise",
      "linear", "selective_scan"};
  return names;
}

/// Inputs by op:
///   layernorm: x, gamma, beta; linear: x, w[, bias]; conv2d_depthwise: x, w;
///   selective_scan: x, A, B, C, delta (returns y).
inline Tensor forward_op(std::string_view name, const std::vector<Tensor>& in, const OpAttrs& attrs = {}) {
  auto need = [&](std::size_t lo, std::size_t hi) {
    if (in.size() < lo || in.size() > hi)
      throw ShapeError("forward_op(" + std::string(name) + "): expected " + std::to_string(lo) + ".." +
                       std::to_string(hi) + " inputs, got " + std::to_string(in.size()));
  };
  if (name == "add") return need(2, 2), add(in[0], in[1]);
  if (name == "mul") return need(2, 2), mul(in[0], in[1]);
  if (name == "matmul") return need(2, 2), matmul(in[0], in[1]);
  if (name == "exp") return need(1, 1), exp(in[0]);
  if (name == "log") return need(1, 1), log(in[0]);
  if (name == "softplus") return need(1, 1), softplus(in[0]);
  if (name == "silu") return need(1, 1), silu(in[0]);
  if (name == "gelu") return need(1, 1), gelu(in[0]);
  if (name == "sum") return need(1, 1), sum(in[0]);
  if (name == "mean") return need(1, 1), mean(in[0]);
  if (name == "reshape") return need(1, 1), reshape(in[0], attrs.shape);
  if (name == "transpose") return need(1, 1), transpose(in[0], attrs.axis, attrs.axis2);
  if (name == "concat") return need(1, 64), concat(in, attrs.axis);
  if (name == "slice") return need(1, 1), slice(in[0], attrs.axis, attrs.start, attrs.end);
  if (name == "layernorm") return need(3, 3), layernorm(in[0], in[1], in[2], attrs.axis);
  if (name == "conv2d_depthwise") return need(2, 2), conv2d_depthwise(in[0], in[1], attrs.pad);
  if (name == "linear") return need(2, 3), linear(in[0], in[1], in.size() == 3 ? in[2] : Tensor{});
  if (name == "selective_scan") {
    need(5, 5);
    return selective_scan(in[0], SSMParams{in[1], in[2], in[3], in[4]}).y;
  }
  throw ContractError("forward_op: unknown op '" + std::string(name) + "'");
}

}  // namespace lemamba
