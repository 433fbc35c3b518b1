#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lemamba/errors.hpp"

namespace lemamba {

using Shape = std::vector<std::int64_t>;

inline std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

// Activation/FLOP instrumentation used by the complexity bench. Only tensors
// allocated while a memory probe is active are counted.
struct Counters {
  std::uint64_t mem_generation = 0;
  bool mem_active = false;
  std::int64_t live = 0;
  std::int64_t peak = 0;
  bool flops_active = false;
  std::int64_t flops = 0;
};

inline Counters& counters() {
  thread_local Counters c;
  return c;
}

inline void count_flops(std::int64_t n) {
  auto& c = counters();
  if (c.flops_active) c.flops += n;
}

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::uint64_t counted_generation = 0;

  TensorImpl(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    auto& c = counters();
    if (c.mem_active) {
      counted_generation = c.mem_generation;
      c.live += static_cast<std::int64_t>(data.size());
      c.peak = std::max(c.peak, c.live);
    }
  }
  TensorImpl(const TensorImpl&) = delete;
  TensorImpl& operator=(const TensorImpl&) = delete;
  ~TensorImpl() {
    auto& c = counters();
    if (counted_generation != 0 && c.mem_active && counted_generation == c.mem_generation)
      c.live -= static_cast<std::int64_t>(data.size());
  }

  std::span<float> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    return grad;
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

/// Dense row-major float32 array with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage. Parameters are
/// leaves with requires_grad set; every op result produced from a tracked
/// input is recorded on the thread's Graph.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f) {
    validate_shape(shape);
    const auto n = numel_of(shape);
    impl_ = std::make_shared<detail::TensorImpl>(std::move(shape), std::vector<float>(n, fill));
  }

  Tensor(Shape shape, std::vector<float> values) {
    validate_shape(shape);
    if (numel_of(shape) != values.size())
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    impl_ = std::make_shared<detail::TensorImpl>(std::move(shape), std::move(values));
  }

  static Tensor scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(impl_->shape.size()); }
  std::int64_t dim(std::int64_t i) const {
    if (i < 0) i += rank();
    return impl_->shape.at(static_cast<std::size_t>(i));
  }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const float> data() const { return impl_->data; }
  std::span<float> data_mut() { return impl_->data; }
  float operator[](std::size_t i) const { return impl_->data[i]; }

  float item() const {
    if (numel() != 1) throw ContractError("item(): tensor " + shape_str(shape()) + " is not a scalar");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& requires_grad_(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  /// Gradient values; an all-zero view is returned when nothing was accumulated.
  std::vector<float> grad() const {
    if (impl_->grad.empty()) return std::vector<float>(numel(), 0.0f);
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.clear(); }

  /// Copy of the values with no graph history.
  Tensor detach() const { return Tensor(shape(), impl_->data); }
  Tensor clone() const { return detach(); }

  bool all_finite() const {
    return std::all_of(impl_->data.begin(), impl_->data.end(),
                       [](float v) { return std::isfinite(v); });
  }

  bool same_values(const Tensor& other) const {
    return shape() == other.shape() && impl_->data == other.impl_->data;
  }

  const detail::ImplPtr& impl() const { return impl_; }

 private:
  static void validate_shape(const Shape& shape) {
    for (auto d : shape)
      if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
  }

  detail::ImplPtr impl_;
};

inline void check_finite(const Tensor& t, std::string_view what) {
  if (!t.all_finite()) throw NumericalError(std::string(what) + ": non-finite value");
}

/// Ordered record of executed ops. Recording order is a topological order,
/// so the reverse pass visits each node once after all of its consumers.
class Graph {
 public:
  struct Node {
    std::string_view op;
    std::vector<detail::ImplPtr> outputs;
    std::function<void()> backward;
  };

  static Graph& current() {
    thread_local Graph g;
    return g;
  }

  void record(Node node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  /// Runs every backward rule in reverse recording order, skipping nodes
  /// whose outputs received no gradient. The graph is cleared afterwards.
  void run_backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      const bool reached = std::any_of(it->outputs.begin(), it->outputs.end(),
                                       [](const detail::ImplPtr& p) { return !p->grad.empty(); });
      if (reached) it->backward();
    }
    nodes_.clear();
  }

 private:
  std::vector<Node> nodes_;
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Populates grads of every requires_grad leaf with d(loss)/d(leaf).
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  auto& graph = Graph::current();
  if (graph.empty()) throw ContractError("backward: graph is empty (loss does not require grad)");
  loss.impl()->grad_buffer()[0] += 1.0f;
  graph.run_backward();
}

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

/// Records a node when any input is tracked. Returns true when recorded.
template <class Fn>
bool record(std::string_view op, std::initializer_list<const Tensor*> inputs,
            std::initializer_list<Tensor*> outputs, Fn&& fn) {
  if (!any_requires_grad(inputs)) return false;
  Graph::Node node;
  node.op = op;
  for (Tensor* out : outputs) {
    out->requires_grad_(true);
    node.outputs.push_back(out->impl());
  }
  node.backward = std::forward<Fn>(fn);
  Graph::current().record(std::move(node));
  return true;
}

/// Gradient sink for an input, or an empty span when it is not tracked.
inline std::span<float> sink(const ImplPtr& p) {
  if (!p || !p->requires_grad) return {};
  return p->grad_buffer();
}

}  // namespace detail

}  // namespace lemamba
