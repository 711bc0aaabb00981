#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "amran/error.hpp"

namespace amran::numeric {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the recorded computation. `backward` reads `grad` of this node
// and accumulates into the parents' grads.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Disables recording for the lifetime of the guard (inference paths).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Records the on/off pattern of every non-smooth primitive (ReLU, max pooling,
// clamps) while enabled. Finite-difference checks compare signatures at x, x+e
// and x-e and skip coordinates whose perturbation crosses a kink.
class KinkMonitor {
 public:
  static KinkMonitor& instance() {
    thread_local KinkMonitor monitor;
    return monitor;
  }
  bool enabled() const { return enabled_; }
  void start() {
    enabled_ = true;
    signature_ = 0xcbf29ce484222325ULL;
  }
  std::uint64_t stop() {
    enabled_ = false;
    return signature_;
  }
  void record(std::uint64_t v) {
    signature_ ^= v + 0x9e3779b97f4a7c15ULL + (signature_ << 6) + (signature_ >> 2);
  }

 private:
  bool enabled_ = false;
  std::uint64_t signature_ = 0;
};

// Value-semantic handle to a node. Copies alias the same storage, like a
// shared tensor in most autograd frameworks.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value.assign(shape_size(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_size(shape) != values.size())
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }
  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  // Empty until a backward pass has reached this tensor.
  std::span<double> grad() { return node_->grad; }
  std::span<const double> grad() const { return node_->grad; }

  double item() const {
    if (size() != 1) throw ShapeError("item(): tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }

  // Fresh leaf holding a copy of the values; shares nothing with this tensor.
  Tensor detach_copy(bool requires_grad = false) const {
    return from(shape(), values(), requires_grad);
  }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Builds the result of a primitive. The backward closure is retained only when
// recording is on and at least one input needs a gradient.
inline Tensor make_result(Shape shape, std::vector<double> values,
                          std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  const auto& node = out.node();
  node->requires_grad = true;
  node->parents.reserve(inputs.size());
  for (auto& in : inputs) node->parents.push_back(in.node());
  node->backward = std::move(backward);
  return out;
}

// Reverse topological order of everything reachable from `root` that needs a
// gradient. Each node appears exactly once.
class ComputeGraph {
 public:
  explicit ComputeGraph(const Tensor& root) {
    std::unordered_set<const Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    if (!root.requires_grad()) return;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  // Topological order: parents before children.
  const std::vector<Node*>& order() const { return order_; }
  std::size_t size() const { return order_.size(); }

 private:
  std::vector<Node*> order_;
};

// Populates grad on every trainable tensor reachable from `loss`.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ShapeError("backward: loss must be a scalar tensor");
  ComputeGraph graph(loss);
  for (Node* n : graph.order()) n->grad.assign(n->value.size(), 0.0);
  if (graph.order().empty()) return;
  loss.node()->grad[0] = 1.0;
  for (auto it = graph.order().rbegin(); it != graph.order().rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

}  // namespace amran::numeric
