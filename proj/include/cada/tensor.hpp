#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cada/common.hpp"

namespace cada {

// One value in the computation graph. Interior nodes carry a backward
// closure that scatters this node's gradient into its parents' gradients.
// Leaves (parameters, inputs, detached values) have no closure.
template <class T>
struct TensorNode {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::vector<T> grad;  // lazily allocated; persists across backward() on leaves
  bool requires_grad = false;  // leaf trainability
  bool needs_grad = false;     // true if any leaf under this node requires grad
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backfn;

  int64_t size() const { return static_cast<int64_t>(data->size()); }
  bool is_leaf() const { return !backfn; }
};

template <class T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor from_data(Shape shape, std::vector<T> values) {
    require(numel(shape) == static_cast<int64_t>(values.size()),
            "Tensor: shape " + to_string(shape) + " does not match value count " +
                std::to_string(values.size()));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::make_shared<std::vector<T>>(std::move(values));
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape) {
    std::vector<T> v(static_cast<size_t>(numel(shape)), T(0));
    return from_data(std::move(shape), std::move(v));
  }

  static Tensor full(Shape shape, T value) {
    std::vector<T> v(static_cast<size_t>(numel(shape)), value);
    return from_data(std::move(shape), std::move(v));
  }

  static Tensor scalar(T value) { return from_data({}, {value}); }

  static Tensor randn(Shape shape, std::mt19937_64& rng, T stddev = T(1)) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<T> v(static_cast<size_t>(numel(shape)));
    for (auto& x : v) x = static_cast<T>(dist(rng)) * stddev;
    return from_data(std::move(shape), std::move(v));
  }

  static Tensor rand_uniform(Shape shape, std::mt19937_64& rng, T lo, T hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<T> v(static_cast<size_t>(numel(shape)));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return from_data(std::move(shape), std::move(v));
  }

  // Interior-node constructor used by every op.
  static Tensor make_op(Shape shape, std::vector<T> values, std::vector<Tensor> inputs,
                        std::function<void(Node&)> backfn) {
    Tensor out = from_data(std::move(shape), std::move(values));
    bool needs = false;
    for (const auto& in : inputs) needs = needs || (in.defined() && in.node_->needs_grad);
    if (needs) {
      out.node_->needs_grad = true;
      out.node_->backfn = std::move(backfn);
      out.node_->parents.reserve(inputs.size());
      for (auto& in : inputs)
        if (in.defined()) out.node_->parents.push_back(in.node_);
    }
    // else: prune — a forward with no trainable inputs builds no graph.
    return out;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t size() const { return node_->size(); }
  int64_t dim(size_t i) const { return node_->shape.at(i); }
  int rank() const { return static_cast<int>(node_->shape.size()); }

  std::vector<T>& values() { return *node_->data; }
  const std::vector<T>& values() const { return *node_->data; }

  T item() const {
    require(size() == 1, "item(): tensor has " + std::to_string(size()) + " elements");
    return (*node_->data)[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    require(node_->is_leaf(), "set_requires_grad: only valid on leaf tensors");
    node_->requires_grad = flag;
    node_->needs_grad = flag;
    return *this;
  }

  bool has_grad() const { return defined() && !node_->grad.empty(); }
  std::vector<T>& grad() {
    if (node_->grad.empty()) node_->grad.assign(static_cast<size_t>(size()), T(0));
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    require(has_grad(), "grad(): no gradient present");
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  // New leaf sharing the same storage, cut off from the graph.
  Tensor detach() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->data = node_->data;
    return Tensor(std::move(n));
  }

  // Deep copy (leaf). Keeps requires_grad.
  Tensor clone() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->data = std::make_shared<std::vector<T>>(*node_->data);
    n->requires_grad = node_->requires_grad;
    n->needs_grad = node_->requires_grad;
    return Tensor(std::move(n));
  }

  bool all_finite() const {
    for (T v : *node_->data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  void check_finite(const std::string& what) const {
    if (!all_finite()) fail(what + ": non-finite value encountered");
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Reverse-mode sweep from a scalar loss. Interior gradients are scratch
// (re-zeroed per call); leaf gradients accumulate until zero_grad().
template <class T>
void backward(const Tensor<T>& loss) {
  require(loss.defined(), "backward: undefined tensor");
  require(loss.size() == 1, "backward: loss must be scalar, got shape " +
                                to_string(loss.shape()));
  using Node = TensorNode<T>;
  Node* root = loss.node().get();
  if (!root->needs_grad) return;  // nothing trainable below

  // Iterative post-order DFS over parent edges, pruned at subtrees that
  // cannot reach a trainable leaf.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      stack.back().second = idx + 1;
      Node* p = node->parents[idx].get();
      if (p->needs_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Allocate/reset gradient buffers. Leaves keep accumulated grads.
  for (Node* n : order) {
    if (n->is_leaf()) {
      if (n->requires_grad && n->grad.empty())
        n->grad.assign(static_cast<size_t>(n->size()), T(0));
    } else {
      n->grad.assign(static_cast<size_t>(n->size()), T(0));
    }
  }
  if (root->grad.empty()) root->grad.assign(1, T(0));
  root->grad[0] += T(1);

  // Reverse post-order is a topological order: every node runs after all
  // of its consumers have deposited into its grad.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backfn && !n->grad.empty()) n->backfn(*n);
  }
}

}  // namespace cada
