#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "cada/tensor.hpp"

namespace cada {

// Ordered name -> tensor map. Iteration follows insertion order, so runs
// with equal construction order see identical parameter sequences.
template <class T>
class ParamSet {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> tensor) {
    require(!index_.count(name), "ParamSet: duplicate parameter '" + name + "'");
    index_[name] = order_.size();
    order_.push_back(name);
    tensors_.push_back(std::move(tensor));
    return tensors_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamSet: unknown parameter '" + name + "'");
    return tensors_[it->second];
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamSet: unknown parameter '" + name + "'");
    return tensors_[it->second];
  }

  const std::vector<std::string>& names() const { return order_; }
  size_t count() const { return order_.size(); }

  Tensor<T>& tensor_at(size_t i) { return tensors_[i]; }
  const Tensor<T>& tensor_at(size_t i) const { return tensors_[i]; }

  int64_t step = 0;

  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

  // Allocates zero gradients for trainable entries a loss did not reach,
  // so an optimizer step over the whole set is well-defined.
  void ensure_grad_buffers() {
    for (auto& t : tensors_)
      if (t.requires_grad() && !t.has_grad()) t.grad();
  }

  // Deep copy; gradients are not carried over.
  ParamSet clone() const {
    ParamSet out;
    out.step = step;
    for (size_t i = 0; i < order_.size(); ++i) out.add(order_[i], tensors_[i].clone());
    return out;
  }

  // Shares storage but drops trainability: forwards through a frozen view
  // build no graph for these parameters and never touch their gradients.
  ParamSet frozen_view() const {
    ParamSet out;
    out.step = step;
    for (size_t i = 0; i < order_.size(); ++i) out.add(order_[i], tensors_[i].detach());
    return out;
  }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  bool same_values(const ParamSet& other) const {
    if (order_ != other.order_) return false;
    for (size_t i = 0; i < tensors_.size(); ++i) {
      if (tensors_[i].shape() != other.tensors_[i].shape()) return false;
      if (tensors_[i].values() != other.tensors_[i].values()) return false;
    }
    return true;
  }

 private:
  std::vector<std::string> order_;
  std::vector<Tensor<T>> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

// Teacher <- alpha * teacher + (1 - alpha) * student, over every entry
// (weights, biases and batch-norm running statistics alike).
template <class T>
void ema_update(ParamSet<T>& teacher, const ParamSet<T>& student, T alpha) {
  require(alpha >= T(0) && alpha <= T(1), "ema_update: alpha must lie in [0,1]");
  require(teacher.names() == student.names(),
          "ema_update: teacher/student parameter names differ");
  for (size_t i = 0; i < teacher.count(); ++i) {
    auto& t = teacher.tensor_at(i);
    const auto& s = student.tensor_at(i);
    require(t.shape() == s.shape(), "ema_update: shape mismatch at '" +
                                        teacher.names()[i] + "'");
    if (alpha == T(0)) {
      t.values() = s.values();  // exact copy, no rounding
      continue;
    }
    const T one_minus = T(1) - alpha;
    for (int64_t j = 0; j < t.size(); ++j)
      t.values()[j] = alpha * t.values()[j] + one_minus * s.values()[j];
  }
}

}  // namespace cada
