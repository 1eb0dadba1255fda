#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "cada/paramset.hpp"

namespace cada {

enum class OptKind { kSgd, kAdam };

// Per-parameter optimizer state. Moment buffers are keyed by parameter
// name and created on first use, matching parameter shapes.
template <class T>
struct OptState {
  OptKind kind = OptKind::kSgd;
  T momentum = T(0.9);                          // sgd
  T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);  // adam
  int64_t step = 0;
  std::unordered_map<std::string, std::vector<T>> m1;  // sgd velocity / adam first moment
  std::unordered_map<std::string, std::vector<T>> m2;  // adam second moment

  static OptState sgd(T momentum = T(0.9)) {
    OptState s;
    s.kind = OptKind::kSgd;
    s.momentum = momentum;
    return s;
  }
  static OptState adam(T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8)) {
    OptState s;
    s.kind = OptKind::kAdam;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    return s;
  }
};

// One update over every trainable parameter. Gradients are left in place;
// the caller decides when to clear them.
template <class T>
void opt_step(ParamSet<T>& params, OptState<T>& state, T lr) {
  state.step += 1;
  params.step += 1;
  for (size_t i = 0; i < params.count(); ++i) {
    auto& t = params.tensor_at(i);
    if (!t.requires_grad()) continue;  // running statistics etc.
    const std::string& name = params.names()[i];
    require(t.has_grad(), "opt_step: parameter '" + name + "' has no gradient");
    const auto& g = t.grad();
    auto& w = t.values();
    const size_t m = w.size();
    if (state.kind == OptKind::kSgd) {
      auto& v = state.m1[name];
      if (v.empty()) v.assign(m, T(0));
      require(v.size() == m, "opt_step: stale momentum buffer for '" + name + "'");
      for (size_t j = 0; j < m; ++j) {
        v[j] = state.momentum * v[j] + g[j];
        w[j] -= lr * v[j];
      }
    } else {
      auto& m1 = state.m1[name];
      auto& m2 = state.m2[name];
      if (m1.empty()) m1.assign(m, T(0));
      if (m2.empty()) m2.assign(m, T(0));
      require(m1.size() == m && m2.size() == m,
              "opt_step: stale moment buffers for '" + name + "'");
      const T c1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step));
      const T c2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step));
      for (size_t j = 0; j < m; ++j) {
        m1[j] = state.beta1 * m1[j] + (T(1) - state.beta1) * g[j];
        m2[j] = state.beta2 * m2[j] + (T(1) - state.beta2) * g[j] * g[j];
        const T mhat = m1[j] / c1;
        const T vhat = m2[j] / c2;
        w[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
      }
    }
  }
}

// base_lr * (1 - iter/max_iter)^power
template <class T>
T poly_lr(T base_lr, int64_t iter, int64_t max_iter, T power = T(0.9)) {
  require(max_iter >= 1, "poly_lr: max_iter must be >= 1");
  require(iter >= 0, "poly_lr: iter must be >= 0");
  require(iter <= max_iter, "poly_lr: iter " + std::to_string(iter) +
                                " exceeds max_iter " + std::to_string(max_iter));
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max_iter);
  return base_lr * static_cast<T>(std::pow(frac, static_cast<double>(power)));
}

}  // namespace cada
