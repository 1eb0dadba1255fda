#pragma once

#include <cmath>
#include <vector>

#include "cada/tensor.hpp"

namespace cada {

// Mean pixelwise cross-entropy of softmax(logits) against integer labels.
template <class T>
Tensor<T> softmax_ce_loss(const Tensor<T>& logits, const IntTensor& labels) {
  require(logits.rank() == 4, "softmax_ce_loss: logits must be [N,K,H,W]");
  const int64_t n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  require(labels.shape == Shape({n, h, w}),
          "softmax_ce_loss: labels " + to_string(labels.shape) + " do not match logits " +
              to_string(logits.shape()));
  const int64_t plane = h * w;
  const int64_t pixels = n * plane;
  const T* x = logits.values().data();

  // keep the probabilities for the backward pass
  auto probs = std::make_shared<std::vector<T>>(logits.values().size());
  double total = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < plane; ++j) {
      const int32_t label = labels.data[i * plane + j];
      require(label >= 0 && label < k,
              "softmax_ce_loss: label " + std::to_string(label) + " out of range [0," +
                  std::to_string(k) + ")");
      const int64_t base = i * k * plane + j;
      T mx = x[base];
      for (int64_t ci = 1; ci < k; ++ci) mx = std::max(mx, x[base + ci * plane]);
      double denom = 0;
      for (int64_t ci = 0; ci < k; ++ci) {
        const double e = std::exp(static_cast<double>(x[base + ci * plane] - mx));
        (*probs)[base + ci * plane] = static_cast<T>(e);
        denom += e;
      }
      for (int64_t ci = 0; ci < k; ++ci)
        (*probs)[base + ci * plane] = static_cast<T>((*probs)[base + ci * plane] / denom);
      total += std::log(denom) + mx - x[base + label * plane];
    }

  auto in = logits;
  auto lab = labels;
  return Tensor<T>::make_op(
      {}, {static_cast<T>(total / pixels)}, {logits},
      [in, lab, probs, n, k, plane, pixels](TensorNode<T>& node) {
        auto xn = in.node();
        if (!xn->needs_grad) return;
        const T g = node.grad[0] / static_cast<T>(pixels);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < plane; ++j) {
            const int32_t label = lab.data[i * plane + j];
            const int64_t base = i * k * plane + j;
            for (int64_t ci = 0; ci < k; ++ci) {
              const T p = (*probs)[base + ci * plane];
              xn->grad[base + ci * plane] += g * (p - (ci == label ? T(1) : T(0)));
            }
          }
      });
}

// (1/M) * sum_i (a_i - b_i)^2
template <class T>
Tensor<T> mse_loss(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mse_loss: shape mismatch " + to_string(a.shape()) +
                                      " vs " + to_string(b.shape()));
  const int64_t m = a.size();
  double acc = 0;
  for (int64_t i = 0; i < m; ++i) {
    const double d = a.values()[i] - b.values()[i];
    acc += d * d;
  }
  auto ta = a, tb = b;
  return Tensor<T>::make_op(
      {}, {static_cast<T>(acc / m)}, {a, b}, [ta, tb, m](TensorNode<T>& node) {
        auto an = ta.node(), bn = tb.node();
        const T g2 = node.grad[0] * T(2) / static_cast<T>(m);
        for (int64_t i = 0; i < m; ++i) {
          const T d = (*an->data)[i] - (*bn->data)[i];
          if (an->needs_grad) an->grad[i] += g2 * d;
          if (bn->needs_grad) bn->grad[i] -= g2 * d;
        }
      });
}

// Mean binary cross-entropy with logits against a constant 0/1 label,
// computed in the overflow-free form max(x,0) - x*y + log(1 + exp(-|x|)).
template <class T>
Tensor<T> bce_logits_loss(const Tensor<T>& logits, int label) {
  require(label == 0 || label == 1, "bce_logits_loss: label must be 0 or 1");
  const int64_t m = logits.size();
  require(m > 0, "bce_logits_loss: empty logits");
  const T y = static_cast<T>(label);
  double acc = 0;
  for (int64_t i = 0; i < m; ++i) {
    const double x = logits.values()[i];
    acc += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  auto in = logits;
  return Tensor<T>::make_op(
      {}, {static_cast<T>(acc / m)}, {logits}, [in, y, m](TensorNode<T>& node) {
        auto xn = in.node();
        if (!xn->needs_grad) return;
        const T g = node.grad[0] / static_cast<T>(m);
        for (int64_t i = 0; i < m; ++i) {
          const T x = (*xn->data)[i];
          const T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                : std::exp(x) / (T(1) + std::exp(x));
          xn->grad[i] += g * (s - y);
        }
      });
}

}  // namespace cada
