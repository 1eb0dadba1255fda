#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace cada {

// C (m x n) = alpha * op(A) * op(B) + beta * C, all row-major contiguous.
// Thin wrapper over Eigen so the convolution code stays backend-agnostic.
template <class T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
          const T* b, T beta, T* c) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapC = Eigen::Map<Mat>;
  using MapA = Eigen::Map<const Mat>;

  MapC C(c, m, n);
  MapA A(a, trans_a ? k : m, trans_a ? m : k);
  MapA B(b, trans_b ? n : k, trans_b ? k : n);

  auto apply = [&](const auto& prod) {
    if (beta == T(0)) {
      if (alpha == T(1))
        C.noalias() = prod;
      else
        C.noalias() = alpha * prod;
    } else {
      if (beta != T(1)) C *= beta;
      if (alpha == T(1))
        C.noalias() += prod;
      else
        C.noalias() += alpha * prod;
    }
  };

  if (!trans_a && !trans_b)
    apply(A * B);
  else if (trans_a && !trans_b)
    apply(A.transpose() * B);
  else if (!trans_a && trans_b)
    apply(A * B.transpose());
  else
    apply(A.transpose() * B.transpose());
}

}  // namespace cada
