#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "cada/gemm.hpp"
#include "cada/tensor.hpp"

namespace cada {

namespace detail {

// Unpack x[ci,ih,iw] into col[(ci*kh+r)*kw+s, ho*wo_n+wo] for one image.
template <class T>
void im2col(const T* x, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t ho_n, int64_t wo_n, T* col) {
  const int64_t plane = h * w;
  for (int64_t ci = 0; ci < cin; ++ci) {
    for (int64_t r = 0; r < kh; ++r) {
      for (int64_t s = 0; s < kw; ++s) {
        T* dst = col + ((ci * kh + r) * kw + s) * (ho_n * wo_n);
        const T* src = x + ci * plane;
        for (int64_t ho = 0; ho < ho_n; ++ho, dst += wo_n) {
          const int64_t ih = ho * stride - pad + r;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + wo_n, T(0));
            continue;
          }
          const T* row = src + ih * w;
          if (stride == 1) {
            const int64_t base = -pad + s;
            const int64_t lo = std::max<int64_t>(0, -base);
            const int64_t hi = std::min<int64_t>(wo_n, w - base);
            if (lo > 0) std::fill(dst, dst + std::min(lo, wo_n), T(0));
            for (int64_t wo = lo; wo < hi; ++wo) dst[wo] = row[base + wo];
            if (hi < wo_n) std::fill(dst + std::max<int64_t>(hi, 0), dst + wo_n, T(0));
          } else {
            for (int64_t wo = 0; wo < wo_n; ++wo) {
              const int64_t iw = wo * stride - pad + s;
              dst[wo] = (iw >= 0 && iw < w) ? row[iw] : T(0);
            }
          }
        }
      }
    }
  }
}

// Scatter-add of the column gradient back onto the input gradient.
template <class T>
void col2im_add(const T* col, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t ho_n, int64_t wo_n, T* gx) {
  const int64_t plane = h * w;
  for (int64_t ci = 0; ci < cin; ++ci) {
    for (int64_t r = 0; r < kh; ++r) {
      for (int64_t s = 0; s < kw; ++s) {
        const T* src = col + ((ci * kh + r) * kw + s) * (ho_n * wo_n);
        T* dst = gx + ci * plane;
        for (int64_t ho = 0; ho < ho_n; ++ho, src += wo_n) {
          const int64_t ih = ho * stride - pad + r;
          if (ih < 0 || ih >= h) continue;
          T* row = dst + ih * w;
          for (int64_t wo = 0; wo < wo_n; ++wo) {
            const int64_t iw = wo * stride - pad + s;
            if (iw >= 0 && iw < w) row[iw] += src[wo];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution, NCHW. Output extent floor((H + 2*pad - kh) / stride) + 1.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int64_t stride, int64_t pad) {
  require(input.rank() == 4, "conv2d: input must be 4-D [N,C,H,W], got " +
                                 to_string(input.shape()));
  require(kernel.rank() == 4, "conv2d: kernel must be 4-D [Cout,Cin,kh,kw], got " +
                                  to_string(kernel.shape()));
  const int64_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  require(kernel.dim(1) == cin, "conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                                    " input channels, input has " + std::to_string(cin));
  require(bias.defined() && bias.rank() == 1 && bias.dim(0) == cout,
          "conv2d: bias must be [Cout]");
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(pad >= 0, "conv2d: pad must be >= 0");
  require(kh <= h + 2 * pad && kw <= w + 2 * pad,
          "conv2d: kernel " + to_string(kernel.shape()) + " larger than padded input " +
              to_string(input.shape()));

  const int64_t ho_n = (h + 2 * pad - kh) / stride + 1;
  const int64_t wo_n = (w + 2 * pad - kw) / stride + 1;
  const int64_t ckk = cin * kh * kw;
  const int64_t out_plane = ho_n * wo_n;

  std::vector<T> out(static_cast<size_t>(n * cout * out_plane));
  {
    std::vector<T> col(static_cast<size_t>(ckk * out_plane));
    for (int64_t i = 0; i < n; ++i) {
      detail::im2col(input.values().data() + i * cin * h * w, cin, h, w, kh, kw, stride,
                     pad, ho_n, wo_n, col.data());
      T* out_i = out.data() + i * cout * out_plane;
      gemm<T>(false, false, cout, out_plane, ckk, T(1), kernel.values().data(), col.data(),
              T(0), out_i);
      for (int64_t co = 0; co < cout; ++co) {
        const T b = bias.values()[co];
        T* row = out_i + co * out_plane;
        for (int64_t j = 0; j < out_plane; ++j) row[j] += b;
      }
    }
  }

  auto x = input, k = kernel, b = bias;
  return Tensor<T>::make_op(
      {n, cout, ho_n, wo_n}, std::move(out), {input, kernel, bias},
      [x, k, b, n, cin, h, w, cout, kh, kw, stride, pad, ho_n, wo_n,
       ckk](TensorNode<T>& node) {
        const int64_t out_plane = ho_n * wo_n;
        const T* g = node.grad.data();
        auto xn = x.node(), kn = k.node(), bn = b.node();
        if (bn->needs_grad) {
          for (int64_t i = 0; i < n; ++i)
            for (int64_t co = 0; co < cout; ++co) {
              const T* row = g + (i * cout + co) * out_plane;
              T acc = T(0);
              for (int64_t j = 0; j < out_plane; ++j) acc += row[j];
              bn->grad[co] += acc;
            }
        }
        std::vector<T> col;
        if (kn->needs_grad) col.resize(static_cast<size_t>(ckk * out_plane));
        std::vector<T> colg;
        if (xn->needs_grad) colg.resize(static_cast<size_t>(ckk * out_plane));
        for (int64_t i = 0; i < n; ++i) {
          const T* g_i = g + i * cout * out_plane;
          if (kn->needs_grad) {
            detail::im2col(xn->data->data() + i * cin * h * w, cin, h, w, kh, kw, stride,
                           pad, ho_n, wo_n, col.data());
            gemm<T>(false, true, cout, ckk, out_plane, T(1), g_i, col.data(), T(1),
                    kn->grad.data());
          }
          if (xn->needs_grad) {
            gemm<T>(true, false, ckk, out_plane, cout, T(1), kn->data->data(), g_i, T(0),
                    colg.data());
            detail::col2im_add(colg.data(), cin, h, w, kh, kw, stride, pad, ho_n, wo_n,
                               xn->grad.data() + i * cin * h * w);
          }
        }
      });
}

enum class PoolMode { kMax, kAvg };

// Non-overlapping k x k pooling; extents must divide by k.
template <class T>
Tensor<T> pool2d(const Tensor<T>& input, int64_t k, PoolMode mode) {
  require(input.rank() == 4, "pool2d: input must be 4-D, got " + to_string(input.shape()));
  require(k >= 1, "pool2d: window must be >= 1");
  const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(h % k == 0 && w % k == 0,
          "pool2d: extents " + to_string(input.shape()) + " not divisible by window " +
              std::to_string(k));
  const int64_t ho = h / k, wo = w / k;
  const auto& x = input.values();
  std::vector<T> out(static_cast<size_t>(n * c * ho * wo));
  std::vector<int64_t> argmax;
  if (mode == PoolMode::kMax) argmax.resize(out.size());

  for (int64_t nc = 0; nc < n * c; ++nc) {
    const T* src = x.data() + nc * h * w;
    T* dst = out.data() + nc * ho * wo;
    int64_t* am = mode == PoolMode::kMax ? argmax.data() + nc * ho * wo : nullptr;
    for (int64_t i = 0; i < ho; ++i)
      for (int64_t j = 0; j < wo; ++j) {
        if (mode == PoolMode::kMax) {
          T best = src[(i * k) * w + j * k];
          int64_t best_idx = (i * k) * w + j * k;
          for (int64_t r = 0; r < k; ++r)
            for (int64_t s = 0; s < k; ++s) {
              const int64_t idx = (i * k + r) * w + (j * k + s);
              if (src[idx] > best) {
                best = src[idx];
                best_idx = idx;
              }
            }
          dst[i * wo + j] = best;
          am[i * wo + j] = nc * h * w + best_idx;
        } else {
          T acc = T(0);
          for (int64_t r = 0; r < k; ++r)
            for (int64_t s = 0; s < k; ++s) acc += src[(i * k + r) * w + (j * k + s)];
          dst[i * wo + j] = acc / static_cast<T>(k * k);
        }
      }
  }

  auto in = input;
  return Tensor<T>::make_op(
      {n, c, ho, wo}, std::move(out), {input},
      [in, mode, k, h, w, ho, wo, argmax = std::move(argmax)](TensorNode<T>& node) {
        auto xn = in.node();
        if (!xn->needs_grad) return;
        const T* g = node.grad.data();
        const int64_t count = static_cast<int64_t>(node.grad.size());
        if (mode == PoolMode::kMax) {
          for (int64_t i = 0; i < count; ++i) xn->grad[argmax[i]] += g[i];
        } else {
          const T inv = T(1) / static_cast<T>(k * k);
          const int64_t nc_total = count / (ho * wo);
          for (int64_t nc = 0; nc < nc_total; ++nc) {
            const T* gsrc = g + nc * ho * wo;
            T* gdst = xn->grad.data() + nc * h * w;
            for (int64_t i = 0; i < ho; ++i)
              for (int64_t j = 0; j < wo; ++j) {
                const T v = gsrc[i * wo + j] * inv;
                for (int64_t r = 0; r < k; ++r)
                  for (int64_t s = 0; s < k; ++s) gdst[(i * k + r) * w + (j * k + s)] += v;
              }
          }
        }
      });
}

// Nearest-neighbour upsampling by an integer factor.
template <class T>
Tensor<T> upsample2d(const Tensor<T>& input, int64_t factor) {
  require(input.rank() == 4, "upsample2d: input must be 4-D");
  require(factor >= 1, "upsample2d: factor must be >= 1");
  const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t ho = h * factor, wo = w * factor;
  const auto& x = input.values();
  std::vector<T> out(static_cast<size_t>(n * c * ho * wo));
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const T* src = x.data() + nc * h * w;
    T* dst = out.data() + nc * ho * wo;
    for (int64_t i = 0; i < ho; ++i) {
      const T* srow = src + (i / factor) * w;
      T* drow = dst + i * wo;
      for (int64_t j = 0; j < wo; ++j) drow[j] = srow[j / factor];
    }
  }
  auto in = input;
  return Tensor<T>::make_op({n, c, ho, wo}, std::move(out), {input},
                            [in, factor, h, w, ho, wo](TensorNode<T>& node) {
                              auto xn = in.node();
                              if (!xn->needs_grad) return;
                              const T* g = node.grad.data();
                              const int64_t nc_total = xn->size() / (h * w);
                              for (int64_t nc = 0; nc < nc_total; ++nc) {
                                const T* gsrc = g + nc * ho * wo;
                                T* gdst = xn->grad.data() + nc * h * w;
                                for (int64_t i = 0; i < ho; ++i)
                                  for (int64_t j = 0; j < wo; ++j)
                                    gdst[(i / factor) * w + j / factor] +=
                                        gsrc[i * wo + j];
                              }
                            });
}

// Per-channel batch normalization. In training mode the batch statistics
// normalize and the running buffers are updated in place (they are plain
// leaf tensors, outside the graph); in eval mode the running buffers are
// read-only.
template <class T>
Tensor<T> batch_norm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                       T momentum = T(0.1), T eps = T(1e-5), bool update_running = true) {
  require(input.rank() == 4, "batch_norm2d: input must be 4-D");
  const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(gamma.size() == c && beta.size() == c && running_mean.size() == c &&
              running_var.size() == c,
          "batch_norm2d: parameter size mismatch for " + std::to_string(c) + " channels");
  const int64_t m = n * h * w;
  if (training) require(m >= 2, "batch_norm2d: training mode needs N*H*W >= 2");

  std::vector<T> mean(c), invstd(c);
  if (training) {
    for (int64_t ci = 0; ci < c; ++ci) {
      double acc = 0;
      for (int64_t i = 0; i < n; ++i) {
        const T* p = input.values().data() + (i * c + ci) * h * w;
        for (int64_t j = 0; j < h * w; ++j) acc += p[j];
      }
      const double mu = acc / m;
      double var = 0;
      for (int64_t i = 0; i < n; ++i) {
        const T* p = input.values().data() + (i * c + ci) * h * w;
        for (int64_t j = 0; j < h * w; ++j) {
          const double d = p[j] - mu;
          var += d * d;
        }
      }
      var /= m;
      mean[ci] = static_cast<T>(mu);
      invstd[ci] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      if (update_running) {
        running_mean.values()[ci] =
            (T(1) - momentum) * running_mean.values()[ci] + momentum * static_cast<T>(mu);
        running_var.values()[ci] =
            (T(1) - momentum) * running_var.values()[ci] + momentum * static_cast<T>(var);
      }
    }
  } else {
    for (int64_t ci = 0; ci < c; ++ci) {
      mean[ci] = running_mean.values()[ci];
      invstd[ci] = T(1) / std::sqrt(running_var.values()[ci] + eps);
    }
  }

  std::vector<T> out(input.values().size());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ci = 0; ci < c; ++ci) {
      const T* src = input.values().data() + (i * c + ci) * h * w;
      T* dst = out.data() + (i * c + ci) * h * w;
      const T mu = mean[ci], is = invstd[ci], ga = gamma.values()[ci],
              be = beta.values()[ci];
      for (int64_t j = 0; j < h * w; ++j) dst[j] = (src[j] - mu) * is * ga + be;
    }

  auto x = input, ga = gamma, be = beta;
  return Tensor<T>::make_op(
      {n, c, h, w}, std::move(out), {input, gamma, beta},
      [x, ga, be, n, c, h, w, m, training, mean = std::move(mean),
       invstd = std::move(invstd)](TensorNode<T>& node) {
        auto xn = x.node(), gn = ga.node(), bn = be.node();
        const T* g = node.grad.data();
        const int64_t plane = h * w;
        for (int64_t ci = 0; ci < c; ++ci) {
          const T mu = mean[ci], is = invstd[ci];
          double sum_g = 0, sum_gx = 0;  // sums of g and g*xhat over the channel
          for (int64_t i = 0; i < n; ++i) {
            const T* gp = g + (i * c + ci) * plane;
            const T* xp = xn->data->data() + (i * c + ci) * plane;
            for (int64_t j = 0; j < plane; ++j) {
              sum_g += gp[j];
              sum_gx += gp[j] * (xp[j] - mu) * is;
            }
          }
          if (gn->needs_grad) gn->grad[ci] += static_cast<T>(sum_gx);
          if (bn->needs_grad) bn->grad[ci] += static_cast<T>(sum_g);
          if (!xn->needs_grad) continue;
          const T gamma_is = gn->data->operator[](ci) * is;
          if (training) {
            const T mg = static_cast<T>(sum_g / m), mgx = static_cast<T>(sum_gx / m);
            for (int64_t i = 0; i < n; ++i) {
              const T* gp = g + (i * c + ci) * plane;
              const T* xp = xn->data->data() + (i * c + ci) * plane;
              T* dst = xn->grad.data() + (i * c + ci) * plane;
              for (int64_t j = 0; j < plane; ++j) {
                const T xhat = (xp[j] - mu) * is;
                dst[j] += gamma_is * (gp[j] - mg - xhat * mgx);
              }
            }
          } else {
            for (int64_t i = 0; i < n; ++i) {
              const T* gp = g + (i * c + ci) * plane;
              T* dst = xn->grad.data() + (i * c + ci) * plane;
              for (int64_t j = 0; j < plane; ++j) dst[j] += gamma_is * gp[j];
            }
          }
        }
      });
}

template <class T>
Tensor<T> relu(const Tensor<T>& input) {
  std::vector<T> out(input.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(input.values()[i], T(0));
  auto in = input;
  return Tensor<T>::make_op(input.shape(), std::move(out), {input},
                            [in](TensorNode<T>& node) {
                              auto xn = in.node();
                              if (!xn->needs_grad) return;
                              for (size_t i = 0; i < node.grad.size(); ++i)
                                if ((*xn->data)[i] > T(0)) xn->grad[i] += node.grad[i];
                            });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope = T(0.2)) {
  std::vector<T> out(input.values().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const T v = input.values()[i];
    out[i] = v > T(0) ? v : slope * v;
  }
  auto in = input;
  return Tensor<T>::make_op(input.shape(), std::move(out), {input},
                            [in, slope](TensorNode<T>& node) {
                              auto xn = in.node();
                              if (!xn->needs_grad) return;
                              for (size_t i = 0; i < node.grad.size(); ++i)
                                xn->grad[i] += ((*xn->data)[i] > T(0) ? T(1) : slope) *
                                               node.grad[i];
                            });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  std::vector<T> out(input.values().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const T v = input.values()[i];
    // split by sign so exp never overflows
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                       : std::exp(v) / (T(1) + std::exp(v));
  }
  auto in = input;
  return Tensor<T>::make_op(
      input.shape(), std::move(out), {input}, [in](TensorNode<T>& node) {
        auto xn = in.node();
        if (!xn->needs_grad) return;
        for (size_t i = 0; i < node.grad.size(); ++i) {
          const T y = (*node.data)[i];
          xn->grad[i] += node.grad[i] * y * (T(1) - y);
        }
      });
}

enum class Activation { kRelu, kLeakyRelu, kSigmoid };

template <class T>
Tensor<T> pointwise(const Tensor<T>& input, Activation kind) {
  switch (kind) {
    case Activation::kRelu: return relu(input);
    case Activation::kLeakyRelu: return leaky_relu(input, T(0.2));
    case Activation::kSigmoid: return sigmoid(input);
  }
  fail("pointwise: unknown activation");
}

// Softmax over the channel dimension of an NCHW tensor.
template <class T>
Tensor<T> softmax_channel(const Tensor<T>& input) {
  require(input.rank() == 4, "softmax_channel: input must be 4-D");
  const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t plane = h * w;
  std::vector<T> out(input.values().size());
  const T* x = input.values().data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < plane; ++j) {
      const int64_t base = i * c * plane + j;
      T mx = x[base];
      for (int64_t ci = 1; ci < c; ++ci) mx = std::max(mx, x[base + ci * plane]);
      T denom = T(0);
      for (int64_t ci = 0; ci < c; ++ci) {
        const T e = std::exp(x[base + ci * plane] - mx);
        out[base + ci * plane] = e;
        denom += e;
      }
      for (int64_t ci = 0; ci < c; ++ci) out[base + ci * plane] /= denom;
    }
  auto in = input;
  return Tensor<T>::make_op(
      input.shape(), std::move(out), {input}, [in, n, c, plane](TensorNode<T>& node) {
        auto xn = in.node();
        if (!xn->needs_grad) return;
        const T* y = node.data->data();
        const T* g = node.grad.data();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < plane; ++j) {
            const int64_t base = i * c * plane + j;
            T dot = T(0);
            for (int64_t ci = 0; ci < c; ++ci)
              dot += g[base + ci * plane] * y[base + ci * plane];
            for (int64_t ci = 0; ci < c; ++ci)
              xn->grad[base + ci * plane] +=
                  y[base + ci * plane] * (g[base + ci * plane] - dot);
          }
      });
}

// Concatenate NCHW tensors along the channel dimension.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const int64_t n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  int64_t c_total = 0;
  for (const auto& p : parts) {
    require(p.rank() == 4 && p.dim(0) == n && p.dim(2) == h && p.dim(3) == w,
            "concat_channels: mismatched shapes " + to_string(p.shape()));
    c_total += p.dim(1);
  }
  const int64_t plane = h * w;
  std::vector<T> out(static_cast<size_t>(n * c_total * plane));
  for (int64_t i = 0; i < n; ++i) {
    int64_t off = 0;
    for (const auto& p : parts) {
      const int64_t pc = p.dim(1);
      std::memcpy(out.data() + (i * c_total + off) * plane,
                  p.values().data() + i * pc * plane,
                  static_cast<size_t>(pc * plane) * sizeof(T));
      off += pc;
    }
  }
  auto captured = parts;
  return Tensor<T>::make_op(
      {n, c_total, h, w}, std::move(out), parts,
      [captured, n, c_total, plane](TensorNode<T>& node) {
        const T* g = node.grad.data();
        for (int64_t i = 0; i < n; ++i) {
          int64_t off = 0;
          for (const auto& p : captured) {
            auto pn = p.node();
            const int64_t pc = pn->shape[1];
            if (pn->needs_grad) {
              const T* src = g + (i * c_total + off) * plane;
              T* dst = pn->grad.data() + i * pc * plane;
              for (int64_t j = 0; j < pc * plane; ++j) dst[j] += src[j];
            }
            off += pc;
          }
        }
      });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + to_string(a.shape()) + " vs " +
                                      to_string(b.shape()));
  std::vector<T> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto ta = a, tb = b;
  return Tensor<T>::make_op(a.shape(), std::move(out), {a, b}, [ta, tb](TensorNode<T>& node) {
    for (auto* side : {&ta, &tb}) {
      auto n = side->node();
      if (!n->needs_grad) continue;
      for (size_t i = 0; i < node.grad.size(); ++i) n->grad[i] += node.grad[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
  auto ta = a;
  return Tensor<T>::make_op(a.shape(), std::move(out), {a},
                            [ta, factor](TensorNode<T>& node) {
                              auto n = ta.node();
                              if (!n->needs_grad) return;
                              for (size_t i = 0; i < node.grad.size(); ++i)
                                n->grad[i] += factor * node.grad[i];
                            });
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.values()) acc += v;
  auto ta = a;
  return Tensor<T>::make_op({}, {acc}, {a}, [ta](TensorNode<T>& node) {
    auto n = ta.node();
    if (!n->needs_grad) return;
    const T g = node.grad[0];
    for (auto& gv : n->grad) gv += g;
  });
}

// Elementwise mean of same-shape tensors.
template <class T>
Tensor<T> mean_tensors(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "mean_tensors: no inputs");
  for (const auto& p : parts)
    require(p.shape() == parts[0].shape(), "mean_tensors: shape mismatch");
  const T inv = T(1) / static_cast<T>(parts.size());
  std::vector<T> out(parts[0].values().size(), T(0));
  for (const auto& p : parts)
    for (size_t i = 0; i < out.size(); ++i) out[i] += p.values()[i];
  for (auto& v : out) v *= inv;
  auto captured = parts;
  return Tensor<T>::make_op(parts[0].shape(), std::move(out), parts,
                            [captured, inv](TensorNode<T>& node) {
                              for (const auto& p : captured) {
                                auto n = p.node();
                                if (!n->needs_grad) continue;
                                for (size_t i = 0; i < node.grad.size(); ++i)
                                  n->grad[i] += inv * node.grad[i];
                              }
                            });
}

}  // namespace cada
