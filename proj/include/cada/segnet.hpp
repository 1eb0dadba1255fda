#pragma once

#include <array>
#include <string>
#include <vector>

#include "cada/losses.hpp"
#include "cada/ops.hpp"
#include "cada/paramset.hpp"
#include "cada/rng.hpp"

namespace cada {

enum class Mode { kTrain, kEval };

struct SegNetConfig {
  int64_t base_channels = 8;
  int64_t num_scales = 4;   // fixed by construction
  int64_t num_classes = 3;  // background, optic disc, optic cup
  int64_t input_size = 64;  // square, divisible by 32

  void validate() const {
    require(num_scales == 4, "SegNetConfig: num_scales is fixed at 4, got " +
                                 std::to_string(num_scales));
    require(num_classes == 3, "SegNetConfig: num_classes is fixed at 3, got " +
                                  std::to_string(num_classes));
    require(base_channels >= 1, "SegNetConfig: base_channels must be >= 1");
    require(input_size >= 32 && input_size % 32 == 0,
            "SegNetConfig: input_size must be a positive multiple of 32, got " +
                std::to_string(input_size));
  }
  std::array<int64_t, 4> widths() const {
    return {base_channels, base_channels * 2, base_channels * 4, base_channels * 8};
  }
};

// One forward pass's products: the 1-channel compressed bottleneck, the four
// per-scale class-logit maps brought to full resolution, and their mean.
template <class T>
struct SegOutput {
  Tensor<T> enc_feature;                // [N,1,S/8,S/8]
  std::vector<Tensor<T>> scale_logits;  // 4 x [N,3,S,S]
  Tensor<T> avg_logits;                 // [N,3,S,S]
};

namespace detail {

template <class T>
void add_conv(ParamSet<T>& ps, const std::string& name, int64_t cin, int64_t cout,
              int64_t k, std::mt19937_64& rng) {
  const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(cin * k * k)));
  ps.add(name + ".w", Tensor<T>::randn({cout, cin, k, k}, rng, stddev).set_requires_grad(true));
  ps.add(name + ".b", Tensor<T>::zeros({cout}).set_requires_grad(true));
}

template <class T>
void add_bn(ParamSet<T>& ps, const std::string& name, int64_t c) {
  ps.add(name + ".gamma", Tensor<T>::full({c}, T(1)).set_requires_grad(true));
  ps.add(name + ".beta", Tensor<T>::zeros({c}).set_requires_grad(true));
  ps.add(name + ".rmean", Tensor<T>::zeros({c}));
  ps.add(name + ".rvar", Tensor<T>::full({c}, T(1)));
}

template <class T>
Tensor<T> conv_bn_relu(ParamSet<T>& ps, const std::string& conv, const std::string& bn,
                       const Tensor<T>& x, Mode mode) {
  auto y = conv2d(x, ps.at(conv + ".w"), ps.at(conv + ".b"), 1, 1);
  y = batch_norm2d(y, ps.at(bn + ".gamma"), ps.at(bn + ".beta"), ps.at(bn + ".rmean"),
                   ps.at(bn + ".rvar"), mode == Mode::kTrain);
  return relu(y);
}

template <class T>
Tensor<T> conv1x1(ParamSet<T>& ps, const std::string& name, const Tensor<T>& x) {
  return conv2d(x, ps.at(name + ".w"), ps.at(name + ".b"), 1, 0);
}

}  // namespace detail

// Deterministic parameter construction for the shared SN/TSN network:
// four encoder blocks (two conv3x3+BN+ReLU each, 2x2 max-pool between),
// three pooled-image stems feeding encoder blocks 2-4 by concatenation,
// four decoder blocks, per-scale 1x1 heads and the 1x1 bottleneck head.
template <class T>
ParamSet<T> build_segnet(const SegNetConfig& cfg, uint64_t seed) {
  cfg.validate();
  auto w = cfg.widths();
  auto rng = make_rng(seed);
  ParamSet<T> ps;

  // encoder trunk; block l >= 2 sees [trunk w[l-2] | stem w[l-2]] = w[l-1] channels
  detail::add_conv(ps, "enc1.conv1", 3, w[0], 3, rng);
  detail::add_bn(ps, "enc1.bn1", w[0]);
  detail::add_conv(ps, "enc1.conv2", w[0], w[0], 3, rng);
  detail::add_bn(ps, "enc1.bn2", w[0]);
  for (int l = 2; l <= 4; ++l) {
    const int64_t cin = w[l - 1];  // concat doubles w[l-2]
    detail::add_conv(ps, "stem" + std::to_string(l) + ".conv", 3, w[l - 2], 3, rng);
    detail::add_bn(ps, "stem" + std::to_string(l) + ".bn", w[l - 2]);
    const std::string b = "enc" + std::to_string(l);
    detail::add_conv(ps, b + ".conv1", cin, w[l - 1], 3, rng);
    detail::add_bn(ps, b + ".bn1", w[l - 1]);
    detail::add_conv(ps, b + ".conv2", w[l - 1], w[l - 1], 3, rng);
    detail::add_bn(ps, b + ".bn2", w[l - 1]);
  }

  // bottleneck compression to a single feature map
  detail::add_conv(ps, "bottleneck", w[3], 1, 1, rng);

  // decoder: level 0 refines the bottleneck extent, levels 1-3 upsample x2
  const int64_t dec_in[4] = {w[3], w[3], w[2], w[1]};
  const int64_t dec_out[4] = {w[3], w[2], w[1], w[0]};
  for (int d = 0; d < 4; ++d) {
    const std::string b = "dec" + std::to_string(d);
    detail::add_conv(ps, b + ".conv1", dec_in[d], dec_out[d], 3, rng);
    detail::add_bn(ps, b + ".bn1", dec_out[d]);
    detail::add_conv(ps, b + ".conv2", dec_out[d], dec_out[d], 3, rng);
    detail::add_bn(ps, b + ".bn2", dec_out[d]);
    detail::add_conv(ps, "head" + std::to_string(d), dec_out[d], cfg.num_classes, 1, rng);
  }
  return ps;
}

template <class T>
SegOutput<T> forward(ParamSet<T>& ps, const SegNetConfig& cfg, const Tensor<T>& images,
                     Mode mode) {
  cfg.validate();
  require(images.rank() == 4 && images.dim(1) == 3, "forward: images must be [N,3,H,W]");
  require(images.dim(2) == cfg.input_size && images.dim(3) == cfg.input_size,
          "forward: expected " + std::to_string(cfg.input_size) + "x" +
              std::to_string(cfg.input_size) + " input, got " + to_string(images.shape()));

  using detail::conv_bn_relu;
  auto block = [&](const std::string& b, const Tensor<T>& x) {
    auto y = conv_bn_relu(ps, b + ".conv1", b + ".bn1", x, mode);
    return conv_bn_relu(ps, b + ".conv2", b + ".bn2", y, mode);
  };

  auto e = block("enc1", images);
  for (int l = 2; l <= 4; ++l) {
    auto trunk = pool2d(e, 2, PoolMode::kMax);
    auto scaled = pool2d(images, int64_t(1) << (l - 1), PoolMode::kAvg);
    auto stem = conv_bn_relu(ps, "stem" + std::to_string(l) + ".conv",
                             "stem" + std::to_string(l) + ".bn", scaled, mode);
    e = block("enc" + std::to_string(l), concat_channels<T>({trunk, stem}));
  }

  SegOutput<T> out;
  out.enc_feature = detail::conv1x1(ps, "bottleneck", e);

  auto d = e;
  out.scale_logits.reserve(4);
  for (int i = 0; i < 4; ++i) {
    if (i > 0) d = upsample2d(d, 2);
    d = block("dec" + std::to_string(i), d);
    auto logits = detail::conv1x1(ps, "head" + std::to_string(i), d);
    const int64_t factor = int64_t(1) << (3 - i);
    if (factor > 1) logits = upsample2d(logits, factor);
    out.scale_logits.push_back(std::move(logits));
  }
  out.avg_logits = mean_tensors(out.scale_logits);
  return out;
}

// Per-pixel argmax; ties resolve to the lowest class index.
template <class T>
IntTensor predict_mask(const Tensor<T>& logits) {
  require(logits.rank() == 4 && logits.dim(1) == 3, "predict_mask: logits must be [N,3,H,W]");
  const int64_t n = logits.dim(0), k = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  IntTensor mask = IntTensor::zeros({n, logits.dim(2), logits.dim(3)});
  const T* x = logits.values().data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < plane; ++j) {
      const int64_t base = i * k * plane + j;
      int32_t best = 0;
      T best_v = x[base];
      for (int32_t ci = 1; ci < k; ++ci)
        if (x[base + ci * plane] > best_v) {
          best_v = x[base + ci * plane];
          best = ci;
        }
      mask.data[i * plane + j] = best;
    }
  return mask;
}

}  // namespace cada
