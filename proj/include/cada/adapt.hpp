#pragma once

#include <utility>
#include <vector>

#include "cada/optim.hpp"
#include "cada/segnet.hpp"

namespace cada {

// Domain labels the discriminators are trained on.
inline constexpr int kSourceLabel = 0;
inline constexpr int kTargetLabel = 1;

// Patch discriminator: five 4x4/stride-2/pad-1 convolutions,
// in -> 64 -> 128 -> 256 -> 512 -> 1, LeakyReLU(0.2) between them and no
// normalization. Output extent is input extent / 32.
template <class T>
ParamSet<T> build_discriminator(int64_t in_channels, uint64_t seed) {
  require(in_channels >= 1, "build_discriminator: in_channels must be >= 1");
  const int64_t widths[6] = {in_channels, 64, 128, 256, 512, 1};
  auto rng = make_rng(seed);
  ParamSet<T> ps;
  for (int l = 1; l <= 5; ++l)
    detail::add_conv(ps, "l" + std::to_string(l), widths[l - 1], widths[l], 4, rng);
  return ps;
}

// Patch logits (pre-sigmoid) for a feature map with extent >= 32.
template <class T>
Tensor<T> disc_forward(ParamSet<T>& disc, const Tensor<T>& feature) {
  require(feature.rank() == 4, "disc_forward: feature must be 4-D");
  require(feature.dim(2) >= 32 && feature.dim(3) >= 32,
          "disc_forward: spatial extent must be >= 32, got " + to_string(feature.shape()));
  auto x = feature;
  for (int l = 1; l <= 5; ++l) {
    const std::string name = "l" + std::to_string(l);
    x = conv2d(x, disc.at(name + ".w"), disc.at(name + ".b"), 2, 1);
    if (l < 5) x = leaky_relu(x, T(0.2));
  }
  return x;
}

// Generator-side fooling loss: push source features toward the target
// label while the discriminator weights stay frozen (their gradients are
// untouched by construction).
template <class T>
Tensor<T> adv_loss(const ParamSet<T>& disc, const Tensor<T>& source_feature) {
  auto frozen = disc.frozen_view();
  return bce_logits_loss(disc_forward(frozen, source_feature), kTargetLabel);
}

// Discriminator training loss on detached features: classify target as
// target and source as source. Gradients never reach the features.
template <class T>
Tensor<T> disc_loss(ParamSet<T>& disc, const Tensor<T>& source_feature,
                    const Tensor<T>& target_feature) {
  auto lt = bce_logits_loss(disc_forward(disc, target_feature.detach()), kTargetLabel);
  auto ls = bce_logits_loss(disc_forward(disc, source_feature.detach()), kSourceLabel);
  return add(lt, ls);
}

// Teacher-student consistency (teacher treated as a constant): raw MSE on
// the compressed encoder features, and the mean over the four per-scale
// softmax maps plus the averaged softmax map on the decoder side.
template <class T>
std::pair<Tensor<T>, Tensor<T>> consistency_loss(const SegOutput<T>& student,
                                                 const SegOutput<T>& teacher) {
  auto mse_e = mse_loss(student.enc_feature, teacher.enc_feature.detach());
  require(student.scale_logits.size() == teacher.scale_logits.size(),
          "consistency_loss: scale count mismatch");
  std::vector<Tensor<T>> terms;
  for (size_t i = 0; i < student.scale_logits.size(); ++i)
    terms.push_back(mse_loss(softmax_channel(student.scale_logits[i]),
                             softmax_channel(teacher.scale_logits[i].detach())));
  terms.push_back(mse_loss(softmax_channel(student.avg_logits),
                           softmax_channel(teacher.avg_logits.detach())));
  return {mse_e, mean_tensors(terms)};
}

// Loss weights; seg weight stays at the paper's fixed 1.0 unless overridden.
template <class T>
struct Lambdas {
  T seg = T(1);
  T adv_e = T(0.002);
  T adv_d = T(0.018);
  T mse_e = T(0.057);
  T mse_d = T(0.79);

  void validate() const {
    require(seg >= T(0) && adv_e >= T(0) && adv_d >= T(0) && mse_e >= T(0) && mse_d >= T(0),
            "Lambdas: weights must be non-negative");
  }
};

struct AdaptorFlags {
  bool enc_enabled = true;
  bool se_enabled = true;
  bool dec_enabled = true;
  int num_dec_discs = 4;  // 1..4 when dec_enabled

  void validate() const {
    if (dec_enabled)
      require(num_dec_discs >= 1 && num_dec_discs <= 4,
              "AdaptorFlags: num_dec_discs must lie in 1..4");
  }
  // Enabled decoder scales, counted from the full-resolution head down.
  std::vector<int> enabled_scales() const {
    std::vector<int> out;
    if (!dec_enabled) return out;
    for (int i = 4 - num_dec_discs; i < 4; ++i) out.push_back(i);
    return out;
  }
};

// The five adaptors: one encoder discriminator over the upsampled
// bottleneck and one per decoder scale over softmax probabilities, each
// with its own Adam state.
template <class T>
struct AdaptorSet {
  ParamSet<T> enc_disc;
  OptState<T> enc_opt;
  std::vector<ParamSet<T>> dec_discs;  // always 4; flags select the active ones
  std::vector<OptState<T>> dec_opts;
  Lambdas<T> lambdas;
  AdaptorFlags flags;
};

template <class T>
AdaptorSet<T> build_adaptors(const SegNetConfig& cfg, const Lambdas<T>& lambdas,
                             const AdaptorFlags& flags, uint64_t seed) {
  lambdas.validate();
  flags.validate();
  AdaptorSet<T> a;
  a.lambdas = lambdas;
  a.flags = flags;
  a.enc_disc = build_discriminator<T>(1, derive_seed(seed, "disc_enc"));
  a.enc_opt = OptState<T>::adam();
  for (int i = 0; i < 4; ++i) {
    a.dec_discs.push_back(
        build_discriminator<T>(cfg.num_classes, derive_seed(seed, "disc_dec", i)));
    a.dec_opts.push_back(OptState<T>::adam());
  }
  return a;
}

// Encoder-adaptor input: bottleneck brought to the common full-resolution
// geometry shared by all five adaptors.
template <class T>
Tensor<T> encoder_disc_input(const SegOutput<T>& out, int64_t input_size) {
  const int64_t factor = input_size / out.enc_feature.dim(2);
  return factor > 1 ? upsample2d(out.enc_feature, factor) : out.enc_feature;
}

template <class T>
Tensor<T> decoder_disc_input(const SegOutput<T>& out, int scale) {
  return softmax_channel(out.scale_logits.at(scale));
}

// Scalar loss parts entering the total objective; undefined tensors mean
// the corresponding adaptor is disabled and contributes exactly zero.
template <class T>
struct LossParts {
  Tensor<T> seg;
  Tensor<T> adv_e;
  std::vector<Tensor<T>> adv_d;  // one per enabled decoder discriminator
  Tensor<T> mse_e;
  Tensor<T> mse_d;
};

// L_seg + lambda_adv_e * l_adv_e + lambda_adv_d * mean(dec advs)
//       + lambda_mse_e * l_mse_e + lambda_mse_d * l_mse_d
template <class T>
Tensor<T> total_loss(const LossParts<T>& parts, const Lambdas<T>& lambdas) {
  lambdas.validate();
  require(parts.seg.defined() && parts.seg.size() == 1, "total_loss: seg part must be scalar");
  auto total = scale(parts.seg, lambdas.seg);
  if (parts.adv_e.defined()) total = add(total, scale(parts.adv_e, lambdas.adv_e));
  if (!parts.adv_d.empty())
    total = add(total, scale(mean_tensors(parts.adv_d), lambdas.adv_d));
  if (parts.mse_e.defined()) total = add(total, scale(parts.mse_e, lambdas.mse_e));
  if (parts.mse_d.defined()) total = add(total, scale(parts.mse_d, lambdas.mse_d));
  return total;
}

}  // namespace cada
