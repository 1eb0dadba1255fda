#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "cada/rng.hpp"
#include "cada/tensor.hpp"

namespace cada {

using Rgb = std::array<float, 3>;

// Photometric description of one domain. Geometry (ellipse placement,
// vessels' paths) is driven purely by (seed, index); the photometric
// fields only affect rendering, never the mask.
struct DomainSpec {
  Rgb bg{0.52f, 0.33f, 0.22f};
  Rgb disc{0.86f, 0.64f, 0.40f};
  Rgb cup{0.97f, 0.87f, 0.62f};
  float intensity_gain = 1.0f;
  float gamma = 1.0f;
  float noise_sigma = 0.0f;
  float vessel_density = 0.5f;
  uint64_t seed = 0;

  void validate() const {
    require(gamma > 0.f, "DomainSpec: gamma must be > 0");
    require(noise_sigma >= 0.f, "DomainSpec: noise_sigma must be >= 0");
    require(intensity_gain > 0.f, "DomainSpec: intensity_gain must be > 0");
    require(vessel_density >= 0.f && vessel_density <= 1.f,
            "DomainSpec: vessel_density must lie in [0,1]");
    for (const Rgb* p : {&bg, &disc, &cup})
      for (float v : *p)
        require(v >= 0.f && v <= 1.f, "DomainSpec: palette channels must lie in [0,1]");
  }
};

struct Sample {
  Tensor<float> image;  // [3,H,W] in [0,1]
  IntTensor mask;       // [H,W], classes {0,1,2}
  float true_cdr = 0.f;
};

namespace detail {

struct Ellipse {
  double cx, cy, ax, ay;  // center and semi-axes
  bool contains(double x, double y) const {
    const double u = (x - cx) / ax, v = (y - cy) / ay;
    return u * u + v * v <= 1.0;
  }
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace detail

// One sample, deterministic per (spec.seed, index). The mask is rendered
// from geometry alone, before any photometric effect.
inline Sample generate_sample(const DomainSpec& spec, int64_t index, int64_t size) {
  using detail::uniform;
  spec.validate();
  require(size >= 32 && size % 32 == 0, "generate: size must be a positive multiple of 32");

  // --- geometry ---------------------------------------------------------
  auto geo = make_rng(derive_seed(spec.seed, "geom", static_cast<uint64_t>(index)));
  detail::Ellipse disc;
  disc.cx = size * (0.5 + uniform(geo, -0.0625, 0.0625));
  disc.cy = size * (0.5 + uniform(geo, -0.0625, 0.0625));
  disc.ay = size * uniform(geo, 0.15, 0.24);
  disc.ax = disc.ay * uniform(geo, 0.85, 1.15);
  const double cdr = uniform(geo, 0.3, 0.8);
  detail::Ellipse cup;
  cup.ay = cdr * disc.ay;
  cup.ax = std::min(cdr * uniform(geo, 0.9, 1.1), 0.95) * disc.ax;
  cup.cx = disc.cx + uniform(geo, -0.5, 0.5) * (disc.ax - cup.ax);
  cup.cy = disc.cy + uniform(geo, -0.5, 0.5) * (disc.ay - cup.ay);

  Sample s;
  s.true_cdr = static_cast<float>(cdr);  // vertical diameters: 2*cup.ay / (2*disc.ay)
  s.mask = IntTensor::zeros({size, size});
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      if (disc.contains(px, py))
        s.mask.data[y * size + x] = cup.contains(px, py) ? 2 : 1;
    }

  // vessel paths are geometry too (same stream), so identical seeds give
  // identical strokes under any palette
  const int n_vessels = static_cast<int>(std::lround(spec.vessel_density * 8.0));
  std::vector<std::pair<int, int>> strokes;
  for (int v = 0; v < n_vessels; ++v) {
    double ang = uniform(geo, 0, 2 * M_PI);
    double x = disc.cx + 0.3 * disc.ax * std::cos(ang);
    double y = disc.cy + 0.3 * disc.ay * std::sin(ang);
    for (int step = 0; step < size; ++step) {
      ang += uniform(geo, -0.35, 0.35);
      x += std::cos(ang);
      y += std::sin(ang);
      const int ix = static_cast<int>(x), iy = static_cast<int>(y);
      if (ix < 0 || iy < 0 || ix >= size || iy >= size) break;
      strokes.emplace_back(ix, iy);
    }
  }

  // --- photometry -------------------------------------------------------
  auto photo = make_rng(derive_seed(spec.seed, "photo", static_cast<uint64_t>(index)));
  std::normal_distribution<double> jitter(0.0, 0.015);
  Rgb pal[3] = {spec.bg, spec.disc, spec.cup};
  for (auto& p : pal)
    for (auto& ch : p)
      ch = std::clamp(ch + static_cast<float>(jitter(photo)), 0.f, 1.f);
  const double grad_ang = uniform(photo, 0, 2 * M_PI);
  const double grad_amp = uniform(photo, 0.0, 0.06);

  std::vector<float> img(static_cast<size_t>(3 * size * size));
  auto at = [&](int c, int64_t y, int64_t x) -> float& {
    return img[(c * size + y) * size + x];
  };
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      const int cls = s.mask.data[y * size + x];
      const double shade =
          1.0 + grad_amp * ((x - size / 2.0) * std::cos(grad_ang) +
                            (y - size / 2.0) * std::sin(grad_ang)) /
                    size;
      for (int c = 0; c < 3; ++c)
        at(c, y, x) = static_cast<float>(pal[cls][c] * shade);
    }
  for (auto [ix, iy] : strokes)
    for (int c = 0; c < 3; ++c) at(c, iy, ix) *= 0.55f;

  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& v : img) {
    double u = std::clamp(static_cast<double>(v) * spec.intensity_gain, 0.0, 1.0);
    u = std::pow(u, static_cast<double>(spec.gamma));
    if (spec.noise_sigma > 0.f) u += spec.noise_sigma * noise(photo);
    v = static_cast<float>(std::clamp(u, 0.0, 1.0));
  }
  s.image = Tensor<float>::from_data({3, size, size}, std::move(img));
  return s;
}

inline std::vector<Sample> generate(const DomainSpec& spec, int64_t n, int64_t size) {
  require(n >= 1, "generate: n must be >= 1");
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out.push_back(generate_sample(spec, i, size));
  return out;
}

// The default two-domain benchmark: the target domain is the base
// distribution; the source domain shifts palette, gamma and noise by
// `magnitude` (0 = identical distributions, 1 = full shift).
inline std::pair<DomainSpec, DomainSpec> default_domain_pair(double magnitude,
                                                             uint64_t data_seed) {
  DomainSpec target;
  target.seed = derive_seed(data_seed, "target");
  DomainSpec source = target;
  source.seed = derive_seed(data_seed, "source");
  const float m = static_cast<float>(magnitude);
  const Rgb d_bg{-0.16f, 0.12f, 0.14f}, d_disc{-0.22f, 0.06f, 0.18f},
      d_cup{-0.18f, -0.04f, 0.20f};
  for (int c = 0; c < 3; ++c) {
    source.bg[c] = std::clamp(source.bg[c] + m * d_bg[c], 0.f, 1.f);
    source.disc[c] = std::clamp(source.disc[c] + m * d_disc[c], 0.f, 1.f);
    source.cup[c] = std::clamp(source.cup[c] + m * d_cup[c], 0.f, 1.f);
  }
  source.gamma = 1.0f + 0.4f * m;    // 1.4 at full shift
  source.noise_sigma = 0.02f * m;    // 0.02 at full shift
  return {source, target};
}

struct AugmentConfig {
  float noise_sigma_max = 0.05f;
  float intensity_lo = 0.9f, intensity_hi = 1.1f;
  float brightness = 0.05f;
};

// Photometric perturbation used for student/teacher consistency: Gaussian
// noise with a per-call sigma, intensity scaling and a brightness offset,
// clamped back to [0,1]. Degenerate (zero-width) ranges give the identity.
inline Tensor<float> augment(const Tensor<float>& image, const AugmentConfig& cfg,
                             uint64_t seed) {
  auto rng = make_rng(seed);
  const float sigma =
      cfg.noise_sigma_max > 0.f
          ? static_cast<float>(detail::uniform(rng, 0.0, cfg.noise_sigma_max))
          : 0.f;
  const float gain =
      static_cast<float>(detail::uniform(rng, cfg.intensity_lo, cfg.intensity_hi));
  const float offset =
      cfg.brightness > 0.f
          ? static_cast<float>(detail::uniform(rng, -cfg.brightness, cfg.brightness))
          : 0.f;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<float> out(image.values().size());
  for (size_t i = 0; i < out.size(); ++i) {
    double v = static_cast<double>(image.values()[i]) * gain + offset;
    if (sigma > 0.f) v += sigma * noise(rng);
    out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return Tensor<float>::from_data(image.shape(), std::move(out));
}

}  // namespace cada
