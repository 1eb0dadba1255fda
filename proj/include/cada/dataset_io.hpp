#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cada/png_io.hpp"
#include "cada/synth.hpp"

namespace cada {

namespace fs = std::filesystem;

// Stable content hash of a spec's photometric and seed fields, recorded in
// each sample's sidecar so mixed-provenance datasets are detectable.
inline uint64_t spec_hash(const DomainSpec& s) {
  std::ostringstream os;
  os.precision(9);
  for (const Rgb* p : {&s.bg, &s.disc, &s.cup})
    for (float v : *p) os << v << ',';
  os << s.intensity_gain << ',' << s.gamma << ',' << s.noise_sigma << ','
     << s.vessel_density << ',' << s.seed;
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : os.str()) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

inline constexpr int32_t kMaskPalette[3] = {0, 128, 255};

// Writes {stem}.png, {stem}_mask.png and {stem}.json under dir.
inline void save_sample(const fs::path& dir, const std::string& stem, const Sample& s,
                        uint64_t spec_hash_value) {
  fs::create_directories(dir);
  const int64_t h = s.image.dim(1), w = s.image.dim(2);
  std::vector<uint8_t> rgb(static_cast<size_t>(h * w * 3));
  const auto& img = s.image.values();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        rgb[(y * w + x) * 3 + c] = static_cast<uint8_t>(
            std::lround(std::clamp(img[(c * h + y) * w + x], 0.f, 1.f) * 255.f));
  png::write_file((dir / (stem + ".png")).string(), w, h, 3, rgb);

  std::vector<uint8_t> gray(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < h * w; ++i)
    gray[i] = static_cast<uint8_t>(kMaskPalette[s.mask.data[i]]);
  png::write_file((dir / (stem + "_mask.png")).string(), w, h, 1, gray);

  nlohmann::json meta = {{"true_cdr", s.true_cdr},
                         {"spec_hash", spec_hash_value},
                         {"height", h},
                         {"width", w}};
  std::ofstream f(dir / (stem + ".json"));
  require(f.good(), "save_sample: cannot write sidecar for " + stem);
  f << meta.dump(2) << '\n';
}

inline Sample load_sample(const fs::path& dir, const std::string& stem) {
  auto img = png::read_file((dir / (stem + ".png")).string());
  require(img.channels == 3, "load_sample: image must be RGB");
  const int64_t h = img.height, w = img.width;
  std::vector<float> data(static_cast<size_t>(3 * h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        data[(c * h + y) * w + x] = img.pixels[(y * w + x) * 3 + c] / 255.f;

  auto msk = png::read_file((dir / (stem + "_mask.png")).string());
  require(msk.channels == 1 && msk.height == h && msk.width == w,
          "load_sample: mask geometry mismatch for " + stem);
  IntTensor mask = IntTensor::zeros({h, w});
  for (int64_t i = 0; i < h * w; ++i) {
    const int v = msk.pixels[i];
    int cls = -1;
    for (int k = 0; k < 3; ++k)
      if (v == kMaskPalette[k]) cls = k;
    require(cls >= 0, "load_sample: unknown mask value " + std::to_string(v) + " in " +
                          stem + "_mask.png");
    mask.data[i] = cls;
  }

  std::ifstream f(dir / (stem + ".json"));
  require(f.good(), "load_sample: missing sidecar for " + stem);
  nlohmann::json meta = nlohmann::json::parse(f);

  Sample s;
  s.image = Tensor<float>::from_data({3, h, w}, std::move(data));
  s.mask = std::move(mask);
  s.true_cdr = meta.at("true_cdr").get<float>();
  return s;
}

struct ManifestEntry {
  std::string split;  // train | test
  std::string stem;
};

inline void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream f(path);
  require(f.good(), "write_manifest: cannot open " + path.string());
  for (const auto& e : entries) f << e.split << '\t' << e.stem << '\n';
}

inline std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream f(path);
  require(f.good(), "read_manifest: cannot open " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    require(tab != std::string::npos, "read_manifest: malformed line '" + line + "'");
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

// Writes a whole split (samples + per-sample sidecars + manifest.txt).
inline void save_dataset(const fs::path& dir, const std::vector<Sample>& samples,
                         const std::string& split, uint64_t hash) {
  std::vector<ManifestEntry> entries;
  for (size_t i = 0; i < samples.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%s_%04zu", split.c_str(), i);
    save_sample(dir, stem, samples[i], hash);
    entries.push_back({split, stem});
  }
  write_manifest(dir / "manifest.txt", entries);
}

inline std::vector<Sample> load_dataset(const fs::path& dir) {
  std::vector<Sample> out;
  for (const auto& e : read_manifest(dir / "manifest.txt"))
    out.push_back(load_sample(dir, e.stem));
  require(!out.empty(), "load_dataset: '" + dir.string() + "' is empty");
  return out;
}

struct Batch {
  Tensor<float> images;  // [B,3,H,W]
  IntTensor masks;       // [B,H,W]; empty for unlabeled target batches
  std::vector<int64_t> indices;
};

inline Batch make_batch(const std::vector<Sample>& samples,
                        const std::vector<int64_t>& idx, bool with_masks) {
  require(!idx.empty(), "make_batch: empty index list");
  const int64_t h = samples[0].image.dim(1), w = samples[0].image.dim(2);
  const int64_t b = static_cast<int64_t>(idx.size());
  std::vector<float> img(static_cast<size_t>(b * 3 * h * w));
  std::vector<int32_t> msk;
  if (with_masks) msk.resize(static_cast<size_t>(b * h * w));
  for (int64_t i = 0; i < b; ++i) {
    const Sample& s = samples[static_cast<size_t>(idx[i])];
    std::copy(s.image.values().begin(), s.image.values().end(),
              img.begin() + i * 3 * h * w);
    if (with_masks)
      std::copy(s.mask.data.begin(), s.mask.data.end(), msk.begin() + i * h * w);
  }
  Batch out;
  out.images = Tensor<float>::from_data({b, 3, h, w}, std::move(img));
  if (with_masks) out.masks = IntTensor({b, h, w}, std::move(msk));
  out.indices = idx;
  return out;
}

// Paired source/target batch stream. Stateless per (epoch, step): each
// epoch draws a fresh source permutation covering every index once, and an
// independent target permutation cycled as needed. Source batches carry
// masks, target batches do not.
class PairedLoader {
 public:
  PairedLoader(const std::vector<Sample>& source, const std::vector<Sample>& target,
               int64_t batch, uint64_t seed)
      : source_(&source), target_(&target), batch_(batch), seed_(seed) {
    require(batch >= 1, "PairedLoader: batch must be >= 1");
    require(!source.empty(), "PairedLoader: source dataset is empty");
    require(!target.empty(), "PairedLoader: target dataset is empty");
    require(static_cast<int64_t>(source.size()) >= batch,
            "PairedLoader: source dataset smaller than one batch");
  }

  int64_t steps_per_epoch() const {
    return static_cast<int64_t>(source_->size()) / batch_;
  }

  std::pair<Batch, Batch> get(int64_t epoch, int64_t step) const {
    require(step >= 0 && step < steps_per_epoch(), "PairedLoader: step out of range");
    auto perm_s = permutation(source_->size(), derive_seed(seed_, "src", epoch));
    std::vector<int64_t> si(perm_s.begin() + step * batch_,
                            perm_s.begin() + (step + 1) * batch_);
    const int64_t nt = static_cast<int64_t>(target_->size());
    auto perm_t = permutation(target_->size(), derive_seed(seed_, "tgt", epoch));
    std::vector<int64_t> ti;
    for (int64_t j = 0; j < batch_; ++j) ti.push_back(perm_t[(step * batch_ + j) % nt]);
    return {make_batch(*source_, si, true), make_batch(*target_, ti, false)};
  }

  static std::vector<int64_t> permutation(size_t n, uint64_t seed) {
    std::vector<int64_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    auto rng = make_rng(seed);
    std::shuffle(p.begin(), p.end(), rng);
    return p;
  }

 private:
  const std::vector<Sample>* source_;
  const std::vector<Sample>* target_;
  int64_t batch_;
  uint64_t seed_;
};

}  // namespace cada
