#pragma once

#include <cmath>
#include <deque>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cada/dataset_io.hpp"
#include "cada/segnet.hpp"

namespace cada {

// Nested label convention: the disc region is classes {1,2} (the cup lies
// inside the disc), the cup region is class 2 alone.
enum class Region { kDisc, kCup };

inline bool in_region(int32_t cls, Region r) {
  return r == Region::kDisc ? (cls == 1 || cls == 2) : cls == 2;
}

// Dice index 2|A∩B| / (|A|+|B|) on the binarized region; 1.0 when both
// regions are empty.
inline double dice_region(const IntTensor& pred, const IntTensor& gt, Region r) {
  require(pred.shape == gt.shape, "dice: shape mismatch " + to_string(pred.shape) +
                                      " vs " + to_string(gt.shape));
  int64_t inter = 0, a = 0, b = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const bool pa = in_region(pred.data[i], r), pb = in_region(gt.data[i], r);
    a += pa;
    b += pb;
    inter += pa && pb;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * inter / static_cast<double>(a + b);
}

// cls 1 selects the disc region {1,2}; cls 2 the cup region {2}.
inline double dice(const IntTensor& pred, const IntTensor& gt, int cls) {
  require(cls == 1 || cls == 2, "dice: cls must be 1 (disc) or 2 (cup)");
  return dice_region(pred, gt, cls == 1 ? Region::kDisc : Region::kCup);
}

// Max over columns of (last_row - first_row + 1) of region pixels.
inline int64_t vertical_diameter(const IntTensor& mask, Region r) {
  require(mask.shape.size() == 2, "vertical_diameter: mask must be 2-D");
  const int64_t h = mask.shape[0], w = mask.shape[1];
  int64_t best = 0;
  for (int64_t x = 0; x < w; ++x) {
    int64_t first = -1, last = -1;
    for (int64_t y = 0; y < h; ++y)
      if (in_region(mask.data[y * w + x], r)) {
        if (first < 0) first = y;
        last = y;
      }
    if (first >= 0) best = std::max(best, last - first + 1);
  }
  return best;
}

struct CdrResult {
  double cdr_pred = 0, cdr_true = 0, gamma = 0;
  bool degenerate = false;  // predicted disc had zero vertical diameter
};

inline CdrResult cdr_error(const IntTensor& pred, const IntTensor& gt) {
  const int64_t gt_disc = vertical_diameter(gt, Region::kDisc);
  require(gt_disc > 0, "cdr_error: ground-truth disc diameter is zero");
  CdrResult r;
  r.cdr_true = static_cast<double>(vertical_diameter(gt, Region::kCup)) / gt_disc;
  const int64_t pd = vertical_diameter(pred, Region::kDisc);
  if (pd == 0) {
    r.cdr_pred = 0;  // degenerate prediction is reported, not thrown
    r.degenerate = true;
  } else {
    r.cdr_pred = static_cast<double>(vertical_diameter(pred, Region::kCup)) / pd;
  }
  r.gamma = std::abs(r.cdr_pred - r.cdr_true);
  return r;
}

namespace detail {

// Pixels of the region complement reachable from the border (4-connected).
inline std::vector<uint8_t> border_reachable(const IntTensor& mask, Region r) {
  const int64_t h = mask.shape[0], w = mask.shape[1];
  std::vector<uint8_t> seen(static_cast<size_t>(h * w), 0);
  std::deque<int64_t> queue;
  auto push = [&](int64_t y, int64_t x) {
    const int64_t i = y * w + x;
    if (!seen[i] && !in_region(mask.data[i], r)) {
      seen[i] = 1;
      queue.push_back(i);
    }
  };
  for (int64_t x = 0; x < w; ++x) {
    push(0, x);
    push(h - 1, x);
  }
  for (int64_t y = 0; y < h; ++y) {
    push(y, 0);
    push(y, w - 1);
  }
  while (!queue.empty()) {
    const int64_t i = queue.front();
    queue.pop_front();
    const int64_t y = i / w, x = i % w;
    if (y > 0) push(y - 1, x);
    if (y < h - 1) push(y + 1, x);
    if (x > 0) push(y, x - 1);
    if (x < w - 1) push(y, x + 1);
  }
  return seen;
}

}  // namespace detail

// Hole filling: complement pixels unreachable from the border become disc,
// then cup; class-2 pixels the disc pass did not cover are demoted to disc
// so the nested-region convention survives.
inline IntTensor fill_holes(const IntTensor& mask) {
  require(mask.shape.size() == 2, "fill_holes: mask must be 2-D");
  for (int32_t v : mask.data)
    require(v >= 0 && v <= 2, "fill_holes: mask classes must be in {0,1,2}");
  IntTensor out = mask;
  const int64_t n = out.size();

  auto reach_disc = detail::border_reachable(out, Region::kDisc);
  for (int64_t i = 0; i < n; ++i)
    if (!reach_disc[i] && !in_region(out.data[i], Region::kDisc)) out.data[i] = 1;
  std::vector<uint8_t> in_disc(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) in_disc[i] = in_region(out.data[i], Region::kDisc);

  auto reach_cup = detail::border_reachable(out, Region::kCup);
  for (int64_t i = 0; i < n; ++i)
    if (!reach_cup[i] && !in_region(out.data[i], Region::kCup)) out.data[i] = 2;
  for (int64_t i = 0; i < n; ++i)
    if (out.data[i] == 2 && !in_disc[i]) out.data[i] = 1;
  return out;
}

struct SampleEval {
  int64_t index = 0;
  double dice_cup = 0, dice_disc = 0;
  double cdr_pred = 0, cdr_true = 0, gamma = 0;
  bool degenerate = false;
};

struct EvalReport {
  double dice_cup = 0, dice_disc = 0, gamma_cdr = 0;  // arithmetic means
  int64_t degenerate_count = 0;
  std::vector<SampleEval> per_sample;
};

// Core evaluation loop over a callable producing averaged logits, so tests
// can substitute oracle models for the network.
inline EvalReport evaluate_with(
    const std::function<Tensor<float>(const Tensor<float>&)>& avg_logits_fn,
    const std::vector<Sample>& samples, int64_t batch = 4,
    std::vector<IntTensor>* predicted = nullptr) {
  require(!samples.empty(), "evaluate: empty dataset");
  EvalReport report;
  const int64_t n = static_cast<int64_t>(samples.size());
  for (int64_t start = 0; start < n; start += batch) {
    std::vector<int64_t> idx;
    for (int64_t i = start; i < std::min(start + batch, n); ++i) idx.push_back(i);
    auto images = make_batch(samples, idx, false).images;
    auto logits = avg_logits_fn(images);
    auto masks = predict_mask(logits);
    const int64_t h = masks.shape[1], w = masks.shape[2];
    for (size_t j = 0; j < idx.size(); ++j) {
      IntTensor pred({h, w},
                     std::vector<int32_t>(masks.data.begin() + j * h * w,
                                          masks.data.begin() + (j + 1) * h * w));
      pred = fill_holes(pred);
      const IntTensor& gt = samples[idx[j]].mask;
      SampleEval e;
      e.index = idx[j];
      e.dice_cup = dice_region(pred, gt, Region::kCup);
      e.dice_disc = dice_region(pred, gt, Region::kDisc);
      const auto cdr = cdr_error(pred, gt);
      e.cdr_pred = cdr.cdr_pred;
      e.cdr_true = cdr.cdr_true;
      e.gamma = cdr.gamma;
      e.degenerate = cdr.degenerate;
      report.per_sample.push_back(e);
      if (predicted) predicted->push_back(std::move(pred));
    }
  }
  for (const auto& e : report.per_sample) {
    report.dice_cup += e.dice_cup;
    report.dice_disc += e.dice_disc;
    report.gamma_cdr += e.gamma;
    report.degenerate_count += e.degenerate;
  }
  report.dice_cup /= report.per_sample.size();
  report.dice_disc /= report.per_sample.size();
  report.gamma_cdr /= report.per_sample.size();
  return report;
}

// Standard path: eval-mode forward of the segmentation network.
inline EvalReport evaluate(const ParamSet<float>& params, const SegNetConfig& cfg,
                           const std::vector<Sample>& samples, int64_t batch = 4,
                           std::vector<IntTensor>* predicted = nullptr) {
  auto frozen = params.frozen_view();
  auto fn = [&](const Tensor<float>& images) {
    return forward(frozen, cfg, images, Mode::kEval).avg_logits;
  };
  return evaluate_with(fn, samples, batch, predicted);
}

inline void write_report_jsonl(const EvalReport& r, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), "write_report_jsonl: cannot open " + path);
  for (const auto& e : r.per_sample) {
    nlohmann::json j = {{"sample_id", e.index},   {"dice_cup", e.dice_cup},
                        {"dice_disc", e.dice_disc}, {"cdr_pred", e.cdr_pred},
                        {"cdr_true", e.cdr_true},   {"gamma", e.gamma},
                        {"degenerate", e.degenerate}};
    f << j.dump() << '\n';
  }
  nlohmann::json agg = {{"aggregate", true},
                        {"dice_cup", r.dice_cup},
                        {"dice_disc", r.dice_disc},
                        {"gamma_cdr", r.gamma_cdr},
                        {"degenerate_count", r.degenerate_count}};
  f << agg.dump() << '\n';
}

inline void write_report_csv(const EvalReport& r, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), "write_report_csv: cannot open " + path);
  f << "sample_id,dice_cup,dice_disc,cdr_pred,cdr_true,gamma\n";
  f.precision(9);
  for (const auto& e : r.per_sample)
    f << e.index << ',' << e.dice_cup << ',' << e.dice_disc << ',' << e.cdr_pred << ','
      << e.cdr_true << ',' << e.gamma << '\n';
}

}  // namespace cada
