#pragma once

#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>
#include <vector>

#include "cada/trainer.hpp"

namespace cada {

inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v = {"source_only", "no_enc_ada", "no_se_ada",
                                             "cada_2d",     "cada_3d",    "cada_4d",
                                             "full"};
  return v;
}

// Flag settings for each published ablation. cada_kD keeps the encoder
// adaptor plus (k-1) decoder adaptors counted from the output head down;
// source_only disables every adaptor and self-ensembling.
inline RunConfig apply_variant(RunConfig cfg, const std::string& variant) {
  auto& f = cfg.flags;
  if (variant == "source_only") {
    f.enc_enabled = false;
    f.se_enabled = false;
    f.dec_enabled = false;
  } else if (variant == "no_enc_ada") {
    f.enc_enabled = false;
    f.se_enabled = true;
    f.dec_enabled = true;
    f.num_dec_discs = 4;
  } else if (variant == "no_se_ada") {
    f.enc_enabled = true;
    f.se_enabled = false;
    f.dec_enabled = true;
    f.num_dec_discs = 4;
  } else if (variant == "cada_2d" || variant == "cada_3d" || variant == "cada_4d") {
    f.enc_enabled = true;
    f.se_enabled = true;
    f.dec_enabled = true;
    f.num_dec_discs = variant[5] - '1';  // 2d -> 1, 3d -> 2, 4d -> 3
  } else if (variant == "full") {
    f.enc_enabled = true;
    f.se_enabled = true;
    f.dec_enabled = true;
    f.num_dec_discs = 4;
  } else {
    fail("ablate: unknown variant '" + variant + "'");
  }
  return cfg;
}

struct AblateRow {
  std::string variant;
  int64_t seeds = 0;
  double dice_cup_mean = 0, dice_cup_sd = 0;
  double dice_disc_mean = 0, dice_disc_sd = 0;
  double gamma_mean = 0, gamma_sd = 0;
  std::vector<EvalReport> reports;  // per seed, in seed order
};

namespace detail {

inline std::pair<double, double> mean_sd(const std::vector<double>& xs) {
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= xs.size();
  double var = 0;
  for (double x : xs) var += (x - mean) * (x - mean);
  const double sd = xs.size() > 1 ? std::sqrt(var / (xs.size() - 1)) : 0.0;
  return {mean, sd};
}

}  // namespace detail

// Trains every (variant, seed) pair and aggregates target-test metrics.
// Runs are independent; `jobs` of them may execute concurrently.
inline std::vector<AblateRow> ablate(const RunConfig& base,
                                     const std::vector<std::string>& variants,
                                     const std::vector<uint64_t>& seeds, int jobs = 1) {
  require(!variants.empty() && !seeds.empty(), "ablate: nothing to run");
  for (const auto& v : variants) apply_variant(base, v);  // validate names up front

  struct Task {
    size_t variant_idx;
    size_t seed_idx;
  };
  std::vector<Task> tasks;
  for (size_t vi = 0; vi < variants.size(); ++vi)
    for (size_t si = 0; si < seeds.size(); ++si) tasks.push_back({vi, si});

  std::vector<std::vector<EvalReport>> reports(variants.size(),
                                               std::vector<EvalReport>(seeds.size()));
  std::atomic<size_t> next{0};
  std::mutex io_mutex;
  auto worker = [&]() {
    for (;;) {
      const size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      const auto& task = tasks[t];
      RunConfig cfg = apply_variant(base, variants[task.variant_idx]);
      cfg.seed = seeds[task.seed_idx];
      cfg.out_dir = base.out_dir + "/" + variants[task.variant_idx] + "/seed_" +
                    std::to_string(seeds[task.seed_idx]);
      auto result = train(cfg);
      {
        std::lock_guard<std::mutex> lock(io_mutex);
        reports[task.variant_idx][task.seed_idx] = std::move(result.final_report);
      }
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::vector<AblateRow> rows;
  for (size_t vi = 0; vi < variants.size(); ++vi) {
    AblateRow row;
    row.variant = variants[vi];
    row.seeds = static_cast<int64_t>(seeds.size());
    std::vector<double> cups, discs, gammas;
    for (const auto& r : reports[vi]) {
      cups.push_back(r.dice_cup);
      discs.push_back(r.dice_disc);
      gammas.push_back(r.gamma_cdr);
    }
    std::tie(row.dice_cup_mean, row.dice_cup_sd) = detail::mean_sd(cups);
    std::tie(row.dice_disc_mean, row.dice_disc_sd) = detail::mean_sd(discs);
    std::tie(row.gamma_mean, row.gamma_sd) = detail::mean_sd(gammas);
    row.reports = std::move(reports[vi]);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_ablate_csv(const std::vector<AblateRow>& rows, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), "write_ablate_csv: cannot open " + path);
  f << "variant,seeds,dice_cup_mean,dice_cup_sd,dice_disc_mean,dice_disc_sd,"
       "gamma_cdr_mean,gamma_cdr_sd\n";
  f.precision(9);
  for (const auto& r : rows)
    f << r.variant << ',' << r.seeds << ',' << r.dice_cup_mean << ',' << r.dice_cup_sd
      << ',' << r.dice_disc_mean << ',' << r.dice_disc_sd << ',' << r.gamma_mean << ','
      << r.gamma_sd << '\n';
}

}  // namespace cada
