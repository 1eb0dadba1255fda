// Command-line surface: synth | train | eval | ablate.

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "cada/cada.hpp"

namespace {

using namespace cada;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_run_config(config_path, cfg);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    require(eq != std::string::npos, "--set expects key=value, got '" + kv + "'");
    config_set(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  return cfg;
}

int cmd_synth(const std::string& out, double shift, int64_t n_train, int64_t n_test,
              int64_t size, uint64_t seed) {
  auto [src_spec, tgt_spec] = default_domain_pair(shift, seed);
  DomainSpec test_spec = tgt_spec;
  test_spec.seed = derive_seed(seed, "target_test");
  DomainSpec src_test_spec = src_spec;
  src_test_spec.seed = derive_seed(seed, "source_test");

  const fs::path root(out);
  save_dataset(root / "source_train", generate(src_spec, n_train, size), "train",
               spec_hash(src_spec));
  save_dataset(root / "target_train", generate(tgt_spec, n_train, size), "train",
               spec_hash(tgt_spec));
  save_dataset(root / "target_test", generate(test_spec, n_test, size), "test",
               spec_hash(test_spec));
  save_dataset(root / "source_test", generate(src_test_spec, n_test, size), "test",
               spec_hash(src_test_spec));
  std::cout << "wrote datasets under " << root.string() << "\n";
  return 0;
}

int cmd_train(RunConfig cfg, bool resume) {
  auto result = train(cfg, resume);
  std::cout << "run dir: " << result.run_dir << "\n"
            << "evaluated weights: " << result.eval_weights << "\n"
            << "target-test dice_cup=" << result.final_report.dice_cup
            << " dice_disc=" << result.final_report.dice_disc
            << " gamma_cdr=" << result.final_report.gamma_cdr << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& weights, const std::string& out) {
  auto ck = Checkpoint::load(checkpoint);
  require(!ck.config_text.empty(), "eval: checkpoint has no embedded config");
  RunConfig cfg = parse_run_config(ck.config_text);

  std::string which = weights;
  if (which == "auto") which = cfg.flags.se_enabled ? "teacher" : "student";
  require(which == "teacher" || which == "student",
          "eval: --weights must be auto, teacher or student");
  auto params = get_paramset<float>(ck, which);

  std::vector<Sample> samples;
  if (!data_dir.empty()) {
    samples = load_dataset(data_dir);
  } else {
    require(cfg.data.mode == "synth",
            "eval: checkpoint uses manifest data; pass --data-dir");
    DomainSpec test_spec = default_domain_pair(cfg.data.shift, cfg.data.seed).second;
    test_spec.seed = derive_seed(cfg.data.seed, "target_test");
    samples = generate(test_spec, cfg.data.n_test, cfg.data.size);
  }

  auto report = evaluate(params, cfg.model, samples, cfg.batch_size);
  fs::create_directories(out);
  write_report_jsonl(report, (fs::path(out) / "report.jsonl").string());
  write_report_csv(report, (fs::path(out) / "report.csv").string());
  std::cout << "weights: " << which << "\n"
            << "dice_cup=" << report.dice_cup << " dice_disc=" << report.dice_disc
            << " gamma_cdr=" << report.gamma_cdr << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& base, const std::string& variants_csv,
               const std::string& seeds_csv, int jobs) {
  std::vector<std::string> variants =
      variants_csv.empty() ? ablation_variants() : split_list(variants_csv);
  std::vector<uint64_t> seeds;
  for (const auto& s : split_list(seeds_csv)) seeds.push_back(std::stoull(s));
  if (seeds.empty()) seeds = {1, 2, 3};
  auto rows = ablate(base, variants, seeds, jobs);
  const std::string csv = base.out_dir + "/ablation.csv";
  write_ablate_csv(rows, csv);
  for (const auto& r : rows)
    std::cout << r.variant << ": dice_cup " << r.dice_cup_mean << " +- " << r.dice_cup_sd
              << ", dice_disc " << r.dice_disc_mean << " +- " << r.dice_disc_sd
              << ", gamma_cdr " << r.gamma_mean << " +- " << r.gamma_sd << "\n";
  std::cout << "table: " << csv << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CADA: collaborative adversarial domain adaptation for optic disc/cup segmentation"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a two-domain synthetic dataset");
  std::string synth_out = "data";
  double synth_shift = 1.0;
  int64_t synth_n_train = 200, synth_n_test = 60, synth_size = 64;
  uint64_t synth_seed = 7;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--shift", synth_shift, "domain shift magnitude (0 = identical domains)");
  synth->add_option("--n-train", synth_n_train, "training samples per domain");
  synth->add_option("--n-test", synth_n_test, "test samples per domain");
  synth->add_option("--size", synth_size, "square image size (multiple of 32)");
  synth->add_option("--seed", synth_seed, "dataset seed");

  // shared train/ablate options
  std::string config_path, out_dir, init_from;
  std::vector<std::string> overrides;
  uint64_t seed = 0;
  bool seed_given = false, resume = false;
  int64_t epochs = 0;
  bool epochs_given = false;

  auto* tr = app.add_subcommand("train", "train one configuration");
  tr->add_option("--config", config_path, "config file (flat key = value)");
  tr->add_option("--out", out_dir, "run directory (overrides run.out_dir)");
  tr->add_option("--seed", seed, "training seed (overrides train.seed)")
      ->each([&](const std::string&) { seed_given = true; });
  tr->add_option("--epochs", epochs, "epoch count (overrides train.epochs)")
      ->each([&](const std::string&) { epochs_given = true; });
  tr->add_option("--init-from", init_from, "checkpoint to initialize the student from");
  tr->add_option("--set", overrides, "extra key=value overrides")->take_all();
  tr->add_flag("--resume", resume, "resume from the latest checkpoint in --out");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_ckpt, eval_data, eval_weights = "auto", eval_out = "eval_out";
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--data-dir", eval_data, "dataset directory (defaults to the run's synthetic test split)");
  ev->add_option("--weights", eval_weights, "auto | teacher | student");
  ev->add_option("--out", eval_out, "output directory for reports");

  auto* ab = app.add_subcommand("ablate", "run the ablation suite");
  std::string ab_variants, ab_seeds;
  int ab_jobs = 1;
  ab->add_option("--config", config_path, "config file (flat key = value)");
  ab->add_option("--out", out_dir, "suite output directory");
  ab->add_option("--variants", ab_variants,
                 "comma list from: source_only,no_enc_ada,no_se_ada,cada_2d,cada_3d,cada_4d,full");
  ab->add_option("--seeds", ab_seeds, "comma list of seeds (default 1,2,3)");
  ab->add_option("--jobs", ab_jobs, "concurrent runs");
  ab->add_option("--set", overrides, "extra key=value overrides")->take_all();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed())
      return cmd_synth(synth_out, synth_shift, synth_n_train, synth_n_test, synth_size,
                       synth_seed);
    RunConfig cfg = resolve_config(config_path, overrides);
    if (seed_given) cfg.seed = seed;
    if (epochs_given) cfg.epochs = epochs;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!init_from.empty()) cfg.init_from = init_from;
    if (tr->parsed()) return cmd_train(cfg, resume);
    if (ev->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_weights, eval_out);
    if (ab->parsed()) return cmd_ablate(cfg, ab_variants, ab_seeds, ab_jobs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
