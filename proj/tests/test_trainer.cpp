#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cada/ablate.hpp"
#include "cada/trainer.hpp"

using namespace cada;
namespace fsys = std::filesystem;

namespace {

RunConfig tiny_config(const std::string& tag, int64_t epochs = 2, int64_t n_source = 8) {
  RunConfig cfg;
  cfg.model.base_channels = 2;
  cfg.model.input_size = 32;
  cfg.data.size = 32;
  cfg.data.n_source = n_source;
  cfg.data.n_target = 8;
  cfg.data.n_test = 4;
  cfg.data.seed = 5;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.seed = 12;
  cfg.checkpoint_every = 1;
  cfg.out_dir = (fsys::temp_directory_path() / ("cada_run_" + tag)).string();
  fsys::remove_all(cfg.out_dir);
  return cfg;
}

std::string slurp(const fsys::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::vector<uint8_t> param_bytes(const ParamSet<float>& ps, bool trainable_only = false) {
  std::vector<uint8_t> out;
  for (size_t i = 0; i < ps.count(); ++i) {
    if (trainable_only && !ps.tensor_at(i).requires_grad()) continue;
    const auto& v = ps.tensor_at(i).values();
    const auto* p = reinterpret_cast<const uint8_t*>(v.data());
    out.insert(out.end(), p, p + v.size() * sizeof(float));
  }
  return out;
}

struct OrderObserver : StepObserver {
  std::vector<SubStep> order;
  void on_substep(SubStep s, int64_t) override { order.push_back(s); }
};

// snapshots parameter families at every sub-step boundary
struct SnapshotObserver : StepObserver {
  TrainState* st = nullptr;
  std::vector<std::pair<SubStep, std::vector<uint8_t>>> student, enc_disc, teacher;
  void on_substep(SubStep s, int64_t) override {
    student.emplace_back(s, param_bytes(st->student));
    enc_disc.emplace_back(s, param_bytes(st->adaptors.enc_disc));
    teacher.emplace_back(s, param_bytes(st->teacher));
  }
  const std::vector<uint8_t>& at(const std::vector<std::pair<SubStep, std::vector<uint8_t>>>& v,
                                 SubStep s) const {
    for (const auto& [step, bytes] : v)
      if (step == s) return bytes;
    throw Error("snapshot missing");
  }
};

struct ThrowAfter : StepObserver {
  int64_t throw_at_iter;
  explicit ThrowAfter(int64_t it) : throw_at_iter(it) {}
  void on_substep(SubStep s, int64_t iter) override {
    if (iter >= throw_at_iter && s == SubStep::kSeg)
      fail("simulated crash");  // lands in train()'s abort path
  }
};

}  // namespace

TEST(TrainStep, SubstepOrderFullConfiguration) {
  auto cfg = tiny_config("order_full");
  auto data = prepare_data(cfg);
  PairedLoader loader(data.source_train, data.target_train, cfg.batch_size, cfg.seed);
  auto st = init_train_state(cfg, loader.steps_per_epoch());
  OrderObserver obs;
  auto [bs, bt] = loader.get(0, 0);
  train_step(st, bs, bt, &obs);
  EXPECT_EQ(obs.order, (std::vector<SubStep>{SubStep::kSeg, SubStep::kEma, SubStep::kAdv,
                                             SubStep::kDisc, SubStep::kConsistency}));
}

TEST(TrainStep, SubstepOrderUnderAblations) {
  {
    auto cfg = apply_variant(tiny_config("order_srconly"), "source_only");
    auto data = prepare_data(cfg);
    PairedLoader loader(data.source_train, data.target_train, cfg.batch_size, cfg.seed);
    auto st = init_train_state(cfg, loader.steps_per_epoch());
    OrderObserver obs;
    auto [bs, bt] = loader.get(0, 0);
    train_step(st, bs, bt, &obs);
    EXPECT_EQ(obs.order, std::vector<SubStep>{SubStep::kSeg});
  }
  {
    auto cfg = apply_variant(tiny_config("order_nose"), "no_se_ada");
    auto data = prepare_data(cfg);
    PairedLoader loader(data.source_train, data.target_train, cfg.batch_size, cfg.seed);
    auto st = init_train_state(cfg, loader.steps_per_epoch());
    OrderObserver obs;
    auto [bs, bt] = loader.get(0, 0);
    train_step(st, bs, bt, &obs);
    EXPECT_EQ(obs.order,
              (std::vector<SubStep>{SubStep::kSeg, SubStep::kAdv, SubStep::kDisc}));
  }
  {
    auto cfg = tiny_config("order_lzero");
    cfg.lambda_adv_e = cfg.lambda_adv_d = 0;  // discriminators still train
    auto data = prepare_data(cfg);
    PairedLoader loader(data.source_train, data.target_train, cfg.batch_size, cfg.seed);
    auto st = init_train_state(cfg, loader.steps_per_epoch());
    OrderObserver obs;
    auto [bs, bt] = loader.get(0, 0);
    train_step(st, bs, bt, &obs);
    EXPECT_EQ(obs.order, (std::vector<SubStep>{SubStep::kSeg, SubStep::kEma, SubStep::kDisc,
                                               SubStep::kConsistency}));
  }
}

TEST(TrainStep, OptimizerIsolationBitChecks) {
  auto cfg = tiny_config("isolation");
  auto data = prepare_data(cfg);
  PairedLoader loader(data.source_train, data.target_train, cfg.batch_size, cfg.seed);
  auto st = init_train_state(cfg, loader.steps_per_epoch());
  const auto disc_before = param_bytes(st.adaptors.enc_disc);
  SnapshotObserver obs;
  obs.st = &st;
  auto [bs, bt] = loader.get(0, 0);
  train_step(st, bs, bt, &obs);

  // seg/ema/adv sub-steps leave every discriminator byte untouched
  EXPECT_EQ(obs.at(obs.enc_disc, SubStep::kSeg), disc_before);
  EXPECT_EQ(obs.at(obs.enc_disc, SubStep::kAdv), disc_before);
  // the discriminator update then changes them
  EXPECT_NE(obs.at(obs.enc_disc, SubStep::kDisc), disc_before);
  // and leaves the student exactly as the adversarial step left it
  EXPECT_EQ(obs.at(obs.student, SubStep::kDisc), obs.at(obs.student, SubStep::kAdv));
  // the teacher only moves at the EMA sub-step
  EXPECT_EQ(obs.at(obs.teacher, SubStep::kConsistency), obs.at(obs.teacher, SubStep::kEma));
  // while the consistency step moves the student
  EXPECT_NE(obs.at(obs.student, SubStep::kConsistency), obs.at(obs.student, SubStep::kDisc));
}

TEST(TrainStep, FlagsOffReducesToSupervisedTraining) {
  auto cfg = apply_variant(tiny_config("degenerate"), "source_only");
  auto data = prepare_data(cfg);
  PairedLoader loader(data.source_train, data.target_train, cfg.batch_size, cfg.seed);
  auto st = init_train_state(cfg, loader.steps_per_epoch());
  const auto teacher_before = param_bytes(st.teacher);
  const auto disc_before = param_bytes(st.adaptors.enc_disc);
  std::vector<std::vector<uint8_t>> dec_before;
  for (const auto& d : st.adaptors.dec_discs) dec_before.push_back(param_bytes(d));

  for (int64_t s = 0; s < 2; ++s) {
    auto [bs, bt] = loader.get(0, s);
    auto rec = train_step(st, bs, bt);
    EXPECT_EQ(rec.l_adv_e, 0);
    EXPECT_EQ(rec.l_dis_e, 0);
    EXPECT_EQ(rec.l_mse_d, 0);
    EXPECT_GT(rec.l_seg, 0);
  }
  EXPECT_EQ(param_bytes(st.teacher), teacher_before);
  EXPECT_EQ(param_bytes(st.adaptors.enc_disc), disc_before);
  for (size_t i = 0; i < dec_before.size(); ++i)
    EXPECT_EQ(param_bytes(st.adaptors.dec_discs[i]), dec_before[i]);
}

TEST(TrainStep, ZeroLambdasMatchFlagsOffTrajectory) {
  auto cfg_off = apply_variant(tiny_config("traj_a", /*epochs=*/5), "source_only");
  auto cfg_zero = tiny_config("traj_b", /*epochs=*/5);
  cfg_zero.lambda_adv_e = cfg_zero.lambda_adv_d = 0;
  cfg_zero.lambda_mse_e = cfg_zero.lambda_mse_d = 0;

  auto data = prepare_data(cfg_off);  // identical data seeds in both configs
  PairedLoader loader(data.source_train, data.target_train, 4, cfg_off.seed);
  auto a = init_train_state(cfg_off, loader.steps_per_epoch());
  auto b = init_train_state(cfg_zero, loader.steps_per_epoch());
  ASSERT_EQ(param_bytes(a.student, true), param_bytes(b.student, true));

  const int64_t steps = loader.steps_per_epoch();
  for (int64_t i = 0; i < 10; ++i) {
    auto [bs, bt] = loader.get(i / steps, i % steps);
    train_step(a, bs, bt);
    train_step(b, bs, bt);
    EXPECT_EQ(param_bytes(a.student, true), param_bytes(b.student, true))
        << "trainable weights diverged at step " << i;
  }
}

TEST(TrainStep, PaperLambdasProduceFiniteLosses) {
  auto cfg = tiny_config("paper_lambdas");  // defaults are the paper's lambdas
  auto data = prepare_data(cfg);
  PairedLoader loader(data.source_train, data.target_train, cfg.batch_size, cfg.seed);
  auto st = init_train_state(cfg, loader.steps_per_epoch());
  auto [bs, bt] = loader.get(0, 0);
  auto rec = train_step(st, bs, bt);
  for (double v : {rec.l_seg, rec.l_adv_e, rec.l_adv_d, rec.l_dis_e, rec.l_dis_d,
                   rec.l_mse_e, rec.l_mse_d})
    EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(rec.l_seg, 0);
  EXPECT_GT(rec.l_dis_e, 0);
  EXPECT_GT(rec.l_mse_d, 0);
}

TEST(TrainStep, NonFiniteLossAborts) {
  auto cfg = tiny_config("nan_abort");
  auto data = prepare_data(cfg);
  PairedLoader loader(data.source_train, data.target_train, cfg.batch_size, cfg.seed);
  auto st = init_train_state(cfg, loader.steps_per_epoch());
  auto& w = st.student.at("enc1.conv1.w").values();
  w[0] = std::numeric_limits<float>::quiet_NaN();
  auto [bs, bt] = loader.get(0, 0);
  try {
    train_step(st, bs, bt);
    FAIL() << "expected abort";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
}

TEST(Train, LrScheduleMatchesClosedForm) {
  auto cfg = tiny_config("schedule", 2, 20);  // 2 epochs x 5 iters
  auto result = train(cfg);
  EXPECT_EQ(result.total_iters, 10);
  std::ifstream f(fsys::path(cfg.out_dir) / "metrics.csv");
  std::string line;
  std::getline(f, line);  // header
  int64_t it = 0;
  while (std::getline(f, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    ASSERT_EQ(cells.size(), 10u);
    EXPECT_EQ(std::stoll(cells[0]), it);
    EXPECT_NEAR(std::stod(cells[8]), poly_lr<double>(1e-4, it, 10, 0.9), 1e-12);
    EXPECT_NEAR(std::stod(cells[9]), poly_lr<double>(2.5e-5, it, 10, 0.9), 1e-12);
    ++it;
  }
  EXPECT_EQ(it, 10);
}

TEST(Train, DeterministicRunsProduceIdenticalLogs) {
  auto a = tiny_config("det_a");
  auto b = tiny_config("det_b");
  train(a);
  train(b);
  EXPECT_EQ(slurp(fsys::path(a.out_dir) / "metrics.csv"),
            slurp(fsys::path(b.out_dir) / "metrics.csv"));
  EXPECT_EQ(slurp(fsys::path(a.out_dir) / "eval_history.csv"),
            slurp(fsys::path(b.out_dir) / "eval_history.csv"));
  EXPECT_EQ(slurp(fsys::path(a.out_dir) / "report.csv"),
            slurp(fsys::path(b.out_dir) / "report.csv"));
}

TEST(Train, ReturnsTeacherWeightsContract) {
  auto cfg = tiny_config("teacher_contract", 1);
  auto result = train(cfg);
  EXPECT_EQ(result.eval_weights, "teacher");
  auto ck = Checkpoint::load((fsys::path(cfg.out_dir) / "checkpoints/final.ckpt").string());
  auto student = get_paramset<float>(ck, "student");
  auto teacher = get_paramset<float>(ck, "teacher");
  EXPECT_EQ(student.names(), teacher.names());
  EXPECT_FALSE(student.same_values(teacher));  // distinct namespaces, distinct weights
  // and the reported metrics are the teacher's, not the student's
  auto data = prepare_data(cfg);
  auto teacher_report = evaluate(teacher, cfg.model, data.target_test, cfg.batch_size);
  EXPECT_DOUBLE_EQ(teacher_report.dice_cup, result.final_report.dice_cup);

  auto cfg2 = apply_variant(tiny_config("student_contract", 1), "source_only");
  EXPECT_EQ(train(cfg2).eval_weights, "student");
}

TEST(Train, EvalReproducesFinalLoggedMetrics) {
  auto cfg = tiny_config("eval_consistency", 1);
  auto result = train(cfg);
  auto ck = Checkpoint::load((fsys::path(cfg.out_dir) / "checkpoints/final.ckpt").string());
  RunConfig embedded = parse_run_config(ck.config_text);
  auto params = get_paramset<float>(ck, "teacher");
  DomainSpec test_spec = default_domain_pair(embedded.data.shift, embedded.data.seed).second;
  test_spec.seed = derive_seed(embedded.data.seed, "target_test");
  auto samples = generate(test_spec, embedded.data.n_test, embedded.data.size);
  auto report = evaluate(params, embedded.model, samples, embedded.batch_size);
  EXPECT_DOUBLE_EQ(report.dice_cup, result.final_report.dice_cup);
  EXPECT_DOUBLE_EQ(report.dice_disc, result.final_report.dice_disc);
  EXPECT_DOUBLE_EQ(report.gamma_cdr, result.final_report.gamma_cdr);
}

TEST(Train, ResumeReproducesUninterruptedRun) {
  auto control = tiny_config("resume_control", 3);
  auto interrupted = tiny_config("resume_killed", 3);
  auto control_result = train(control);

  // crash the run during epoch 2 (checkpoints are written every epoch here)
  ThrowAfter bomb(2 * 2 + 0);  // steps_per_epoch = 2
  EXPECT_THROW(train(interrupted, false, &bomb), Error);
  EXPECT_TRUE(fsys::exists(fsys::path(interrupted.out_dir) / "abort.txt"));

  auto resumed_result = train(interrupted, /*resume=*/true);
  EXPECT_NEAR(resumed_result.final_report.dice_cup, control_result.final_report.dice_cup,
              1e-6);
  EXPECT_NEAR(resumed_result.final_report.dice_disc, control_result.final_report.dice_disc,
              1e-6);
  EXPECT_NEAR(resumed_result.final_report.gamma_cdr, control_result.final_report.gamma_cdr,
              1e-6);
  EXPECT_EQ(slurp(fsys::path(control.out_dir) / "metrics.csv"),
            slurp(fsys::path(interrupted.out_dir) / "metrics.csv"));
}

TEST(Train, MetricsIterationsAreMonotoneWithoutGaps) {
  auto cfg = tiny_config("monotone", 2);
  train(cfg);
  std::ifstream f(fsys::path(cfg.out_dir) / "metrics.csv");
  std::string line;
  std::getline(f, line);
  int64_t expect_iter = 0;
  while (std::getline(f, line))
    EXPECT_EQ(std::stoll(line.substr(0, line.find(','))), expect_iter++);
  EXPECT_EQ(expect_iter, 4);
}

TEST(Ablate, VariantFlagSemanticsAndCsv) {
  EXPECT_THROW(apply_variant(RunConfig{}, "bogus"), Error);
  auto c2 = apply_variant(RunConfig{}, "cada_2d");
  EXPECT_TRUE(c2.flags.enc_enabled);
  EXPECT_EQ(c2.flags.num_dec_discs, 1);
  auto c3 = apply_variant(RunConfig{}, "cada_3d");
  EXPECT_EQ(c3.flags.num_dec_discs, 2);
  auto noenc = apply_variant(RunConfig{}, "no_enc_ada");
  EXPECT_FALSE(noenc.flags.enc_enabled);
  EXPECT_TRUE(noenc.flags.se_enabled);

  auto base = tiny_config("ablate_small", 1);
  auto rows = ablate(base, {"source_only", "cada_2d"}, {1, 2}, 2);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].variant, "source_only");
  EXPECT_EQ(rows[0].seeds, 2);
  const auto csv_path = fsys::path(base.out_dir) / "ablation.csv";
  write_ablate_csv(rows, csv_path.string());
  std::ifstream f(csv_path);
  std::string line;
  int lines = 0;
  while (std::getline(f, line)) ++lines;
  EXPECT_EQ(lines, 3);  // header + one aggregate row per variant
}

TEST(Ablate, NoEncAdaLeavesEncoderDiscriminatorUntrained) {
  auto cfg = apply_variant(tiny_config("ablate_noenc", 1), "no_enc_ada");
  auto data = prepare_data(cfg);
  PairedLoader loader(data.source_train, data.target_train, cfg.batch_size, cfg.seed);
  auto st = init_train_state(cfg, loader.steps_per_epoch());
  const auto before = param_bytes(st.adaptors.enc_disc);
  for (int64_t s = 0; s < loader.steps_per_epoch(); ++s) {
    auto [bs, bt] = loader.get(0, s);
    train_step(st, bs, bt);
  }
  EXPECT_EQ(param_bytes(st.adaptors.enc_disc), before);
  EXPECT_NE(param_bytes(st.adaptors.dec_discs[3]), std::vector<uint8_t>{});
}

TEST(Ablate, NumDecDiscsEngagesExactlyK) {
  for (int k = 1; k <= 4; ++k) {
    auto cfg = tiny_config("ablate_k" + std::to_string(k), 1);
    cfg.flags.num_dec_discs = k;
    auto data = prepare_data(cfg);
    PairedLoader loader(data.source_train, data.target_train, cfg.batch_size, cfg.seed);
    auto st = init_train_state(cfg, loader.steps_per_epoch());
    std::vector<std::vector<uint8_t>> before;
    for (const auto& d : st.adaptors.dec_discs) before.push_back(param_bytes(d));
    auto [bs, bt] = loader.get(0, 0);
    train_step(st, bs, bt);
    int trained = 0;
    for (int i = 0; i < 4; ++i)
      trained += param_bytes(st.adaptors.dec_discs[i]) != before[i];
    EXPECT_EQ(trained, k);
    // the trained ones are those nearest the output head
    for (int i = 4 - k; i < 4; ++i)
      EXPECT_NE(param_bytes(st.adaptors.dec_discs[i]), before[i]);
  }
}
