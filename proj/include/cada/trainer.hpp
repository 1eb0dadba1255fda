#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cada/adapt.hpp"
#include "cada/checkpoint.hpp"
#include "cada/config.hpp"
#include "cada/dataset_io.hpp"
#include "cada/metrics.hpp"

namespace cada {

enum class SubStep { kSeg, kEma, kAdv, kDisc, kConsistency };

inline const char* substep_name(SubStep s) {
  switch (s) {
    case SubStep::kSeg: return "seg";
    case SubStep::kEma: return "ema";
    case SubStep::kAdv: return "adv";
    case SubStep::kDisc: return "disc";
    case SubStep::kConsistency: return "consistency";
  }
  return "?";
}

struct StepObserver {
  virtual ~StepObserver() = default;
  virtual void on_substep(SubStep step, int64_t iter) { (void)step, (void)iter; }
};

struct StepRecord {
  int64_t iter = 0;
  double l_seg = 0, l_adv_e = 0, l_adv_d = 0, l_dis_e = 0, l_dis_d = 0, l_mse_e = 0,
         l_mse_d = 0;
  double lr_seg = 0, lr_disc = 0;
};

struct TrainState {
  RunConfig cfg;
  ParamSet<float> student;  // shared by SN and TSN
  ParamSet<float> teacher;  // EMA mirror
  AdaptorSet<float> adaptors;
  OptState<float> seg_opt;
  int64_t iter = 0;
  int64_t epoch = 0;
  int64_t max_iter = 0;  // epochs x batches_per_epoch, fixed once
};

inline TrainState init_train_state(const RunConfig& cfg, int64_t steps_per_epoch) {
  cfg.validate();
  TrainState st;
  st.cfg = cfg;
  st.student = build_segnet<float>(cfg.model, derive_seed(cfg.seed, "segnet"));
  if (!cfg.init_from.empty()) {
    auto ck = Checkpoint::load(cfg.init_from);
    auto loaded = get_paramset<float>(ck, "student");
    require(loaded.names() == st.student.names(),
            "init_from: checkpoint parameters do not match this model configuration");
    for (size_t i = 0; i < loaded.count(); ++i)
      st.student.tensor_at(i).values() = loaded.tensor_at(i).values();
  }
  st.teacher = st.student.clone();
  st.adaptors =
      build_adaptors<float>(cfg.model, cfg.lambdas(), cfg.flags, derive_seed(cfg.seed, "adapt"));
  st.seg_opt = OptState<float>::sgd(static_cast<float>(cfg.seg_momentum));
  st.max_iter = cfg.epochs * steps_per_epoch;
  require(st.max_iter >= 1, "train: dataset yields no batches");
  return st;
}

namespace detail {

inline double checked_loss(const Tensor<float>& loss, const char* what, int64_t iter) {
  const double v = static_cast<double>(loss.item());
  if (!std::isfinite(v))
    fail("training aborted: non-finite " + std::string(what) + " at iteration " +
         std::to_string(iter));
  return v;
}

// Per-image photometric augmentation of a [B,3,H,W] batch.
inline Tensor<float> augment_batch(const Tensor<float>& images, uint64_t master,
                                   const char* tag, int64_t iter) {
  const int64_t b = images.dim(0);
  const int64_t per = images.size() / b;
  std::vector<float> out(images.values().size());
  AugmentConfig cfg;
  for (int64_t j = 0; j < b; ++j) {
    std::vector<float> one(images.values().begin() + j * per,
                           images.values().begin() + (j + 1) * per);
    auto img = Tensor<float>::from_data({3, images.dim(2), images.dim(3)}, std::move(one));
    auto aug = augment(img, cfg, derive_seed(master, tag, static_cast<uint64_t>(iter),
                                             static_cast<uint64_t>(j)));
    std::copy(aug.values().begin(), aug.values().end(), out.begin() + j * per);
  }
  return Tensor<float>::from_data(images.shape(), std::move(out));
}

}  // namespace detail

// One iteration of the training procedure, sub-step by sub-step:
//   (1) supervised segmentation update on the source batch,
//   (2) EMA transfer of student weights to the teacher,
//   (3) adversarial (fooling) update of the segmentation weights,
//   (4) discriminator updates on detached features,
//   (5) consistency update against the teacher on the target batch.
// Disabled adaptors (and zero-weight terms) skip their sub-steps with no
// side effects on parameters or optimizer state.
inline StepRecord train_step(TrainState& st, const Batch& source, const Batch& target,
                             StepObserver* obs = nullptr) {
  const RunConfig& cfg = st.cfg;
  const auto& flags = st.adaptors.flags;
  const auto L = cfg.lambdas();

  StepRecord rec;
  rec.iter = st.iter;
  rec.lr_seg = poly_lr<double>(cfg.seg_lr, st.iter, st.max_iter, cfg.poly_power);
  rec.lr_disc = poly_lr<double>(cfg.disc_lr, st.iter, st.max_iter, cfg.poly_power);
  const float lr_seg = static_cast<float>(rec.lr_seg);
  const float lr_disc = static_cast<float>(rec.lr_disc);

  // (1) supervised segmentation on the source batch
  {
    auto out = forward(st.student, cfg.model, source.images, Mode::kTrain);
    auto loss = softmax_ce_loss(out.avg_logits, source.masks);
    if (cfg.deep_supervision > 0)
      for (const auto& logits : out.scale_logits)
        loss = add(loss, scale(softmax_ce_loss(logits, source.masks),
                               static_cast<float>(cfg.deep_supervision)));
    rec.l_seg = detail::checked_loss(loss, "l_seg", st.iter);
    st.student.zero_grad();
    backward(loss);
    st.student.ensure_grad_buffers();
    opt_step(st.student, st.seg_opt, lr_seg);
    if (obs) obs->on_substep(SubStep::kSeg, st.iter);
  }

  // (2) teacher update (Eq. 3); only meaningful while self-ensembling is on
  if (flags.se_enabled) {
    ema_update(st.teacher, st.student, static_cast<float>(cfg.ema_alpha));
    if (obs) obs->on_substep(SubStep::kEma, st.iter);
  }

  const bool adv_active = (flags.enc_enabled && L.adv_e > 0) ||
                          (flags.dec_enabled && L.adv_d > 0);
  const bool disc_active = flags.enc_enabled || flags.dec_enabled;

  if (adv_active || disc_active) {
    // fresh source/target features from the post-update shared weights;
    // the target pass never needs gradients
    std::optional<SegOutput<float>> out_src;
    if (adv_active) {
      out_src = forward(st.student, cfg.model, source.images, Mode::kTrain);
    } else {
      auto frozen = st.student.frozen_view();
      out_src = forward(frozen, cfg.model, source.images, Mode::kTrain);
    }
    auto frozen = st.student.frozen_view();
    auto out_tgt = forward(frozen, cfg.model, target.images, Mode::kTrain);

    Tensor<float> enc_in_src, enc_in_tgt;
    if (flags.enc_enabled) {
      enc_in_src = encoder_disc_input(*out_src, cfg.model.input_size);
      enc_in_tgt = encoder_disc_input(out_tgt, cfg.model.input_size);
    }
    const auto scales = flags.enabled_scales();
    std::vector<Tensor<float>> dec_in_src(4), dec_in_tgt(4);
    for (int i : scales) {
      dec_in_src[i] = decoder_disc_input(*out_src, i);
      dec_in_tgt[i] = decoder_disc_input(out_tgt, i);
    }

    // (3) fool the discriminators with source features (Eqs. 4-5)
    if (adv_active) {
      Tensor<float> loss;
      if (flags.enc_enabled && L.adv_e > 0) {
        auto l = adv_loss(st.adaptors.enc_disc, enc_in_src);
        rec.l_adv_e = detail::checked_loss(l, "l_adv_e", st.iter);
        loss = scale(l, L.adv_e);
      }
      if (flags.dec_enabled && L.adv_d > 0) {
        std::vector<Tensor<float>> parts;
        for (int i : scales) parts.push_back(adv_loss(st.adaptors.dec_discs[i], dec_in_src[i]));
        auto l = mean_tensors(parts);
        rec.l_adv_d = detail::checked_loss(l, "l_adv_d", st.iter);
        auto weighted = scale(l, L.adv_d);
        loss = loss.defined() ? add(loss, weighted) : weighted;
      }
      st.student.zero_grad();
      backward(loss);
      st.student.ensure_grad_buffers();
      opt_step(st.student, st.seg_opt, lr_seg);
      if (obs) obs->on_substep(SubStep::kAdv, st.iter);
    }

    // (4) train the discriminators on detached features (Eqs. 6-7)
    if (disc_active) {
      if (flags.enc_enabled) {
        auto l = disc_loss(st.adaptors.enc_disc, enc_in_src, enc_in_tgt);
        rec.l_dis_e = detail::checked_loss(l, "l_dis_e", st.iter);
        st.adaptors.enc_disc.zero_grad();
        backward(l);
        opt_step(st.adaptors.enc_disc, st.adaptors.enc_opt, lr_disc);
      }
      if (flags.dec_enabled) {
        double acc = 0;
        for (int i : scales) {
          auto l = disc_loss(st.adaptors.dec_discs[i], dec_in_src[i], dec_in_tgt[i]);
          acc += detail::checked_loss(l, "l_dis_d", st.iter);
          st.adaptors.dec_discs[i].zero_grad();
          backward(l);
          opt_step(st.adaptors.dec_discs[i], st.adaptors.dec_opts[i], lr_disc);
        }
        rec.l_dis_d = acc / static_cast<double>(scales.size());
      }
      if (obs) obs->on_substep(SubStep::kDisc, st.iter);
    }
  }

  // (5) teacher-student consistency on independently augmented target
  // images (Eqs. 8-9); the teacher runs in eval mode and stays constant
  if (flags.se_enabled && (L.mse_e > 0 || L.mse_d > 0)) {
    auto student_in = detail::augment_batch(target.images, cfg.seed, "aug_student", st.iter);
    auto teacher_in = detail::augment_batch(target.images, cfg.seed, "aug_teacher", st.iter);
    auto s_out = forward(st.student, cfg.model, student_in, Mode::kTrain);
    auto t_frozen = st.teacher.frozen_view();
    auto t_out = forward(t_frozen, cfg.model, teacher_in, Mode::kEval);
    auto [mse_e, mse_d] = consistency_loss(s_out, t_out);
    rec.l_mse_e = detail::checked_loss(mse_e, "l_mse_e", st.iter);
    rec.l_mse_d = detail::checked_loss(mse_d, "l_mse_d", st.iter);
    auto loss = add(scale(mse_e, L.mse_e), scale(mse_d, L.mse_d));
    st.student.zero_grad();
    backward(loss);
    st.student.ensure_grad_buffers();
    opt_step(st.student, st.seg_opt, lr_seg);
    if (obs) obs->on_substep(SubStep::kConsistency, st.iter);
  }

  st.iter += 1;
  return rec;
}

// ---------------------------------------------------------------------------
// Full runs: dataset assembly, the epoch loop, logging, checkpoints, resume.

struct TrainData {
  std::vector<Sample> source_train;
  std::vector<Sample> target_train;
  std::vector<Sample> target_test;
};

inline TrainData prepare_data(const RunConfig& cfg) {
  TrainData d;
  if (cfg.data.mode == "synth") {
    auto [src_spec, tgt_spec] = default_domain_pair(cfg.data.shift, cfg.data.seed);
    d.source_train = generate(src_spec, cfg.data.n_source, cfg.data.size);
    d.target_train = generate(tgt_spec, cfg.data.n_target, cfg.data.size);
    DomainSpec test_spec = tgt_spec;
    test_spec.seed = derive_seed(cfg.data.seed, "target_test");
    d.target_test = generate(test_spec, cfg.data.n_test, cfg.data.size);
  } else {
    d.source_train = load_dataset(cfg.data.source_dir);
    d.target_train = load_dataset(cfg.data.target_dir);
    d.target_test = load_dataset(cfg.data.test_dir);
  }
  return d;
}

inline void save_train_checkpoint(const TrainState& st, const std::string& path) {
  Checkpoint ck;
  ck.step = static_cast<uint64_t>(st.iter);
  ck.config_text = serialize_run_config(st.cfg);
  ck.put_u64("trainer/iter", static_cast<uint64_t>(st.iter));
  ck.put_u64("trainer/epoch", static_cast<uint64_t>(st.epoch));
  ck.put_u64("trainer/max_iter", static_cast<uint64_t>(st.max_iter));
  put_paramset(ck, "student", st.student);
  put_paramset(ck, "teacher", st.teacher);
  put_optstate(ck, "opt/seg", st.seg_opt);
  put_paramset(ck, "disc/enc", st.adaptors.enc_disc);
  put_optstate(ck, "opt/disc_enc", st.adaptors.enc_opt);
  for (int i = 0; i < 4; ++i) {
    put_paramset(ck, "disc/dec" + std::to_string(i), st.adaptors.dec_discs[i]);
    put_optstate(ck, "opt/disc_dec" + std::to_string(i), st.adaptors.dec_opts[i]);
  }
  ck.save(path);
}

inline void load_train_checkpoint(TrainState& st, const std::string& path) {
  auto ck = Checkpoint::load(path);
  st.iter = static_cast<int64_t>(ck.get_u64("trainer/iter"));
  st.epoch = static_cast<int64_t>(ck.get_u64("trainer/epoch"));
  st.max_iter = static_cast<int64_t>(ck.get_u64("trainer/max_iter"));
  st.student = get_paramset<float>(ck, "student");
  st.teacher = get_paramset<float>(ck, "teacher");
  st.seg_opt = get_optstate<float>(ck, "opt/seg");
  st.adaptors.enc_disc = get_paramset<float>(ck, "disc/enc");
  st.adaptors.enc_opt = get_optstate<float>(ck, "opt/disc_enc");
  for (int i = 0; i < 4; ++i) {
    st.adaptors.dec_discs[i] = get_paramset<float>(ck, "disc/dec" + std::to_string(i));
    st.adaptors.dec_opts[i] = get_optstate<float>(ck, "opt/disc_dec" + std::to_string(i));
  }
}

struct TrainResult {
  EvalReport final_report;
  std::string run_dir;
  std::string eval_weights;  // "teacher" or "student"
  int64_t total_iters = 0;
};

namespace detail {

inline void append_metrics_row(std::ofstream& f, const StepRecord& r) {
  f.precision(9);
  f << r.iter << ',' << r.l_seg << ',' << r.l_adv_e << ',' << r.l_adv_d << ',' << r.l_dis_e
    << ',' << r.l_dis_d << ',' << r.l_mse_e << ',' << r.l_mse_d << ',' << r.lr_seg << ','
    << r.lr_disc << '\n';
  f.flush();
}

// Keep only the header and rows with iter < limit (used on resume so the
// log stays gap-free and monotone).
inline void truncate_csv(const fs::path& path, int64_t limit) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      keep.push_back(line);
      first = false;
      continue;
    }
    if (line.empty()) continue;
    const int64_t iter = std::stoll(line.substr(0, line.find(',')));
    if (iter < limit) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace detail

// Runs (or resumes) a full training run in cfg.out_dir. The directory ends
// up with the resolved config, metrics.csv, eval_history.csv, checkpoints,
// the final evaluation reports and predicted masks for the test split.
// The returned weights follow the training procedure's contract: the
// teacher when self-ensembling ran, otherwise the student.
inline TrainResult train(const RunConfig& cfg, bool resume = false,
                         StepObserver* obs = nullptr) {
  cfg.validate();
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir / "checkpoints");
  fs::create_directories(dir / "preds");
  {
    std::ofstream f(dir / "config.txt");
    require(f.good(), "train: cannot write resolved config");
    f << serialize_run_config(cfg);
  }

  TrainData data = prepare_data(cfg);
  PairedLoader loader(data.source_train, data.target_train, cfg.batch_size, cfg.seed);
  const int64_t steps = loader.steps_per_epoch();
  TrainState st = init_train_state(cfg, steps);

  const fs::path latest_file = dir / "checkpoints" / "latest";
  if (resume && fs::exists(latest_file)) {
    std::ifstream lf(latest_file);
    std::string name;
    std::getline(lf, name);
    require(!name.empty(), "train: empty latest-checkpoint pointer");
    load_train_checkpoint(st, (dir / "checkpoints" / name).string());
    st.cfg = cfg;
    detail::truncate_csv(dir / "metrics.csv", st.iter);
    detail::truncate_csv(dir / "eval_history.csv", st.epoch);
  }

  const bool fresh = !fs::exists(dir / "metrics.csv") || st.iter == 0;
  std::ofstream metrics(dir / "metrics.csv", fresh ? std::ios::trunc : std::ios::app);
  if (fresh) metrics << "iter,l_seg,l_adv_e,l_adv_d,l_dis_e,l_dis_d,l_mse_e,l_mse_d,lr_seg,lr_disc\n";
  std::ofstream evals(dir / "eval_history.csv", fresh ? std::ios::trunc : std::ios::app);
  if (fresh) evals << "epoch,dice_cup,dice_disc,gamma_cdr,degenerate\n";
  evals.precision(9);

  const std::string eval_weights = cfg.flags.se_enabled ? "teacher" : "student";
  auto eval_params = [&]() -> const ParamSet<float>& {
    return cfg.flags.se_enabled ? st.teacher : st.student;
  };

  try {
    for (; st.epoch < cfg.epochs; ++st.epoch) {
      for (int64_t s = 0; s < steps; ++s) {
        auto [bs, bt] = loader.get(st.epoch, s);
        auto rec = train_step(st, bs, bt, obs);
        detail::append_metrics_row(metrics, rec);
      }
      auto report = evaluate(eval_params(), cfg.model, data.target_test, cfg.batch_size);
      evals << st.epoch << ',' << report.dice_cup << ',' << report.dice_disc << ','
            << report.gamma_cdr << ',' << report.degenerate_count << '\n';
      evals.flush();
      if ((st.epoch + 1) % cfg.checkpoint_every == 0 && st.epoch + 1 < cfg.epochs) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04lld.ckpt",
                      static_cast<long long>(st.epoch + 1));
        st.epoch += 1;  // resume continues at the next epoch
        save_train_checkpoint(st, (dir / "checkpoints" / name).string());
        st.epoch -= 1;
        std::ofstream lf(latest_file);
        lf << name << '\n';
      }
    }
  } catch (const Error& e) {
    std::ofstream diag(dir / "abort.txt");
    diag << "iter " << st.iter << ": " << e.what() << '\n';
    throw;
  }

  save_train_checkpoint(st, (dir / "checkpoints" / "final.ckpt").string());
  {
    std::ofstream lf(latest_file);
    lf << "final.ckpt" << '\n';
  }

  TrainResult result;
  result.run_dir = dir.string();
  result.eval_weights = eval_weights;
  result.total_iters = st.iter;
  std::vector<IntTensor> preds;
  result.final_report =
      evaluate(eval_params(), cfg.model, data.target_test, cfg.batch_size, &preds);
  write_report_jsonl(result.final_report, (dir / "report.jsonl").string());
  write_report_csv(result.final_report, (dir / "report.csv").string());
  for (size_t i = 0; i < preds.size(); ++i) {
    const int64_t h = preds[i].shape[0], w = preds[i].shape[1];
    std::vector<uint8_t> gray(static_cast<size_t>(h * w));
    for (int64_t j = 0; j < h * w; ++j)
      gray[j] = static_cast<uint8_t>(kMaskPalette[preds[i].data[j]]);
    char name[32];
    std::snprintf(name, sizeof name, "pred_%04zu.png", i);
    png::write_file((dir / "preds" / name).string(), w, h, 1, gray);
  }
  return result;
}

}  // namespace cada
