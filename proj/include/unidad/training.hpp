#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "unidad/adversarial.hpp"
#include "unidad/checkpoint.hpp"
#include "unidad/config.hpp"
#include "unidad/datasets.hpp"
#include "unidad/diffusion.hpp"
#include "unidad/distillation.hpp"
#include "unidad/evaluation.hpp"
#include "unidad/network.hpp"
#include "unidad/rng.hpp"
#include "unidad/tensor.hpp"

namespace unidad {

/// Last seen value of each logged loss; losses that update less often than
/// every step carry forward.
struct LossSnapshot {
  double dmd_src = 0.0;
  double dmd_trg = 0.0;
  double g_gan = 0.0;
  double fk_mse = 0.0;
  double d_gan = 0.0;
  double trg_mse = 0.0;
};

struct MetricsRow {
  long long step = 0;
  int stage = 0;
  LossSnapshot losses;
  MetricsReport metrics;
};

inline constexpr const char* kMetricsCsvHeader =
    "step,loss_g_dmd_src,loss_g_dmd_trg,loss_g_gan,loss_fk_mse,loss_d_gan,loss_trg_mse,"
    "w2_to_target,w2_to_source,diversity,coverage,memorization";

inline void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << kMetricsCsvHeader << "\n";
  char buf[512];
  for (const MetricsRow& r : rows) {
    std::snprintf(buf, sizeof buf,
                  "%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  r.step, r.losses.dmd_src, r.losses.dmd_trg, r.losses.g_gan, r.losses.fk_mse,
                  r.losses.d_gan, r.losses.trg_mse, r.metrics.w2_to_target,
                  r.metrics.w2_to_source, r.metrics.diversity, r.metrics.coverage,
                  r.metrics.memorization);
    out << buf;
  }
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

namespace detail {

inline Tensor normal_matrix(int n, int d, RngStream& rng) {
  std::vector<double> v(static_cast<std::size_t>(n) * d);
  rng.fill_normal(v);
  return Tensor({n, d}, std::move(v));
}

inline Tensor sample_rows(const Tensor& pool, int n, RngStream& rng) {
  const int m = pool.extent(0), d = pool.extent(1);
  if (m < 1) throw std::invalid_argument("sample_rows: empty pool");
  std::vector<double> out(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    const int idx = rng.uniform_int(0, m - 1);
    for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(i) * d + j] = pool.at(idx, j);
  }
  return Tensor({n, d}, std::move(out));
}

inline Tensor first_rows(const Tensor& pool, int n) {
  const int d = pool.extent(1);
  if (pool.extent(0) < n) {
    throw std::invalid_argument("first_rows: pool holds " + std::to_string(pool.extent(0)) +
                                " rows, need " + std::to_string(n));
  }
  std::vector<double> out(pool.data().begin(), pool.data().begin() + static_cast<std::ptrdiff_t>(n) * d);
  return Tensor({n, d}, std::move(out));
}

/// Noised batch with a per-row timestep, built outside the tape.
inline Tensor q_sample_rows(const NoiseSchedule& s, const Tensor& x, const std::vector<int>& ts,
                            const Tensor& eps) {
  const int n = x.extent(0), d = x.extent(1);
  std::vector<double> out(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    s.check_t(ts[static_cast<std::size_t>(i)]);
    const double a = s.alpha[static_cast<std::size_t>(ts[static_cast<std::size_t>(i)])];
    const double sg = s.sigma[static_cast<std::size_t>(ts[static_cast<std::size_t>(i)])];
    for (int j = 0; j < d; ++j) {
      out[static_cast<std::size_t>(i) * d + j] = a * x.at(i, j) + sg * eps.at(i, j);
    }
  }
  return Tensor({n, d}, std::move(out));
}

inline double half_mean_sq(const std::vector<double>& d, int batch) {
  double s = 0.0;
  for (double v : d) s += v * v;
  return 0.5 * s / batch;
}

}  // namespace detail

/// Full state of one distillation run: the four networks, their optimizers,
/// the run RNG, and the pinned evaluation references.
struct TrainerState {
  TrainConfig cfg;
  NoiseSchedule sched;
  Benchmark bench;
  FewShotSet fewshot;

  Denoiser teacher_src;
  Denoiser teacher_fake;
  Denoiser teacher_trg;
  bool has_target = false;
  StudentGenerator student;
  MultiHeadDiscriminator disc;

  AdamState opt_student;
  AdamState opt_fake_disc;
  AdamState opt_target;

  RunRng rng;
  std::uint64_t step = 0;
  LossSnapshot last;

  Tensor source_ref;  // pinned source draws for w2_to_source
  Tensor target_ref;  // leading held-out rows for w2_to_target

  std::vector<Tensor> fake_disc_params() const {
    std::vector<Tensor> ps = teacher_fake.net().parameters();
    for (const Tensor& p : disc.parameters()) ps.push_back(p);
    return ps;
  }
};

inline Tensor pinned_source_ref(const Benchmark& bench, int n) {
  RunRng data_rng(kDatasetSeed);
  return sample_distribution(bench.source, n, data_rng.stream(bench.name + "/source_ref"));
}

inline Denoiser load_teacher_checkpoint(const std::string& path, TrainConfig* out_cfg = nullptr,
                                        std::string* out_kind = nullptr);

/// Builds a trainer around a pretrained source teacher. The fake teacher, the
/// optional target teacher, and the student all start as copies of it unless
/// the config names an initialization checkpoint (student_ckpt seeds the
/// student from a prior distillation run, target_ckpt seeds the target
/// teacher). Resume paths pass load_init_ckpts=false because the saved blocks
/// already carry those parameters.
inline TrainerState make_trainer(const TrainConfig& cfg, const Denoiser& teacher_src,
                                 bool load_init_ckpts = true) {
  if (!cfg.resolved) throw std::logic_error("make_trainer: config not resolved");
  if (teacher_src.T() != cfg.T) {
    throw std::invalid_argument("make_trainer: teacher trained for T=" +
                                std::to_string(teacher_src.T()) + ", config says T=" +
                                std::to_string(cfg.T));
  }
  TrainerState st;
  st.cfg = cfg;
  st.sched = build_schedule(cfg.T);
  st.bench = make_benchmark(cfg.benchmark);
  st.fewshot = make_fewshot(st.bench, cfg.fewshot_k);
  st.rng = RunRng(cfg.seed);

  st.teacher_src = teacher_src.clone_as(DenoiserRole::source);
  st.teacher_fake = teacher_src.clone_as(DenoiserRole::fake);
  st.has_target = cfg.target_mode != TargetTeacherMode::off;
  if (st.has_target) {
    if (load_init_ckpts && !cfg.target_ckpt.empty()) {
      const Denoiser loaded = load_teacher_checkpoint(cfg.target_ckpt);
      if (loaded.T() != cfg.T) {
        throw std::invalid_argument("make_trainer: target_ckpt trained for T=" +
                                    std::to_string(loaded.T()) + ", config says T=" +
                                    std::to_string(cfg.T));
      }
      st.teacher_trg = loaded.clone_as(DenoiserRole::target);
    } else {
      st.teacher_trg = teacher_src.clone_as(DenoiserRole::target);
    }
  }
  st.student = StudentGenerator::from_teacher(teacher_src, cfg.nfe);
  if (load_init_ckpts && !cfg.student_ckpt.empty()) {
    const Checkpoint ck = read_checkpoint_file(cfg.student_ckpt);
    const auto kind = ck.meta.find("kind");
    if (kind == ck.meta.end() || kind->second != "trainer") {
      throw std::runtime_error("student_ckpt '" + cfg.student_ckpt +
                               "' is not a trainer checkpoint");
    }
    load_model_params(ck, "student", st.student.net().parameters());
  }
  st.disc = MultiHeadDiscriminator::make(st.teacher_fake.net(), cfg.head_mode,
                                         st.rng.stream("init/disc"));

  st.opt_student = AdamState::make(cfg.lr, st.student.net().parameter_count());
  st.opt_fake_disc = AdamState::make(
      cfg.lr, st.teacher_fake.net().parameter_count() + st.disc.parameter_count());
  if (cfg.target_mode == TargetTeacherMode::online) {
    st.opt_target = AdamState::make(cfg.lr, st.teacher_trg.net().parameter_count());
  }

  st.source_ref = pinned_source_ref(st.bench, cfg.eval_samples);
  st.target_ref = detail::first_rows(st.bench.held_out, cfg.eval_samples);
  return st;
}

struct StudentLossParts {
  Tensor total;
  double dmd_src = 0.0;
  double dmd_trg = 0.0;
  double gan = 0.0;
};

/// Generator objective at one shared (t, z, eps): the distribution-matching
/// surrogate (dual-blended when a target teacher is live) plus the adversarial
/// term through the frozen critic.
inline StudentLossParts student_loss(TrainerState& st, const Tensor& z, int t, const Tensor& eps) {
  StudentLossParts parts;
  const Tensor x = student_generate(st.student, st.sched, z, st.rng.stream("loop/renoise"));
  const DmdDirection dir_src = dmd_direction(st.teacher_src, st.teacher_fake, st.sched, x, t, eps);
  parts.dmd_src = detail::half_mean_sq(dir_src.d, dir_src.batch);
  DmdDirection dir = dir_src;
  if (st.has_target) {
    const DmdDirection dir_trg =
        dmd_direction(st.teacher_trg, st.teacher_fake, st.sched, x, t, eps);
    parts.dmd_trg = detail::half_mean_sq(dir_trg.d, dir_trg.batch);
    dir = dual_dmd_direction(dir_src, dir_trg, st.cfg.dual_weight);
  }
  const Tensor dmd = dmd_surrogate_loss(x, dir);
  const Tensor x_t = q_sample(st.sched, x, t, Tensor(eps.shape(), eps.data()));
  const std::vector<Tensor> logits =
      st.disc.extract_logits(st.teacher_fake, x_t, t, ParamMode::frozen, ParamMode::frozen);
  const Tensor g_gan = gan_g_loss(st.cfg.gan_family, logits);
  parts.gan = g_gan.item();
  parts.total = add(dmd, scale(g_gan, st.cfg.lambda_g));
  return parts;
}

struct FakeDiscLossParts {
  Tensor total;
  double fk_mse = 0.0;
  double d_gan = 0.0;
};

/// Fake-teacher denoising loss plus critic loss, sharing one trunk pass per
/// batch. x comes from the current student and is cut from the tape; reals y
/// are noised with fresh noise at the same t.
inline FakeDiscLossParts fake_and_disc_loss(TrainerState& st, const Tensor& z, int t,
                                            const Tensor& eps, const Tensor& y) {
  Tensor x_vals;
  {
    NoGradGuard ng;
    x_vals = student_generate(st.student, st.sched, z, st.rng.stream("loop/renoise"));
  }
  const int n = z.extent(0);
  const Tensor x_t =
      q_sample(st.sched, Tensor(x_vals.shape(), x_vals.data()), t, Tensor(eps.shape(), eps.data()));
  std::vector<Tensor> taps_fake;
  const Tensor pred = st.teacher_fake.predict_taps(x_t, t, taps_fake, ParamMode::train);
  const Tensor fk_mse = scale(squared_norm(sub(pred, Tensor(eps.shape(), eps.data()))), 1.0 / n);

  const Tensor eps_y = detail::normal_matrix(y.extent(0), y.extent(1), st.rng.stream("loop/real_noise"));
  const Tensor y_t = q_sample(st.sched, Tensor(y.shape(), y.data()), t, eps_y);
  std::vector<Tensor> taps_real;
  st.teacher_fake.predict_taps(y_t, t, taps_real, ParamMode::train);

  const std::vector<Tensor> fake_logits = st.disc.apply_heads(taps_fake, ParamMode::train);
  const std::vector<Tensor> real_logits = st.disc.apply_heads(taps_real, ParamMode::train);
  const Tensor d_gan = gan_d_loss(st.cfg.gan_family, real_logits, fake_logits);

  FakeDiscLossParts parts;
  parts.fk_mse = fk_mse.item();
  parts.d_gan = d_gan.item();
  parts.total = add(fk_mse, scale(d_gan, st.cfg.lambda_d));
  return parts;
}

/// Denoising loss of the online target teacher on real exemplars at the
/// shared (t, eps).
inline Tensor target_teacher_loss(TrainerState& st, const Tensor& y, int t, const Tensor& eps) {
  const int n = y.extent(0);
  const Tensor y_t =
      q_sample(st.sched, Tensor(y.shape(), y.data()), t, Tensor(eps.shape(), eps.data()));
  const Tensor pred = st.teacher_trg.predict(y_t, t, ParamMode::train);
  return scale(squared_norm(sub(pred, Tensor(eps.shape(), eps.data()))), 1.0 / n);
}

/// One iteration of the joint loop. Every iteration draws one shared
/// (t, z, eps) and one real batch, updates the fake teacher and critic, and on
/// every update_ratio-th iteration also updates the student (before) and the
/// online target teacher (after).
inline void unidad_step(TrainerState& st) {
  const TrainConfig& cfg = st.cfg;
  const int t = sample_timestep(st.rng.stream("loop/t"), cfg.T);
  const Tensor z = detail::normal_matrix(cfg.batch, st.student.data_dim(), st.rng.stream("loop/z"));
  const Tensor eps =
      detail::normal_matrix(cfg.batch, st.student.data_dim(), st.rng.stream("loop/eps"));
  const Tensor y = cfg.gan_reals == GanReals::fewshot
                       ? detail::sample_rows(st.fewshot.exemplars, cfg.batch, st.rng.stream("loop/reals"))
                       : sample_distribution(st.bench.source, cfg.batch, st.rng.stream("loop/reals"));

  const bool student_turn = st.step % static_cast<std::uint64_t>(cfg.update_ratio) == 0;
  if (student_turn) {
    StudentLossParts parts = student_loss(st, z, t, eps);
    st.student.net().zero_grad();
    parts.total.backward();
    adam_step(st.opt_student, st.student.net().parameters(), "student");
    st.last.dmd_src = parts.dmd_src;
    st.last.dmd_trg = parts.dmd_trg;
    st.last.g_gan = parts.gan;
  }

  FakeDiscLossParts fd = fake_and_disc_loss(st, z, t, eps, y);
  st.teacher_fake.net().zero_grad();
  for (MlpNetwork& h : st.disc.heads()) h.zero_grad();
  fd.total.backward();
  adam_step(st.opt_fake_disc, st.fake_disc_params(), "fake+disc");
  st.last.fk_mse = fd.fk_mse;
  st.last.d_gan = fd.d_gan;

  if (student_turn && cfg.target_mode == TargetTeacherMode::online) {
    const Tensor trg = target_teacher_loss(st, y, t, eps);
    st.teacher_trg.net().zero_grad();
    trg.backward();
    adam_step(st.opt_target, st.teacher_trg.net().parameters(), "target");
    st.last.trg_mse = trg.item();
  }
  ++st.step;
}

/// Samples the current student without touching the training streams.
inline Tensor sample_student(TrainerState& st, int n, const char* z_stream = "eval/z",
                             const char* renoise_stream = "eval/renoise") {
  NoGradGuard ng;
  const Tensor z = detail::normal_matrix(n, st.student.data_dim(), st.rng.stream(z_stream));
  return student_generate(st.student, st.sched, z, st.rng.stream(renoise_stream));
}

inline MetricsReport compute_metrics(const Tensor& gens, const TrainerState& st) {
  MetricsReport m;
  m.w2_to_target = wasserstein2(gens, st.target_ref);
  m.w2_to_source = wasserstein2(gens, st.source_ref);
  const DiversityResult dr = intra_diversity(gens, st.fewshot.exemplars);
  m.diversity = dr.value;
  m.diversity_degenerate = dr.degenerate;
  m.coverage = mode_coverage(gens, st.bench.source.centers(), st.cfg.coverage_radius);
  m.memorization = memorization(gens, st.fewshot.exemplars);
  return m;
}

inline MetricsRow eval_trainer(TrainerState& st, int stage, long long row_step_offset = 0) {
  MetricsRow row;
  row.step = row_step_offset + static_cast<long long>(st.step);
  row.stage = stage;
  row.losses = st.last;
  row.metrics = compute_metrics(sample_student(st, st.cfg.eval_samples), st);
  return row;
}

/// Runs `iterations` joint steps, appending a metrics row every eval_interval
/// steps and at the end of the stretch.
inline void run_trainer(TrainerState& st, long long iterations, std::vector<MetricsRow>& log,
                        int stage = 0, long long row_step_offset = 0) {
  const std::uint64_t stop = st.step + static_cast<std::uint64_t>(iterations);
  while (st.step < stop) {
    unidad_step(st);
    if (st.step % static_cast<std::uint64_t>(st.cfg.eval_interval) == 0 || st.step == stop) {
      log.push_back(eval_trainer(st, stage, row_step_offset));
    }
  }
}

// ---------------------------------------------------------------------------
// Source teacher pretraining
// ---------------------------------------------------------------------------

/// Trains a fresh noise-prediction teacher on the benchmark's source
/// distribution with per-sample uniform timesteps over the full range.
inline Denoiser pretrain_source_teacher(const TrainConfig& cfg) {
  if (!cfg.resolved) throw std::logic_error("pretrain_source_teacher: config not resolved");
  const NoiseSchedule sched = build_schedule(cfg.T);
  const Benchmark bench = make_benchmark(cfg.benchmark);
  RunRng rng(cfg.seed);
  Denoiser teacher = Denoiser::make(2, cfg.hidden, cfg.T, DenoiserRole::source,
                                    rng.stream("pretrain/init"));
  AdamState opt = AdamState::make(cfg.pretrain_lr, teacher.net().parameter_count());
  std::vector<int> ts(static_cast<std::size_t>(cfg.pretrain_batch));
  for (long long it = 0; it < cfg.pretrain_iterations; ++it) {
    const Tensor x = sample_distribution(bench.source, cfg.pretrain_batch, rng.stream("pretrain/data"));
    for (int& t : ts) t = rng.stream("pretrain/t").uniform_int(1, cfg.T);
    const Tensor eps = detail::normal_matrix(cfg.pretrain_batch, 2, rng.stream("pretrain/noise"));
    const Tensor loss = denoise_loss(teacher, sched, x, ts, eps);
    teacher.net().zero_grad();
    loss.backward();
    adam_step(opt, teacher.net().parameters(), "pretrain");
  }
  return teacher;
}

// ---------------------------------------------------------------------------
// Teacher fine-tuning stage
// ---------------------------------------------------------------------------

/// State of a plain denoising fine-tune of the (target) teacher on the
/// few-shot exemplars.
struct FtTeacherState {
  TrainConfig cfg;
  NoiseSchedule sched;
  Benchmark bench;
  FewShotSet fewshot;
  Denoiser teacher;
  AdamState opt;
  RunRng rng;
  std::uint64_t step = 0;
  LossSnapshot last;
  Tensor source_ref;
  Tensor target_ref;
};

inline FtTeacherState make_ft_teacher(const TrainConfig& cfg, const Denoiser& teacher_src) {
  if (!cfg.resolved) throw std::logic_error("make_ft_teacher: config not resolved");
  FtTeacherState st;
  st.cfg = cfg;
  st.sched = build_schedule(cfg.T);
  st.bench = make_benchmark(cfg.benchmark);
  st.fewshot = make_fewshot(st.bench, cfg.fewshot_k);
  st.teacher = teacher_src.clone_as(DenoiserRole::target);
  st.opt = AdamState::make(cfg.lr, st.teacher.net().parameter_count());
  st.rng = RunRng(cfg.seed);
  st.source_ref = pinned_source_ref(st.bench, cfg.eval_samples);
  st.target_ref = detail::first_rows(st.bench.held_out, cfg.eval_samples);
  return st;
}

inline void ft_teacher_step(FtTeacherState& st) {
  const Tensor y = detail::sample_rows(st.fewshot.exemplars, st.cfg.batch, st.rng.stream("ft/pick"));
  std::vector<int> ts(static_cast<std::size_t>(st.cfg.batch));
  for (int& t : ts) t = st.rng.stream("ft/t").uniform_int(1, st.cfg.T);
  const Tensor eps = detail::normal_matrix(st.cfg.batch, 2, st.rng.stream("ft/noise"));
  const Tensor loss = denoise_loss(st.teacher, st.sched, y, ts, eps);
  st.teacher.net().zero_grad();
  loss.backward();
  adam_step(st.opt, st.teacher.net().parameters(), "ft-teacher");
  st.last.trg_mse = loss.item();
  ++st.step;
}

inline Tensor sample_ft_teacher(FtTeacherState& st, int n, const char* z_stream = "eval/z") {
  NoGradGuard ng;
  const Tensor z = detail::normal_matrix(n, 2, st.rng.stream(z_stream));
  return ddim_sample(st.teacher, st.sched, st.cfg.ddim_eval_steps, z);
}

inline MetricsRow eval_ft_teacher(FtTeacherState& st, int stage, long long row_step_offset = 0) {
  MetricsRow row;
  row.step = row_step_offset + static_cast<long long>(st.step);
  row.stage = stage;
  row.losses = st.last;
  const Tensor gens = sample_ft_teacher(st, st.cfg.eval_samples);
  row.metrics.w2_to_target = wasserstein2(gens, st.target_ref);
  row.metrics.w2_to_source = wasserstein2(gens, st.source_ref);
  const DiversityResult dr = intra_diversity(gens, st.fewshot.exemplars);
  row.metrics.diversity = dr.value;
  row.metrics.diversity_degenerate = dr.degenerate;
  row.metrics.coverage = mode_coverage(gens, st.bench.source.centers(), st.cfg.coverage_radius);
  row.metrics.memorization = memorization(gens, st.fewshot.exemplars);
  return row;
}

inline void run_ft_teacher(FtTeacherState& st, long long iterations, std::vector<MetricsRow>& log,
                           int stage = 0, long long row_step_offset = 0) {
  const std::uint64_t stop = st.step + static_cast<std::uint64_t>(iterations);
  while (st.step < stop) {
    ft_teacher_step(st);
    if (st.step % static_cast<std::uint64_t>(st.cfg.eval_interval) == 0 || st.step == stop) {
      log.push_back(eval_ft_teacher(st, stage, row_step_offset));
    }
  }
}

// ---------------------------------------------------------------------------
// Student fine-tuning stage
// ---------------------------------------------------------------------------

/// Fine-tunes the trainer's student directly on exemplars: the student is a
/// data predictor, so the loss is the squared error of its reconstruction of y
/// from y_t, with t restricted to the student's own ladder.
inline void student_ft_step(TrainerState& st) {
  const int n = st.cfg.batch;
  const Tensor y = detail::sample_rows(st.fewshot.exemplars, n, st.rng.stream("sft/pick"));
  const std::vector<int>& ladder = st.student.ladder();
  std::vector<int> ts(static_cast<std::size_t>(n));
  for (int& t : ts) {
    t = ladder[static_cast<std::size_t>(
        st.rng.stream("sft/t").uniform_int(0, static_cast<int>(ladder.size()) - 1))];
  }
  const Tensor eps = detail::normal_matrix(n, 2, st.rng.stream("sft/noise"));
  const Tensor y_t = detail::q_sample_rows(st.sched, y, ts, eps);
  const Tensor pred = st.student.apply(y_t, ts, ParamMode::train);
  const Tensor loss = scale(squared_norm(sub(pred, Tensor(y.shape(), y.data()))), 1.0 / n);
  st.student.net().zero_grad();
  loss.backward();
  adam_step(st.opt_student, st.student.net().parameters(), "student-ft");
  st.last.dmd_src = loss.item();
  ++st.step;
}

inline void run_student_ft(TrainerState& st, long long iterations, std::vector<MetricsRow>& log,
                           int stage, long long row_step_offset = 0) {
  st.opt_student = AdamState::make(st.cfg.lr, st.student.net().parameter_count());
  const std::uint64_t stop = st.step + static_cast<std::uint64_t>(iterations);
  while (st.step < stop) {
    student_ft_step(st);
    if (st.step % static_cast<std::uint64_t>(st.cfg.eval_interval) == 0 || st.step == stop) {
      log.push_back(eval_trainer(st, stage, row_step_offset));
    }
  }
}

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

struct PipelineResult {
  TrainConfig cfg;
  std::vector<MetricsRow> log;
  int final_stage = 0;
  bool has_trainer = false;
  TrainerState trainer;
  bool has_ft = false;
  FtTeacherState ft;

  /// Rows belonging to the stage that produced the final sampler.
  std::vector<const MetricsRow*> final_stage_rows() const {
    std::vector<const MetricsRow*> out;
    for (const MetricsRow& r : log) {
      if (r.stage == final_stage) out.push_back(&r);
    }
    return out;
  }
};

/// Runs one pipeline end to end from a pretrained source teacher.
///   unidad:       joint distillation + adaptation, single stage
///   dmd2:         source-only distillation (dual weight 0, no target teacher,
///                 source reals); shares the unidad code path
///   ft:           plain teacher fine-tune, sampled with the deterministic
///                 multi-step sampler
///   ft_then_dmd2: fine-tune the teacher, then distill from it (few-shot reals)
///   dmd2_then_ft: distill on source, then fine-tune the student
inline PipelineResult run_pipeline(const TrainConfig& cfg, const Denoiser& teacher_src) {
  if (!cfg.resolved) throw std::logic_error("run_pipeline: config not resolved");
  PipelineResult res;
  res.cfg = cfg;
  switch (cfg.pipeline) {
    case PipelineKind::unidad:
    case PipelineKind::dmd2: {
      res.trainer = make_trainer(cfg, teacher_src);
      res.has_trainer = true;
      res.final_stage = 0;
      run_trainer(res.trainer, cfg.iterations, res.log, 0);
      break;
    }
    case PipelineKind::ft: {
      res.ft = make_ft_teacher(cfg, teacher_src);
      res.has_ft = true;
      res.final_stage = 0;
      run_ft_teacher(res.ft, cfg.iterations, res.log, 0);
      break;
    }
    case PipelineKind::ft_then_dmd2: {
      FtTeacherState ft = make_ft_teacher(cfg, teacher_src);
      run_ft_teacher(ft, cfg.ft_iterations, res.log, 0);
      TrainConfig stage2 = cfg;
      stage2.target_mode = TargetTeacherMode::off;
      stage2.dual_weight = 0.0;
      stage2.gan_reals = GanReals::fewshot;
      res.trainer = make_trainer(stage2, ft.teacher);
      res.has_trainer = true;
      res.final_stage = 1;
      run_trainer(res.trainer, cfg.iterations, res.log, 1, static_cast<long long>(ft.step));
      break;
    }
    case PipelineKind::dmd2_then_ft: {
      res.trainer = make_trainer(cfg, teacher_src);
      res.has_trainer = true;
      res.final_stage = 1;
      run_trainer(res.trainer, cfg.iterations, res.log, 0);
      run_student_ft(res.trainer, cfg.ft_iterations, res.log, 1);
      break;
    }
  }
  return res;
}

/// Final generations of whatever sampler the pipeline produced.
inline Tensor sample_from_result(PipelineResult& res, int n) {
  if (res.has_trainer) return sample_student(res.trainer, n, "final/z", "final/renoise");
  if (res.has_ft) return sample_ft_teacher(res.ft, n, "final/z");
  throw std::logic_error("pipeline result holds no sampler");
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline void save_trainer_checkpoint(const TrainerState& st, const std::string& path) {
  Checkpoint ck;
  ck.meta["kind"] = "trainer";
  ck.meta["config"] = serialize_config(st.cfg);
  ck.models["teacher_source"] = st.teacher_src.net().parameters();
  ck.models["teacher_fake"] = st.teacher_fake.net().parameters();
  if (st.has_target) ck.models["teacher_target"] = st.teacher_trg.net().parameters();
  ck.models["student"] = st.student.net().parameters();
  ck.models["discriminator"] = st.disc.parameters();
  ck.optims["student"] = st.opt_student;
  ck.optims["fake_disc"] = st.opt_fake_disc;
  if (st.cfg.target_mode == TargetTeacherMode::online) ck.optims["target"] = st.opt_target;
  ck.rng_seed = st.rng.seed();
  ck.rng_streams = st.rng.state();
  ck.step = st.step;
  write_checkpoint_file(ck, path);
}

inline TrainConfig config_from_checkpoint(const Checkpoint& ck, const std::string& path) {
  const auto it = ck.meta.find("config");
  if (it == ck.meta.end()) {
    throw std::runtime_error("checkpoint '" + path + "' carries no config");
  }
  TrainConfig cfg = parse_config_text(it->second);
  resolve_config(cfg, cfg.dual_weight);
  return cfg;
}

/// Rebuilds a full trainer from a checkpoint; every parameter, moment, stream
/// counter, and the step counter match the saved state exactly.
inline TrainerState load_trainer_checkpoint(const std::string& path) {
  const Checkpoint ck = read_checkpoint_file(path);
  const auto kind = ck.meta.find("kind");
  if (kind == ck.meta.end() || kind->second != "trainer") {
    throw std::runtime_error("checkpoint '" + path + "' is not a trainer checkpoint");
  }
  const TrainConfig cfg = config_from_checkpoint(ck, path);
  RngStream scratch(0);
  const Denoiser blank = Denoiser::make(2, cfg.hidden, cfg.T, DenoiserRole::source, scratch);
  TrainerState st = make_trainer(cfg, blank, /*load_init_ckpts=*/false);
  load_model_params(ck, "teacher_source", st.teacher_src.net().parameters());
  load_model_params(ck, "teacher_fake", st.teacher_fake.net().parameters());
  if (st.has_target) load_model_params(ck, "teacher_target", st.teacher_trg.net().parameters());
  load_model_params(ck, "student", st.student.net().parameters());
  load_model_params(ck, "discriminator", st.disc.parameters());
  const auto need_opt = [&](const char* name) -> const AdamState& {
    const auto it = ck.optims.find(name);
    if (it == ck.optims.end()) {
      throw std::runtime_error("checkpoint '" + path + "' is missing optimizer '" + name + "'");
    }
    return it->second;
  };
  const auto restore_opt = [&](AdamState& dst, const char* name) {
    const AdamState& src = need_opt(name);
    if (src.m.size() != dst.m.size()) {
      throw std::runtime_error("checkpoint '" + path + "': optimizer '" + name + "' holds " +
                               std::to_string(src.m.size()) + " slots, expected " +
                               std::to_string(dst.m.size()));
    }
    dst = src;
  };
  restore_opt(st.opt_student, "student");
  restore_opt(st.opt_fake_disc, "fake_disc");
  if (cfg.target_mode == TargetTeacherMode::online) restore_opt(st.opt_target, "target");
  st.rng.restore(ck.rng_seed, ck.rng_streams);
  st.step = ck.step;
  return st;
}

inline void save_teacher_checkpoint(const Denoiser& teacher, const TrainConfig& cfg,
                                    const std::string& kind, const std::string& path,
                                    const RunRng* rng = nullptr, const AdamState* opt = nullptr,
                                    std::uint64_t step = 0) {
  Checkpoint ck;
  ck.meta["kind"] = kind;
  ck.meta["config"] = serialize_config(cfg);
  ck.models["teacher"] = teacher.net().parameters();
  if (opt) ck.optims["teacher"] = *opt;
  if (rng) {
    ck.rng_seed = rng->seed();
    ck.rng_streams = rng->state();
  }
  ck.step = step;
  write_checkpoint_file(ck, path);
}

inline Denoiser load_teacher_checkpoint(const std::string& path, TrainConfig* out_cfg,
                                        std::string* out_kind) {
  const Checkpoint ck = read_checkpoint_file(path);
  const auto kind = ck.meta.find("kind");
  if (kind == ck.meta.end() ||
      (kind->second != "teacher_source" && kind->second != "teacher_ft")) {
    throw std::runtime_error("checkpoint '" + path + "' is not a teacher checkpoint");
  }
  const TrainConfig cfg = config_from_checkpoint(ck, path);
  RngStream scratch(0);
  Denoiser teacher = Denoiser::make(2, cfg.hidden, cfg.T,
                                    kind->second == "teacher_ft" ? DenoiserRole::target
                                                                 : DenoiserRole::source,
                                    scratch);
  load_model_params(ck, "teacher", teacher.net().parameters());
  if (out_cfg) *out_cfg = cfg;
  if (out_kind) *out_kind = kind->second;
  return teacher;
}

/// Saves whatever the pipeline produced: a trainer checkpoint for distillation
/// pipelines, a teacher checkpoint for the fine-tune pipeline.
inline void save_result_checkpoint(const PipelineResult& res, const std::string& path) {
  if (res.has_trainer) {
    save_trainer_checkpoint(res.trainer, path);
  } else if (res.has_ft) {
    save_teacher_checkpoint(res.ft.teacher, res.ft.cfg, "teacher_ft", path, &res.ft.rng,
                            &res.ft.opt, res.ft.step);
  } else {
    throw std::logic_error("pipeline result holds nothing to checkpoint");
  }
}

}  // namespace unidad
