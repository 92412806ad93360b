#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "unidad/config.hpp"
#include "unidad/svg.hpp"
#include "unidad/training.hpp"

namespace unidad {

/// Identity of a finished run, mirrored into manifest.txt.
struct RunManifest {
  std::string pipeline;
  std::string benchmark;
  std::uint64_t seed = 0;
  int fewshot_k = 0;
  long long iterations = 0;
  std::string config_hash;
};

inline RunManifest make_manifest(const TrainConfig& cfg) {
  RunManifest m;
  m.pipeline = to_string(cfg.pipeline);
  m.benchmark = cfg.benchmark;
  m.seed = cfg.seed;
  m.fewshot_k = cfg.fewshot_k;
  m.iterations = cfg.iterations;
  m.config_hash = config_hash(cfg);
  return m;
}

inline std::string manifest_text(const RunManifest& m) {
  std::ostringstream out;
  out << "pipeline = " << m.pipeline << "\n";
  out << "benchmark = " << m.benchmark << "\n";
  out << "seed = " << m.seed << "\n";
  out << "fewshot_k = " << m.fewshot_k << "\n";
  out << "iterations = " << m.iterations << "\n";
  out << "config_hash = " << m.config_hash << "\n";
  return out.str();
}

/// --out beats UDAD_OUT_ROOT beats ./runs.
inline std::string resolve_out_root(const std::string& cli_out) {
  if (!cli_out.empty()) return cli_out;
  if (const char* env = std::getenv("UDAD_OUT_ROOT"); env && *env) return env;
  return "runs";
}

inline std::string run_dir_name(const TrainConfig& cfg) {
  return cfg.benchmark + "-" + to_string(cfg.pipeline) + "-seed" + std::to_string(cfg.seed) + "-" +
         config_hash(cfg).substr(0, 8);
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

/// Options shared by the subcommands; a subset applies to each.
struct CliOptions {
  std::string config_path;
  std::string pipeline;
  std::string benchmark;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string teacher_path;
  std::string checkpoint;
  std::string axis;
  int samples = 0;
};

inline TrainConfig build_config(const CliOptions& opt) {
  TrainConfig cfg = opt.config_path.empty() ? TrainConfig{} : parse_config_file(opt.config_path);
  if (!opt.pipeline.empty()) cfg.pipeline = pipeline_from_string(opt.pipeline);
  if (!opt.benchmark.empty()) cfg.benchmark = opt.benchmark;
  if (opt.seed) cfg.seed = *opt.seed;
  const Benchmark bench = make_benchmark(cfg.benchmark);
  resolve_config(cfg, bench.default_dual_weight);
  return cfg;
}

/// Seed of the on-demand source teacher when no --teacher checkpoint is given,
/// fixed so every such run agrees on the teacher.
inline constexpr std::uint64_t kDefaultTeacherSeed = 7;

inline Denoiser obtain_teacher(const TrainConfig& cfg, const CliOptions& opt) {
  if (!opt.teacher_path.empty()) {
    TrainConfig tcfg;
    Denoiser teacher = load_teacher_checkpoint(opt.teacher_path, &tcfg);
    if (tcfg.T != cfg.T || tcfg.hidden != cfg.hidden) {
      throw std::runtime_error("teacher checkpoint '" + opt.teacher_path +
                               "' was built for a different T or hidden stack");
    }
    return teacher;
  }
  TrainConfig tcfg = cfg;
  tcfg.seed = kDefaultTeacherSeed;
  std::cerr << "pretraining source teacher for benchmark '" << cfg.benchmark << "' ("
            << tcfg.pretrain_iterations
            << " steps; pass --teacher to reuse a pretrain-source checkpoint)...\n";
  return pretrain_source_teacher(tcfg);
}

inline void write_run_outputs(PipelineResult& res, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_text_file((fs::path(dir) / "config.resolved").string(), serialize_config(res.cfg));
  write_text_file((fs::path(dir) / "manifest.txt").string(), manifest_text(make_manifest(res.cfg)));
  write_metrics_csv(res.log, (fs::path(dir) / "metrics.csv").string());
  save_result_checkpoint(res, (fs::path(dir) / "final.ckpt").string());
  const Tensor gens = sample_from_result(res, res.cfg.eval_samples);
  const Benchmark& bench = res.has_trainer ? res.trainer.bench : res.ft.bench;
  const FewShotSet& fs_set = res.has_trainer ? res.trainer.fewshot : res.ft.fewshot;
  const std::vector<std::array<double, 2>> centers = bench.source.centers();
  emit_scatter_svg(gens, &fs_set.exemplars, &centers, (fs::path(dir) / "samples.svg").string(),
                   res.cfg.coverage_radius);
}

inline void print_final_metrics(const PipelineResult& res, std::ostream& out) {
  if (res.log.empty()) return;
  const MetricsRow& r = res.log.back();
  out << "step = " << r.step << "\n";
  out << "w2_to_target = " << r.metrics.w2_to_target << "\n";
  out << "w2_to_source = " << r.metrics.w2_to_source << "\n";
  out << "diversity = " << r.metrics.diversity << "\n";
  out << "coverage = " << r.metrics.coverage << "\n";
  out << "memorization = " << r.metrics.memorization << "\n";
}

inline int cmd_pretrain_source(const CliOptions& opt) {
  TrainConfig cfg = build_config(opt);
  const std::string out_root = resolve_out_root(opt.out);
  Denoiser teacher = pretrain_source_teacher(cfg);
  namespace fs = std::filesystem;
  fs::create_directories(out_root);
  const std::string path =
      (fs::path(out_root) / ("teacher-" + cfg.benchmark + "-seed" + std::to_string(cfg.seed) + ".ckpt"))
          .string();
  save_teacher_checkpoint(teacher, cfg, "teacher_source", path);
  std::cout << "teacher = " << path << "\n";
  {
    NoGradGuard ng;
    RunRng rng(cfg.seed ^ 0x5A5A5A5AULL);
    const NoiseSchedule sched = build_schedule(cfg.T);
    std::vector<double> zv(static_cast<std::size_t>(cfg.eval_samples) * 2);
    rng.stream("probe").fill_normal(zv);
    const Tensor gens =
        ddim_sample(teacher, sched, cfg.ddim_eval_steps, Tensor({cfg.eval_samples, 2}, std::move(zv)));
    const Benchmark bench = make_benchmark(cfg.benchmark);
    std::cout << "w2_to_source = " << wasserstein2(gens, pinned_source_ref(bench, cfg.eval_samples))
              << "\n";
    std::cout << "coverage = "
              << mode_coverage(gens, bench.source.centers(), cfg.coverage_radius) << "\n";
  }
  return 0;
}

inline int cmd_run(const CliOptions& opt) {
  const std::string out_root = resolve_out_root(opt.out);
  PipelineResult res;
  if (!opt.checkpoint.empty()) {
    TrainerState st = load_trainer_checkpoint(opt.checkpoint);
    if (st.cfg.pipeline != PipelineKind::unidad && st.cfg.pipeline != PipelineKind::dmd2) {
      throw std::runtime_error("resume is supported for single-stage distillation runs only");
    }
    const long long remaining = st.cfg.iterations - static_cast<long long>(st.step);
    if (remaining <= 0) {
      throw std::runtime_error("checkpoint '" + opt.checkpoint + "' already reached its budget");
    }
    res.cfg = st.cfg;
    res.trainer = std::move(st);
    res.has_trainer = true;
    run_trainer(res.trainer, remaining, res.log, 0);
  } else {
    TrainConfig cfg = build_config(opt);
    const Denoiser teacher = obtain_teacher(cfg, opt);
    res = run_pipeline(cfg, teacher);
  }
  namespace fs = std::filesystem;
  const std::string dir = (fs::path(out_root) / run_dir_name(res.cfg)).string();
  write_run_outputs(res, dir);
  std::cout << "run_dir = " << dir << "\n";
  print_final_metrics(res, std::cout);
  return 0;
}

inline int cmd_sweep(const CliOptions& opt) {
  if (opt.axis.empty()) throw std::invalid_argument("sweep requires --axis");
  const std::string out_root = resolve_out_root(opt.out);
  TrainConfig base = build_config(opt);
  std::string key;
  std::vector<std::string> values;
  if (opt.axis == "a" || opt.axis == "dual_weight") {
    key = "dual_weight";
    values = {"0", "0.25", "0.5", "0.75", "1"};
  } else if (opt.axis == "nfe") {
    key = "nfe";
    values = {"1", "2", "3", "4"};
  } else if (opt.axis == "k" || opt.axis == "fewshot_k") {
    key = "fewshot_k";
    values = {"1", "5", "10"};
  } else if (opt.axis == "gan" || opt.axis == "gan_family") {
    key = "gan_family";
    values = {"hinge", "bce", "lsgan", "wgan"};
  } else if (opt.axis == "heads" || opt.axis == "head_mode") {
    key = "head_mode";
    values = {"multi", "single"};
  } else {
    throw std::invalid_argument("unknown sweep axis '" + opt.axis +
                                "' (expected a, nfe, k, gan, or heads)");
  }

  const Denoiser teacher = obtain_teacher(base, opt);
  namespace fs = std::filesystem;
  const std::string sweep_dir =
      (fs::path(out_root) / ("sweep-" + opt.axis + "-" + config_hash(base).substr(0, 8))).string();
  fs::create_directories(sweep_dir);
  std::ostringstream summary;
  summary << opt.axis << ",final_w2_to_target,best_w2_to_target,final_diversity,final_coverage\n";
  for (const std::string& v : values) {
    TrainConfig cfg = base;
    cfg.resolved = false;
    apply_config_entry(cfg, key, v, 0);
    resolve_config(cfg, make_benchmark(cfg.benchmark).default_dual_weight);
    std::cerr << "sweep " << opt.axis << " = " << v << "\n";
    PipelineResult res = run_pipeline(cfg, teacher);
    const std::string dir = (fs::path(sweep_dir) / run_dir_name(cfg)).string();
    write_run_outputs(res, dir);
    double best = std::numeric_limits<double>::infinity();
    for (const MetricsRow* r : res.final_stage_rows()) {
      best = std::min(best, r->metrics.w2_to_target);
    }
    const MetricsRow& last = res.log.back();
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.10g\n", v.c_str(),
                  last.metrics.w2_to_target, best, last.metrics.diversity, last.metrics.coverage);
    summary << buf;
  }
  write_text_file((fs::path(sweep_dir) / "summary.csv").string(), summary.str());
  std::cout << "sweep_dir = " << sweep_dir << "\n";
  return 0;
}

/// Loads any checkpoint kind and draws fresh samples from the model it holds:
/// the few-step student for trainer checkpoints, a deterministic 25-step (per
/// config) probe for teacher checkpoints.
inline Tensor generate_from_checkpoint(const std::string& path, int samples, TrainConfig& cfg,
                                       std::string& kind) {
  const Checkpoint ck = read_checkpoint_file(path);
  const auto kind_it = ck.meta.find("kind");
  if (kind_it == ck.meta.end()) {
    throw std::runtime_error("checkpoint '" + path + "' carries no kind tag");
  }
  kind = kind_it->second;
  if (kind == "trainer") {
    TrainerState st = load_trainer_checkpoint(path);
    cfg = st.cfg;
    const int n = samples > 0 ? samples : cfg.eval_samples;
    return sample_student(st, n, "cli_eval/z", "cli_eval/renoise");
  }
  Denoiser teacher = load_teacher_checkpoint(path, &cfg);
  const int n = samples > 0 ? samples : cfg.eval_samples;
  NoGradGuard ng;
  RunRng rng(cfg.seed ^ 0xE7A1ULL);
  std::vector<double> zv(static_cast<std::size_t>(n) * 2);
  rng.stream("cli_eval/z").fill_normal(zv);
  return ddim_sample(teacher, build_schedule(cfg.T), cfg.ddim_eval_steps,
                     Tensor({n, 2}, std::move(zv)));
}

inline int cmd_eval(const CliOptions& opt) {
  if (opt.checkpoint.empty()) throw std::invalid_argument("eval requires --checkpoint");
  TrainConfig cfg;
  std::string kind;
  const Tensor gens = generate_from_checkpoint(opt.checkpoint, opt.samples, cfg, kind);
  const Benchmark bench = make_benchmark(cfg.benchmark);
  const FewShotSet fs_set = make_fewshot(bench, cfg.fewshot_k);
  const int n = gens.extent(0);
  const MetricsReport m = [&] {
    MetricsReport r;
    r.w2_to_target = wasserstein2(gens, detail::first_rows(bench.held_out, std::min(n, kHeldOutSize)));
    r.w2_to_source = wasserstein2(gens, pinned_source_ref(bench, n));
    const DiversityResult dr = intra_diversity(gens, fs_set.exemplars);
    r.diversity = dr.value;
    r.diversity_degenerate = dr.degenerate;
    r.coverage = mode_coverage(gens, bench.source.centers(), cfg.coverage_radius);
    r.memorization = memorization(gens, fs_set.exemplars);
    return r;
  }();
  std::cout << "kind = " << kind << "\n";
  std::cout << "pipeline = " << to_string(cfg.pipeline) << "\n";
  std::cout << "benchmark = " << cfg.benchmark << "\n";
  std::cout << "samples = " << n << "\n";
  std::cout << "w2_to_target = " << m.w2_to_target << "\n";
  std::cout << "w2_to_source = " << m.w2_to_source << "\n";
  std::cout << "diversity = " << m.diversity << "\n";
  std::cout << "coverage = " << m.coverage << "\n";
  std::cout << "memorization = " << m.memorization << "\n";
  return 0;
}

/// Scatter of fresh generations from a checkpoint, over the benchmark's
/// source-mode rings and few-shot crosses. Default output sits next to the
/// checkpoint as <stem>-plot.svg.
inline int cmd_plot(const CliOptions& opt) {
  if (opt.checkpoint.empty()) throw std::invalid_argument("plot requires --checkpoint");
  namespace fs = std::filesystem;
  TrainConfig cfg;
  std::string kind;
  const Tensor gens = generate_from_checkpoint(opt.checkpoint, opt.samples, cfg, kind);
  const Benchmark bench = make_benchmark(cfg.benchmark);
  const FewShotSet fs_set = make_fewshot(bench, cfg.fewshot_k);
  const std::vector<std::array<double, 2>> centers = bench.source.centers();
  std::string out_path = opt.out;
  if (out_path.empty()) {
    fs::path p(opt.checkpoint);
    p.replace_extension();
    out_path = p.string() + "-plot.svg";
  }
  emit_scatter_svg(gens, &fs_set.exemplars, &centers, out_path, cfg.coverage_radius);
  std::cout << "plot = " << out_path << "\n";
  return 0;
}

}  // namespace unidad
