#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "unidad/adversarial.hpp"
#include "unidad/rng.hpp"

namespace unidad {

enum class PipelineKind { unidad, ft, dmd2, ft_then_dmd2, dmd2_then_ft };

inline const char* to_string(PipelineKind p) {
  switch (p) {
    case PipelineKind::unidad: return "unidad";
    case PipelineKind::ft: return "ft";
    case PipelineKind::dmd2: return "dmd2";
    case PipelineKind::ft_then_dmd2: return "ft_then_dmd2";
    case PipelineKind::dmd2_then_ft: return "dmd2_then_ft";
  }
  throw std::logic_error("unknown pipeline");
}

inline PipelineKind pipeline_from_string(const std::string& s) {
  if (s == "unidad") return PipelineKind::unidad;
  if (s == "ft") return PipelineKind::ft;
  if (s == "dmd2") return PipelineKind::dmd2;
  if (s == "ft_then_dmd2") return PipelineKind::ft_then_dmd2;
  if (s == "dmd2_then_ft") return PipelineKind::dmd2_then_ft;
  throw std::invalid_argument("unknown pipeline '" + s + "'");
}

/// off: no target teacher, dual weight forced to 0. online: target teacher
/// starts from the source copy (or target_ckpt) and trains on the few-shot
/// set. frozen: target teacher loaded from target_ckpt and never updated.
enum class TargetTeacherMode { off, online, frozen };

inline const char* to_string(TargetTeacherMode m) {
  switch (m) {
    case TargetTeacherMode::off: return "off";
    case TargetTeacherMode::online: return "online";
    case TargetTeacherMode::frozen: return "frozen";
  }
  throw std::logic_error("unknown target mode");
}

inline TargetTeacherMode target_mode_from_string(const std::string& s) {
  if (s == "off") return TargetTeacherMode::off;
  if (s == "online") return TargetTeacherMode::online;
  if (s == "frozen") return TargetTeacherMode::frozen;
  throw std::invalid_argument("unknown target_mode '" + s + "'");
}

enum class GanReals { fewshot, source };

inline const char* to_string(GanReals r) { return r == GanReals::fewshot ? "fewshot" : "source"; }

inline GanReals gan_reals_from_string(const std::string& s) {
  if (s == "fewshot") return GanReals::fewshot;
  if (s == "source") return GanReals::source;
  throw std::invalid_argument("unknown gan_reals '" + s + "'");
}

/// Every knob of a run, flat. Fields marked auto in the file format (dual
/// weight, gan reals) are materialized by resolve(); a resolved config
/// serializes to a canonical text whose hash identifies the run setup.
struct TrainConfig {
  PipelineKind pipeline = PipelineKind::unidad;
  std::string benchmark = "close";
  std::uint64_t seed = 1;

  int T = 1000;
  int nfe = 3;
  std::vector<int> hidden = {64, 64, 64};

  long long iterations = 20000;
  long long ft_iterations = 4000;
  int batch = 64;
  double lr = 1e-3;

  long long pretrain_iterations = 8000;
  int pretrain_batch = 128;
  double pretrain_lr = 1e-3;

  double dual_weight = -1.0;  // <0 means auto (benchmark default)
  TargetTeacherMode target_mode = TargetTeacherMode::online;
  std::string target_ckpt;   // teacher checkpoint initializing the target teacher
  std::string student_ckpt;  // trainer checkpoint whose student block seeds the student
  int update_ratio = 5;
  double lambda_g = 0.01;
  double lambda_d = 0.03;
  GanFamily gan_family = GanFamily::bce;
  HeadMode head_mode = HeadMode::multi;
  bool gan_reals_auto = true;
  GanReals gan_reals = GanReals::fewshot;

  int fewshot_k = 10;
  long long eval_interval = 500;
  int eval_samples = 256;
  double coverage_radius = 0.9;
  int ddim_eval_steps = 25;

  bool resolved = false;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline long long parse_int(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const long long out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': expected number, got '" + v + "'");
  }
}

inline std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(static_cast<int>(parse_int(trim(item), key)));
  }
  if (out.empty()) throw std::invalid_argument("config key '" + key + "': empty list");
  return out;
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Applies one key=value pair. Unknown keys are hard errors.
inline void apply_config_entry(TrainConfig& c, const std::string& key, const std::string& value,
                               int line_no) {
  using detail::parse_double;
  using detail::parse_int;
  try {
    if (key == "pipeline") c.pipeline = pipeline_from_string(value);
    else if (key == "benchmark") c.benchmark = value;
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(value, key));
    else if (key == "T") c.T = static_cast<int>(parse_int(value, key));
    else if (key == "nfe") c.nfe = static_cast<int>(parse_int(value, key));
    else if (key == "hidden") c.hidden = detail::parse_int_list(value, key);
    else if (key == "iterations") c.iterations = parse_int(value, key);
    else if (key == "ft_iterations") c.ft_iterations = parse_int(value, key);
    else if (key == "batch") c.batch = static_cast<int>(parse_int(value, key));
    else if (key == "lr") c.lr = parse_double(value, key);
    else if (key == "pretrain_iterations") c.pretrain_iterations = parse_int(value, key);
    else if (key == "pretrain_batch") c.pretrain_batch = static_cast<int>(parse_int(value, key));
    else if (key == "pretrain_lr") c.pretrain_lr = parse_double(value, key);
    else if (key == "dual_weight" || key == "a") {
      c.dual_weight = value == "auto" ? -1.0 : parse_double(value, key);
    } else if (key == "target_mode") c.target_mode = target_mode_from_string(value);
    else if (key == "target_ckpt") c.target_ckpt = value;
    else if (key == "student_ckpt") c.student_ckpt = value;
    else if (key == "update_ratio") c.update_ratio = static_cast<int>(parse_int(value, key));
    else if (key == "lambda_g") c.lambda_g = parse_double(value, key);
    else if (key == "lambda_d") c.lambda_d = parse_double(value, key);
    else if (key == "gan_family") c.gan_family = gan_family_from_string(value);
    else if (key == "head_mode") c.head_mode = head_mode_from_string(value);
    else if (key == "gan_reals") {
      if (value == "auto") {
        c.gan_reals_auto = true;
      } else {
        c.gan_reals_auto = false;
        c.gan_reals = gan_reals_from_string(value);
      }
    } else if (key == "fewshot_k") c.fewshot_k = static_cast<int>(parse_int(value, key));
    else if (key == "eval_interval") c.eval_interval = parse_int(value, key);
    else if (key == "eval_samples") c.eval_samples = static_cast<int>(parse_int(value, key));
    else if (key == "coverage_radius") c.coverage_radius = parse_double(value, key);
    else if (key == "ddim_eval_steps") c.ddim_eval_steps = static_cast<int>(parse_int(value, key));
    else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  } catch (const std::invalid_argument& e) {
    if (line_no > 0) {
      throw std::invalid_argument(std::string(e.what()) + " (line " + std::to_string(line_no) + ")");
    }
    throw;
  }
}

/// Flat key=value text; '#' starts a comment, blank lines ignored.
inline TrainConfig parse_config_text(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key=value, got '" + line + "'");
    }
    apply_config_entry(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)),
                       line_no);
  }
  return c;
}

inline TrainConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Materializes auto fields and enforces cross-field rules:
///   - dmd2-style distillation stages pin dual_weight 0, target off, source reals
///   - a disabled target teacher forces dual_weight 0
///   - auto dual_weight takes the benchmark default
inline void resolve_config(TrainConfig& c, double benchmark_dual_weight) {
  if (c.T < 50) throw std::invalid_argument("config: T must be >= 50");
  if (c.nfe < 1 || c.nfe > 4) throw std::invalid_argument("config: nfe must be in [1,4]");
  if (c.batch < 1 || c.pretrain_batch < 1) throw std::invalid_argument("config: batch must be >= 1");
  if (c.iterations < 1 || c.pretrain_iterations < 1 || c.ft_iterations < 1) {
    throw std::invalid_argument("config: iteration budgets must be >= 1");
  }
  if (c.update_ratio < 1) throw std::invalid_argument("config: update_ratio must be >= 1");
  if (c.fewshot_k < 1) throw std::invalid_argument("config: fewshot_k must be >= 1");
  if (c.eval_interval < 1) throw std::invalid_argument("config: eval_interval must be >= 1");
  if (c.eval_samples < 2) throw std::invalid_argument("config: eval_samples must be >= 2");
  if (c.ddim_eval_steps < 1 || c.ddim_eval_steps > c.T) {
    throw std::invalid_argument("config: ddim_eval_steps must be in [1,T]");
  }
  if (!(c.lr > 0.0) || !(c.pretrain_lr > 0.0)) throw std::invalid_argument("config: lr must be > 0");

  if (c.pipeline == PipelineKind::dmd2 || c.pipeline == PipelineKind::dmd2_then_ft) {
    c.dual_weight = 0.0;
    c.target_mode = TargetTeacherMode::off;
    c.gan_reals = GanReals::source;
    c.gan_reals_auto = false;
  }
  if (c.gan_reals_auto) {
    c.gan_reals = GanReals::fewshot;
    c.gan_reals_auto = false;
  }
  if (c.target_mode == TargetTeacherMode::off) {
    c.dual_weight = 0.0;
    c.target_ckpt.clear();
  } else if (c.dual_weight < 0.0) {
    c.dual_weight = benchmark_dual_weight;
  }
  if (c.target_mode == TargetTeacherMode::frozen && c.target_ckpt.empty()) {
    throw std::invalid_argument("config: target_mode frozen requires target_ckpt");
  }
  if (c.pipeline == PipelineKind::ft && !c.student_ckpt.empty()) {
    throw std::invalid_argument("config: student_ckpt does not apply to the ft pipeline");
  }
  if (c.dual_weight < 0.0 || c.dual_weight > 1.0) {
    throw std::invalid_argument("config: dual_weight must be in [0,1]");
  }
  c.resolved = true;
}

/// Canonical text form of a resolved config; field order is frozen.
inline std::string serialize_config(const TrainConfig& c) {
  if (!c.resolved) throw std::logic_error("serialize_config: config not resolved");
  std::ostringstream out;
  out << "pipeline = " << to_string(c.pipeline) << "\n";
  out << "benchmark = " << c.benchmark << "\n";
  out << "seed = " << c.seed << "\n";
  out << "T = " << c.T << "\n";
  out << "nfe = " << c.nfe << "\n";
  out << "hidden = ";
  for (std::size_t i = 0; i < c.hidden.size(); ++i) out << (i ? "," : "") << c.hidden[i];
  out << "\n";
  out << "iterations = " << c.iterations << "\n";
  out << "ft_iterations = " << c.ft_iterations << "\n";
  out << "batch = " << c.batch << "\n";
  out << "lr = " << detail::fmt_double(c.lr) << "\n";
  out << "pretrain_iterations = " << c.pretrain_iterations << "\n";
  out << "pretrain_batch = " << c.pretrain_batch << "\n";
  out << "pretrain_lr = " << detail::fmt_double(c.pretrain_lr) << "\n";
  out << "dual_weight = " << detail::fmt_double(c.dual_weight) << "\n";
  out << "target_mode = " << to_string(c.target_mode) << "\n";
  out << "target_ckpt = " << c.target_ckpt << "\n";
  out << "student_ckpt = " << c.student_ckpt << "\n";
  out << "update_ratio = " << c.update_ratio << "\n";
  out << "lambda_g = " << detail::fmt_double(c.lambda_g) << "\n";
  out << "lambda_d = " << detail::fmt_double(c.lambda_d) << "\n";
  out << "gan_family = " << to_string(c.gan_family) << "\n";
  out << "head_mode = " << to_string(c.head_mode) << "\n";
  out << "gan_reals = " << to_string(c.gan_reals) << "\n";
  out << "fewshot_k = " << c.fewshot_k << "\n";
  out << "eval_interval = " << c.eval_interval << "\n";
  out << "eval_samples = " << c.eval_samples << "\n";
  out << "coverage_radius = " << detail::fmt_double(c.coverage_radius) << "\n";
  out << "ddim_eval_steps = " << c.ddim_eval_steps << "\n";
  return out.str();
}

/// FNV-1a over the canonical text, as 16 hex digits.
inline std::string config_hash(const TrainConfig& c) {
  const std::uint64_t h = detail::fnv1a64(serialize_config(c));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace unidad
