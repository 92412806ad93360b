#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "unidad/rng.hpp"
#include "unidad/tensor.hpp"

namespace unidad {

/// Seed for everything a benchmark pins down (held-out pools, few-shot picks).
/// Independent from run seeds: every run of a benchmark sees identical data.
inline constexpr std::uint64_t kDatasetSeed = 0xDA7A5EEDULL;

enum class DistributionKind { gaussian_ring, two_moons, grid, single_gaussian, mixture };

inline const char* to_string(DistributionKind k) {
  switch (k) {
    case DistributionKind::gaussian_ring: return "gaussian-ring";
    case DistributionKind::two_moons: return "two-moons";
    case DistributionKind::grid: return "grid";
    case DistributionKind::single_gaussian: return "single-gaussian";
    case DistributionKind::mixture: return "mixture";
  }
  throw std::logic_error("unknown distribution kind");
}

/// A synthetic 2-D distribution. Ring/grid/single/mixture kinds are isotropic
/// Gaussian mixtures with closed-form densities; two-moons is sample-only.
struct DistributionSpec {
  DistributionKind kind = DistributionKind::single_gaussian;
  int modes = 1;         // ring: mode count; grid: side length
  double radius = 1.0;   // ring: ring radius; grid: spacing; two-moons: overall scale
  double scale = 0.1;    // per-mode standard deviation (also two-moons noise)
  std::vector<std::array<double, 2>> explicit_centers;  // mixture kind only

  std::vector<std::array<double, 2>> centers() const {
    switch (kind) {
      case DistributionKind::gaussian_ring: {
        std::vector<std::array<double, 2>> c;
        for (int k = 0; k < modes; ++k) {
          const double th = 2.0 * std::numbers::pi * k / modes;
          c.push_back({radius * std::cos(th), radius * std::sin(th)});
        }
        return c;
      }
      case DistributionKind::grid: {
        std::vector<std::array<double, 2>> c;
        const double off = (modes - 1) / 2.0;
        for (int i = 0; i < modes; ++i)
          for (int j = 0; j < modes; ++j)
            c.push_back({radius * (i - off), radius * (j - off)});
        return c;
      }
      case DistributionKind::single_gaussian:
        return {{0.0, 0.0}};
      case DistributionKind::mixture:
        return explicit_centers;
      case DistributionKind::two_moons:
        throw std::invalid_argument("two-moons has no mixture centers");
    }
    throw std::logic_error("unknown distribution kind");
  }
};

inline DistributionSpec ring_spec(int modes, double radius, double scale) {
  return DistributionSpec{DistributionKind::gaussian_ring, modes, radius, scale, {}};
}

inline DistributionSpec mixture_spec(std::vector<std::array<double, 2>> centers, double scale) {
  if (centers.empty()) throw std::invalid_argument("mixture needs at least one center");
  return DistributionSpec{DistributionKind::mixture, static_cast<int>(centers.size()), 0.0, scale,
                          std::move(centers)};
}

/// n draws as an (n,2) tensor.
inline Tensor sample_distribution(const DistributionSpec& spec, int n, RngStream& rng) {
  if (n < 0) throw std::invalid_argument("sample_distribution: negative count");
  std::vector<double> out(static_cast<std::size_t>(n) * 2);
  if (spec.kind == DistributionKind::two_moons) {
    for (int i = 0; i < n; ++i) {
      const bool upper = rng.uniform() < 0.5;
      const double th = std::numbers::pi * rng.uniform();
      double x = std::cos(th), y = std::sin(th);
      if (!upper) {
        x = 1.0 - x;
        y = 0.5 - y;
      }
      out[static_cast<std::size_t>(i) * 2] = spec.radius * (x - 0.5) + spec.scale * rng.normal();
      out[static_cast<std::size_t>(i) * 2 + 1] = spec.radius * (y - 0.25) + spec.scale * rng.normal();
    }
  } else {
    const std::vector<std::array<double, 2>> cs = spec.centers();
    for (int i = 0; i < n; ++i) {
      const std::array<double, 2>& c =
          cs[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(cs.size()) - 1))];
      out[static_cast<std::size_t>(i) * 2] = c[0] + spec.scale * rng.normal();
      out[static_cast<std::size_t>(i) * 2 + 1] = c[1] + spec.scale * rng.normal();
    }
  }
  return Tensor({n, 2}, std::move(out));
}

/// Mixture log-density at one point; exact via log-sum-exp.
inline double log_density(const DistributionSpec& spec, double x, double y) {
  if (spec.kind == DistributionKind::two_moons) {
    throw std::invalid_argument("two-moons has no closed-form density");
  }
  const std::vector<std::array<double, 2>> cs = spec.centers();
  const double inv2s2 = 1.0 / (2.0 * spec.scale * spec.scale);
  double max_e = -std::numeric_limits<double>::infinity();
  std::vector<double> es(cs.size());
  for (std::size_t k = 0; k < cs.size(); ++k) {
    const double dx = x - cs[k][0], dy = y - cs[k][1];
    es[k] = -(dx * dx + dy * dy) * inv2s2;
    max_e = std::max(max_e, es[k]);
  }
  double acc = 0.0;
  for (double e : es) acc += std::exp(e - max_e);
  const double log_norm = -std::log(2.0 * std::numbers::pi * spec.scale * spec.scale *
                                    static_cast<double>(cs.size()));
  return max_e + std::log(acc) + log_norm;
}

/// A pinned few-shot adaptation set.
struct FewShotSet {
  int k = 0;
  Tensor exemplars;  // (k,2)
  std::uint64_t selection_seed = 0;
};

/// A source/target pair with a fixed held-out pool of target samples.
struct Benchmark {
  std::string name;
  DistributionSpec source;
  DistributionSpec target;
  Tensor held_out;           // (2000,2) target draws
  double default_dual_weight = 0.25;
};

inline constexpr int kHeldOutSize = 2000;

/// "close": source is an 8-mode ring (radius 4, sd 0.3); the target keeps 3
/// adjacent ring modes at a tighter sd 0.15. "distant": same source; the
/// target is a 2x2 square of modes (sd 0.3) pushed out to radius 6, each
/// corner angle-aligned with a source mode and exactly 2.0 away from it.
/// Held-out pools and few-shot picks are seeded by the benchmark name alone.
/// Every held-out sample is checked to carry target density above 1e-6.
inline Benchmark make_benchmark(const std::string& name) {
  Benchmark b;
  b.name = name;
  b.source = ring_spec(8, 4.0, 0.3);
  if (name == "close") {
    const std::vector<std::array<double, 2>> ring = b.source.centers();
    b.target = mixture_spec({ring[0], ring[1], ring[2]}, 0.15);
    b.default_dual_weight = 0.25;
  } else if (name == "distant") {
    std::vector<std::array<double, 2>> corners;
    for (int k = 0; k < 4; ++k) {
      const double th = 2.0 * std::numbers::pi * (k + 0.5) / 4.0;
      corners.push_back({6.0 * std::cos(th), 6.0 * std::sin(th)});
    }
    b.target = mixture_spec(std::move(corners), 0.3);
    b.default_dual_weight = 0.75;
  } else {
    throw std::invalid_argument("unknown benchmark '" + name + "' (expected close or distant)");
  }
  RunRng data_rng(kDatasetSeed);
  b.held_out = sample_distribution(b.target, kHeldOutSize, data_rng.stream(name + "/held_out"));
  const double floor_log = std::log(1e-6);
  for (int i = 0; i < kHeldOutSize; ++i) {
    if (log_density(b.target, b.held_out.at(i, 0), b.held_out.at(i, 1)) < floor_log) {
      throw std::runtime_error("benchmark '" + name + "': held-out sample " + std::to_string(i) +
                               " fell below the density floor");
    }
  }
  return b;
}

/// Exemplars depend only on (benchmark, k), never on the run seed.
inline FewShotSet make_fewshot(const Benchmark& b, int k) {
  if (k < 1) throw std::invalid_argument("few-shot k must be >= 1, got " + std::to_string(k));
  RunRng data_rng(kDatasetSeed);
  RngStream& s = data_rng.stream(b.name + "/fewshot_k" + std::to_string(k));
  FewShotSet fs;
  fs.k = k;
  fs.selection_seed = s.key();
  fs.exemplars = sample_distribution(b.target, k, s);
  return fs;
}

/// Round-trippable CSV: header "x0,x1", one exemplar per row, 17 significant
/// digits so values re-read bit-identically.
inline void export_fewshot_csv(const FewShotSet& fs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "x0,x1\n";
  char buf[64];
  for (int i = 0; i < fs.k; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", fs.exemplars.at(i, 0), fs.exemplars.at(i, 1));
    out << buf;
  }
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline Tensor import_fewshot_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line) || line != "x0,x1") {
    throw std::runtime_error("'" + path + "': expected header 'x0,x1', got '" + line + "'");
  }
  std::vector<double> vals;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos) {
      throw std::runtime_error("'" + path + "' line " + std::to_string(row) + ": missing comma");
    }
    try {
      vals.push_back(std::stod(line.substr(0, comma)));
      vals.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw std::runtime_error("'" + path + "' line " + std::to_string(row) + ": bad number");
    }
  }
  const int n = static_cast<int>(vals.size() / 2);
  return Tensor({n, 2}, std::move(vals));
}

}  // namespace unidad
