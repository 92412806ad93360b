#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace unidad {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// Counter-based generator: draw i is a pure function of (key, i), so state
/// serializes as a single counter and replay is exact from any point.
class RngStream {
 public:
  RngStream() : key_(0) {}
  explicit RngStream(std::uint64_t key) : key_(key) {}

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

  std::uint64_t next_u64() { return detail::splitmix64(key_ + 0x9E3779B97F4A7C15ULL * counter_++); }

  /// Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [lo, hi], both inclusive.
  int uniform_int(int lo, int hi) {
    if (lo > hi) throw std::invalid_argument("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  /// Standard normal via Box-Muller; consumes exactly two uniforms, keeps no
  /// cached spare (counter alone captures the state).
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  void fill_normal(std::span<double> out) {
    for (double& v : out) v = normal();
  }

  void fill_uniform(std::span<double> out) {
    for (double& v : out) v = uniform();
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// All randomness of a run, split into named streams so that consumers cannot
/// perturb each other's sequences. Stream keys derive from (seed, name);
/// creation order never matters.
class RunRng {
 public:
  explicit RunRng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  RngStream& stream(const std::string& name) {
    auto it = streams_.find(name);
    if (it == streams_.end()) {
      it = streams_.emplace(name, RngStream(detail::splitmix64(seed_ ^ detail::fnv1a64(name))))
               .first;
    }
    return it->second;
  }

  /// (name, counter) pairs in name order; enough to restore exactly.
  std::vector<std::pair<std::string, std::uint64_t>> state() const {
    std::vector<std::pair<std::string, std::uint64_t>> out;
    out.reserve(streams_.size());
    for (const auto& [name, s] : streams_) out.emplace_back(name, s.counter());
    return out;
  }

  void restore(std::uint64_t seed, const std::vector<std::pair<std::string, std::uint64_t>>& st) {
    seed_ = seed;
    streams_.clear();
    for (const auto& [name, counter] : st) stream(name).set_counter(counter);
  }

 private:
  std::uint64_t seed_;
  std::map<std::string, RngStream> streams_;
};

}  // namespace unidad
