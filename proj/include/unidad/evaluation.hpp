#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "unidad/tensor.hpp"

namespace unidad {

namespace detail {

inline void check_point_set(const Tensor& a, const char* who) {
  if (a.rank() != 2 || a.extent(0) < 1) {
    throw std::invalid_argument(std::string(who) + ": expected a non-empty (n,d) set, got " +
                                shape_str(a.shape()));
  }
}

inline void check_same_dim(const Tensor& a, const Tensor& b, const char* who) {
  check_point_set(a, who);
  check_point_set(b, who);
  if (a.extent(1) != b.extent(1)) {
    throw std::invalid_argument(std::string(who) + ": dimension mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline double sq_dist(const Tensor& a, int i, const Tensor& b, int j) {
  double s = 0.0;
  for (int k = 0; k < a.extent(1); ++k) {
    const double d = a.at(i, k) - b.at(j, k);
    s += d * d;
  }
  return s;
}

/// Exact min-cost assignment on a square matrix (shortest augmenting paths
/// with potentials, O(n^3)). Returns col -> row.
inline std::vector<int> solve_assignment(const std::vector<double>& cost, int n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(n) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] -
                           u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> col_to_row(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j) col_to_row[static_cast<std::size_t>(j - 1)] = p[static_cast<std::size_t>(j)] - 1;
  return col_to_row;
}

}  // namespace detail

inline constexpr int kExactW2Limit = 512;

/// Exact 2-Wasserstein distance between equal-size empirical measures:
/// sqrt of the mean matched squared distance under the optimal assignment.
inline double wasserstein2_exact(const Tensor& a, const Tensor& b) {
  detail::check_same_dim(a, b, "wasserstein2_exact");
  const int n = a.extent(0);
  if (b.extent(0) != n) {
    throw std::invalid_argument("wasserstein2_exact: needs equal sizes, got " +
                                std::to_string(n) + " vs " + std::to_string(b.extent(0)));
  }
  std::vector<double> cost(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      cost[static_cast<std::size_t>(i) * n + j] = detail::sq_dist(a, i, b, j);
  const std::vector<int> col_to_row = detail::solve_assignment(cost, n);
  double total = 0.0;
  for (int j = 0; j < n; ++j)
    total += cost[static_cast<std::size_t>(col_to_row[static_cast<std::size_t>(j)]) * n + j];
  return std::sqrt(total / n);
}

/// Debiased entropic estimate for large or unequal sets: Sinkhorn divergence
/// S(a,b) = W_e(a,b) - (W_e(a,a) + W_e(b,b))/2 on squared-distance cost,
/// log-domain, fixed regularization and iteration count; returns sqrt of the
/// clamped divergence.
inline double wasserstein2_entropic(const Tensor& a, const Tensor& b, double reg = 0.01,
                                    int iterations = 500) {
  detail::check_same_dim(a, b, "wasserstein2_entropic");
  const auto transport_cost = [reg, iterations](const Tensor& x, const Tensor& y) {
    const int n = x.extent(0), m = y.extent(0);
    std::vector<double> cost(static_cast<std::size_t>(n) * m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        cost[static_cast<std::size_t>(i) * m + j] = detail::sq_dist(x, i, y, j);
    const double la = -std::log(static_cast<double>(n));
    const double lb = -std::log(static_cast<double>(m));
    std::vector<double> f(static_cast<std::size_t>(n), 0.0);
    std::vector<double> g(static_cast<std::size_t>(m), 0.0);
    std::vector<double> scratch(static_cast<std::size_t>(std::max(n, m)));
    for (int it = 0; it < iterations; ++it) {
      for (int i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < m; ++j) {
          scratch[static_cast<std::size_t>(j)] =
              (g[static_cast<std::size_t>(j)] - cost[static_cast<std::size_t>(i) * m + j]) / reg + lb;
          mx = std::max(mx, scratch[static_cast<std::size_t>(j)]);
        }
        double acc = 0.0;
        for (int j = 0; j < m; ++j) acc += std::exp(scratch[static_cast<std::size_t>(j)] - mx);
        f[static_cast<std::size_t>(i)] = -reg * (mx + std::log(acc));
      }
      for (int j = 0; j < m; ++j) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
          scratch[static_cast<std::size_t>(i)] =
              (f[static_cast<std::size_t>(i)] - cost[static_cast<std::size_t>(i) * m + j]) / reg + la;
          mx = std::max(mx, scratch[static_cast<std::size_t>(i)]);
        }
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += std::exp(scratch[static_cast<std::size_t>(i)] - mx);
        g[static_cast<std::size_t>(j)] = -reg * (mx + std::log(acc));
      }
    }
    double total = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        const double c = cost[static_cast<std::size_t>(i) * m + j];
        const double lp = (f[static_cast<std::size_t>(i)] + g[static_cast<std::size_t>(j)] - c) / reg + la + lb;
        total += std::exp(lp) * c;
      }
    return total;
  };
  const double div = transport_cost(a, b) - 0.5 * (transport_cost(a, a) + transport_cost(b, b));
  return std::sqrt(std::max(div, 0.0));
}

/// Dispatches to the exact solver for equal sizes up to kExactW2Limit, else
/// to the entropic estimate.
inline double wasserstein2(const Tensor& a, const Tensor& b) {
  detail::check_same_dim(a, b, "wasserstein2");
  if (a.extent(0) == b.extent(0) && a.extent(0) <= kExactW2Limit) {
    return wasserstein2_exact(a, b);
  }
  return wasserstein2_entropic(a, b);
}

struct DiversityResult {
  double value = 0.0;
  /// True when no cluster held two or more generations.
  bool degenerate = false;
};

/// Clusters generations by nearest exemplar, then averages the mean pairwise
/// distance inside each non-empty cluster (singletons contribute 0).
inline DiversityResult intra_diversity(const Tensor& gen, const Tensor& exemplars) {
  detail::check_same_dim(gen, exemplars, "intra_diversity");
  const int n = gen.extent(0), k = exemplars.extent(0);
  std::vector<std::vector<int>> clusters(static_cast<std::size_t>(k));
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_d = detail::sq_dist(gen, i, exemplars, 0);
    for (int j = 1; j < k; ++j) {
      const double d = detail::sq_dist(gen, i, exemplars, j);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    clusters[static_cast<std::size_t>(best)].push_back(i);
  }
  double total = 0.0;
  int non_empty = 0;
  bool any_pair = false;
  for (const std::vector<int>& c : clusters) {
    if (c.empty()) continue;
    ++non_empty;
    if (c.size() < 2) continue;
    any_pair = true;
    double acc = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i)
      for (std::size_t j = i + 1; j < c.size(); ++j)
        acc += std::sqrt(detail::sq_dist(gen, c[i], gen, c[j]));
    total += acc / (static_cast<double>(c.size()) * (c.size() - 1) / 2.0);
  }
  DiversityResult r;
  r.degenerate = !any_pair;
  r.value = non_empty > 0 ? total / non_empty : 0.0;
  return r;
}

/// Fraction of centers with at least one generation within `radius`.
inline double mode_coverage(const Tensor& gen, const std::vector<std::array<double, 2>>& centers,
                            double radius) {
  detail::check_point_set(gen, "mode_coverage");
  if (gen.extent(1) != 2) {
    throw std::invalid_argument("mode_coverage: expected 2-D points, got " +
                                detail::shape_str(gen.shape()));
  }
  if (centers.empty()) throw std::invalid_argument("mode_coverage: no centers");
  const double r2 = radius * radius;
  int hit = 0;
  for (const std::array<double, 2>& c : centers) {
    for (int i = 0; i < gen.extent(0); ++i) {
      const double dx = gen.at(i, 0) - c[0], dy = gen.at(i, 1) - c[1];
      if (dx * dx + dy * dy <= r2) {
        ++hit;
        break;
      }
    }
  }
  return static_cast<double>(hit) / static_cast<double>(centers.size());
}

/// Mean distance from each generation to its nearest exemplar; near zero means
/// the model replays the few-shot set.
inline double memorization(const Tensor& gen, const Tensor& exemplars) {
  detail::check_same_dim(gen, exemplars, "memorization");
  double acc = 0.0;
  for (int i = 0; i < gen.extent(0); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < exemplars.extent(0); ++j) {
      best = std::min(best, detail::sq_dist(gen, i, exemplars, j));
    }
    acc += std::sqrt(best);
  }
  return acc / gen.extent(0);
}

/// One evaluation snapshot of a generator.
struct MetricsReport {
  double w2_to_target = 0.0;
  double w2_to_source = 0.0;
  double diversity = 0.0;
  bool diversity_degenerate = false;
  double coverage = 0.0;
  double memorization = 0.0;
};

}  // namespace unidad
