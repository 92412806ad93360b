#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace unidad {

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool stop_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  std::size_t size() const { return data.size(); }

  // Destination for gradient accumulation; null when this node absorbs
  // gradients (stop-gradient leaves).
  double* grad_dest() {
    if (stop_grad) return nullptr;
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad.data();
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

inline std::size_t shape_numel(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int e : s) {
    if (e < 0) throw std::invalid_argument("negative tensor extent in shape " + shape_str(s));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

}  // namespace detail

/// Enables/disables tape recording for the current scope (RAII).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Dense row-major tensor of 64-bit reals with reverse-mode taping.
///
/// A Tensor is a shared handle: copies alias the same storage and tape node.
/// Ops executed while recording is enabled (the default; see NoGradGuard)
/// extend the tape, so a later backward() on a scalar result deposits
/// gradients into every reachable leaf. detach() produces a stop-gradient
/// leaf that backward passes treat as a constant.
class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

  Tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode>()) {
    if (detail::shape_numel(shape) != data.size()) {
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + detail::shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    std::size_t n = detail::shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false) {
    std::size_t n = detail::shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value) { return Tensor({}, {value}); }

  static Tensor matrix(int rows, int cols, std::vector<double> data, bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(data), requires_grad);
  }

  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t size() const { return node_->size(); }
  int extent(int dim) const { return node_->shape.at(static_cast<std::size_t>(dim)); }
  int rows() const { return rank() == 2 ? extent(0) : 1; }
  int cols() const { return rank() == 2 ? extent(1) : static_cast<int>(size()); }

  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& data() { return node_->data; }

  double item() const {
    if (size() != 1) {
      throw std::invalid_argument("item() on tensor of shape " + detail::shape_str(shape()));
    }
    return node_->data[0];
  }

  double at(int i) const { return node_->data.at(static_cast<std::size_t>(i)); }
  double at(int i, int j) const {
    return node_->data.at(static_cast<std::size_t>(i) * static_cast<std::size_t>(cols()) +
                          static_cast<std::size_t>(j));
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool is_stop_grad() const { return node_->stop_grad; }

  /// True when this tensor sits on a tape (was produced while recording).
  bool recorded() const { return static_cast<bool>(node_->backprop) || !node_->parents.empty(); }

  const std::vector<double>& grad() const {
    if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), 0.0);
    return node_->grad;
  }

  void zero_grad() const { node_->grad.assign(node_->data.size(), 0.0); }

  bool grad_is_zero() const {
    for (double g : node_->grad)
      if (g != 0.0) return false;
    return true;
  }

  /// Stop-gradient: a fresh leaf sharing the same values. Backward passes
  /// never write into it and never continue past it.
  Tensor detach() const {
    Tensor t(node_->shape, node_->data, false);
    t.node_->stop_grad = true;
    return t;
  }

  /// Reverse pass from a recorded scalar; accumulates into every reachable
  /// leaf's grad (stop-gradient leaves excluded).
  void backward() const;

  bool all_finite() const {
    for (double v : node_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  friend Tensor make_op_result(std::vector<int> shape, std::vector<double> data,
                               std::vector<Tensor> parents,
                               std::function<void(detail::TensorNode&)> backprop);

  std::shared_ptr<detail::TensorNode> node_;
};

/// Builds an op result; attaches a tape node only while recording is enabled.
inline Tensor make_op_result(std::vector<int> shape, std::vector<double> data,
                             std::vector<Tensor> parents,
                             std::function<void(detail::TensorNode&)> backprop) {
  Tensor out(std::move(shape), std::move(data), false);
  if (grad_enabled()) {
    out.node_->parents.reserve(parents.size());
    for (const Tensor& p : parents) out.node_->parents.push_back(p.node());
    out.node_->backprop = std::move(backprop);
  }
  return out;
}

inline void Tensor::backward() const {
  if (size() != 1) {
    throw std::invalid_argument("backward() requires a scalar loss, got shape " +
                                detail::shape_str(shape()));
  }
  if (!recorded()) {
    throw std::logic_error("backward() on a tensor produced outside recording");
  }

  // Post-order DFS for a topological order; reverse order visits each node
  // after all of its consumers.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorNode* p = node->parents[next++].get();
      if (!seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  if (double* g = node_->grad_dest()) g[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* node = *it;
    if (node->backprop && !node->grad.empty()) node->backprop(*node);
  }
}

// ---------------------------------------------------------------------------
// Tape vocabulary
// ---------------------------------------------------------------------------

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

/// (n,k) x (k,m) -> (n,m)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + detail::shape_str(a.shape()) +
                                " vs " + detail::shape_str(b.shape()));
  }
  const int n = a.extent(0), k = a.extent(1), m = b.extent(1);
  std::vector<double> out(static_cast<std::size_t>(n) * m, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (int i = 0; i < n; ++i) {
    const double* arow = pa + static_cast<std::size_t>(i) * k;
    double* orow = out.data() + static_cast<std::size_t>(i) * m;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = pb + static_cast<std::size_t>(kk) * m;
      for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return make_op_result({n, m}, std::move(out), {a, b}, [n, k, m](detail::TensorNode& self) {
    const double* g = self.grad.data();
    detail::TensorNode& A = *self.parents[0];
    detail::TensorNode& B = *self.parents[1];
    if (double* ga = A.grad_dest()) {
      // dA = dC * B^T
      for (int i = 0; i < n; ++i)
        for (int kk = 0; kk < k; ++kk) {
          double acc = 0.0;
          const double* grow = g + static_cast<std::size_t>(i) * m;
          const double* brow = B.data.data() + static_cast<std::size_t>(kk) * m;
          for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
          ga[static_cast<std::size_t>(i) * k + kk] += acc;
        }
    }
    if (double* gb = B.grad_dest()) {
      // dB = A^T * dC
      for (int i = 0; i < n; ++i) {
        const double* arow = A.data.data() + static_cast<std::size_t>(i) * k;
        const double* grow = g + static_cast<std::size_t>(i) * m;
        for (int kk = 0; kk < k; ++kk) {
          const double av = arow[kk];
          if (av == 0.0) continue;
          double* brow = gb + static_cast<std::size_t>(kk) * m;
          for (int j = 0; j < m; ++j) brow[j] += av * grow[j];
        }
      }
    }
  });
}

/// Elementwise sum; also accepts a rank-1 bias broadcast over rows of a.
inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_op_result(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
      const double* g = self.grad.data();
      for (int side = 0; side < 2; ++side) {
        if (double* gp = self.parents[static_cast<std::size_t>(side)]->grad_dest()) {
          for (std::size_t i = 0; i < self.size(); ++i) gp[i] += g[i];
        }
      }
    });
  }
  if (a.rank() == 2 && b.rank() == 1 && a.extent(1) == b.extent(0)) {
    const int n = a.extent(0), m = a.extent(1);
    std::vector<double> out(a.size());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        out[static_cast<std::size_t>(i) * m + j] =
            a.data()[static_cast<std::size_t>(i) * m + j] + b.data()[static_cast<std::size_t>(j)];
    return make_op_result({n, m}, std::move(out), {a, b}, [n, m](detail::TensorNode& self) {
      const double* g = self.grad.data();
      if (double* ga = self.parents[0]->grad_dest()) {
        for (std::size_t i = 0; i < self.size(); ++i) ga[i] += g[i];
      }
      if (double* gb = self.parents[1]->grad_dest()) {
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j) gb[j] += g[static_cast<std::size_t>(i) * m + j];
      }
    });
  }
  throw std::invalid_argument("add: shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                              detail::shape_str(b.shape()));
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    const double* g = self.grad.data();
    if (double* ga = self.parents[0]->grad_dest())
      for (std::size_t i = 0; i < self.size(); ++i) ga[i] += g[i];
    if (double* gb = self.parents[1]->grad_dest())
      for (std::size_t i = 0; i < self.size(); ++i) gb[i] -= g[i];
  });
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& self) {
    const double* g = self.grad.data();
    detail::TensorNode& A = *self.parents[0];
    detail::TensorNode& B = *self.parents[1];
    if (double* ga = A.grad_dest())
      for (std::size_t i = 0; i < self.size(); ++i) ga[i] += g[i] * B.data[i];
    if (double* gb = B.grad_dest())
      for (std::size_t i = 0; i < self.size(); ++i) gb[i] += g[i] * A.data[i];
  });
}

/// k*a + c, elementwise.
inline Tensor affine(const Tensor& a, double k, double c = 0.0) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * a.data()[i] + c;
  return make_op_result(a.shape(), std::move(out), {a}, [k](detail::TensorNode& self) {
    const double* g = self.grad.data();
    if (double* ga = self.parents[0]->grad_dest())
      for (std::size_t i = 0; i < self.size(); ++i) ga[i] += k * g[i];
  });
}

inline Tensor scale(const Tensor& a, double k) { return affine(a, k, 0.0); }

namespace detail {

template <typename Fwd, typename Dfn>
Tensor unary_op(const Tensor& a, Fwd fwd, Dfn dfn) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i]);
  // dfn(x, y) is the local derivative given input x and output y.
  return make_op_result(a.shape(), std::move(out), {a}, [dfn](detail::TensorNode& self) {
    const double* g = self.grad.data();
    detail::TensorNode& A = *self.parents[0];
    if (double* ga = A.grad_dest())
      for (std::size_t i = 0; i < self.size(); ++i) ga[i] += g[i] * dfn(A.data[i], self.data[i]);
  });
}

}  // namespace detail

inline Tensor tanh(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(
      a,
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor log(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// log(1 + e^x), evaluated without overflow.
inline Tensor softplus(const Tensor& a) {
  return detail::unary_op(
      a,
      [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_op_result({}, {s}, {a}, [](detail::TensorNode& self) {
    const double g = self.grad[0];
    if (double* ga = self.parents[0]->grad_dest())
      for (std::size_t i = 0; i < self.parents[0]->size(); ++i) ga[i] += g;
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean of empty tensor");
  double s = 0.0;
  for (double v : a.data()) s += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  return make_op_result({}, {s * inv}, {a}, [inv](detail::TensorNode& self) {
    const double g = self.grad[0] * inv;
    if (double* ga = self.parents[0]->grad_dest())
      for (std::size_t i = 0; i < self.parents[0]->size(); ++i) ga[i] += g;
  });
}

/// Sum of squared entries.
inline Tensor squared_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return make_op_result({}, {s}, {a}, [](detail::TensorNode& self) {
    const double g = self.grad[0];
    detail::TensorNode& A = *self.parents[0];
    if (double* ga = A.grad_dest())
      for (std::size_t i = 0; i < A.size(); ++i) ga[i] += 2.0 * A.data[i] * g;
  });
}

/// Sum of absolute entries; subgradient 0 at the origin.
inline Tensor l1_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += std::abs(v);
  return make_op_result({}, {s}, {a}, [](detail::TensorNode& self) {
    const double g = self.grad[0];
    detail::TensorNode& A = *self.parents[0];
    if (double* ga = A.grad_dest())
      for (std::size_t i = 0; i < A.size(); ++i)
        ga[i] += (A.data[i] > 0.0 ? 1.0 : (A.data[i] < 0.0 ? -1.0 : 0.0)) * g;
  });
}

/// (n,p) ++ (n,q) -> (n,p+q) along columns.
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(0) != b.extent(0)) {
    throw std::invalid_argument("concat_cols: incompatible shapes " +
                                detail::shape_str(a.shape()) + " vs " +
                                detail::shape_str(b.shape()));
  }
  const int n = a.extent(0), p = a.extent(1), q = b.extent(1);
  std::vector<double> out(static_cast<std::size_t>(n) * (p + q));
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + static_cast<std::size_t>(i) * p, p,
                out.data() + static_cast<std::size_t>(i) * (p + q));
    std::copy_n(b.data().data() + static_cast<std::size_t>(i) * q, q,
                out.data() + static_cast<std::size_t>(i) * (p + q) + p);
  }
  return make_op_result({n, p + q}, std::move(out), {a, b}, [n, p, q](detail::TensorNode& self) {
    const double* g = self.grad.data();
    if (double* ga = self.parents[0]->grad_dest()) {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j)
          ga[static_cast<std::size_t>(i) * p + j] += g[static_cast<std::size_t>(i) * (p + q) + j];
    }
    if (double* gb = self.parents[1]->grad_dest()) {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < q; ++j)
          gb[static_cast<std::size_t>(i) * q + j] +=
              g[static_cast<std::size_t>(i) * (p + q) + p + j];
    }
  });
}

/// (m) -> (n,m): repeats a row vector.
inline Tensor broadcast_rows(const Tensor& v, int n) {
  if (v.rank() != 1) {
    throw std::invalid_argument("broadcast_rows: expected rank-1, got " +
                                detail::shape_str(v.shape()));
  }
  const int m = v.extent(0);
  std::vector<double> out(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    std::copy_n(v.data().data(), m, out.data() + static_cast<std::size_t>(i) * m);
  return make_op_result({n, m}, std::move(out), {v}, [n, m](detail::TensorNode& self) {
    const double* g = self.grad.data();
    if (double* gv = self.parents[0]->grad_dest()) {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) gv[j] += g[static_cast<std::size_t>(i) * m + j];
    }
  });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double k, const Tensor& a) { return scale(a, k); }

}  // namespace unidad
