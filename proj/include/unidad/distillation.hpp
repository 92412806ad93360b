#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "unidad/diffusion.hpp"
#include "unidad/network.hpp"
#include "unidad/rng.hpp"
#include "unidad/tensor.hpp"

namespace unidad {

/// Few-step generator. An x-predictor over [x_t || time features] applied at a
/// fixed descending timestep ladder, re-noising between rungs.
class StudentGenerator {
 public:
  StudentGenerator() = default;

  StudentGenerator(MlpNetwork net, int data_dim, int T, int nfe)
      : net_(std::move(net)), data_dim_(data_dim), T_(T), nfe_(nfe) {
    if (nfe < 1 || nfe > 4) {
      throw std::invalid_argument("student nfe must be in [1,4], got " + std::to_string(nfe));
    }
    if (net_.input_width() != data_dim + kTimeEmbedDim || net_.output_width() != data_dim) {
      throw std::invalid_argument("student network widths do not fit data_dim " +
                                  std::to_string(data_dim));
    }
    ladder_ = make_ladder(T, nfe);
  }

  /// Descending rungs floor(T*(nfe-i)/nfe), i = 0..nfe-1.
  static std::vector<int> make_ladder(int T, int nfe) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(nfe));
    for (int i = 0; i < nfe; ++i) {
      out.push_back(static_cast<int>(static_cast<std::int64_t>(T) * (nfe - i) / nfe));
    }
    return out;
  }

  /// Initializes from a noise-prediction teacher (same body shape).
  static StudentGenerator from_teacher(const Denoiser& teacher, int nfe) {
    return StudentGenerator(teacher.net().clone(), teacher.data_dim(), teacher.T(), nfe);
  }

  /// One generator application: predicts clean data from (x_t, t).
  Tensor apply(const Tensor& x_t, int t, ParamMode pm = ParamMode::train) const {
    const std::vector<int> ts(static_cast<std::size_t>(x_t.extent(0)), t);
    return apply(x_t, ts, pm);
  }

  /// Generator application with one timestep per row.
  Tensor apply(const Tensor& x_t, std::span<const int> ts, ParamMode pm = ParamMode::train) const {
    if (x_t.rank() != 2 || x_t.extent(1) != data_dim_) {
      throw std::invalid_argument("student expects (n," + std::to_string(data_dim_) +
                                  ") input, got " + detail::shape_str(x_t.shape()));
    }
    if (static_cast<int>(ts.size()) != x_t.extent(0)) {
      throw std::invalid_argument("student: " + std::to_string(ts.size()) + " timesteps for " +
                                  std::to_string(x_t.extent(0)) + " rows");
    }
    return net_.forward(concat_cols(x_t, time_embedding_rows(ts, T_)), pm);
  }

  MlpNetwork& net() { return net_; }
  const MlpNetwork& net() const { return net_; }
  const std::vector<int>& ladder() const { return ladder_; }
  int nfe() const { return nfe_; }
  int data_dim() const { return data_dim_; }
  int T() const { return T_; }

 private:
  MlpNetwork net_;
  std::vector<int> ladder_;
  int data_dim_ = 0;
  int T_ = 0;
  int nfe_ = 1;
};

/// Runs the full ladder: starts from z at the top rung, re-noises the running
/// estimate with fresh noise between rungs, returns the final estimate with
/// gradients flowing through every generator application. Invokes the
/// generator exactly nfe times (counted into *calls when given).
inline Tensor student_generate(const StudentGenerator& g, const NoiseSchedule& s, const Tensor& z,
                               RngStream& renoise, ParamMode pm = ParamMode::train,
                               int* calls = nullptr) {
  if (z.rank() != 2 || z.extent(1) != g.data_dim()) {
    throw std::invalid_argument("student_generate: latent shape " + detail::shape_str(z.shape()) +
                                " does not match data_dim " + std::to_string(g.data_dim()));
  }
  const std::vector<int>& ladder = g.ladder();
  Tensor x_t = Tensor(z.shape(), z.data());
  Tensor out;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    out = g.apply(x_t, ladder[i], pm);
    if (calls) ++*calls;
    if (i + 1 < ladder.size()) {
      std::vector<double> noise(z.size());
      renoise.fill_normal(noise);
      x_t = q_sample(s, out, ladder[i + 1], Tensor(z.shape(), std::move(noise)));
    }
  }
  return out;
}

/// N(mean, I) with a closed-form noise prediction under the VP schedule:
/// eps*(x_t, t) = sigma_t (x_t - alpha_t mean), which is -sigma_t times the
/// score of the noised marginal.
struct AnalyticGaussianScore {
  std::vector<double> mean;
};

inline Tensor analytic_eps(const AnalyticGaussianScore& g, const NoiseSchedule& s,
                           const Tensor& x_t, int t) {
  s.check_t(t);
  if (x_t.rank() != 2 || x_t.extent(1) != static_cast<int>(g.mean.size())) {
    throw std::invalid_argument("analytic_eps: input shape " + detail::shape_str(x_t.shape()) +
                                " does not match mean dimension " + std::to_string(g.mean.size()));
  }
  const int n = x_t.extent(0), d = x_t.extent(1);
  const double a = s.alpha[static_cast<std::size_t>(t)];
  const double sg = s.sigma[static_cast<std::size_t>(t)];
  std::vector<double> out(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out[static_cast<std::size_t>(i) * d + j] = sg * (x_t.at(i, j) - a * g.mean[static_cast<std::size_t>(j)]);
  return Tensor({n, d}, std::move(out));
}

/// Per-sample weight sigma_t * d / max(||eps - eps_fk||_1, 1e-8): normalizes
/// the push by how far the fake teacher's prediction sits from the drawn noise.
inline std::vector<double> omega(const NoiseSchedule& s, int t, const Tensor& eps_true,
                                 const Tensor& eps_fk_pred) {
  s.check_t(t);
  detail::check_same_shape(eps_true, eps_fk_pred, "omega");
  const int n = eps_true.extent(0), d = eps_true.extent(1);
  const double sg = s.sigma[static_cast<std::size_t>(t)];
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double l1 = 0.0;
    for (int j = 0; j < d; ++j) l1 += std::abs(eps_true.at(i, j) - eps_fk_pred.at(i, j));
    w[static_cast<std::size_t>(i)] = sg * static_cast<double>(d) / std::max(l1, 1e-8);
  }
  return w;
}

/// A distribution-matching push for one batch. Holds plain values only; the
/// teacher and fake predictions it came from are already cut from the tape, so
/// no gradient can be requested through a direction.
struct DmdDirection {
  enum class Tag { source, target };
  Tag tag = Tag::source;
  int batch = 0;
  int dim = 0;
  std::vector<double> d;      // (batch*dim) row-major displacement
  std::vector<double> omega;  // per-sample weight used to build d
};

namespace detail {

using EpsFn = std::function<Tensor(const Tensor&, int)>;

inline DmdDirection dmd_direction_impl(const EpsFn& teacher, const char* teacher_name,
                                       const EpsFn& fake, const NoiseSchedule& s, const Tensor& x,
                                       int t, const Tensor& eps, DmdDirection::Tag tag) {
  s.check_t(t);
  check_same_shape(x, eps, "dmd_direction");
  NoGradGuard ng;
  const int n = x.extent(0), d = x.extent(1);
  const Tensor x_t = q_sample(s, Tensor(x.shape(), x.data()), t, Tensor(eps.shape(), eps.data()));
  const Tensor eps_teacher = teacher(x_t, t);
  const Tensor eps_fk = fake(x_t, t);
  if (!eps_teacher.all_finite()) {
    throw std::runtime_error(std::string("dmd_direction: non-finite '") + teacher_name +
                             "' teacher prediction at t=" + std::to_string(t));
  }
  if (!eps_fk.all_finite()) {
    throw std::runtime_error("dmd_direction: non-finite 'fake' teacher prediction at t=" +
                             std::to_string(t));
  }
  DmdDirection dir;
  dir.tag = tag;
  dir.batch = n;
  dir.dim = d;
  dir.omega = omega(s, t, Tensor(eps.shape(), eps.data()), eps_fk);
  dir.d.resize(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      dir.d[static_cast<std::size_t>(i) * d + j] =
          dir.omega[static_cast<std::size_t>(i)] * (eps_fk.at(i, j) - eps_teacher.at(i, j));
  return dir;
}

}  // namespace detail

inline DmdDirection dmd_direction(const Denoiser& teacher, const Denoiser& fake,
                                  const NoiseSchedule& s, const Tensor& x, int t,
                                  const Tensor& eps) {
  const DmdDirection::Tag tag =
      teacher.role() == DenoiserRole::target ? DmdDirection::Tag::target : DmdDirection::Tag::source;
  return detail::dmd_direction_impl(
      [&](const Tensor& xt, int tt) { return teacher.predict(xt, tt, ParamMode::frozen); },
      to_string(teacher.role()),
      [&](const Tensor& xt, int tt) { return fake.predict(xt, tt, ParamMode::frozen); }, s, x, t,
      eps, tag);
}

/// Closed-form variant used by diagnostics and convergence drills.
inline DmdDirection dmd_direction(const AnalyticGaussianScore& teacher,
                                  const AnalyticGaussianScore& fake, const NoiseSchedule& s,
                                  const Tensor& x, int t, const Tensor& eps,
                                  DmdDirection::Tag tag = DmdDirection::Tag::source) {
  return detail::dmd_direction_impl(
      [&](const Tensor& xt, int tt) { return analytic_eps(teacher, s, xt, tt); }, "analytic",
      [&](const Tensor& xt, int tt) { return analytic_eps(fake, s, xt, tt); }, s, x, t, eps, tag);
}

/// Convex blend (1-a) src + a trg of two pushes over the same batch.
inline DmdDirection dual_dmd_direction(const DmdDirection& src, const DmdDirection& trg, double a) {
  if (a < 0.0 || a > 1.0) {
    throw std::invalid_argument("dual_dmd_direction: blend weight " + std::to_string(a) +
                                " outside [0,1]");
  }
  if (src.batch != trg.batch || src.dim != trg.dim) {
    throw std::invalid_argument("dual_dmd_direction: mismatched batches (" +
                                std::to_string(src.batch) + "x" + std::to_string(src.dim) +
                                " vs " + std::to_string(trg.batch) + "x" +
                                std::to_string(trg.dim) + ")");
  }
  DmdDirection out;
  out.tag = DmdDirection::Tag::source;
  out.batch = src.batch;
  out.dim = src.dim;
  out.d.resize(src.d.size());
  for (std::size_t i = 0; i < src.d.size(); ++i) out.d[i] = (1.0 - a) * src.d[i] + a * trg.d[i];
  out.omega.resize(src.omega.size());
  for (std::size_t i = 0; i < src.omega.size(); ++i)
    out.omega[i] = (1.0 - a) * src.omega[i] + a * trg.omega[i];
  return out;
}

/// 0.5 * mean_batch ||x - stopgrad(x + d)||^2. Its gradient in x is exactly
/// -d/batch, so one descent step moves each sample along its push.
inline Tensor dmd_surrogate_loss(const Tensor& x, const DmdDirection& dir) {
  if (x.rank() != 2 || x.extent(0) != dir.batch || x.extent(1) != dir.dim) {
    throw std::invalid_argument("dmd_surrogate_loss: output shape " +
                                detail::shape_str(x.shape()) + " does not match direction " +
                                std::to_string(dir.batch) + "x" + std::to_string(dir.dim));
  }
  std::vector<double> target(x.size());
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = x.data()[i] + dir.d[i];
  const Tensor sg_target = Tensor(x.shape(), std::move(target));
  return scale(squared_norm(sub(x, sg_target)), 0.5 / dir.batch);
}

}  // namespace unidad
