#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "unidad/network.hpp"
#include "unidad/rng.hpp"
#include "unidad/tensor.hpp"

namespace unidad {

/// Variance-preserving schedule: alpha[t]^2 + sigma[t]^2 == 1 for all t.
/// Index 0 is the clean endpoint (alpha 1, sigma 0).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha;  // size T+1, strictly decreasing
  std::vector<double> sigma;  // size T+1, strictly increasing

  void check_t(int t) const {
    if (t < 0 || t > T) {
      throw std::invalid_argument("timestep " + std::to_string(t) + " outside [0," +
                                  std::to_string(T) + "]");
    }
  }
};

/// Linear-beta schedule, beta ramping 1e-4 -> 2e-2 across T steps.
inline NoiseSchedule build_schedule(int T) {
  if (T < 1) throw std::invalid_argument("build_schedule: T must be >= 1, got " + std::to_string(T));
  const double beta_lo = 1e-4, beta_hi = 2e-2;
  NoiseSchedule s;
  s.T = T;
  s.alpha.resize(static_cast<std::size_t>(T) + 1);
  s.sigma.resize(static_cast<std::size_t>(T) + 1);
  s.alpha[0] = 1.0;
  s.sigma[0] = 0.0;
  double alpha_bar = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double frac = T > 1 ? static_cast<double>(t - 1) / (T - 1) : 0.0;
    const double beta = beta_lo + (beta_hi - beta_lo) * frac;
    alpha_bar *= 1.0 - beta;
    s.alpha[static_cast<std::size_t>(t)] = std::sqrt(alpha_bar);
    s.sigma[static_cast<std::size_t>(t)] = std::sqrt(1.0 - alpha_bar);
  }
  return s;
}

/// Forward noising x_t = alpha_t x + sigma_t eps. Works on live tensors, so
/// gradients flow to x (and eps) when recording.
inline Tensor q_sample(const NoiseSchedule& s, const Tensor& x, int t, const Tensor& eps) {
  s.check_t(t);
  detail::check_same_shape(x, eps, "q_sample");
  return add(scale(x, s.alpha[static_cast<std::size_t>(t)]),
             scale(eps, s.sigma[static_cast<std::size_t>(t)]));
}

/// Sinusoidal timestep features: 8 sin/cos pairs whose wavelengths run
/// geometrically from 1 to T.
inline constexpr int kTimeEmbedDim = 16;

inline std::vector<double> time_embedding(int t, int T) {
  std::vector<double> e(kTimeEmbedDim);
  for (int j = 0; j < kTimeEmbedDim / 2; ++j) {
    const double wavelength = std::pow(static_cast<double>(T), j / (kTimeEmbedDim / 2.0 - 1.0));
    e[static_cast<std::size_t>(2 * j)] = std::sin(t / wavelength);
    e[static_cast<std::size_t>(2 * j + 1)] = std::cos(t / wavelength);
  }
  return e;
}

/// (n, kTimeEmbedDim) constant block, one embedded timestep per row.
inline Tensor time_embedding_rows(std::span<const int> ts, int T) {
  const int n = static_cast<int>(ts.size());
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(n) * kTimeEmbedDim);
  for (int t : ts) {
    const std::vector<double> e = time_embedding(t, T);
    data.insert(data.end(), e.begin(), e.end());
  }
  return Tensor({n, kTimeEmbedDim}, std::move(data));
}

enum class DenoiserRole { source, fake, target };

inline const char* to_string(DenoiserRole r) {
  switch (r) {
    case DenoiserRole::source: return "source";
    case DenoiserRole::fake: return "fake";
    case DenoiserRole::target: return "target";
  }
  throw std::logic_error("unknown denoiser role");
}

/// Noise-prediction net over [x_t || time features]. The same class serves as
/// frozen source teacher, online fake teacher, and target teacher; only the
/// role label (used in diagnostics) differs.
class Denoiser {
 public:
  Denoiser() = default;

  Denoiser(MlpNetwork net, int data_dim, int T, DenoiserRole role)
      : net_(std::move(net)), data_dim_(data_dim), T_(T), role_(role) {
    if (net_.input_width() != data_dim + kTimeEmbedDim || net_.output_width() != data_dim) {
      throw std::invalid_argument(std::string("denoiser '") + to_string(role) +
                                  "': network widths do not fit data_dim " +
                                  std::to_string(data_dim));
    }
  }

  static Denoiser make(int data_dim, const std::vector<int>& hidden, int T, DenoiserRole role,
                       RngStream& rng) {
    return Denoiser(MlpNetwork::make(data_dim + kTimeEmbedDim, hidden, data_dim, Activation::tanh, rng),
                    data_dim, T, role);
  }

  /// eps prediction for a batch sharing one timestep.
  Tensor predict(const Tensor& x_t, int t, ParamMode pm = ParamMode::train) const {
    check_input(x_t, t);
    const std::vector<int> ts(static_cast<std::size_t>(x_t.extent(0)), t);
    return net_.forward(concat_cols(x_t, time_embedding_rows(ts, T_)), pm);
  }

  /// eps prediction with a timestep per row.
  Tensor predict(const Tensor& x_t, std::span<const int> ts, ParamMode pm = ParamMode::train) const {
    if (static_cast<int>(ts.size()) != x_t.extent(0)) {
      throw std::invalid_argument("predict: " + std::to_string(ts.size()) + " timesteps for " +
                                  std::to_string(x_t.extent(0)) + " rows");
    }
    for (int t : ts) check_input(x_t, t);
    return net_.forward(concat_cols(x_t, time_embedding_rows(ts, T_)), pm);
  }

  /// As predict(), but also reports hidden activations for logit heads.
  Tensor predict_taps(const Tensor& x_t, int t, std::vector<Tensor>& taps, ParamMode pm) const {
    check_input(x_t, t);
    const std::vector<int> ts(static_cast<std::size_t>(x_t.extent(0)), t);
    return net_.forward_taps(concat_cols(x_t, time_embedding_rows(ts, T_)), taps, pm);
  }

  MlpNetwork& net() { return net_; }
  const MlpNetwork& net() const { return net_; }
  int data_dim() const { return data_dim_; }
  int T() const { return T_; }
  DenoiserRole role() const { return role_; }

  Denoiser clone_as(DenoiserRole role) const { return Denoiser(net_.clone(), data_dim_, T_, role); }

 private:
  void check_input(const Tensor& x_t, int t) const {
    if (x_t.rank() != 2 || x_t.extent(1) != data_dim_) {
      throw std::invalid_argument(std::string("denoiser '") + to_string(role_) + "' expects (n," +
                                  std::to_string(data_dim_) + ") input, got " +
                                  detail::shape_str(x_t.shape()));
    }
    if (t < 0 || t > T_) {
      throw std::invalid_argument(std::string("denoiser '") + to_string(role_) + "': timestep " +
                                  std::to_string(t) + " outside [0," + std::to_string(T_) + "]");
    }
  }

  MlpNetwork net_;
  int data_dim_ = 0;
  int T_ = 0;
  DenoiserRole role_ = DenoiserRole::source;
};

/// Mean over the batch of the squared noise-prediction error at per-sample
/// timesteps. x and eps are treated as constants; gradients reach only the
/// model parameters.
inline Tensor denoise_loss(const Denoiser& model, const NoiseSchedule& s, const Tensor& x,
                           std::span<const int> ts, const Tensor& eps) {
  detail::check_same_shape(x, eps, "denoise_loss");
  if (static_cast<int>(ts.size()) != x.extent(0)) {
    throw std::invalid_argument("denoise_loss: " + std::to_string(ts.size()) + " timesteps for " +
                                std::to_string(x.extent(0)) + " rows");
  }
  const int n = x.extent(0), d = x.extent(1);
  std::vector<double> noisy(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    s.check_t(ts[static_cast<std::size_t>(i)]);
    const double a = s.alpha[static_cast<std::size_t>(ts[static_cast<std::size_t>(i)])];
    const double sg = s.sigma[static_cast<std::size_t>(ts[static_cast<std::size_t>(i)])];
    for (int j = 0; j < d; ++j) {
      noisy[static_cast<std::size_t>(i) * d + j] = a * x.at(i, j) + sg * eps.at(i, j);
    }
  }
  const Tensor pred = model.predict(Tensor({n, d}, std::move(noisy)), ts);
  const Tensor eps_const = Tensor(eps.shape(), eps.data());
  return scale(squared_norm(sub(pred, eps_const)), 1.0 / n);
}

/// Training timestep draw: uniform over the middle 96% of the range,
/// {ceil(0.02 T) .. floor(0.98 T)}.
inline int sample_timestep(RngStream& rng, int T) {
  if (T < 50) {
    throw std::invalid_argument("sample_timestep: T must be >= 50, got " + std::to_string(T));
  }
  const int lo = static_cast<int>(std::ceil(0.02 * T));
  const int hi = static_cast<int>(std::floor(0.98 * T));
  return rng.uniform_int(lo, hi);
}

/// Deterministic probability-flow sampler. Ladder runs floor(T*(steps-i)/steps)
/// for i = 0..steps-1; each rung predicts x0 and carries it to the next noise
/// level; the return value is the final x0 estimate. The generic overload
/// accepts any eps predictor (x_t, t) -> Tensor so analytic oracles can stand
/// in for a trained denoiser.
template <typename EpsPredictor>
Tensor ddim_sample_with(EpsPredictor&& predict, const NoiseSchedule& s, int steps,
                        const Tensor& z) {
  if (steps < 1 || steps > s.T) {
    throw std::invalid_argument("ddim_sample: steps " + std::to_string(steps) +
                                " outside [1," + std::to_string(s.T) + "]");
  }
  NoGradGuard ng;
  const int n = z.extent(0), d = z.extent(1);
  Tensor x = Tensor(z.shape(), z.data());
  Tensor x0 = x;
  for (int i = 0; i < steps; ++i) {
    const int t = static_cast<int>(static_cast<std::int64_t>(s.T) * (steps - i) / steps);
    const double a = s.alpha[static_cast<std::size_t>(t)];
    const double sg = s.sigma[static_cast<std::size_t>(t)];
    const Tensor eps_hat = predict(x, t);
    std::vector<double> x0_data(static_cast<std::size_t>(n) * d);
    for (std::size_t k = 0; k < x0_data.size(); ++k) {
      x0_data[k] = (x.data()[k] - sg * eps_hat.data()[k]) / a;
    }
    x0 = Tensor({n, d}, std::move(x0_data));
    if (i + 1 < steps) {
      const int t_next = static_cast<int>(static_cast<std::int64_t>(s.T) * (steps - i - 1) / steps);
      const double an = s.alpha[static_cast<std::size_t>(t_next)];
      const double sn = s.sigma[static_cast<std::size_t>(t_next)];
      std::vector<double> x_data(static_cast<std::size_t>(n) * d);
      for (std::size_t k = 0; k < x_data.size(); ++k) {
        x_data[k] = an * x0.data()[k] + sn * eps_hat.data()[k];
      }
      x = Tensor({n, d}, std::move(x_data));
    }
  }
  return x0;
}

inline Tensor ddim_sample(const Denoiser& model, const NoiseSchedule& s, int steps,
                          const Tensor& z) {
  return ddim_sample_with([&](const Tensor& x, int t) { return model.predict(x, t); }, s, steps,
                          z);
}

}  // namespace unidad
