#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "unidad/rng.hpp"
#include "unidad/tensor.hpp"

namespace unidad {

enum class Activation { linear, tanh, relu, sigmoid };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  throw std::logic_error("unknown activation");
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "linear") return Activation::linear;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

/// Whether a forward pass treats the network's parameters as trainable graph
/// leaves or as constants (stop-gradient views).
enum class ParamMode { train, frozen };

/// Fully connected net over row-major batches: out = act(x W + b) per layer.
class MlpNetwork {
 public:
  struct Layer {
    Tensor weight;  // (in, out)
    Tensor bias;    // (out)
    Activation act;
  };

  MlpNetwork() = default;

  /// He/Xavier-style init: weights ~ N(0, 1/fan_in), biases zero.
  static MlpNetwork make(int input_width, const std::vector<int>& hidden_widths, int output_width,
                         Activation hidden_act, RngStream& rng) {
    if (input_width <= 0 || output_width <= 0) {
      throw std::invalid_argument("MlpNetwork::make: nonpositive width");
    }
    MlpNetwork net;
    int in = input_width;
    for (int w : hidden_widths) {
      if (w <= 0) throw std::invalid_argument("MlpNetwork::make: nonpositive hidden width");
      net.layers_.push_back(init_layer(in, w, hidden_act, rng));
      in = w;
    }
    net.layers_.push_back(init_layer(in, output_width, Activation::linear, rng));
    net.input_width_ = input_width;
    net.output_width_ = output_width;
    return net;
  }

  Tensor forward(const Tensor& x, ParamMode pm = ParamMode::train) const {
    return forward_impl(x, pm, nullptr);
  }

  /// Forward pass that also reports every hidden activation (one per hidden
  /// layer, in depth order).
  Tensor forward_taps(const Tensor& x, std::vector<Tensor>& taps,
                      ParamMode pm = ParamMode::train) const {
    taps.clear();
    return forward_impl(x, pm, &taps);
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    out.reserve(layers_.size() * 2);
    for (const Layer& l : layers_) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  int input_width() const { return input_width_; }
  int output_width() const { return output_width_; }
  int hidden_layer_count() const { return static_cast<int>(layers_.size()) - 1; }

  std::vector<int> hidden_widths() const {
    std::vector<int> w;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) w.push_back(layers_[i].weight.extent(1));
    return w;
  }

  Activation hidden_activation() const {
    return layers_.size() > 1 ? layers_.front().act : Activation::linear;
  }

  /// Deep copy with fresh parameter storage.
  MlpNetwork clone() const {
    MlpNetwork net;
    net.input_width_ = input_width_;
    net.output_width_ = output_width_;
    for (const Layer& l : layers_) {
      net.layers_.push_back(Layer{Tensor(l.weight.shape(), l.weight.data(), true),
                                  Tensor(l.bias.shape(), l.bias.data(), true), l.act});
    }
    return net;
  }

  /// Overwrites parameter values from a structurally identical net.
  void copy_params_from(const MlpNetwork& other) {
    if (layers_.size() != other.layers_.size()) {
      throw std::invalid_argument("copy_params_from: layer count mismatch");
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].weight.shape() != other.layers_[i].weight.shape()) {
        throw std::invalid_argument("copy_params_from: weight shape mismatch at layer " +
                                    std::to_string(i));
      }
      layers_[i].weight.data() = other.layers_[i].weight.data();
      layers_[i].bias.data() = other.layers_[i].bias.data();
    }
  }

  void zero_grad() const {
    for (const Layer& l : layers_) {
      l.weight.zero_grad();
      l.bias.zero_grad();
    }
  }

  bool params_finite() const {
    for (const Layer& l : layers_) {
      if (!l.weight.all_finite() || !l.bias.all_finite()) return false;
    }
    return true;
  }

  const std::vector<Layer>& layers() const { return layers_; }

 private:
  static Layer init_layer(int in, int out, Activation act, RngStream& rng) {
    std::vector<double> w(static_cast<std::size_t>(in) * out);
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : w) v = std_dev * rng.normal();
    return Layer{Tensor({in, out}, std::move(w), true),
                 Tensor::zeros({out}, true), act};
  }

  static Tensor apply_act(const Tensor& h, Activation act) {
    switch (act) {
      case Activation::linear: return h;
      case Activation::tanh: return unidad::tanh(h);
      case Activation::relu: return unidad::relu(h);
      case Activation::sigmoid: return unidad::sigmoid(h);
    }
    throw std::logic_error("unknown activation");
  }

  Tensor forward_impl(const Tensor& x, ParamMode pm, std::vector<Tensor>* taps) const {
    if (layers_.empty()) throw std::logic_error("forward on empty network");
    if (x.rank() != 2 || x.extent(1) != input_width_) {
      throw std::invalid_argument("network expects (n," + std::to_string(input_width_) +
                                  ") input, got " + detail::shape_str(x.shape()));
    }
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      const Tensor w = pm == ParamMode::frozen ? l.weight.detach() : l.weight;
      const Tensor b = pm == ParamMode::frozen ? l.bias.detach() : l.bias;
      h = apply_act(add(matmul(h, w), b), l.act);
      if (taps && i + 1 < layers_.size()) taps->push_back(h);
    }
    return h;
  }

  std::vector<Layer> layers_;
  int input_width_ = 0;
  int output_width_ = 0;
};

/// Adam moments for one parameter set, flattened in parameters() order.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step_count = 0;
  std::vector<double> m;
  std::vector<double> v;

  static AdamState make(double lr, std::size_t param_count) {
    AdamState s;
    s.lr = lr;
    s.m.assign(param_count, 0.0);
    s.v.assign(param_count, 0.0);
    return s;
  }
};

/// One bias-corrected Adam update from the gradients currently stored on the
/// parameters. Throws on non-finite gradients or parameters; state is only
/// advanced by a completed update.
inline void adam_step(AdamState& state, const std::vector<Tensor>& params,
                      const std::string& who = "adam") {
  std::size_t total = 0;
  for (const Tensor& p : params) total += p.size();
  if (state.m.size() != total) {
    throw std::invalid_argument(who + ": optimizer state holds " + std::to_string(state.m.size()) +
                                " slots for " + std::to_string(total) + " parameters");
  }
  for (const Tensor& p : params) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) {
        throw std::runtime_error(who + ": non-finite gradient at step " +
                                 std::to_string(state.step_count + 1));
      }
    }
  }
  const std::uint64_t t = ++state.step_count;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
  std::size_t k = 0;
  for (const Tensor& p : params) {
    const std::vector<double>& g = p.grad();
    std::vector<double>& w = const_cast<Tensor&>(p).data();
    for (std::size_t i = 0; i < w.size(); ++i, ++k) {
      state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g[i];
      state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = state.m[k] / bc1;
      const double vhat = state.v[k] / bc2;
      w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
      if (!std::isfinite(w[i])) {
        throw std::runtime_error(who + ": non-finite parameter after step " + std::to_string(t));
      }
    }
  }
}

}  // namespace unidad
