#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "unidad/diffusion.hpp"
#include "unidad/network.hpp"
#include "unidad/tensor.hpp"

namespace unidad {

enum class GanFamily { hinge, bce, lsgan, wgan };

inline const char* to_string(GanFamily f) {
  switch (f) {
    case GanFamily::hinge: return "hinge";
    case GanFamily::bce: return "bce";
    case GanFamily::lsgan: return "lsgan";
    case GanFamily::wgan: return "wgan";
  }
  throw std::logic_error("unknown gan family");
}

inline GanFamily gan_family_from_string(const std::string& s) {
  if (s == "hinge") return GanFamily::hinge;
  if (s == "bce") return GanFamily::bce;
  if (s == "lsgan") return GanFamily::lsgan;
  if (s == "wgan") return GanFamily::wgan;
  throw std::invalid_argument("unknown gan family '" + s + "'");
}

enum class HeadMode { multi, single };

inline const char* to_string(HeadMode m) { return m == HeadMode::multi ? "multi" : "single"; }

inline HeadMode head_mode_from_string(const std::string& s) {
  if (s == "multi") return HeadMode::multi;
  if (s == "single") return HeadMode::single;
  throw std::invalid_argument("unknown head mode '" + s + "'");
}

/// Discriminator built on top of the fake teacher's trunk. In multi mode a
/// linear probe reads every hidden activation; in single mode one deeper probe
/// (width -> 32 tanh -> 1) reads only the last activation.
class MultiHeadDiscriminator {
 public:
  MultiHeadDiscriminator() = default;

  static MultiHeadDiscriminator make(const MlpNetwork& body, HeadMode mode, RngStream& rng) {
    const std::vector<int> widths = body.hidden_widths();
    if (widths.empty()) {
      throw std::invalid_argument("discriminator requires a trunk with hidden layers");
    }
    MultiHeadDiscriminator d;
    d.mode_ = mode;
    if (mode == HeadMode::multi) {
      for (int w : widths) {
        d.heads_.push_back(MlpNetwork::make(w, {}, 1, Activation::linear, rng));
      }
    } else {
      d.heads_.push_back(MlpNetwork::make(widths.back(), {32}, 1, Activation::tanh, rng));
    }
    return d;
  }

  /// One (n,1) logit tensor per head, read off the fake teacher's hidden
  /// activations at (x_t, t). body_pm freezes or trains the trunk, head_pm the
  /// probes; the two are independent so the generator step can treat the whole
  /// critic as a constant while the critic step trains both.
  std::vector<Tensor> extract_logits(const Denoiser& fake_teacher, const Tensor& x_t, int t,
                                     ParamMode body_pm, ParamMode head_pm) const {
    std::vector<Tensor> taps;
    fake_teacher.predict_taps(x_t, t, taps, body_pm);
    return apply_heads(taps, head_pm);
  }

  /// Head logits for already-computed trunk activations.
  std::vector<Tensor> apply_heads(const std::vector<Tensor>& taps, ParamMode head_pm) const {
    if (mode_ == HeadMode::multi && taps.size() != heads_.size()) {
      throw std::invalid_argument("discriminator has " + std::to_string(heads_.size()) +
                                  " heads for a trunk with " + std::to_string(taps.size()) +
                                  " hidden activations");
    }
    if (mode_ == HeadMode::single && taps.empty()) {
      throw std::invalid_argument("discriminator trunk produced no hidden activations");
    }
    std::vector<Tensor> logits;
    logits.reserve(heads_.size());
    for (std::size_t k = 0; k < heads_.size(); ++k) {
      const Tensor& tap = mode_ == HeadMode::multi ? taps[k] : taps.back();
      logits.push_back(heads_[k].forward(tap, head_pm));
    }
    return logits;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const MlpNetwork& h : heads_) {
      for (const Tensor& p : h.parameters()) out.push_back(p);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const MlpNetwork& h : heads_) n += h.parameter_count();
    return n;
  }

  int head_count() const { return static_cast<int>(heads_.size()); }
  HeadMode mode() const { return mode_; }
  std::vector<MlpNetwork>& heads() { return heads_; }
  const std::vector<MlpNetwork>& heads() const { return heads_; }

 private:
  std::vector<MlpNetwork> heads_;
  HeadMode mode_ = HeadMode::multi;
};

namespace detail {

inline void check_head_lists(const std::vector<Tensor>& real, const std::vector<Tensor>& fake) {
  if (real.size() != fake.size()) {
    throw std::invalid_argument("gan loss: " + std::to_string(real.size()) +
                                " real heads vs " + std::to_string(fake.size()) + " fake heads");
  }
  if (real.empty()) throw std::invalid_argument("gan loss: no heads");
}

}  // namespace detail

/// Critic objective, summed over heads.
///   hinge: mean relu(1-h_real) + mean relu(1+h_fake)
///   bce:   mean softplus(-h_real) + mean softplus(h_fake)
///   lsgan: mean (h_real-1)^2 + mean h_fake^2
///   wgan:  mean h_fake - mean h_real
inline Tensor gan_d_loss(GanFamily family, const std::vector<Tensor>& real_logits,
                         const std::vector<Tensor>& fake_logits) {
  detail::check_head_lists(real_logits, fake_logits);
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t k = 0; k < real_logits.size(); ++k) {
    const Tensor& hr = real_logits[k];
    const Tensor& hf = fake_logits[k];
    Tensor head;
    switch (family) {
      case GanFamily::hinge:
        head = add(mean(relu(affine(hr, -1.0, 1.0))), mean(relu(affine(hf, 1.0, 1.0))));
        break;
      case GanFamily::bce:
        head = add(mean(softplus(affine(hr, -1.0))), mean(softplus(hf)));
        break;
      case GanFamily::lsgan: {
        const Tensor rm1 = affine(hr, 1.0, -1.0);
        head = add(mean(mul(rm1, rm1)), mean(mul(hf, hf)));
        break;
      }
      case GanFamily::wgan:
        head = sub(mean(hf), mean(hr));
        break;
    }
    total = add(total, head);
  }
  return total;
}

/// Generator objective, summed over heads.
///   hinge: -mean h_fake
///   bce:   mean softplus(-h_fake)   (non-saturating)
///   lsgan: mean (h_fake-1)^2
///   wgan:  -mean h_fake
inline Tensor gan_g_loss(GanFamily family, const std::vector<Tensor>& fake_logits) {
  if (fake_logits.empty()) throw std::invalid_argument("gan loss: no heads");
  Tensor total = Tensor::scalar(0.0);
  for (const Tensor& hf : fake_logits) {
    Tensor head;
    switch (family) {
      case GanFamily::hinge:
      case GanFamily::wgan:
        head = scale(mean(hf), -1.0);
        break;
      case GanFamily::bce:
        head = mean(softplus(affine(hf, -1.0)));
        break;
      case GanFamily::lsgan: {
        const Tensor fm1 = affine(hf, 1.0, -1.0);
        head = mean(mul(fm1, fm1));
        break;
      }
    }
    total = add(total, head);
  }
  return total;
}

}  // namespace unidad
