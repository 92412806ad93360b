#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "unidad/network.hpp"
#include "unidad/rng.hpp"
#include "unidad/tensor.hpp"

using namespace unidad;
using Catch::Matchers::WithinAbs;

namespace {

/// 2-3-2 tanh net with hand-pinned weights; expected values were computed by
/// an independent scratch evaluation of the same arithmetic.
MlpNetwork pinned_net() {
  RngStream rng(1);
  MlpNetwork net = MlpNetwork::make(2, {3}, 2, Activation::tanh, rng);
  std::vector<Tensor> ps = net.parameters();
  ps[0].data() = {0.5, -0.25, 0.1, 0.3, 0.8, -0.6};
  ps[1].data() = {0.1, -0.2, 0.05};
  ps[2].data() = {1.0, -0.5, 0.25, 0.75, -0.3, 0.2};
  ps[3].data() = {0.05, -0.1};
  return net;
}

const Tensor pinned_input() { return Tensor({2, 2}, {0.2, -0.4, 1.0, 0.5}, false); }

}  // namespace

TEST_CASE("pinned forward pass reproduces the independent evaluation") {
  const MlpNetwork net = pinned_net();
  const Tensor y = net.forward(pinned_input());
  REQUIRE(y.extent(0) == 2);
  REQUIRE(y.extent(1) == 2);
  CHECK_THAT(y.at(0, 0), WithinAbs(-0.089141179535017309, 1e-12));
  CHECK_THAT(y.at(0, 1), WithinAbs(-0.46634692363159225, 1e-12));
  CHECK_THAT(y.at(1, 0), WithinAbs(0.71732486873481272, 1e-12));
  CHECK_THAT(y.at(1, 1), WithinAbs(-0.48482026413671719, 1e-12));
  CHECK_THAT(squared_norm(y).item(), WithinAbs(0.97503125889255682, 1e-12));
}

TEST_CASE("network gradients match central finite differences") {
  const MlpNetwork net = pinned_net();
  std::vector<Tensor> ps = net.parameters();
  const auto loss_fn = [&] { return squared_norm(net.forward(pinned_input())); };
  net.zero_grad();
  loss_fn().backward();
  const double h = 1e-6;
  for (Tensor& p : ps) {
    const std::vector<double> grad = p.grad();
    for (std::size_t k = 0; k < grad.size(); ++k) {
      double fd;
      {
        NoGradGuard ng;
        const double saved = p.data()[k];
        p.data()[k] = saved + h;
        const double up = loss_fn().item();
        p.data()[k] = saved - h;
        const double dn = loss_fn().item();
        p.data()[k] = saved;
        fd = (up - dn) / (2.0 * h);
      }
      const double scale = std::max({std::abs(grad[k]), std::abs(fd), 1.0});
      REQUIRE(std::abs(grad[k] - fd) / scale < 1e-5);
    }
  }
}

TEST_CASE("frozen parameters stay off the tape") {
  const MlpNetwork net = pinned_net();
  Tensor x({1, 2}, {0.7, -0.3}, true);
  net.zero_grad();
  squared_norm(net.forward(x, ParamMode::frozen)).backward();
  for (const Tensor& p : net.parameters()) REQUIRE(p.grad_is_zero());
  bool any = false;
  for (double g : x.grad()) any = any || g != 0.0;
  REQUIRE(any);
}

TEST_CASE("initialization is a pure function of the stream") {
  RngStream a(42), b(42), c(43);
  const MlpNetwork n1 = MlpNetwork::make(2, {8, 8}, 2, Activation::tanh, a);
  const MlpNetwork n2 = MlpNetwork::make(2, {8, 8}, 2, Activation::tanh, b);
  const MlpNetwork n3 = MlpNetwork::make(2, {8, 8}, 2, Activation::tanh, c);
  const auto p1 = n1.parameters(), p2 = n2.parameters(), p3 = n3.parameters();
  for (std::size_t i = 0; i < p1.size(); ++i) REQUIRE(p1[i].data() == p2[i].data());
  REQUIRE(p1[0].data() != p3[0].data());
  // Biases start at zero, hidden widths round-trip.
  REQUIRE(n1.hidden_widths() == std::vector<int>{8, 8});
  REQUIRE(p1[1].grad_is_zero());
  for (double v : p1[1].data()) REQUIRE(v == 0.0);
}

TEST_CASE("clone detaches parameter storage") {
  MlpNetwork net = pinned_net();
  MlpNetwork copy = net.clone();
  net.parameters()[0].data()[0] += 1.0;
  REQUIRE(copy.parameters()[0].data()[0] == 0.5);
  copy.copy_params_from(net);
  REQUIRE(copy.parameters()[0].data()[0] == 1.5);
}

TEST_CASE("forward_taps reports one activation per hidden layer") {
  RngStream rng(9);
  const MlpNetwork net = MlpNetwork::make(2, {5, 7, 3}, 2, Activation::relu, rng);
  std::vector<Tensor> taps;
  const Tensor y = net.forward_taps(Tensor({4, 2}, std::vector<double>(8, 0.3)), taps);
  REQUIRE(y.extent(1) == 2);
  REQUIRE(taps.size() == 3);
  REQUIRE(taps[0].extent(1) == 5);
  REQUIRE(taps[1].extent(1) == 7);
  REQUIRE(taps[2].extent(1) == 3);
  REQUIRE(net.parameter_count() == 2 * 5 + 5 + 5 * 7 + 7 + 7 * 3 + 3 + 3 * 2 + 2);
}

TEST_CASE("adam reproduces the pinned recurrence") {
  std::vector<Tensor> params = {Tensor({1}, {1.0}, true)};
  AdamState st = AdamState::make(0.1, 1);

  SECTION("zero gradient leaves parameters untouched") {
    params[0].zero_grad();
    adam_step(st, params, "probe");
    REQUIRE(params[0].at(0) == 1.0);
    REQUIRE(st.step_count == 1);
  }

  SECTION("three constant-gradient steps match the scratch evaluation") {
    const double expected[3] = {0.90000000099999999, 0.80000000200000065, 0.70000000300000065};
    for (int i = 0; i < 3; ++i) {
      params[0].zero_grad();
      sum(params[0]).backward();
      adam_step(st, params, "probe");
      CHECK_THAT(params[0].at(0), WithinAbs(expected[i], 1e-14));
    }
  }
}

TEST_CASE("adam guards against bad inputs") {
  std::vector<Tensor> params = {Tensor({2}, {1.0, 2.0}, true)};
  SECTION("state sized for a different parameter set") {
    AdamState st = AdamState::make(0.1, 5);
    sum(params[0]).backward();
    REQUIRE_THROWS_AS(adam_step(st, params, "probe"), std::invalid_argument);
  }
  SECTION("non-finite gradient names the block") {
    AdamState st = AdamState::make(0.1, 2);
    sum(params[0]).backward();
    const_cast<std::vector<double>&>(params[0].grad())[0] = std::nan("");
    REQUIRE_THROWS_WITH(adam_step(st, params, "fake+disc"),
                        Catch::Matchers::ContainsSubstring("fake+disc"));
  }
}
