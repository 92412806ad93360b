#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <vector>

#include "unidad/distillation.hpp"
#include "unidad/rng.hpp"

using namespace unidad;
using Catch::Matchers::WithinAbs;

namespace {

Tensor randn(int n, int d, RngStream& rng) {
  std::vector<double> v(static_cast<std::size_t>(n) * d);
  rng.fill_normal(v);
  return Tensor({n, d}, std::move(v));
}

StudentGenerator constant_student(int T, int nfe, double cx, double cy) {
  RngStream rng(21);
  StudentGenerator g(MlpNetwork::make(2 + kTimeEmbedDim, {}, 2, Activation::tanh, rng), 2, T, nfe);
  std::vector<Tensor> ps = g.net().parameters();
  std::fill(ps[0].data().begin(), ps[0].data().end(), 0.0);
  ps[1].data() = {cx, cy};
  return g;
}

}  // namespace

TEST_CASE("ladders descend from T with the documented rungs") {
  REQUIRE(StudentGenerator::make_ladder(1000, 1) == std::vector<int>{1000});
  REQUIRE(StudentGenerator::make_ladder(1000, 2) == std::vector<int>{1000, 500});
  REQUIRE(StudentGenerator::make_ladder(1000, 3) == std::vector<int>{1000, 666, 333});
  REQUIRE(StudentGenerator::make_ladder(1000, 4) == std::vector<int>{1000, 750, 500, 250});
  REQUIRE(StudentGenerator::make_ladder(999, 3) == std::vector<int>{999, 666, 333});
  for (int T : {50, 100, 999, 1000}) {
    for (int nfe = 1; nfe <= 4; ++nfe) {
      const std::vector<int> ladder = StudentGenerator::make_ladder(T, nfe);
      REQUIRE(ladder.size() == static_cast<std::size_t>(nfe));
      REQUIRE(ladder.front() == T);
      for (std::size_t i = 0; i < ladder.size(); ++i) {
        REQUIRE(ladder[i] >= 1);
        REQUIRE(ladder[i] <= T);
        if (i > 0) REQUIRE(ladder[i] < ladder[i - 1]);
      }
    }
  }
  RngStream rng(22);
  MlpNetwork body = MlpNetwork::make(2 + kTimeEmbedDim, {4}, 2, Activation::tanh, rng);
  REQUIRE_THROWS_AS(StudentGenerator(body.clone(), 2, 1000, 0), std::invalid_argument);
  REQUIRE_THROWS_AS(StudentGenerator(body.clone(), 2, 1000, 5), std::invalid_argument);
}

TEST_CASE("student_generate walks the ladder") {
  const NoiseSchedule s = build_schedule(1000);
  RngStream rng(23);
  const Denoiser teacher = Denoiser::make(2, {6}, 1000, DenoiserRole::source, rng);

  SECTION("invokes the generator exactly NFE times") {
    for (int nfe = 1; nfe <= 4; ++nfe) {
      const StudentGenerator g = StudentGenerator::from_teacher(teacher, nfe);
      RngStream noise(100 + static_cast<std::uint64_t>(nfe));
      int calls = 0;
      const Tensor z = randn(5, 2, rng);
      student_generate(g, s, z, noise, ParamMode::train, &calls);
      REQUIRE(calls == nfe);
    }
  }

  SECTION("single rung equals one application at t = T") {
    const StudentGenerator g = StudentGenerator::from_teacher(teacher, 1);
    RngStream noise(31);
    const Tensor z = randn(4, 2, rng);
    const Tensor out = student_generate(g, s, z, noise);
    const Tensor direct = g.apply(z, 1000);
    REQUIRE(out.data() == direct.data());
    REQUIRE(noise.counter() == 0);
  }

  SECTION("a constant generator ignores latents and re-noising") {
    const StudentGenerator g = constant_student(1000, 3, 0.7, -0.3);
    RngStream noise(32);
    const Tensor out = student_generate(g, s, randn(6, 2, rng), noise);
    for (int i = 0; i < 6; ++i) {
      REQUIRE(out.at(i, 0) == 0.7);
      REQUIRE(out.at(i, 1) == -0.3);
    }
  }

  SECTION("deterministic given stream state") {
    const StudentGenerator g = StudentGenerator::from_teacher(teacher, 3);
    const Tensor z = randn(4, 2, rng);
    RngStream n1(77), n2(77);
    REQUIRE(student_generate(g, s, z, n1).data() == student_generate(g, s, z, n2).data());
  }

  SECTION("latent dimension mismatch") {
    const StudentGenerator g = StudentGenerator::from_teacher(teacher, 2);
    RngStream noise(33);
    REQUIRE_THROWS_AS(student_generate(g, s, Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), noise),
                      std::invalid_argument);
  }

  SECTION("gradients reach the generator in train mode only") {
    const StudentGenerator g = StudentGenerator::from_teacher(teacher, 3);
    const Tensor z = randn(4, 2, rng);
    RngStream noise(34);
    g.net().zero_grad();
    squared_norm(student_generate(g, s, z, noise, ParamMode::frozen)).backward();
    for (const Tensor& p : g.net().parameters()) REQUIRE(p.grad_is_zero());
    RngStream noise2(34);
    squared_norm(student_generate(g, s, z, noise2, ParamMode::train)).backward();
    bool any = false;
    for (const Tensor& p : g.net().parameters()) any = any || !p.grad_is_zero();
    REQUIRE(any);
  }
}

TEST_CASE("analytic_eps matches the numerically differentiated log-density") {
  const NoiseSchedule s = build_schedule(1000);
  const AnalyticGaussianScore oracle{{0.8, -1.3}};
  RngStream rng(41);
  for (int rep = 0; rep < 200; ++rep) {
    const int t = rng.uniform_int(1, 1000);
    const double a = s.alpha[static_cast<std::size_t>(t)];
    const double sg = s.sigma[static_cast<std::size_t>(t)];
    const double x = 3.0 * rng.normal(), y = 3.0 * rng.normal();
    // Noised marginal is N(alpha mu, I); differentiate its log-density.
    const auto logp = [&](double px, double py) {
      const double dx = px - a * oracle.mean[0], dy = py - a * oracle.mean[1];
      return -0.5 * (dx * dx + dy * dy);
    };
    const double h = 1e-5;
    const double sx = (logp(x + h, y) - logp(x - h, y)) / (2 * h);
    const double sy = (logp(x, y + h) - logp(x, y - h)) / (2 * h);
    const Tensor eps = analytic_eps(oracle, s, Tensor({1, 2}, {x, y}), t);
    const double ex = -sg * sx, ey = -sg * sy;
    REQUIRE(std::abs(eps.at(0, 0) - ex) / std::max({std::abs(ex), std::abs(eps.at(0, 0)), 1e-3}) <
            1e-6);
    REQUIRE(std::abs(eps.at(0, 1) - ey) / std::max({std::abs(ey), std::abs(eps.at(0, 1)), 1e-3}) <
            1e-6);
  }

  SECTION("zero at the symmetric point and at the noised mean") {
    const AnalyticGaussianScore centered{{0.0, 0.0}};
    const Tensor at0 = analytic_eps(centered, s, Tensor({1, 2}, {0.0, 0.0}), 500);
    REQUIRE(at0.at(0, 0) == 0.0);
    REQUIRE(at0.at(0, 1) == 0.0);
    const double a = s.alpha[700];
    const Tensor atm = analytic_eps(oracle, s, Tensor({1, 2}, {a * 0.8, a * -1.3}), 700);
    REQUIRE_THAT(atm.at(0, 0), WithinAbs(0.0, 1e-15));
    REQUIRE_THAT(atm.at(0, 1), WithinAbs(0.0, 1e-15));
  }

  SECTION("dimension mismatch") {
    REQUIRE_THROWS_AS(analytic_eps(oracle, s, Tensor({1, 3}, {0, 0, 0}), 500),
                      std::invalid_argument);
  }
}

TEST_CASE("omega applies the clamped per-sample normalization") {
  const NoiseSchedule s = build_schedule(1000);
  const int t = 500;
  const double sg = s.sigma[500];

  SECTION("three pinned samples against a hand L1 computation") {
    const Tensor et({3, 2}, {1.0, -1.0, 0.25, 0.25, 2.0, 0.0});
    const Tensor ef({3, 2}, {0.0, 0.0, 0.25, -0.25, 2.0, 0.0});
    const std::vector<double> w = omega(s, t, et, ef);
    REQUIRE(w.size() == 3);
    CHECK_THAT(w[0], WithinAbs(sg * 2.0 / 2.0, 1e-15));
    CHECK_THAT(w[1], WithinAbs(sg * 2.0 / 0.5, 1e-15));
    CHECK_THAT(w[2], WithinAbs(sg * 2.0 / 1e-8, 1e-4));
    REQUIRE(w[2] > 0.0);
  }

  SECTION("shape mismatch") {
    REQUIRE_THROWS_AS(omega(s, t, Tensor({1, 2}, {0, 0}), Tensor({2, 2}, {0, 0, 0, 0})),
                      std::invalid_argument);
  }
}

TEST_CASE("dmd_direction points from the fake mean toward the teacher mean") {
  const NoiseSchedule s = build_schedule(1000);
  const AnalyticGaussianScore teacher{{2.0, 0.0}};
  const AnalyticGaussianScore fake{{0.0, 0.0}};
  RngStream rng(51);
  const Tensor x = randn(8, 2, rng);
  const Tensor eps = randn(8, 2, rng);
  const int t = 400;
  const DmdDirection dir = dmd_direction(teacher, fake, s, x, t, eps);
  REQUIRE(dir.batch == 8);
  REQUIRE(dir.dim == 2);

  const double a = s.alpha[400], sg = s.sigma[400];
  for (int i = 0; i < 8; ++i) {
    // eps_fk - eps_teacher = sg*alpha*(mu_teacher - mu_fake) = sg*a*(2,0).
    const double expect_x = dir.omega[static_cast<std::size_t>(i)] * sg * a * 2.0;
    CHECK_THAT(dir.d[static_cast<std::size_t>(i) * 2], WithinAbs(expect_x, 1e-12));
    CHECK_THAT(dir.d[static_cast<std::size_t>(i) * 2 + 1], WithinAbs(0.0, 1e-12));
    REQUIRE(dir.d[static_cast<std::size_t>(i) * 2] > 0.0);
    REQUIRE(dir.omega[static_cast<std::size_t>(i)] > 0.0);
  }

  SECTION("omega recomposition from the noised batch") {
    for (int i = 0; i < 8; ++i) {
      const double xt0 = a * x.at(i, 0) + sg * eps.at(i, 0);
      const double xt1 = a * x.at(i, 1) + sg * eps.at(i, 1);
      const double fk0 = sg * xt0, fk1 = sg * xt1;
      const double l1 = std::abs(eps.at(i, 0) - fk0) + std::abs(eps.at(i, 1) - fk1);
      CHECK_THAT(dir.omega[static_cast<std::size_t>(i)],
                 WithinAbs(sg * 2.0 / std::max(l1, 1e-8), 1e-12));
    }
  }
}

TEST_CASE("dmd_direction on denoisers composes the two forward passes") {
  const NoiseSchedule s = build_schedule(500);
  RngStream rng(52);
  const Denoiser teacher = Denoiser::make(2, {5}, 500, DenoiserRole::target, rng);
  const Denoiser fake = Denoiser::make(2, {5}, 500, DenoiserRole::fake, rng);
  const Tensor x = randn(4, 2, rng);
  const Tensor eps = randn(4, 2, rng);
  const int t = 250;
  const DmdDirection dir = dmd_direction(teacher, fake, s, x, t, eps);
  REQUIRE(dir.tag == DmdDirection::Tag::target);

  {
    NoGradGuard ng;
    const Tensor x_t = q_sample(s, x, t, eps);
    const Tensor et = teacher.predict(x_t, t);
    const Tensor ef = fake.predict(x_t, t);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 2; ++j) {
        const double expect =
            dir.omega[static_cast<std::size_t>(i)] * (ef.at(i, j) - et.at(i, j));
        REQUIRE_THAT(dir.d[static_cast<std::size_t>(i) * 2 + j], WithinAbs(expect, 1e-12));
      }
    }
  }

  SECTION("source-role teacher tags the direction as source") {
    const Denoiser src = teacher.clone_as(DenoiserRole::source);
    REQUIRE(dmd_direction(src, fake, s, x, t, eps).tag == DmdDirection::Tag::source);
  }

  SECTION("shared weights produce an exactly zero push") {
    const Denoiser twin = teacher.clone_as(DenoiserRole::fake);
    const DmdDirection zero = dmd_direction(teacher, twin, s, x, t, eps);
    for (double v : zero.d) REQUIRE(v == 0.0);
  }

  SECTION("non-finite prediction aborts with the role in the message") {
    Denoiser broken = teacher.clone_as(DenoiserRole::target);
    broken.net().parameters()[0].data()[0] = std::nan("");
    REQUIRE_THROWS_WITH(dmd_direction(broken, fake, s, x, t, eps),
                        Catch::Matchers::ContainsSubstring("target"));
  }

  SECTION("teachers keep zero gradients through direction building") {
    teacher.net().zero_grad();
    fake.net().zero_grad();
    const DmdDirection d2 = dmd_direction(teacher, fake, s, x, t, eps);
    Tensor live(x.shape(), x.data(), true);
    dmd_surrogate_loss(live, d2).backward();
    for (const Tensor& p : teacher.net().parameters()) REQUIRE(p.grad_is_zero());
    for (const Tensor& p : fake.net().parameters()) REQUIRE(p.grad_is_zero());
    bool any = false;
    for (double g : live.grad()) any = any || g != 0.0;
    REQUIRE(any);
  }
}

TEST_CASE("dual direction is the exact convex blend") {
  RngStream rng(53);
  DmdDirection src, trg;
  src.batch = trg.batch = 6;
  src.dim = trg.dim = 2;
  src.d.resize(12);
  trg.d.resize(12);
  src.omega.assign(6, 1.0);
  trg.omega.assign(6, 2.0);
  rng.fill_normal(src.d);
  rng.fill_normal(trg.d);

  SECTION("endpoints are bit-identical to the inputs") {
    REQUIRE(dual_dmd_direction(src, trg, 0.0).d == src.d);
    REQUIRE(dual_dmd_direction(src, trg, 1.0).d == trg.d);
  }

  SECTION("interior weights match the recomputed blend bit for bit") {
    for (double a : {0.25, 0.5, 0.75}) {
      const DmdDirection out = dual_dmd_direction(src, trg, a);
      for (std::size_t i = 0; i < out.d.size(); ++i) {
        REQUIRE(out.d[i] == (1.0 - a) * src.d[i] + a * trg.d[i]);
      }
      for (std::size_t i = 0; i < out.omega.size(); ++i) {
        REQUIRE(out.omega[i] == (1.0 - a) * src.omega[i] + a * trg.omega[i]);
      }
    }
  }

  SECTION("midpoint of axis-aligned pushes") {
    DmdDirection sx, tx;
    sx.batch = tx.batch = 1;
    sx.dim = tx.dim = 2;
    sx.d = {2.0, 0.0};
    tx.d = {0.0, 2.0};
    sx.omega = tx.omega = {1.0};
    const DmdDirection mid = dual_dmd_direction(sx, tx, 0.5);
    REQUIRE(mid.d == std::vector<double>{1.0, 1.0});
  }

  SECTION("weight and shape guards") {
    REQUIRE_THROWS_AS(dual_dmd_direction(src, trg, -0.01), std::invalid_argument);
    REQUIRE_THROWS_AS(dual_dmd_direction(src, trg, 1.01), std::invalid_argument);
    DmdDirection small = src;
    small.batch = 3;
    small.d.resize(6);
    small.omega.resize(3);
    REQUIRE_THROWS_AS(dual_dmd_direction(small, trg, 0.5), std::invalid_argument);
  }
}

TEST_CASE("surrogate loss pushes samples along the direction") {
  DmdDirection dir;
  dir.batch = 1;
  dir.dim = 2;
  dir.d = {1.0, 0.0};
  dir.omega = {1.0};

  SECTION("single-sample gradient is minus the push") {
    Tensor x({1, 2}, {0.3, -0.9}, true);
    dmd_surrogate_loss(x, dir).backward();
    REQUIRE_THAT(x.grad()[0], WithinAbs(-1.0, 1e-12));
    REQUIRE_THAT(x.grad()[1], WithinAbs(0.0, 1e-12));
  }

  SECTION("zero push gives zero loss and zero gradient") {
    DmdDirection none = dir;
    none.d = {0.0, 0.0};
    Tensor x({1, 2}, {0.3, -0.9}, true);
    const Tensor loss = dmd_surrogate_loss(x, none);
    REQUIRE(loss.item() == 0.0);
    loss.backward();
    REQUIRE(x.grad()[0] == 0.0);
    REQUIRE(x.grad()[1] == 0.0);
  }

  SECTION("batch scaling divides the gradient") {
    DmdDirection batch3;
    batch3.batch = 3;
    batch3.dim = 2;
    batch3.d = {3.0, 0.0, 0.0, -6.0, 1.5, 1.5};
    batch3.omega = {1.0, 1.0, 1.0};
    Tensor x({3, 2}, {0, 0, 0, 0, 0, 0}, true);
    dmd_surrogate_loss(x, batch3).backward();
    for (std::size_t k = 0; k < 6; ++k) {
      REQUIRE_THAT(x.grad()[k], WithinAbs(-batch3.d[k] / 3.0, 1e-12));
    }
  }

  SECTION("shape guard") {
    Tensor x({2, 2}, {0, 0, 0, 0}, true);
    REQUIRE_THROWS_AS(dmd_surrogate_loss(x, dir), std::invalid_argument);
  }
}

TEST_CASE("surrogate descent on the analytic pair decreases the KL estimate") {
  // Affine generator distilled toward an N((2,0), I) teacher; the fake oracle
  // tracks the generator's own sample mean. Both the mean drift and the
  // Monte-Carlo KL drop are asserted (sign-convention guard).
  const NoiseSchedule s = build_schedule(1000);
  const int batch = 64, n_eval = 256;
  RunRng rng(60);
  MlpNetwork gen = MlpNetwork::make(2, {}, 2, Activation::tanh, rng.stream("init"));
  AdamState opt = AdamState::make(1e-2, gen.parameter_count());
  const AnalyticGaussianScore teacher{{2.0, 0.0}};
  const Tensor z_eval = randn(n_eval, 2, rng.stream("eval"));

  const auto mc_kl = [&]() {
    NoGradGuard ng;
    const Tensor x = gen.forward(z_eval);
    // Generator is affine, so x ~ N(b, W^T W); compare log-densities sample
    // by sample against the teacher Gaussian.
    const std::vector<Tensor> ps = gen.parameters();
    const double w00 = ps[0].at(0, 0), w01 = ps[0].at(0, 1);
    const double w10 = ps[0].at(1, 0), w11 = ps[0].at(1, 1);
    const double b0 = ps[1].at(0), b1 = ps[1].at(1);
    // Sigma = W^T W for row-vector convention x = z W + b.
    const double s00 = w00 * w00 + w10 * w10;
    const double s01 = w00 * w01 + w10 * w11;
    const double s11 = w01 * w01 + w11 * w11;
    const double det = s00 * s11 - s01 * s01;
    REQUIRE(det > 1e-12);
    const double i00 = s11 / det, i01 = -s01 / det, i11 = s00 / det;
    double acc = 0.0;
    for (int i = 0; i < n_eval; ++i) {
      const double dx = x.at(i, 0) - b0, dy = x.at(i, 1) - b1;
      const double logq = -0.5 * (dx * (i00 * dx + i01 * dy) + dy * (i01 * dx + i11 * dy)) -
                          0.5 * std::log(det);
      const double tx = x.at(i, 0) - 2.0, ty = x.at(i, 1);
      const double logp = -0.5 * (tx * tx + ty * ty);
      acc += logq - logp;
    }
    return acc / n_eval;
  };

  const auto sample_mean = [&](double* out) {
    NoGradGuard ng;
    const Tensor x = gen.forward(z_eval);
    out[0] = out[1] = 0.0;
    for (int i = 0; i < n_eval; ++i) {
      out[0] += x.at(i, 0);
      out[1] += x.at(i, 1);
    }
    out[0] /= n_eval;
    out[1] /= n_eval;
  };

  double mean0[2];
  sample_mean(mean0);
  const double kl0 = mc_kl();
  for (int step = 0; step < 100; ++step) {
    const Tensor z = randn(batch, 2, rng.stream("train"));
    const Tensor x = gen.forward(z);
    double mu[2] = {0.0, 0.0};
    for (int i = 0; i < batch; ++i) {
      mu[0] += x.at(i, 0);
      mu[1] += x.at(i, 1);
    }
    const AnalyticGaussianScore fake{{mu[0] / batch, mu[1] / batch}};
    const int t = sample_timestep(rng.stream("t"), 1000);
    const Tensor eps = randn(batch, 2, rng.stream("noise"));
    const DmdDirection dir = dmd_direction(teacher, fake, s, x, t, eps);
    const Tensor loss = dmd_surrogate_loss(x, dir);
    gen.zero_grad();
    loss.backward();
    adam_step(opt, gen.parameters(), "kl-drill");
  }
  const double kl1 = mc_kl();
  double mean1[2];
  sample_mean(mean1);

  INFO("kl " << kl0 << " -> " << kl1 << ", mean (" << mean1[0] << "," << mean1[1] << ")");
  REQUIRE(kl1 < kl0);
  const double d0 = std::hypot(mean0[0] - 2.0, mean0[1]);
  const double d1 = std::hypot(mean1[0] - 2.0, mean1[1]);
  REQUIRE(d1 < d0);
}
