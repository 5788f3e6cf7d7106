#include "tsnet/ncl.hpp"

#include "tsnet/dtb.hpp"
#include "tsnet/gradcheck.hpp"

#include <catch2/catch.hpp>

using namespace tsnet;

TEST_CASE("sample_sigma_k: constant kind squares its amplitude") {
  FeatureNoise fn;
  fn.kind = NoiseKind::Constant;
  fn.a = 0.1;
  for (double x : {-5.0, 0.0, 5.0}) CHECK(fn.variance(x) == Approx(0.01).margin(1e-15));
}

TEST_CASE("sample_sigma_k: sine kind variance stays above 0.01^2") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    NoiseFunctionSpec spec = sample_sigma_k(rng, 1, {NoiseKind::Sine});
    for (double x = -5.0; x <= 5.0; x += 0.05) {
      CHECK(spec.per_feature[0].variance(x) >= 0.01 * 0.01 - 1e-12);
    }
  }
}

TEST_CASE("sample_sigma_k: drawn spec matches its closed form at x = 0") {
  Rng rng(123);
  NoiseFunctionSpec spec = sample_sigma_k(rng, 3);
  for (const FeatureNoise& fn : spec.per_feature) {
    double want = 0.0;
    switch (fn.kind) {
      case NoiseKind::Constant: want = fn.a; break;
      case NoiseKind::Sine: want = fn.a * (std::sin(fn.p) + 1.0) / 2.0 + 0.01; break;
      case NoiseKind::ExpSigmoid: want = fn.a / (1.0 + std::exp(fn.c)); break;
    }
    CHECK(fn.scale(0.0) == Approx(want).margin(1e-15));
    CHECK(fn.variance(0.0) == Approx(want * want).margin(1e-15));
  }
}

TEST_CASE("sample_sigma_k: nonnegative variance over the standardized range") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    NoiseFunctionSpec spec = sample_sigma_k(rng, 2);
    for (const FeatureNoise& fn : spec.per_feature) {
      for (double x = -5.0; x <= 5.0; x += 0.1) CHECK(fn.variance(x) >= 0.0);
    }
  }
}

TEST_CASE("add_noise: zero variance passes features through") {
  NoiseFunctionSpec spec;
  FeatureNoise fn;
  fn.kind = NoiseKind::Constant;
  fn.a = 0.0;  // floorless hook: constant kind admits a = 0 when built by hand
  spec.per_feature = {fn, fn};
  Rng rng(5);
  Vector x(2);
  x << 1.5, -2.5;
  const Vector out = add_noise(x, spec, rng);
  CHECK(out[0] == 1.5);
  CHECK(out[1] == -2.5);
}

TEST_CASE("add_noise: CLT mean bound and MC variance") {
  NoiseFunctionSpec spec;
  FeatureNoise fn;
  fn.kind = NoiseKind::Constant;
  fn.a = 0.2;
  spec.per_feature = {fn};
  Rng rng(99);
  Vector x(1);
  x << 0.7;
  const int n = 100000;
  double mean = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = add_noise(x, spec, rng)[0] - x[0];
    const double delta = d - mean;
    mean += delta / (i + 1);
    m2 += delta * (d - mean);
  }
  const double var = m2 / (n - 1);
  const double sigma2 = fn.variance(x[0]);
  CHECK(std::abs(mean) <= 3.0 * std::sqrt(sigma2 / n));
  CHECK(std::abs(var - sigma2) / sigma2 <= 0.05);
}

TEST_CASE("ncl_loss: identical branches give zero") {
  GaussianDiag g;
  g.mean = (Vector(2) << 0.4, -1.0).finished();
  g.var = (Vector(2) << 0.5, 2.0).finished();
  CHECK(ncl_loss(g, g, 1.0, 1.0) == 0.0);
}

TEST_CASE("ncl_loss: hand case and lambda2 = 0 reduction") {
  GaussianDiag a, b;
  a.mean = (Vector(1) << 1.0).finished();
  a.var = (Vector(1) << 1.0).finished();
  b.mean = (Vector(1) << 0.0).finished();
  b.var = (Vector(1) << 1.0).finished();
  CHECK(ncl_loss(a, b, 1.0, 1.0) == Approx(1.0).margin(1e-15));

  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    GaussianDiag u, v;
    u.mean = Vector::Random(3);
    v.mean = Vector::Random(3);
    u.var = Vector::Random(3).cwiseAbs() + Vector::Constant(3, 0.1);
    v.var = Vector::Random(3).cwiseAbs() + Vector::Constant(3, 0.1);
    CHECK(ncl_loss(u, v, 0.7, 0.0) >= 0.0);
  }
}

TEST_CASE("ncl_loss: symmetric under branch swap") {
  Rng rng(44);
  for (int i = 0; i < 50; ++i) {
    GaussianDiag u, v;
    u.mean = Vector::Random(4);
    v.mean = Vector::Random(4);
    u.var = Vector::Random(4).cwiseAbs() + Vector::Constant(4, 0.05);
    v.var = Vector::Random(4).cwiseAbs() + Vector::Constant(4, 0.05);
    CHECK(ncl_loss(u, v, 1.3, 0.4) == Approx(ncl_loss(v, u, 1.3, 0.4)).margin(1e-12));
  }
}

TEST_CASE("ncl_loss: bounded below by -lambda2 * l * cap") {
  GaussianDiag u, v;
  u.mean = Vector::Zero(3);
  v.mean = Vector::Zero(3);
  u.var = Vector::Constant(3, 1e-6);
  v.var = Vector::Constant(3, 1e6);  // extreme separation saturates the cap
  const double cap = kNclDefaultCap;
  const double loss = ncl_loss(u, v, 1.0, 0.5, cap);
  CHECK(loss >= -0.5 * 3 * cap - 1e-12);
  CHECK(loss == Approx(-0.5 * 3 * cap).margin(1e-9));
}

TEST_CASE("ncl_loss: contract errors on nonpositive variance") {
  GaussianDiag u, v;
  u.mean = Vector::Zero(1);
  v.mean = Vector::Zero(1);
  u.var = (Vector(1) << -1.0).finished();
  v.var = (Vector(1) << 1.0).finished();
  CHECK_THROWS_AS(ncl_loss(u, v, 1.0, 1.0), contract_error);
}

TEST_CASE("ncl gradients through shared DTB branches match finite differences") {
  Rng rng(7);
  DTBParams dtb = make_dtb(2, 1, {4}, {3}, {3}, rng);
  RowVector x(2), x_noised(2);
  x << 0.2, -0.3;
  x_noised << 0.35, -0.42;  // frozen noise draw
  auto build = [&](ad::Tape& t, std::vector<BoundParams>& bound) {
    auto mk = [&](const MLPSpec& spec, std::size_t slot) {
      BoundMLP bm;
      bm.spec = &spec;
      for (int layer = 0; layer < spec.layer_count(); ++layer) {
        bm.wt.push_back(ad::transpose(bound[slot][static_cast<std::size_t>(2 * layer)]));
        bm.bt.push_back(ad::transpose(bound[slot][static_cast<std::size_t>(2 * layer + 1)]));
      }
      return bm;
    };
    BoundDTB b{mk(dtb.spec_mu, 0), mk(dtb.spec_si, 1), mk(dtb.spec_so, 2)};
    GaussNodes clean = dtb_forward_t(t, b, x);
    GaussNodes noised = dtb_forward_t(t, b, x_noised);  // same parameters, shared leaves
    return ncl_loss_t(t, clean, noised, 1.0, 0.1);
  };
  const double err = finite_difference_check(build, {&dtb.p_mu, &dtb.p_si, &dtb.p_so}, 1e-5);
  CHECK(err <= 1e-4);

  SECTION("tape value equals the plain evaluation") {
    GaussianDiag clean = dtb_forward(dtb, x.transpose());
    GaussianDiag noised = dtb_forward(dtb, x_noised.transpose());
    const double plain = ncl_loss(clean, noised, 1.0, 0.1);
    ad::Tape t2;
    std::vector<BoundParams> bound2(3);
    BoundDTB b2 = bind_dtb(t2, dtb, bound2);
    GaussNodes c2 = dtb_forward_t(t2, b2, x);
    GaussNodes n2 = dtb_forward_t(t2, b2, x_noised);
    const double taped = ad::scalar_value(ncl_loss_t(t2, c2, n2, 1.0, 0.1));
    CHECK(taped == Approx(plain).margin(1e-12));
  }
}
