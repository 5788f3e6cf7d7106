#include "tsnet/dtb.hpp"

#include "tsnet/gradcheck.hpp"

#include <catch2/catch.hpp>

using namespace tsnet;

TEST_CASE("variance_head: closed-form cases and monotonicity") {
  Vector raw(3);
  raw << 0.0, -40.0, 40.0;
  const Vector v = variance_head(raw);
  CHECK(v[0] == Approx(1.0 + 1e-6).margin(1e-15));
  CHECK(v[1] == Approx(std::exp(-12.0) + 1e-6).margin(1e-12));
  CHECK(v[2] == Approx(std::exp(12.0) + 1e-6).epsilon(1e-12));

  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const double a = uniform(rng, -20.0, 20.0);
    const double b = a + uniform(rng, 0.0, 5.0);
    Vector ra(1), rb(1);
    ra << a;
    rb << b;
    CHECK(variance_head(ra)[0] <= variance_head(rb)[0]);
  }

  Vector bad(1);
  bad << std::nan("");
  CHECK_THROWS_AS(variance_head(bad), numeric_error);
}

TEST_CASE("dtb_forward: constant mean net leaves var = system head exactly") {
  Rng rng(8);
  DTBParams dtb = make_dtb(2, 1, {4}, {3}, {3}, rng);
  dtb.p_mu.mats[2].setZero();  // zero output weights -> zero Jacobian
  Vector x(2);
  x << 0.3, -0.9;
  const GaussianDiag g = dtb_forward(dtb, x);
  const Vector so = variance_head(mlp_forward(dtb.spec_so, dtb.p_so, x));
  CHECK(g.var[0] == Approx(so[0]).margin(1e-15));
}

TEST_CASE("dtb_forward: linear mean hand case 0.33") {
  // mu = w.x with w = [1, 2]; si = [0.25, 0.01]; so = [0.04]
  // var = 1*0.25 + 4*0.01 + 0.04 = 0.33
  Matrix w(1, 2);
  w << 1.0, 2.0;
  Vector x(2);
  x << 0.7, -0.2;
  const Matrix j = w.transpose();
  Vector si(2);
  si << 0.25, 0.01;
  const double so = 0.04;
  const double var = (j.array().square().matrix().transpose() * si)(0) + so;
  CHECK(var == Approx(0.33).margin(1e-15));

  // same composition through the tape path, with heads forced to constants
  ad::Tape t;
  ad::Var jn = t.leaf(j);
  ad::Var sin = t.constant(si.transpose());
  ad::Var son = t.constant((Matrix(1, 1) << so).finished());
  ad::Var varn = ad::matmul(sin, ad::square(jn)) + son;
  CHECK(t.value(varn)(0, 0) == Approx(0.33).margin(1e-15));
}

TEST_CASE("dtb_forward: variance floor propagates when both heads saturate low") {
  Rng rng(15);
  DTBParams dtb = make_dtb(2, 1, {4}, {3}, {3}, rng);
  // push both raw heads to the clamp floor: huge negative bias on output layers
  dtb.p_si.mats.back().setConstant(-100.0);
  dtb.p_si.mats[dtb.p_si.mats.size() - 2].setZero();
  dtb.p_so.mats.back().setConstant(-100.0);
  dtb.p_so.mats[dtb.p_so.mats.size() - 2].setZero();
  Vector x(2);
  x << 0.1, 0.2;
  const GaussianDiag g = dtb_forward(dtb, x);
  const double floor_var = std::exp(-12.0) + kVarFloor;
  const Matrix j = mlp_input_jacobian(dtb.spec_mu, dtb.p_mu, x);
  const double want = floor_var * (1.0 + j.array().square().sum());
  CHECK(g.var[0] == Approx(want).epsilon(1e-12));
  CHECK(g.var[0] > 0.0);
}

TEST_CASE("dtb_forward: strictly positive variance property") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    DTBParams dtb = make_dtb(3, 2, {5}, {4}, {4}, rng);
    Vector x(3);
    x << normal(rng) * 3.0, normal(rng) * 3.0, normal(rng) * 3.0;
    const GaussianDiag g = dtb_forward(dtb, x);
    CHECK((g.var.array() > 0.0).all());
  }
}

TEST_CASE("dtb gradients: scalar functional of mean and var matches finite differences") {
  Rng rng(19);
  DTBParams dtb = make_dtb(2, 1, {4}, {3}, {3}, rng);
  RowVector x(2);
  x << 0.25, -0.5;
  auto build = [&](ad::Tape& t, std::vector<BoundParams>& bound) {
    BoundDTB b;
    auto mk = [&](const MLPSpec& spec, std::size_t slot) {
      BoundMLP bm;
      bm.spec = &spec;
      for (int layer = 0; layer < spec.layer_count(); ++layer) {
        bm.wt.push_back(ad::transpose(bound[slot][static_cast<std::size_t>(2 * layer)]));
        bm.bt.push_back(ad::transpose(bound[slot][static_cast<std::size_t>(2 * layer + 1)]));
      }
      return bm;
    };
    b.mu = mk(dtb.spec_mu, 0);
    b.si = mk(dtb.spec_si, 1);
    b.so = mk(dtb.spec_so, 2);
    GaussNodes g = dtb_forward_t(t, b, x);
    return ad::sum(ad::square(g.mean)) + ad::sum(ad::log(g.var));
  };
  const double err = finite_difference_check(build, {&dtb.p_mu, &dtb.p_si, &dtb.p_so}, 1e-5);
  CHECK(err <= 1e-4);
}

TEST_CASE("taylor_variance_mc_check: identity and sin oracles") {
  Rng rng(101);
  SECTION("identity function") {
    auto r = taylor_variance_mc_check([](double t) { return t; }, 0.0, 0.01, 0.04, 1000000, rng);
    CHECK(r.analytic == Approx(0.05).margin(1e-9));
    CHECK(std::abs(r.empirical - r.analytic) / r.analytic <= 0.02);
  }
  SECTION("sin at 0.3") {
    auto r = taylor_variance_mc_check([](double t) { return std::sin(t); }, 0.3, 0.01, 0.04, 1000000, rng);
    const double want = std::cos(0.3) * std::cos(0.3) * 0.01 + 0.04;
    CHECK(r.analytic == Approx(want).margin(1e-6));
    CHECK(std::abs(r.empirical - want) / want <= 0.02);
  }
  SECTION("zero noise degenerates to zero") {
    auto r = taylor_variance_mc_check([](double t) { return std::sin(t); }, 0.3, 0.0, 0.0, 100000, rng);
    CHECK(r.analytic == 0.0);
    CHECK(r.empirical == 0.0);
  }
}

TEST_CASE("linear mean: empirical variance converges to the first-order value") {
  // first-order truncation is exact for linear f, so MC agrees at 1e6 samples
  Rng rng(55);
  auto r = taylor_variance_mc_check([](double t) { return 2.5 * t - 1.0; }, 0.4, 0.09, 0.01, 1000000, rng);
  CHECK(r.analytic == Approx(2.5 * 2.5 * 0.09 + 0.01).margin(1e-9));
  CHECK(std::abs(r.empirical - r.analytic) / r.analytic <= 0.02);
}
