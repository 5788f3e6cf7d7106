#include "tsnet/train.hpp"

#include <catch2/catch.hpp>

#include <cstring>

using namespace tsnet;

namespace {

// Small configuration for fast smoke-level training.
TrainConfig tiny_config(Variant v) {
  TrainConfig tc;
  tc.variant = v;
  tc.hyper.mu_hidden = {8, 8};
  tc.hyper.si_hidden = {6};
  tc.hyper.so_hidden = {6};
  tc.hyper.embed_L = 1;
  tc.hyper.dpm_embed_dim = 4;
  tc.batch_size = 32;
  tc.max_epochs = 3;
  tc.patience = 0;
  return tc;
}

}  // namespace

TEST_CASE("metrics: hand cases and sign symmetry") {
  Matrix y(1, 1), mu(1, 1), var(1, 1);
  y << 1.0;
  mu << 1.0;
  var << 1.0;
  const Metrics zero = metrics(y, mu, var);
  CHECK(zero.mse == 0.0);
  CHECK(zero.mae == 0.0);
  CHECK(zero.nll == 0.0);

  mu << -1.0;  // residual 2, sigma 1
  const Metrics m = metrics(y, mu, var);
  CHECK(m.mse == 4.0);
  CHECK(m.mae == 2.0);
  CHECK(m.nll == Approx(2.0).margin(1e-15));

  const Metrics flipped = metrics(-y, -mu, var);
  CHECK(flipped.mse == m.mse);
  CHECK(flipped.mae == m.mae);
  CHECK(flipped.nll == Approx(m.nll).margin(1e-15));

  var << 0.0;
  CHECK_THROWS_AS(metrics(y, mu, var), contract_error);
}

TEST_CASE("train: zero epochs returns an initialized model and empty history") {
  ToyData td = gen_toy1d(31);
  TrainConfig tc = tiny_config(Variant::TsnetFull);
  tc.max_epochs = 0;
  TrainResult r = train(tc, td.ds, 5);
  CHECK(r.history.epochs.empty());
  CHECK_FALSE(r.diverged);
  CHECK(r.model.cal.has_value());  // calibration recorded even for 0-epoch runs
  const Matrix X = standardize_features(td.ds, td.eval_X);
  CHECK_NOTHROW(predict(r.model, X));
}

TEST_CASE("train: identical config and seed reproduce validation MSE bitwise") {
  ToyData td = gen_toy1d(17);
  TrainConfig tc = tiny_config(Variant::TsnetFull);
  TrainResult a = train(tc, td.ds, 9);
  ToyData td2 = gen_toy1d(17);
  TrainResult b = train(tc, td2.ds, 9);
  REQUIRE(a.history.epochs.size() == b.history.epochs.size());
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
    const double va = a.history.epochs[i].val_mse;
    const double vb = b.history.epochs[i].val_mse;
    CHECK(std::memcmp(&va, &vb, sizeof(double)) == 0);
  }
}

TEST_CASE("train: returned model's validation MSE is the history minimum") {
  ToyData td = gen_toy1d(23);
  TrainConfig tc = tiny_config(Variant::Dtb);
  tc.max_epochs = 6;
  TrainResult r = train(tc, td.ds, 3);
  REQUIRE_FALSE(r.history.epochs.empty());
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : r.history.epochs) best = std::min(best, e.val_mse);
  TSNetModel probe = r.model;
  Predictions p = predict(probe, td.ds.val_X());
  RawPredictions raw = predictions_to_raw(td.ds, p);
  const Metrics m = metrics(labels_to_raw(td.ds, td.ds.val_Y()), raw.mu, raw.var);
  CHECK(m.mse == Approx(best).margin(1e-12));
}

TEST_CASE("build_variant: all 8 kinds construct and complete one epoch on toy data") {
  ToyData td = gen_toy1d(41);
  for (Variant v : all_variants()) {
    TrainConfig tc = tiny_config(v);
    tc.max_epochs = 1;
    TrainResult r = train(tc, td.ds, 2);
    CHECK_FALSE(r.diverged);
    CHECK(r.history.epochs.size() == 1);
    const Matrix X = standardize_features(td.ds, td.eval_X);
    Predictions p = predict(r.model, X);
    CHECK(p.mu.allFinite());
    CHECK((p.var.array() > 0.0).all());
    if (!uses_dpn(v)) {
      CHECK((p.kd.array() == 1.0).all());  // k_d is pinned to 1 without DPM
    }
  }
}

TEST_CASE("variant toggles: mlp kind reduces the loss to HMSE only") {
  ToyData td = gen_toy1d(43);
  TrainConfig tc = tiny_config(Variant::Mlp);
  tc.max_epochs = 2;
  TrainResult r = train(tc, td.ds, 4);
  for (const auto& e : r.history.epochs) {
    CHECK(e.cl == 0.0);
    CHECK(e.kl == 0.0);
    CHECK(e.total == Approx(e.hmse).margin(1e-12));
  }
}

TEST_CASE("predict: purity and the uncalibrated contract") {
  ToyData td = gen_toy1d(47);
  TrainConfig tc = tiny_config(Variant::TsnetFull);
  tc.max_epochs = 2;
  TrainResult r = train(tc, td.ds, 6);
  const Matrix X = standardize_features(td.ds, td.eval_X);
  Predictions p1 = predict(r.model, X);
  Predictions p2 = predict(r.model, X);
  CHECK((p1.mu - p2.mu).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p1.var - p2.var).cwiseAbs().maxCoeff() == 0.0);

  TSNetModel uncal = init_model(Variant::TsnetFull, 1, 1, tc.hyper, 1);
  CHECK_THROWS_AS(predict(uncal, X), contract_error);
}

TEST_CASE("predict: degenerate calibration with a constant scorer yields the prior") {
  TrainConfig tc = tiny_config(Variant::TsnetFull);
  TSNetModel model = init_model(Variant::TsnetFull, 1, 1, tc.hyper, 11);
  model.prior.mu_p = (Vector(1) << 1.25).finished();
  model.prior.var_p = (Vector(1) << 4.0).finished();
  // constant scorer: zero all density parameters -> s(x) identical everywhere
  for (Matrix& m : model.dnp.store.mats) m.setZero();
  Vector probe(1);
  probe << 0.3;
  const double s = density_score(model.dnp, probe);
  model.cal = DensityCalibration{s, s};
  Matrix X(3, 1);
  X << -2.0, 0.0, 2.0;
  Predictions p = predict(model, X);
  for (int i = 0; i < 3; ++i) {
    CHECK(p.kd[i] == 0.0);
    CHECK(p.mu(i, 0) == Approx(1.25).margin(1e-12));
    CHECK(p.var(i, 0) == Approx(4.0).margin(1e-12));
  }
}

TEST_CASE("end-to-end gradient check: full total loss on a 2-sample batch, tiny nets") {
  // Freeze all stochastic draws, then compare the tape gradient of the
  // complete loss (CL + KL + HMSE through the Jacobian path) against central
  // differences for every parameter.
  Rng rng(71);
  const int m = 2, l = 1;
  DTBParams dtb = make_dtb(m, l, {4}, {3}, {3}, rng);
  DensityNetParams dnp = make_density_net(m, 3, rng);

  Matrix X(2, m);
  X << 0.3, -0.5, -0.8, 0.9;
  Matrix Xn = X;  // frozen NCL noise
  Xn(0, 0) += 0.12;
  Xn(0, 1) -= 0.07;
  Xn(1, 0) -= 0.05;
  Xn(1, 1) += 0.2;
  Matrix Y(2, l);
  Y << 0.7, -0.4;
  Matrix eps(2, l);
  eps << 0.41, -0.83;  // frozen reparameterization draws
  Vector rho(4);
  rho << 0.3, 0.2, 0.25, 0.25;  // frozen density targets over batch + twins
  Matrix Q(4, m);               // frozen query points (originals + twins)
  Q << 0.3, -0.5, -0.8, 0.9, 0.33, -0.48, -0.85, 0.93;
  PriorSpec prior;
  prior.mu_p = (Vector(1) << 0.1).finished();
  prior.var_p = (Vector(1) << 2.0).finished();
  LossWeights w;

  auto build = [&](ad::Tape& t, std::vector<BoundParams>& bp) {
    auto mk = [&](const MLPSpec& spec, std::size_t slot) {
      BoundMLP bm;
      bm.spec = &spec;
      for (int layer = 0; layer < spec.layer_count(); ++layer) {
        bm.wt.push_back(ad::transpose(bp[slot][static_cast<std::size_t>(2 * layer)]));
        bm.bt.push_back(ad::transpose(bp[slot][static_cast<std::size_t>(2 * layer + 1)]));
      }
      return bm;
    };
    BoundDTB b{mk(dtb.spec_mu, 0), mk(dtb.spec_si, 1), mk(dtb.spec_so, 2)};
    BoundDensityNet bd{&dnp, bp[3]};

    std::vector<ad::Var> cl_terms, hmse_terms, scores;
    std::vector<GaussNodes> clean(2);
    for (int i = 0; i < 2; ++i) {
      clean[static_cast<std::size_t>(i)] = dtb_forward_t(t, b, X.row(i));
      GaussNodes noised = dtb_forward_t(t, b, Xn.row(i));
      cl_terms.push_back(ncl_loss_t(t, clean[static_cast<std::size_t>(i)], noised, 1.0, 0.1));
    }
    for (int i = 0; i < 4; ++i) scores.push_back(density_score_t(t, bd, Q.row(i)));
    ad::Var kappa = ad::row_softmax(ad::transpose(ad::vstack(scores)));
    ad::Var kl_node = kl_loss_t(t, kappa, rho);

    std::vector<ad::Var> originals(scores.begin(), scores.begin() + 2);
    ad::Var orig_row = ad::transpose(ad::vstack(originals));
    ad::Var s_min = ad::min_entry(orig_row);
    ad::Var s_max = ad::max_entry(orig_row);
    ad::Var denom = (s_max - s_min) + 1e-12;
    for (int i = 0; i < 2; ++i) {
      ad::Var kd = ad::clamp((originals[static_cast<std::size_t>(i)] - s_min) / denom, 0.0, 1.0);
      GaussNodes combined = uco_combine_t(t, kd, clean[static_cast<std::size_t>(i)], prior);
      ad::Var y_tilde = reparam_sample_t(t, combined, eps.row(i));
      hmse_terms.push_back(hmse_loss_t(t, Y.row(i), y_tilde, combined.var, w.lambda_h));
    }
    ad::Var total = ad::sum(ad::vstack(hmse_terms)) * 0.5;
    total = total + ad::sum(ad::vstack(cl_terms)) * (0.5 * w.lambda_cl);
    total = total + kl_node * w.lambda_kl;
    return total;
  };

  const double err =
      finite_difference_check(build, {&dtb.p_mu, &dtb.p_si, &dtb.p_so, &dnp.store}, 1e-5);
  CHECK(err <= 1e-4);
}
