#pragma once

// Training loop: batched loss assembly on the tape, Adam updates with global
// gradient clipping, per-epoch validation with best-model retention, and the
// density calibration recorded at train end.

#include "tsnet/core.hpp"
#include "tsnet/data.hpp"
#include "tsnet/dpm.hpp"
#include "tsnet/gradcheck.hpp"
#include "tsnet/loss.hpp"
#include "tsnet/model.hpp"
#include "tsnet/ncl.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace tsnet {

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  double nll = 0.0;
};

// MSE/MAE over all entries; NLL averaged over samples and output dimensions.
inline Metrics metrics(const Matrix& y_true, const Matrix& mu, const Matrix& var) {
  if (y_true.rows() != mu.rows() || y_true.cols() != mu.cols() || var.rows() != mu.rows() ||
      var.cols() != mu.cols()) {
    throw shape_error("metrics: shape mismatch");
  }
  if ((var.array() <= 0.0).any()) throw contract_error("metrics: NLL requires positive variances");
  Metrics m;
  const Matrix diff = y_true - mu;
  m.mse = diff.array().square().mean();
  m.mae = diff.array().abs().mean();
  m.nll = (0.5 * var.array().log() + diff.array().square() / (2.0 * var.array())).mean();
  return m;
}

struct TrainConfig {
  Variant variant = Variant::TsnetFull;
  ModelHyper hyper;

  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 64;
  int max_epochs = 2000;
  int patience = 200;
  double grad_clip = 10.0;

  LossWeights weights;
  double ncl_lambda1 = 1.0;
  double ncl_lambda2 = 0.1;
  double ncl_cap = kNclDefaultCap;
  std::vector<NoiseKind> ncl_library{NoiseKind::Constant, NoiseKind::Sine, NoiseKind::ExpSigmoid};

  int dpm_k = 5;
  double sigma_aug_scale = 0.1;

  double prior_var_scale = 4.0;
  std::optional<Vector> prior_mu;  // default: training-label mean
};

struct EpochRecord {
  int epoch = 0;
  double cl = 0.0, kl = 0.0, hmse = 0.0, total = 0.0;
  double val_mse = 0.0, val_mae = 0.0, val_nll = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  TSNetModel model;
  TrainHistory history;
  bool diverged = false;
  std::string diagnostic;
};

// Standardize raw-unit features with the dataset's recorded transforms.
inline Matrix standardize_features(const Dataset& ds, const Matrix& raw) {
  if (raw.cols() != ds.m()) throw shape_error("standardize_features: width mismatch");
  Matrix out(raw.rows(), raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      out(i, j) = transform_value(ds.x_tf[static_cast<std::size_t>(j)], raw(i, j));
    }
  }
  return out;
}

// Predictions mapped back to raw label units (delta-method variances).
struct RawPredictions {
  Matrix mu, var;
  Vector kd;
};

inline RawPredictions predictions_to_raw(const Dataset& ds, const Predictions& p) {
  RawPredictions out;
  out.mu.resize(p.mu.rows(), p.mu.cols());
  out.var.resize(p.var.rows(), p.var.cols());
  out.kd = p.kd;
  for (Eigen::Index j = 0; j < p.mu.cols(); ++j) {
    const ColumnTransform& tf = ds.y_tf[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < p.mu.rows(); ++i) {
      out.mu(i, j) = invert_value(tf, p.mu(i, j));
      out.var(i, j) = std::max(invert_variance(tf, p.mu(i, j), p.var(i, j)), kVarFloor);
    }
  }
  return out;
}

inline Matrix labels_to_raw(const Dataset& ds, const Matrix& y_std) {
  Matrix out(y_std.rows(), y_std.cols());
  for (Eigen::Index j = 0; j < y_std.cols(); ++j) {
    for (Eigen::Index i = 0; i < y_std.rows(); ++i) {
      out(i, j) = invert_value(ds.y_tf[static_cast<std::size_t>(j)], y_std(i, j));
    }
  }
  return out;
}

namespace detail {

struct Adam {
  double lr, b1, b2, eps;
  int t = 0;
  std::vector<Vector> m1, m2;

  Adam(double lr_, double b1_, double b2_, double eps_, const std::vector<ParamStore*>& stores)
      : lr(lr_), b1(b1_), b2(b2_), eps(eps_) {
    for (const ParamStore* ps : stores) {
      m1.push_back(Vector::Zero(ps->flat_size()));
      m2.push_back(Vector::Zero(ps->flat_size()));
    }
  }

  void step(const std::vector<ParamStore*>& stores, const std::vector<Vector>& grads) {
    ++t;
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    for (std::size_t s = 0; s < stores.size(); ++s) {
      Vector flat = stores[s]->to_flat();
      m1[s] = b1 * m1[s] + (1.0 - b1) * grads[s];
      m2[s] = b2 * m2[s] + (1.0 - b2) * grads[s].cwiseProduct(grads[s]);
      flat -= lr * (m1[s] / c1).cwiseQuotient(((m2[s] / c2).cwiseSqrt().array() + eps).matrix());
      stores[s]->from_flat(flat);
    }
  }
};

inline void clip_global_norm(std::vector<Vector>& grads, double max_norm) {
  double sq = 0.0;
  for (const Vector& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (Vector& g : grads) g *= scale;
  }
}

struct ModelSnapshot {
  ParamStore p_mu, p_si, p_so, dn;
};

inline ModelSnapshot snapshot(const TSNetModel& m) {
  return {m.p_mu, m.p_si, m.p_so, m.dnp.store};
}

inline void restore(TSNetModel& m, const ModelSnapshot& s) {
  m.p_mu = s.p_mu;
  m.p_si = s.p_si;
  m.p_so = s.p_so;
  m.dnp.store = s.dn;
}

inline DensityCalibration calibrate(const TSNetModel& model, const Matrix& train_X_std) {
  DensityCalibration cal;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Eigen::Index i = 0; i < train_X_std.rows(); ++i) {
    const double s = density_score(model.dnp, train_X_std.row(i).transpose());
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  cal.s_min = lo;
  cal.s_max = hi;
  return cal;
}

// Gaussian nodes for one embedded sample under either network family.
inline GaussNodes sample_gaussian_t(ad::Tape& tape, const TSNetModel& model, const BoundMLP& b_mu,
                                    const BoundMLP& b_si, const BoundMLP& b_so, const RowVector& x_emb) {
  if (uses_dtb(model.variant)) {
    auto mu = mlp_forward_with_jacobian_t(tape, b_mu, x_emb);
    ad::Var si = variance_head_t(tape, mlp_forward_t(tape, b_si, x_emb));
    ad::Var so = variance_head_t(tape, mlp_forward_t(tape, b_so, x_emb));
    ad::Var var = ad::matmul(si, ad::square(mu.jacobian)) + so;
    return {mu.out, var};
  }
  ad::Var mean = mlp_forward_t(tape, b_mu, x_emb);
  ad::Var var = variance_head_t(tape, mlp_forward_t(tape, b_so, x_emb));
  return {mean, var};
}

}  // namespace detail

// Parameter leaves plus per-network binding for one tape.
struct BoundModel {
  BoundMLP mu, si, so;
  BoundDensityNet dn;
  bool with_dtb = false, with_ncl = false, with_dpn = false;
};

inline BoundModel bind_model(ad::Tape& tape, const TSNetModel& model, std::vector<BoundParams>& leaves) {
  BoundModel bm;
  bm.with_dtb = uses_dtb(model.variant);
  bm.with_ncl = uses_ncl(model.variant);
  bm.with_dpn = uses_dpn(model.variant);
  leaves.clear();
  leaves.resize(bm.with_dtb ? (bm.with_dpn ? 4 : 3) : (bm.with_dpn ? 3 : 2));
  std::size_t slot = 0;
  bm.mu = bind_mlp(tape, model.spec_mu, model.p_mu, leaves[slot++]);
  if (bm.with_dtb) bm.si = bind_mlp(tape, model.spec_si, model.p_si, leaves[slot++]);
  bm.so = bind_mlp(tape, model.spec_so, model.p_so, leaves[slot++]);
  if (bm.with_dpn) bm.dn = bind_density_net(tape, model.dnp, leaves[slot++]);
  return bm;
}

struct BatchGauss {
  ad::Var mean;  // batch x l
  ad::Var var;
};

// Whole-batch network Gaussian: the DTB variance contracts the per-direction
// tangent streams against the feature-noise head, column by column.
inline BatchGauss batch_gaussian_t(ad::Tape& tape, const BoundModel& bm, const Matrix& X_emb) {
  if (bm.with_dtb) {
    auto mu = mlp_forward_batch_with_jacobian_t(tape, bm.mu, X_emb);
    ad::Var si = variance_head_t(tape, mlp_forward_batch_t(tape, bm.si, X_emb));  // b x m
    ad::Var so = variance_head_t(tape, mlp_forward_batch_t(tape, bm.so, X_emb));  // b x l
    ad::Var var = so;
    for (int d = 0; d < mu.input_width(); ++d) {
      var = var + ad::mul_col_bcast(ad::square(mu.tangent_block(d)), ad::col_slice(si, d));
    }
    return {mu.out, var};
  }
  ad::Var mean = mlp_forward_batch_t(tape, bm.mu, X_emb);
  ad::Var var = variance_head_t(tape, mlp_forward_batch_t(tape, bm.so, X_emb));
  return {mean, var};
}

// One training batch with every stochastic draw frozen, so the loss is a
// deterministic function of the parameters (finite-difference checkable).
// kd_shift/kd_scale hold the epoch-level full-set score normalization
// (Algorithm-1 style: k_d is normalized over the whole training set, refreshed
// each epoch, then used as an affine map inside the step).
struct FrozenBatch {
  Matrix X_emb;     // b x m_emb, clean inputs
  Matrix Xn_emb;    // b x m_emb, re-noised inputs (ncl only)
  Matrix Y;         // b x l, standardized labels
  Matrix eps;       // b x l, reparameterization draws
  Matrix q_points;  // 2b x m_raw density queries: originals then twins (dpn only)
  Vector rho;       // 2b density target probabilities (dpn only)
  double kd_shift = 0.0;  // epoch s_min
  double kd_scale = 1.0;  // 1 / (epoch s_max - s_min + 1e-12)
};

struct BatchLossNodes {
  ad::Var total, cl, kl, hmse;
};

inline BatchLossNodes build_batch_loss_t(ad::Tape& tape, const BoundModel& bm, const PriorSpec& prior,
                                         const TrainConfig& cfg, const FrozenBatch& fb) {
  const Eigen::Index b = fb.X_emb.rows();
  const Eigen::Index l = fb.Y.cols();
  const double inv_b = 1.0 / static_cast<double>(b);
  BatchLossNodes out;

  BatchGauss clean = batch_gaussian_t(tape, bm, fb.X_emb);

  if (bm.with_ncl) {
    BatchGauss noised = batch_gaussian_t(tape, bm, fb.Xn_emb);
    ad::Var mean_term = ad::sum(ad::square(clean.mean - noised.mean));
    ad::Var logdiff = ad::log(clean.var) - ad::log(noised.var);
    ad::Var sep = ad::sum(tape.clamp(ad::square(logdiff), -1.0, cfg.ncl_cap));
    out.cl = (mean_term * cfg.ncl_lambda1 - sep * cfg.ncl_lambda2) * inv_b;
  }

  BatchGauss combined = clean;
  if (bm.with_dpn) {
    ad::Var scores = density_scores_batch_t(tape, bm.dn, fb.q_points);  // 2b x 1
    ad::Var kappa = ad::row_softmax(ad::transpose(scores));
    out.kl = kl_loss_t(tape, kappa, fb.rho);

    // Train-time k_d: scores mapped through the epoch's full-train-set
    // min-max (held constant within the step).
    ad::Var orig = ad::row_block(scores, 0, static_cast<int>(b));  // b x 1
    ad::Var kd_col = ad::clamp((orig + (-fb.kd_shift)) * fb.kd_scale, 0.0, 1.0);  // b x 1
    ad::Var om_col = ad::neg(kd_col) + 1.0;
    ad::Var mu_p = tape.constant(prior.mu_p.transpose().replicate(b, 1));
    ad::Var var_p = tape.constant(prior.var_p.transpose().replicate(b, 1));
    combined.mean = ad::mul_col_bcast(clean.mean, kd_col) + ad::mul_col_bcast(mu_p, om_col);
    combined.var = ad::mul_col_bcast(clean.var, ad::square(kd_col)) +
                   ad::mul_col_bcast(var_p, ad::square(om_col));
  }

  ad::Var y_tilde = combined.mean + ad::cmul_const(ad::sqrt(combined.var), fb.eps);
  ad::Var resid = tape.constant(fb.Y) - y_tilde;
  ad::Var quad = ad::sum(ad::square(resid) / combined.var);
  out.hmse = (ad::sum(ad::log(combined.var)) * cfg.weights.lambda_h + quad) * inv_b;
  (void)l;

  out.total = out.hmse;
  if (bm.with_ncl) out.total = out.total + out.cl * cfg.weights.lambda_cl;
  if (bm.with_dpn) out.total = out.total + out.kl * cfg.weights.lambda_kl;
  return out;
}

inline TrainResult train(const TrainConfig& cfg, const Dataset& ds, std::uint64_t seed) {
  cfg.weights.validate();
  if (ds.train_idx.empty()) throw contract_error("train: dataset has no training split");
  const bool with_ncl = uses_ncl(cfg.variant);
  const bool with_dpn = uses_dpn(cfg.variant);

  Rng rng(seed);
  TrainResult result;
  result.model = init_model(cfg.variant, ds.m(), ds.l(), cfg.hyper, rng());
  TSNetModel& model = result.model;

  // Data-scaled prior: label mean and var_scale * label variance per output.
  const Matrix train_Y = ds.train_Y();
  {
    Vector mean = train_Y.colwise().mean();
    Vector var(ds.l());
    for (int j = 0; j < ds.l(); ++j) {
      var[j] = std::max((train_Y.col(j).array() - mean[j]).square().mean() * cfg.prior_var_scale, kVarFloor);
    }
    model.prior.mu_p = cfg.prior_mu.value_or(mean);
    model.prior.var_p = var;
    model.prior.validate();
  }

  const Matrix train_X = ds.train_X();
  const int n_train = static_cast<int>(train_X.rows());
  Matrix train_X_emb = positional_embed(train_X, cfg.hyper.embed_L);

  // Density targets: KNN mass for train + augmented queries against the
  // original train points. The raw inverse-square masses span many orders of
  // magnitude on continuous data, which turns their softmax into a delta
  // spike; the scorer is therefore trained against the log-compressed mass
  // (same ordering, usable softmax), renormalized per batch.
  Matrix dpm_queries;
  Vector dpm_log_raw;
  if (with_dpn) {
    if (n_train <= cfg.dpm_k + 1) throw contract_error("train: too few training rows for dpm.k");
    dpm_queries = augment_features(train_X, cfg.sigma_aug_scale, rng);
    dpm_log_raw = knn_raw(dpm_queries, train_X, cfg.dpm_k, /*exclude_self_index=*/true).array().log();
  }

  std::vector<ParamStore*> stores = model.trainable();
  detail::Adam adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, stores);

  auto validation_metrics = [&](const std::optional<DensityCalibration>& cal) {
    const Matrix vx = ds.val_X().size() > 0 ? ds.val_X() : train_X;
    const Matrix vy = ds.val_Y().size() > 0 ? ds.val_Y() : train_Y;
    TSNetModel probe = model;  // shallow parameter copy for calibrated predict
    probe.cal = cal;
    Predictions p = predict(probe, vx);
    RawPredictions raw = predictions_to_raw(ds, p);
    return metrics(labels_to_raw(ds, vy), raw.mu, raw.var);
  };

  detail::ModelSnapshot best = detail::snapshot(model);
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;

  std::vector<int> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double ep_cl = 0.0, ep_kl = 0.0, ep_hmse = 0.0, ep_total = 0.0;
    int batches = 0;
    bool blew_up = false;
    std::string blow_up_msg;

    double kd_shift = 0.0, kd_scale = 1.0;
    if (with_dpn) {
      // Train-time denominator is floored at 1: as the loss pushes k_d toward
      // 1 the score range would otherwise collapse and the 1/range factor
      // turns into an unbounded gradient amplifier. The floor makes the
      // scorer spread its outputs instead; inference keeps the exact min-max.
      const DensityCalibration cal = detail::calibrate(model, train_X);
      kd_shift = cal.s_min;
      kd_scale = 1.0 / std::max(cal.s_max - cal.s_min, 1.0);
    }

    for (int start = 0; start < n_train && !blew_up; start += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n_train - start);
      std::vector<int> batch(order.begin() + start, order.begin() + start + bsz);

      // Freeze every stochastic draw up front.
      FrozenBatch fb;
      fb.X_emb.resize(bsz, train_X_emb.cols());
      fb.Y.resize(bsz, ds.l());
      fb.eps.resize(bsz, ds.l());
      for (int i = 0; i < bsz; ++i) {
        fb.X_emb.row(i) = train_X_emb.row(batch[static_cast<std::size_t>(i)]);
        fb.Y.row(i) = train_Y.row(batch[static_cast<std::size_t>(i)]);
      }
      if (with_ncl) {
        NoiseFunctionSpec sigma_k = sample_sigma_k(rng, ds.m(), cfg.ncl_library);
        fb.Xn_emb.resize(bsz, train_X_emb.cols());
        for (int i = 0; i < bsz; ++i) {
          Vector noised = add_noise(train_X.row(batch[static_cast<std::size_t>(i)]).transpose(), sigma_k, rng);
          fb.Xn_emb.row(i) = positional_embed_row(noised.transpose(), cfg.hyper.embed_L);
        }
      }
      if (with_dpn) {
        fb.q_points.resize(2 * bsz, train_X.cols());
        Vector log_raw(2 * bsz);
        for (int i = 0; i < bsz; ++i) {
          fb.q_points.row(i) = dpm_queries.row(batch[static_cast<std::size_t>(i)]);
          fb.q_points.row(bsz + i) = dpm_queries.row(n_train + batch[static_cast<std::size_t>(i)]);
          log_raw[i] = dpm_log_raw[batch[static_cast<std::size_t>(i)]];
          log_raw[bsz + i] = dpm_log_raw[n_train + batch[static_cast<std::size_t>(i)]];
        }
        fb.rho = softmax(log_raw);
        fb.kd_shift = kd_shift;
        fb.kd_scale = kd_scale;
      }
      for (int i = 0; i < bsz; ++i) {
        for (int j = 0; j < ds.l(); ++j) fb.eps(i, j) = normal(rng);
      }

      try {
        ad::Tape tape;
        std::vector<BoundParams> leaves;
        BoundModel bm = bind_model(tape, model, leaves);
        BatchLossNodes loss = build_batch_loss_t(tape, bm, model.prior, cfg, fb);

        const double total_v = ad::scalar_value(loss.total);
        if (!std::isfinite(total_v)) throw numeric_error("non-finite total loss");

        tape.backward(loss.total);
        std::vector<Vector> grads(stores.size());
        for (std::size_t s = 0; s < stores.size(); ++s) {
          grads[s].resize(stores[s]->flat_size());
          std::int64_t k = 0;
          for (ad::Var leaf : leaves[s]) {
            const Matrix g = tape.grad(leaf);
            for (Eigen::Index r = 0; r < g.rows(); ++r)
              for (Eigen::Index c = 0; c < g.cols(); ++c) grads[s][k++] = g(r, c);
          }
          if (!grads[s].allFinite()) throw numeric_error("non-finite gradient");
        }
        detail::clip_global_norm(grads, cfg.grad_clip);
        adam.step(stores, grads);

        ep_hmse += ad::scalar_value(loss.hmse);
        if (with_ncl) ep_cl += ad::scalar_value(loss.cl);
        if (with_dpn) ep_kl += ad::scalar_value(loss.kl);
        ep_total += total_v;
        ++batches;
      } catch (const numeric_error& e) {
        blew_up = true;
        blow_up_msg = e.what();
      }
    }

    if (blew_up) {
      detail::restore(model, best);
      if (with_dpn) model.cal = detail::calibrate(model, train_X);
      result.diverged = true;
      result.diagnostic = "training diverged at epoch " + std::to_string(epoch) + ": " + blow_up_msg +
                          "; restored best checkpoint from epoch " + std::to_string(best_epoch);
      return result;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.cl = ep_cl / std::max(batches, 1);
    rec.kl = ep_kl / std::max(batches, 1);
    rec.hmse = ep_hmse / std::max(batches, 1);
    rec.total = ep_total / std::max(batches, 1);

    std::optional<DensityCalibration> cal;
    if (with_dpn) cal = detail::calibrate(model, train_X);
    const Metrics vm = validation_metrics(cal);
    rec.val_mse = vm.mse;
    rec.val_mae = vm.mae;
    rec.val_nll = vm.nll;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(rec);

    if (vm.mse < best_val) {
      best_val = vm.mse;
      best = detail::snapshot(model);
      best_epoch = epoch;
    }
    if (cfg.patience > 0 && epoch - best_epoch >= cfg.patience) break;
  }

  detail::restore(model, best);
  if (with_dpn) model.cal = detail::calibrate(model, train_X);
  return result;
}

}  // namespace tsnet
