#pragma once

// Uncertainty combination, heteroscedastic MSE, and total-loss assembly.

#include "tsnet/core.hpp"
#include "tsnet/gaussian.hpp"
#include "tsnet/tape.hpp"

namespace tsnet {

struct LossWeights {
  double lambda_h = 1.0;
  double lambda_cl = 1.0;
  double lambda_kl = 1.0;

  void validate() const {
    if (!(lambda_h >= 0.0 && lambda_cl >= 0.0 && lambda_kl >= 0.0)) {
      throw contract_error("LossWeights: weights must be nonnegative");
    }
  }
};

// mean = kd mu_n + (1-kd) mu_p; var = kd^2 var_n + (1-kd)^2 var_p.
inline GaussianDiag uco_combine(double kd, const GaussianDiag& n, const PriorSpec& p) {
  n.validate();
  p.validate();
  if (n.mean.size() != p.mu_p.size()) throw shape_error("uco_combine: dimension mismatch");
  if (kd < 0.0 || kd > 1.0) throw contract_error("uco_combine: kd must lie in [0, 1]");
  GaussianDiag out;
  out.mean = kd * n.mean + (1.0 - kd) * p.mu_p;
  out.var = kd * kd * n.var + (1.0 - kd) * (1.0 - kd) * p.var_p;
  return out;
}

// kd is a 1x1 node so gradients reach the density scorer.
inline GaussNodes uco_combine_t(ad::Tape& tape, ad::Var kd, GaussNodes n, const PriorSpec& p) {
  const Eigen::Index l = p.mu_p.size();
  ad::Var one_minus = ad::neg(kd) + 1.0;
  Matrix mu_p = p.mu_p.transpose();
  Matrix var_p = p.var_p.transpose();
  ad::Var kd_row = ad::matmul(kd, tape.constant(Matrix::Ones(1, l)));          // 1 x l
  ad::Var om_row = ad::matmul(one_minus, tape.constant(Matrix::Ones(1, l)));   // 1 x l
  GaussNodes out;
  out.mean = kd_row * n.mean + ad::cmul_const(om_row, mu_p);
  out.var = ad::square(kd_row) * n.var + ad::cmul_const(ad::square(om_row), var_p);
  return out;
}

// lambda_h * sum_k log var_k + sum_k (y_k - ytilde_k)^2 / var_k.
inline double hmse_loss(const Vector& y, const Vector& y_tilde, const Vector& var, double lambda_h) {
  if (y.size() != y_tilde.size() || y.size() != var.size()) throw shape_error("hmse_loss: length mismatch");
  if ((var.array() <= 0.0).any()) throw contract_error("hmse_loss: variances must be positive");
  const double log_term = var.array().log().sum();
  const double quad = ((y - y_tilde).array().square() / var.array()).sum();
  return lambda_h * log_term + quad;
}

inline ad::Var hmse_loss_t(ad::Tape& tape, const RowVector& y, ad::Var y_tilde, ad::Var var,
                           double lambda_h) {
  ad::Var resid = tape.constant(y) - y_tilde;
  ad::Var quad = ad::sum(ad::square(resid) / var);
  return ad::sum(ad::log(var)) * lambda_h + quad;
}

// Total = lambda_cl * cl + lambda_kl * kl + hmse.
inline double total_loss(double cl, double kl, double hmse, const LossWeights& w) {
  w.validate();
  if (!std::isfinite(cl) || !std::isfinite(kl) || !std::isfinite(hmse)) {
    throw numeric_error("total_loss: non-finite component");
  }
  return w.lambda_cl * cl + w.lambda_kl * kl + hmse;
}

}  // namespace tsnet
