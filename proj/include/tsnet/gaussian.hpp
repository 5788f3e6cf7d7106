#pragma once

// Per-sample diagonal Gaussians: the uncertainty currency passed between
// modules, plus the positivity head and reparameterized sampling.

#include "tsnet/core.hpp"
#include "tsnet/tape.hpp"

namespace tsnet {

inline constexpr double kVarFloor = 1e-6;
inline constexpr double kLogVarClamp = 12.0;

struct GaussianDiag {
  Vector mean;
  Vector var;  // variances, not standard deviations

  void validate() const {
    if (mean.size() != var.size()) throw shape_error("GaussianDiag: mean/var length mismatch");
    if (!mean.allFinite() || !var.allFinite()) throw numeric_error("GaussianDiag: non-finite entries");
    if ((var.array() <= 0.0).any()) throw contract_error("GaussianDiag: variances must be positive");
  }
};

struct PriorSpec {
  Vector mu_p;
  Vector var_p;

  void validate() const {
    if (mu_p.size() != var_p.size()) throw shape_error("PriorSpec: mu/var length mismatch");
    if ((var_p.array() <= 0.0).any()) throw contract_error("PriorSpec: var_p must be positive");
  }
};

// var = exp(clamp(raw, -12, 12)) + floor; smooth, strictly positive.
inline Vector variance_head(const Vector& raw) {
  if (!raw.allFinite()) throw numeric_error("variance_head: non-finite raw input");
  return (raw.array().max(-kLogVarClamp).min(kLogVarClamp).exp() + kVarFloor).matrix();
}

inline ad::Var variance_head_t(ad::Tape& tape, ad::Var raw) {
  return ad::exp(tape.clamp(raw, -kLogVarClamp, kLogVarClamp)) + kVarFloor;
}

// Y~ = mu + sqrt(var) .* eps, eps ~ N(0, I).
inline Vector reparam_sample(const GaussianDiag& g, Rng& rng) {
  g.validate();
  Vector out(g.mean.size());
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out[i] = g.mean[i] + std::sqrt(g.var[i]) * normal(rng);
  }
  return out;
}

struct GaussNodes {
  ad::Var mean;  // 1 x l
  ad::Var var;   // 1 x l
};

// eps is drawn by the caller and held fixed, so gradients flow through
// mean and var only.
inline ad::Var reparam_sample_t(ad::Tape&, GaussNodes g, const RowVector& eps) {
  return g.mean + ad::cmul_const(ad::sqrt(g.var), eps);
}

}  // namespace tsnet
