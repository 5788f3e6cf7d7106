#pragma once

// Noise-aware contrastive learning: random heteroscedastic re-noising of the
// features and a loss that pins the mean while rewarding variance separation
// between the clean and noised branches.

#include "tsnet/core.hpp"
#include "tsnet/gaussian.hpp"
#include "tsnet/tape.hpp"

#include <cmath>
#include <vector>

namespace tsnet {

enum class NoiseKind { Constant, Sine, ExpSigmoid };

inline const char* noise_kind_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::Constant: return "constant";
    case NoiseKind::Sine: return "sine";
    case NoiseKind::ExpSigmoid: return "exp-sigmoid";
  }
  return "?";
}

// Per-feature noise-scale function sigma_k(x); the variance is its square.
struct FeatureNoise {
  NoiseKind kind = NoiseKind::Constant;
  double a = 0.0, w = 0.0, p = 0.0, c = 0.0;

  double scale(double x) const {
    switch (kind) {
      case NoiseKind::Constant: return a;
      case NoiseKind::Sine: return a * (std::sin(w * x + p) + 1.0) / 2.0 + 0.01;
      case NoiseKind::ExpSigmoid: return a / (1.0 + std::exp(-(x - c)));
    }
    return 0.0;
  }
  double variance(double x) const {
    const double s = scale(x);
    return s * s;
  }
};

struct NoiseFunctionSpec {
  std::vector<FeatureNoise> per_feature;
};

inline NoiseFunctionSpec sample_sigma_k(Rng& rng, int m,
                                        const std::vector<NoiseKind>& library = {
                                            NoiseKind::Constant, NoiseKind::Sine, NoiseKind::ExpSigmoid}) {
  if (library.empty()) throw contract_error("sample_sigma_k: empty noise-function library");
  NoiseFunctionSpec spec;
  spec.per_feature.resize(m);
  for (int i = 0; i < m; ++i) {
    FeatureNoise fn;
    fn.kind = library[static_cast<std::size_t>(uniform(rng, 0.0, 1.0) * static_cast<double>(library.size())) %
                      library.size()];
    switch (fn.kind) {
      case NoiseKind::Constant:
        fn.a = uniform(rng, 0.01, 0.3);
        break;
      case NoiseKind::Sine:
        fn.a = uniform(rng, 0.01, 0.2);
        fn.w = uniform(rng, 0.5, 3.0);
        fn.p = uniform(rng, 0.0, 2.0 * M_PI);
        break;
      case NoiseKind::ExpSigmoid:
        fn.a = uniform(rng, 0.02, 0.3);
        fn.c = uniform(rng, -2.0, 2.0);
        break;
    }
    spec.per_feature[i] = fn;
  }
  return spec;
}

// x + sqrt(sigma_k(x)^2) .* eps; zero-mean by construction.
inline Vector add_noise(const Vector& x, const NoiseFunctionSpec& spec, Rng& rng) {
  if (!x.allFinite()) throw numeric_error("add_noise: non-finite input");
  if (spec.per_feature.size() != static_cast<std::size_t>(x.size())) {
    throw shape_error("add_noise: spec has " + std::to_string(spec.per_feature.size()) +
                      " feature entries, x has " + std::to_string(x.size()));
  }
  Vector out = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    out[i] += std::sqrt(spec.per_feature[i].variance(x[i])) * normal(rng);
  }
  return out;
}

inline constexpr double kNclDefaultCap = 16.0;

// lambda1 * ||mu_n - mu_cl||^2 - lambda2 * sum_k min(cap, (log s_n - log s_cl)^2).
// The per-entry cap bounds the loss below; without it the separation term is
// an unbounded descent direction.
inline double ncl_loss(const GaussianDiag& clean, const GaussianDiag& noised, double lambda1,
                       double lambda2, double cap = kNclDefaultCap) {
  clean.validate();
  noised.validate();
  if (clean.mean.size() != noised.mean.size()) throw shape_error("ncl_loss: branch dimension mismatch");
  const double mean_term = (clean.mean - noised.mean).squaredNorm();
  double sep = 0.0;
  for (Eigen::Index k = 0; k < clean.var.size(); ++k) {
    const double d = std::log(clean.var[k]) - std::log(noised.var[k]);
    sep += std::min(cap, d * d);
  }
  return lambda1 * mean_term - lambda2 * sep;
}

inline ad::Var ncl_loss_t(ad::Tape& tape, GaussNodes clean, GaussNodes noised, double lambda1,
                          double lambda2, double cap = kNclDefaultCap) {
  ad::Var mean_term = ad::sum(ad::square(clean.mean - noised.mean));
  ad::Var logdiff = ad::log(clean.var) - ad::log(noised.var);
  ad::Var sep = ad::sum(tape.clamp(ad::square(logdiff), -1.0, cap));
  return mean_term * lambda1 - sep * lambda2;
}

}  // namespace tsnet
