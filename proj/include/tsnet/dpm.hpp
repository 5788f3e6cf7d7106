#pragma once

// Data density perception: KNN density targets over (augmented) features, a
// small attention scorer trained by KL matching, and the calibrated density
// weight k_d used by the uncertainty combiner.

#include "tsnet/core.hpp"
#include "tsnet/gradcheck.hpp"
#include "tsnet/tape.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace tsnet {

inline constexpr double kKnnEps = 1e-8;

struct DensityField {
  Matrix points;  // n x m
  Vector rho;     // probabilities, sum 1
  Vector raw;     // pre-softmax densities (kept for subset renormalization)
};

inline Vector softmax(const Vector& v) {
  const double mx = v.maxCoeff();
  Vector e = (v.array() - mx).exp();
  return e / e.sum();
}

// Inverse-squared-distance mass of the K nearest refs for each query. When
// exclude_self_index is true, query i skips ref i (same-set convention).
inline Vector knn_raw(const Matrix& queries, const Matrix& refs, int K, bool exclude_self_index) {
  const Eigen::Index nq = queries.rows();
  const Eigen::Index nr = refs.rows();
  const Eigen::Index usable = exclude_self_index ? nr - 1 : nr;
  if (K < 1 || usable < K) throw contract_error("knn_raw: need more reference points than K");
  Vector out(nq);
  std::vector<double> d2(static_cast<std::size_t>(nr));
  for (Eigen::Index q = 0; q < nq; ++q) {
    for (Eigen::Index r = 0; r < nr; ++r) {
      d2[static_cast<std::size_t>(r)] = (queries.row(q) - refs.row(r)).squaredNorm();
    }
    if (exclude_self_index && q < nr) d2[static_cast<std::size_t>(q)] = std::numeric_limits<double>::infinity();
    std::nth_element(d2.begin(), d2.begin() + (K - 1), d2.end());
    double mass = 0.0;
    for (int k = 0; k < K; ++k) mass += 1.0 / (d2[static_cast<std::size_t>(k)] + kKnnEps);
    out[q] = mass;
  }
  return out;
}

inline DensityField knn_density(const Matrix& points, int K) {
  if (points.rows() <= K) throw contract_error("knn_density: need n > K");
  DensityField f;
  f.points = points;
  f.raw = knn_raw(points, points, K, /*exclude_self_index=*/true);
  f.rho = softmax(f.raw);
  return f;
}

// Scorer: per-feature sigmoid token embedding, single-head self-attention
// over the m tokens, mean pooling, linear score head. The sigmoid keeps the
// score nonlinear in each feature (a linear token map would make the 1-D
// scorer monotone and unable to represent interior density peaks). Scoring is
// a per-point function, so softmax over any evaluation set is
// permutation-equivariant.
struct DensityNetParams {
  int m = 0;
  int d = 0;
  ParamStore store;  // [W_tok (m x d), b_tok (m x d), Wq, Wk, Wv (d x d), W_s (d x 1), b_s (1 x 1)]

  void validate() const {
    if (m < 1 || d < 2) throw contract_error("DensityNetParams: need m >= 1, d >= 2");
    if (store.mats.size() != 7) throw shape_error("DensityNetParams: expected 7 matrices");
  }
};

inline DensityNetParams make_density_net(int m, int d, Rng& rng) {
  DensityNetParams dnp;
  dnp.m = m;
  dnp.d = d;
  dnp.store.name = "density_net";
  auto rand_mat = [&](int r, int c, double fan_in, double fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    Matrix w(r, c);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = uniform(rng, -a, a);
    return w;
  };
  // Token slopes/centers tile the standardized feature range so the sigmoid
  // bank can shape interior density peaks from the start.
  auto tile_mat = [&](int r, int c, double lo, double hi) {
    Matrix w(r, c);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = uniform(rng, lo, hi);
    return w;
  };
  dnp.store.mats.push_back(tile_mat(m, d, -2.0, 2.0));   // W_tok
  dnp.store.mats.push_back(tile_mat(m, d, -2.0, 2.0));   // b_tok
  dnp.store.mats.push_back(rand_mat(d, d, d, d));        // Wq
  dnp.store.mats.push_back(rand_mat(d, d, d, d));        // Wk
  dnp.store.mats.push_back(rand_mat(d, d, d, d));        // Wv
  dnp.store.mats.push_back(rand_mat(d, 1, d, 1));        // W_s
  dnp.store.mats.push_back(Matrix::Zero(1, 1));          // b_s
  dnp.validate();
  return dnp;
}

inline double density_score(const DensityNetParams& dnp, const Vector& x) {
  dnp.validate();
  if (x.size() != dnp.m) throw shape_error("density_score: feature width mismatch");
  const auto& ms = dnp.store.mats;
  Matrix pre = (ms[0].array().colwise() * x.array()).matrix() + ms[1];  // m x d
  Matrix tokens = (1.0 / (1.0 + (-pre.array()).exp())).matrix();
  Matrix q = tokens * ms[2], k = tokens * ms[3], v = tokens * ms[4];
  Matrix logits = q * k.transpose() / std::sqrt(static_cast<double>(dnp.d));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - mx).exp();
    logits.row(i) /= logits.row(i).sum();
  }
  Matrix attended = logits * v;                                  // m x d
  RowVector pooled = attended.colwise().mean();                  // 1 x d
  return (pooled * ms[5])(0, 0) + ms[6](0, 0);
}

// Kappa over the given set: softmax of the per-point raw scores.
inline Vector density_net_forward(const DensityNetParams& dnp, const Matrix& X) {
  if (X.rows() < 1) throw contract_error("density_net_forward: empty point set");
  Vector s(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) s[i] = density_score(dnp, X.row(i).transpose());
  return softmax(s);
}

struct BoundDensityNet {
  const DensityNetParams* dnp = nullptr;
  std::vector<ad::Var> leaves;  // store order
};

inline BoundDensityNet bind_density_net(ad::Tape& tape, const DensityNetParams& dnp,
                                        BoundParams& leaves) {
  dnp.validate();
  BoundDensityNet b;
  b.dnp = &dnp;
  for (const Matrix& m : dnp.store.mats) {
    ad::Var v = tape.leaf(m);
    leaves.push_back(v);
    b.leaves.push_back(v);
  }
  return b;
}

inline ad::Var density_score_t(ad::Tape& tape, const BoundDensityNet& b, const RowVector& x) {
  const int m = b.dnp->m, d = b.dnp->d;
  if (x.size() != m) throw shape_error("density_score_t: feature width mismatch");
  Matrix xrep = x.transpose().replicate(1, d);  // m x d, column-replicated features
  ad::Var tokens = ad::sigmoid(ad::cmul_const(b.leaves[0], xrep) + b.leaves[1]);
  ad::Var q = ad::matmul(tokens, b.leaves[2]);
  ad::Var k = ad::matmul(tokens, b.leaves[3]);
  ad::Var v = ad::matmul(tokens, b.leaves[4]);
  ad::Var att = ad::row_softmax(ad::matmul(q, ad::transpose(k)) * (1.0 / std::sqrt(static_cast<double>(d))));
  ad::Var attended = ad::matmul(att, v);  // m x d
  Matrix pool_w = Matrix::Constant(1, m, 1.0 / static_cast<double>(m));
  ad::Var pooled = ad::matmul(tape.constant(pool_w), attended);  // 1 x d
  return ad::matmul(pooled, b.leaves[5]) + b.leaves[6];
}

// Scores for a whole point set as one (n x 1) node. The m == 1 case folds the
// single-token attention (softmax over one key is identically 1) into three
// matmuls; larger m falls back to per-point attention.
inline ad::Var density_scores_batch_t(ad::Tape& tape, const BoundDensityNet& b, const Matrix& points) {
  const int m = b.dnp->m;
  if (points.cols() != m) throw shape_error("density_scores_batch_t: feature width mismatch");
  if (m == 1) {
    ad::Var pre = ad::add_row_bcast(ad::matmul(tape.constant(points), b.leaves[0]), b.leaves[1]);
    ad::Var tokens = ad::sigmoid(pre);                     // n x d
    ad::Var attended = ad::matmul(tokens, b.leaves[4]);    // n x d
    ad::Var s = ad::matmul(attended, b.leaves[5]);         // n x 1
    return ad::add_row_bcast(s, ad::transpose(b.leaves[6]));
  }
  std::vector<ad::Var> scores;
  scores.reserve(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    scores.push_back(density_score_t(tape, b, points.row(i)));
  }
  return ad::vstack(scores);
}

// KL(kappa || rho) = sum kappa log(kappa / rho), rho floored at 1e-12.
inline double kl_loss(const Vector& kappa, const Vector& rho) {
  if (kappa.size() != rho.size()) throw shape_error("kl_loss: length mismatch");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < kappa.size(); ++i) {
    if (kappa[i] <= 0.0) continue;
    kl += kappa[i] * std::log(kappa[i] / std::max(rho[i], 1e-12));
  }
  return kl;
}

// kappa_row: 1 x n softmax node; rho: constant target probabilities.
inline ad::Var kl_loss_t(ad::Tape& tape, ad::Var kappa_row, const Vector& rho) {
  Matrix log_rho = rho.array().max(1e-12).log().matrix().transpose();
  ad::Var diff = ad::log(kappa_row) - tape.constant(log_rho);
  return ad::sum(kappa_row * diff);
}

// Train-time min-max of the raw score over the training set; makes inference
// k_d independent of batch composition.
struct DensityCalibration {
  double s_min = 0.0;
  double s_max = 0.0;

  void validate() const {
    if (!(s_min <= s_max)) throw contract_error("DensityCalibration: s_min must be <= s_max");
  }
};

inline double k_d(const DensityNetParams& dnp, const DensityCalibration& cal, const Vector& x) {
  cal.validate();
  const double s = density_score(dnp, x);
  const double t = (s - cal.s_min) / (cal.s_max - cal.s_min + 1e-12);
  return std::clamp(t, 0.0, 1.0);
}

// X augmented with one Gaussian-perturbed copy per row; per-feature sigma is
// sigma_aug_scale * std(feature), with a 1e-3 floor for constant features.
inline Matrix augment_features(const Matrix& X, double sigma_aug_scale, Rng& rng) {
  if (X.rows() < 2) throw contract_error("augment_features: need n >= 2");
  const Eigen::Index n = X.rows(), m = X.cols();
  Vector sigma(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double mean = X.col(j).mean();
    const double var = (X.col(j).array() - mean).square().sum() / static_cast<double>(n - 1);
    const double sd = std::sqrt(var);
    sigma[j] = sigma_aug_scale * (sd > 0.0 ? sd : 1e-3);
  }
  Matrix out(2 * n, m);
  out.topRows(n) = X;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      out(n + i, j) = X(i, j) + sigma[j] * normal(rng);
    }
  }
  return out;
}

}  // namespace tsnet
