#pragma once

// Feedforward networks: specs, parameter stores with a documented flat
// ordering, plain (Eigen-only) evaluation, and tape-bound evaluation whose
// input Jacobian is itself a differentiable node.

#include "tsnet/core.hpp"
#include "tsnet/tape.hpp"

#include <numeric>
#include <string>
#include <vector>

namespace tsnet {

enum class Activation { Sigmoid, Identity };

struct MLPSpec {
  std::vector<int> widths;  // [input, hidden..., output]
  Activation hidden = Activation::Sigmoid;

  int input_width() const { return widths.front(); }
  int output_width() const { return widths.back(); }
  int layer_count() const { return static_cast<int>(widths.size()) - 1; }

  void validate() const {
    if (widths.size() < 2) throw contract_error("MLPSpec: need input and output widths");
    for (int w : widths) {
      if (w < 1) throw contract_error("MLPSpec: every width must be >= 1");
    }
  }

  // Model networks additionally require a smooth hidden stack (twice
  // differentiable end to end); affine-only specs are for test oracles.
  void validate_model() const {
    validate();
    if (widths.size() < 3) throw contract_error("MLPSpec: model networks need at least one hidden layer");
    if (hidden != Activation::Sigmoid) throw contract_error("MLPSpec: model networks use sigmoid hidden layers");
  }
};

// A named, ordered list of parameter matrices. Flat ordering: matrices in
// list order, each traversed row-major. For MLPs the list is
// [W1, b1, W2, b2, ...] with W (out x in) and b (out x 1), i.e. layer-major,
// weights before bias, row-major.
struct ParamStore {
  std::string name;
  std::vector<Matrix> mats;

  std::int64_t flat_size() const {
    std::int64_t n = 0;
    for (const Matrix& m : mats) n += m.size();
    return n;
  }

  Vector to_flat() const {
    Vector out(flat_size());
    std::int64_t k = 0;
    for (const Matrix& m : mats) {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out[k++] = m(r, c);
    }
    return out;
  }

  void from_flat(const Vector& flat) {
    if (flat.size() != flat_size()) throw shape_error("ParamStore::from_flat: length mismatch");
    std::int64_t k = 0;
    for (Matrix& m : mats) {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = flat[k++];
    }
  }

  double& flat_at(std::int64_t i) {
    for (Matrix& m : mats) {
      if (i < m.size()) {
        const Eigen::Index r = static_cast<Eigen::Index>(i) / m.cols();
        const Eigen::Index c = static_cast<Eigen::Index>(i) % m.cols();
        return m(r, c);
      }
      i -= m.size();
    }
    throw contract_error("ParamStore::flat_at: index out of range");
  }
};

inline ParamStore make_mlp_params(const MLPSpec& spec, const std::string& name, Rng& rng) {
  spec.validate();
  ParamStore ps;
  ps.name = name;
  for (int layer = 0; layer < spec.layer_count(); ++layer) {
    const int fan_in = spec.widths[layer];
    const int fan_out = spec.widths[layer + 1];
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    Matrix w(fan_out, fan_in);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = uniform(rng, -a, a);
    ps.mats.push_back(std::move(w));
    ps.mats.push_back(Matrix::Zero(fan_out, 1));
  }
  return ps;
}

inline void check_mlp_shapes(const MLPSpec& spec, const ParamStore& ps) {
  if (ps.mats.size() != static_cast<std::size_t>(2 * spec.layer_count())) {
    throw shape_error("params for '" + ps.name + "': expected " +
                      std::to_string(2 * spec.layer_count()) + " matrices, got " +
                      std::to_string(ps.mats.size()));
  }
  for (int layer = 0; layer < spec.layer_count(); ++layer) {
    const Matrix& w = ps.mats[2 * layer];
    const Matrix& b = ps.mats[2 * layer + 1];
    if (w.rows() != spec.widths[layer + 1] || w.cols() != spec.widths[layer]) {
      throw shape_error("layer " + std::to_string(layer) + " of '" + ps.name + "': weight is " +
                        std::to_string(w.rows()) + "x" + std::to_string(w.cols()) + ", expected " +
                        std::to_string(spec.widths[layer + 1]) + "x" + std::to_string(spec.widths[layer]));
    }
    if (b.rows() != spec.widths[layer + 1] || b.cols() != 1) {
      throw shape_error("layer " + std::to_string(layer) + " of '" + ps.name + "': bias shape mismatch");
    }
  }
}

// --- plain evaluation ----------------------------------------------------

inline Vector mlp_forward(const MLPSpec& spec, const ParamStore& ps, const Vector& x) {
  check_mlp_shapes(spec, ps);
  if (x.size() != spec.input_width()) {
    throw shape_error("mlp_forward('" + ps.name + "'): input has " + std::to_string(x.size()) +
                      " entries, layer 0 expects " + std::to_string(spec.input_width()));
  }
  Vector a = x;
  for (int layer = 0; layer < spec.layer_count(); ++layer) {
    Vector z = ps.mats[2 * layer] * a + ps.mats[2 * layer + 1].col(0);
    const bool last = layer + 1 == spec.layer_count();
    if (!last && spec.hidden == Activation::Sigmoid) {
      a = (1.0 / (1.0 + (-z.array()).exp())).matrix();
    } else {
      a = std::move(z);
    }
  }
  return a;
}

// Entry (i, k) = d output_k / d x_i.
inline Matrix mlp_input_jacobian(const MLPSpec& spec, const ParamStore& ps, const Vector& x) {
  check_mlp_shapes(spec, ps);
  if (x.size() != spec.input_width()) {
    throw shape_error("mlp_input_jacobian('" + ps.name + "'): input width mismatch");
  }
  const int m = spec.input_width();
  Vector a = x;
  Matrix tangent = Matrix::Identity(m, m);  // rows = input directions
  for (int layer = 0; layer < spec.layer_count(); ++layer) {
    const Matrix& w = ps.mats[2 * layer];
    Vector z = w * a + ps.mats[2 * layer + 1].col(0);
    Matrix tz = tangent * w.transpose();
    const bool last = layer + 1 == spec.layer_count();
    if (!last && spec.hidden == Activation::Sigmoid) {
      Vector s = (1.0 / (1.0 + (-z.array()).exp())).matrix();
      Vector ds = (s.array() * (1.0 - s.array())).matrix();
      tangent = (tz.array().rowwise() * ds.transpose().array()).matrix();
      a = std::move(s);
    } else {
      tangent = std::move(tz);
      a = std::move(z);
    }
  }
  return tangent;
}

// --- tape evaluation -------------------------------------------------------

// Parameter leaves on a tape, in the owning store's flat matrix order.
using BoundParams = std::vector<ad::Var>;

// Per-tape cache of transposed weight/bias nodes so batches share leaves.
struct BoundMLP {
  const MLPSpec* spec = nullptr;
  std::vector<ad::Var> wt;  // in x out
  std::vector<ad::Var> bt;  // 1 x out
};

// Binds the store's matrices as gradient-bearing leaves; `leaves` receives
// them in flat order so callers can read gradients back per store.
inline BoundMLP bind_mlp(ad::Tape& tape, const MLPSpec& spec, const ParamStore& ps,
                         std::vector<ad::Var>& leaves) {
  check_mlp_shapes(spec, ps);
  BoundMLP bm;
  bm.spec = &spec;
  for (int layer = 0; layer < spec.layer_count(); ++layer) {
    ad::Var w = tape.leaf(ps.mats[2 * layer]);
    ad::Var b = tape.leaf(ps.mats[2 * layer + 1]);
    leaves.push_back(w);
    leaves.push_back(b);
    bm.wt.push_back(ad::transpose(w));
    bm.bt.push_back(ad::transpose(b));
  }
  return bm;
}

inline ad::Var mlp_forward_t(ad::Tape& tape, const BoundMLP& bm, const RowVector& x) {
  const MLPSpec& spec = *bm.spec;
  if (x.size() != spec.input_width()) throw shape_error("mlp_forward_t: input width mismatch");
  ad::Var a = tape.constant(x);
  for (int layer = 0; layer < spec.layer_count(); ++layer) {
    ad::Var z = ad::matmul(a, bm.wt[layer]) + bm.bt[layer];
    const bool last = layer + 1 == spec.layer_count();
    a = (!last && spec.hidden == Activation::Sigmoid) ? ad::sigmoid(z) : z;
  }
  return a;  // 1 x out
}

// Whole-batch forward: one matmul per layer instead of a per-sample loop.
inline ad::Var mlp_forward_batch_t(ad::Tape& tape, const BoundMLP& bm, const Matrix& X) {
  const MLPSpec& spec = *bm.spec;
  if (X.cols() != spec.input_width()) throw shape_error("mlp_forward_batch_t: input width mismatch");
  ad::Var a = tape.constant(X);
  for (int layer = 0; layer < spec.layer_count(); ++layer) {
    ad::Var z = ad::add_row_bcast(ad::matmul(a, bm.wt[layer]), bm.bt[layer]);
    const bool last = layer + 1 == spec.layer_count();
    a = (!last && spec.hidden == Activation::Sigmoid) ? ad::sigmoid(z) : z;
  }
  return a;  // batch x out
}

struct BatchMLPWithJacobian {
  ad::Var out;                    // batch x out
  std::vector<ad::Var> tangents;  // per input direction, batch x out

  int input_width() const { return static_cast<int>(tangents.size()); }
  ad::Var tangent_block(int d) const { return tangents[static_cast<std::size_t>(d)]; }
};

// Batch forward plus one tangent stream per input direction; stream d row i
// holds d out / d x_d for sample i, and every stream is built from ordinary
// nodes so it stays differentiable w.r.t. parameters.
inline BatchMLPWithJacobian mlp_forward_batch_with_jacobian_t(ad::Tape& tape, const BoundMLP& bm,
                                                              const Matrix& X) {
  const MLPSpec& spec = *bm.spec;
  if (X.cols() != spec.input_width()) throw shape_error("mlp_forward_batch_with_jacobian_t: input width mismatch");
  const int m = spec.input_width();
  const Eigen::Index batch = X.rows();
  ad::Var a = tape.constant(X);
  std::vector<ad::Var> tangents(static_cast<std::size_t>(m));
  for (int layer = 0; layer < spec.layer_count(); ++layer) {
    ad::Var z = ad::add_row_bcast(ad::matmul(a, bm.wt[layer]), bm.bt[layer]);
    if (layer == 0) {
      // initial tangent of direction d is row d of W^T replicated over the batch
      ad::Var ones_node = tape.constant(Matrix::Ones(batch, 1));
      for (int d = 0; d < m; ++d) {
        ad::Var row = ad::transpose(ad::col_slice(ad::transpose(bm.wt[0]), d));  // 1 x out
        tangents[static_cast<std::size_t>(d)] = ad::matmul(ones_node, row);
      }
    } else {
      for (int d = 0; d < m; ++d) {
        tangents[static_cast<std::size_t>(d)] = ad::matmul(tangents[static_cast<std::size_t>(d)], bm.wt[layer]);
      }
    }
    const bool last = layer + 1 == spec.layer_count();
    if (!last && spec.hidden == Activation::Sigmoid) {
      ad::Var s = ad::sigmoid(z);
      ad::Var ds = s * (-s + 1.0);  // batch x width
      for (int d = 0; d < m; ++d) {
        tangents[static_cast<std::size_t>(d)] = tangents[static_cast<std::size_t>(d)] * ds;
      }
      a = s;
    } else {
      a = z;
    }
  }
  return {a, std::move(tangents)};
}

struct MLPWithJacobian {
  ad::Var out;       // 1 x out
  ad::Var jacobian;  // in x out, rows = input directions
};

// Forward pass that also records the input Jacobian as tape nodes: the
// identity tangent is pushed through each layer alongside the activations,
// so the Jacobian participates in further differentiation w.r.t. parameters.
inline MLPWithJacobian mlp_forward_with_jacobian_t(ad::Tape& tape, const BoundMLP& bm,
                                                   const RowVector& x) {
  const MLPSpec& spec = *bm.spec;
  if (x.size() != spec.input_width()) throw shape_error("mlp_forward_with_jacobian_t: input width mismatch");
  ad::Var a = tape.constant(x);
  ad::Var tangent{};  // m x width; identity at the input is folded into layer 0
  for (int layer = 0; layer < spec.layer_count(); ++layer) {
    ad::Var z = ad::matmul(a, bm.wt[layer]) + bm.bt[layer];
    ad::Var tz = (layer == 0) ? bm.wt[0] : ad::matmul(tangent, bm.wt[layer]);
    const bool last = layer + 1 == spec.layer_count();
    if (!last && spec.hidden == Activation::Sigmoid) {
      ad::Var s = ad::sigmoid(z);
      ad::Var ds = s * (-s + 1.0);
      a = s;
      tangent = ad::mul_row_bcast(tz, ds);
    } else {
      a = z;
      tangent = tz;
    }
  }
  return {a, tangent};
}

}  // namespace tsnet
