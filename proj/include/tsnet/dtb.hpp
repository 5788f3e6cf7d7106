#pragma once

// Deep Taylor Block: a mean network plus feature-noise and system-noise
// variance networks, composed through the mean network's input Jacobian.
// With J = d mu / d x (m x l), si (m), so (l):
//   var_k = sum_i J[i,k]^2 * si[i] + so[k]
// the diagonal restriction of the Jacobian-weighted noise propagation.

#include "tsnet/core.hpp"
#include "tsnet/gaussian.hpp"
#include "tsnet/mlp.hpp"
#include "tsnet/tape.hpp"

#include <functional>

namespace tsnet {

struct DTBParams {
  MLPSpec spec_mu, spec_si, spec_so;
  ParamStore p_mu, p_si, p_so;

  int input_width() const { return spec_mu.input_width(); }
  int output_width() const { return spec_mu.output_width(); }

  void validate() const {
    spec_mu.validate_model();
    spec_si.validate_model();
    spec_so.validate_model();
    const int m = spec_mu.input_width();
    const int l = spec_mu.output_width();
    if (spec_si.input_width() != m || spec_so.input_width() != m) {
      throw shape_error("DTBParams: all subnetworks must share the input width");
    }
    if (spec_si.output_width() != m) throw shape_error("DTBParams: feature-noise head must be m -> m");
    if (spec_so.output_width() != l) throw shape_error("DTBParams: system-noise head must be m -> l");
  }
};

inline DTBParams make_dtb(int m, int l, const std::vector<int>& mu_hidden,
                          const std::vector<int>& si_hidden, const std::vector<int>& so_hidden,
                          Rng& rng) {
  DTBParams dtb;
  auto widths = [](int in, const std::vector<int>& hidden, int out) {
    std::vector<int> w{in};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(out);
    return w;
  };
  dtb.spec_mu.widths = widths(m, mu_hidden, l);
  dtb.spec_si.widths = widths(m, si_hidden, m);
  dtb.spec_so.widths = widths(m, so_hidden, l);
  dtb.p_mu = make_mlp_params(dtb.spec_mu, "f_mu", rng);
  dtb.p_si = make_mlp_params(dtb.spec_si, "f_si", rng);
  dtb.p_so = make_mlp_params(dtb.spec_so, "f_so", rng);
  dtb.validate();
  return dtb;
}

inline GaussianDiag dtb_forward(const DTBParams& dtb, const Vector& x) {
  if (!x.allFinite()) throw numeric_error("dtb_forward: non-finite input");
  GaussianDiag g;
  g.mean = mlp_forward(dtb.spec_mu, dtb.p_mu, x);
  const Matrix j = mlp_input_jacobian(dtb.spec_mu, dtb.p_mu, x);  // m x l
  const Vector si = variance_head(mlp_forward(dtb.spec_si, dtb.p_si, x));
  const Vector so = variance_head(mlp_forward(dtb.spec_so, dtb.p_so, x));
  g.var = (j.array().square().matrix().transpose() * si + so).eval();
  if (!g.var.allFinite() || !g.mean.allFinite()) throw numeric_error("dtb_forward: non-finite output");
  return g;
}

struct BoundDTB {
  BoundMLP mu, si, so;
};

inline BoundDTB bind_dtb(ad::Tape& tape, const DTBParams& dtb, std::vector<BoundParams>& leaves) {
  BoundDTB b;
  leaves.resize(3);
  b.mu = bind_mlp(tape, dtb.spec_mu, dtb.p_mu, leaves[0]);
  b.si = bind_mlp(tape, dtb.spec_si, dtb.p_si, leaves[1]);
  b.so = bind_mlp(tape, dtb.spec_so, dtb.p_so, leaves[2]);
  return b;
}

inline GaussNodes dtb_forward_t(ad::Tape& tape, const BoundDTB& b, const RowVector& x) {
  auto mu = mlp_forward_with_jacobian_t(tape, b.mu, x);
  ad::Var si = variance_head_t(tape, mlp_forward_t(tape, b.si, x));  // 1 x m
  ad::Var so = variance_head_t(tape, mlp_forward_t(tape, b.so, x));  // 1 x l
  ad::Var var = ad::matmul(si, ad::square(mu.jacobian)) + so;        // 1 x l
  return {mu.out, var};
}

// Monte-Carlo cross-check of the first-order noise propagation: for scalar f,
// analytic var = f'(x0)^2 * si + so, empirical var from sampling
// f(x0 + ei) + eo with ei ~ N(0, si), eo ~ N(0, so).
struct TaylorVarianceCheck {
  double analytic = 0.0;
  double empirical = 0.0;
};

inline TaylorVarianceCheck taylor_variance_mc_check(const std::function<double(double)>& f, double x0,
                                                    double si, double so, std::int64_t n_samples,
                                                    Rng& rng) {
  const double h = 1e-6;
  const double fprime = (f(x0 + h) - f(x0 - h)) / (2.0 * h);
  TaylorVarianceCheck r;
  r.analytic = fprime * fprime * si + so;
  if (si == 0.0 && so == 0.0) {
    r.empirical = 0.0;
    return r;
  }
  const double ssi = std::sqrt(si), sso = std::sqrt(so);
  double mean = 0.0, m2 = 0.0;
  for (std::int64_t i = 0; i < n_samples; ++i) {
    const double y = f(x0 + ssi * normal(rng)) + sso * normal(rng);
    const double delta = y - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (y - mean);
  }
  r.empirical = m2 / static_cast<double>(n_samples - 1);
  return r;
}

}  // namespace tsnet
