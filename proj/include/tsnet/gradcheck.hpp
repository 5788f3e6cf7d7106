#pragma once

// Reverse-mode gradients of a builder-described scalar loss, plus the
// central-difference oracle used throughout the test suites.

#include "tsnet/core.hpp"
#include "tsnet/mlp.hpp"
#include "tsnet/tape.hpp"

#include <functional>
#include <vector>

namespace tsnet {

struct GradReport {
  std::string store_name;
  Vector grad;                  // flat ordering of the store
  double max_rel_err = -1.0;    // filled by finite_difference_check
};

// Receives one Var list per store, in the store's flat matrix order, and
// returns the scalar loss node. Builders must be deterministic: any noise
// draws are made before building and captured as constants.
using LossBuilder = std::function<ad::Var(ad::Tape&, std::vector<BoundParams>&)>;

namespace detail {

inline std::vector<BoundParams> bind_stores(ad::Tape& tape, const std::vector<ParamStore*>& stores) {
  std::vector<BoundParams> bound;
  bound.reserve(stores.size());
  for (const ParamStore* ps : stores) {
    BoundParams bp;
    bp.reserve(ps->mats.size());
    for (const Matrix& m : ps->mats) bp.push_back(tape.leaf(m));
    bound.push_back(std::move(bp));
  }
  return bound;
}

}  // namespace detail

inline double eval_loss(const LossBuilder& build, const std::vector<ParamStore*>& stores) {
  ad::Tape tape;
  auto bound = detail::bind_stores(tape, stores);
  ad::Var loss = build(tape, bound);
  return ad::scalar_value(loss);
}

inline std::vector<GradReport> grad(const LossBuilder& build, const std::vector<ParamStore*>& stores) {
  ad::Tape tape;
  auto bound = detail::bind_stores(tape, stores);
  ad::Var loss = build(tape, bound);
  tape.backward(loss);
  std::vector<GradReport> reports;
  reports.reserve(stores.size());
  for (std::size_t s = 0; s < stores.size(); ++s) {
    GradReport r;
    r.store_name = stores[s]->name;
    r.grad.resize(stores[s]->flat_size());
    std::int64_t k = 0;
    for (ad::Var leaf : bound[s]) {
      Matrix g = tape.grad(leaf);
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index j = 0; j < g.cols(); ++j) r.grad[k++] = g(i, j);
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

// Central differences against the tape gradient; returns the max relative
// error with denominator max(|a|, |b|, 1e-8).
inline double finite_difference_check(const LossBuilder& build, const std::vector<ParamStore*>& stores,
                                      double h) {
  if (!(h > 0.0)) throw contract_error("finite_difference_check: h must be positive");
  auto reports = grad(build, stores);
  double worst = 0.0;
  for (std::size_t s = 0; s < stores.size(); ++s) {
    ParamStore& ps = *stores[s];
    for (std::int64_t i = 0; i < ps.flat_size(); ++i) {
      double& p = ps.flat_at(i);
      const double saved = p;
      p = saved + h;
      const double up = eval_loss(build, stores);
      p = saved - h;
      const double dn = eval_loss(build, stores);
      p = saved;
      const double fd = (up - dn) / (2.0 * h);
      worst = std::max(worst, relative_error(reports[s].grad[i], fd));
    }
  }
  return worst;
}

}  // namespace tsnet
