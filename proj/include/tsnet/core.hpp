#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsnet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Error taxonomy. Contract/shape errors are caller bugs or bad configuration;
// numeric errors are data-dependent failures surfaced with context.
class contract_error : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

class shape_error : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class numeric_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class schema_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class parse_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class io_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// All randomness flows through explicitly seeded engines; no global state.
using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  std::normal_distribution<double> d(mean, stddev);
  return d(rng);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

}  // namespace tsnet
