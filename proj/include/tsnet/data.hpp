#pragma once

// Datasets: toy-function generators, CSV ingestion with schema-driven
// preprocessing, deterministic splits, positional embedding, and the noise
// injectors used by the anti-noise protocol.

#include "tsnet/core.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace tsnet {

struct ColumnTransform {
  bool log1p = false;
  double mean = 0.0;
  double std = 1.0;
};

// z = (maybe_log1p(raw) - mean) / std
inline double transform_value(const ColumnTransform& t, double raw) {
  const double u = t.log1p ? std::log1p(raw) : raw;
  return (u - t.mean) / t.std;
}

inline double invert_value(const ColumnTransform& t, double z) {
  const double u = z * t.std + t.mean;
  return t.log1p ? std::expm1(u) : u;
}

// Delta-method variance transport through the inverse map.
inline double invert_variance(const ColumnTransform& t, double mean_z, double var_z) {
  const double u = mean_z * t.std + t.mean;
  const double dz = t.log1p ? t.std * std::exp(u) : t.std;
  return var_z * dz * dz;
}

struct Dataset {
  Matrix X;  // n x m, post-transform
  Matrix Y;  // n x l, post-transform
  std::vector<std::string> feature_names;
  std::vector<std::string> target_names;
  std::vector<ColumnTransform> x_tf;
  std::vector<ColumnTransform> y_tf;
  std::vector<int> train_idx, val_idx, test_idx;

  int n() const { return static_cast<int>(X.rows()); }
  int m() const { return static_cast<int>(X.cols()); }
  int l() const { return static_cast<int>(Y.cols()); }

  Matrix rows_of(const Matrix& src, const std::vector<int>& idx) const {
    Matrix out(static_cast<Eigen::Index>(idx.size()), src.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = src.row(idx[i]);
    return out;
  }
  Matrix train_X() const { return rows_of(X, train_idx); }
  Matrix train_Y() const { return rows_of(Y, train_idx); }
  Matrix val_X() const { return rows_of(X, val_idx); }
  Matrix val_Y() const { return rows_of(Y, val_idx); }
  Matrix test_X() const { return rows_of(X, test_idx); }
  Matrix test_Y() const { return rows_of(Y, test_idx); }
};

// Deterministic shuffle-split; counts are floor-based with the remainder
// assigned to train.
inline void assign_splits(Dataset& ds, std::array<double, 3> ratios, std::uint64_t seed) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9) throw contract_error("split: ratios must sum to 1");
  const int n = ds.n();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const int n_val = static_cast<int>(std::floor(ratios[1] * n));
  const int n_test = static_cast<int>(std::floor(ratios[2] * n));
  const int n_train = n - n_val - n_test;
  ds.train_idx.assign(order.begin(), order.begin() + n_train);
  ds.val_idx.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  ds.test_idx.assign(order.begin() + n_train + n_val, order.end());
}

// Standardizes every feature and label column on training-split statistics;
// the incoming matrices must already carry any log transform (flags are
// recorded so inversion round-trips).
inline void standardize_on_train(Dataset& ds) {
  if (ds.train_idx.empty()) throw contract_error("standardize_on_train: no training split assigned");
  auto fit = [&](Matrix& mat, std::vector<ColumnTransform>& tf) {
    for (Eigen::Index j = 0; j < mat.cols(); ++j) {
      double mean = 0.0;
      for (int i : ds.train_idx) mean += mat(i, j);
      mean /= static_cast<double>(ds.train_idx.size());
      double var = 0.0;
      for (int i : ds.train_idx) var += (mat(i, j) - mean) * (mat(i, j) - mean);
      var /= static_cast<double>(ds.train_idx.size());
      const double sd = std::max(std::sqrt(var), 1e-8);
      tf[static_cast<std::size_t>(j)].mean = mean;
      tf[static_cast<std::size_t>(j)].std = sd;
      mat.col(j) = (mat.col(j).array() - mean) / sd;
    }
  };
  fit(ds.X, ds.x_tf);
  fit(ds.Y, ds.y_tf);
}

inline Dataset make_dataset(Matrix X_raw, Matrix Y_raw, std::vector<std::string> feature_names,
                            std::vector<std::string> target_names, std::array<double, 3> ratios,
                            std::uint64_t split_seed, const std::vector<bool>& x_log = {},
                            const std::vector<bool>& y_log = {}) {
  Dataset ds;
  ds.X = std::move(X_raw);
  ds.Y = std::move(Y_raw);
  ds.feature_names = std::move(feature_names);
  ds.target_names = std::move(target_names);
  ds.x_tf.resize(static_cast<std::size_t>(ds.m()));
  ds.y_tf.resize(static_cast<std::size_t>(ds.l()));
  for (Eigen::Index j = 0; j < ds.X.cols(); ++j) {
    if (j < static_cast<Eigen::Index>(x_log.size()) && x_log[static_cast<std::size_t>(j)]) {
      ds.x_tf[static_cast<std::size_t>(j)].log1p = true;
      ds.X.col(j) = ds.X.col(j).array().log1p();
    }
  }
  for (Eigen::Index j = 0; j < ds.Y.cols(); ++j) {
    if (j < static_cast<Eigen::Index>(y_log.size()) && y_log[static_cast<std::size_t>(j)]) {
      ds.y_tf[static_cast<std::size_t>(j)].log1p = true;
      ds.Y.col(j) = ds.Y.col(j).array().log1p();
    }
  }
  if (!ds.X.allFinite() || !ds.Y.allFinite()) throw numeric_error("make_dataset: non-finite values after transforms");
  assign_splits(ds, ratios, split_seed);
  standardize_on_train(ds);
  return ds;
}

// --- positional embedding --------------------------------------------------

// Per feature: (x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^L pi x), cos(2^L pi x)).
inline RowVector positional_embed_row(const RowVector& x, int L) {
  if (L < 0) throw contract_error("positional_embed: L must be >= 0");
  const Eigen::Index m = x.size();
  RowVector out(m * (2 * L + 3));
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < m; ++j) {
    out[k++] = x[j];
    for (int f = 0; f <= L; ++f) {
      const double arg = std::pow(2.0, f) * M_PI * x[j];
      out[k++] = std::sin(arg);
      out[k++] = std::cos(arg);
    }
  }
  return out;
}

inline Matrix positional_embed(const Matrix& X, int L) {
  Matrix out(X.rows(), X.cols() * (2 * L + 3));
  for (Eigen::Index i = 0; i < X.rows(); ++i) out.row(i) = positional_embed_row(X.row(i), L);
  return out;
}

// --- toy functions -----------------------------------------------------------

inline double toy1d_f(double t) {
  return std::exp(0.06 * t) + 0.5 * std::exp(0.2 * t) + std::sin(2.0 * t) + std::sin(4.0 * t) +
         std::sin(5.0 * t);
}

inline double toy1d_sigma_i(double x) { return 0.2 / (1.0 + std::exp(2.0 - x)); }

// The raw expression has a pole at x = -1; the magnitude is clamped at 5.
inline double toy1d_sigma_o(double x) {
  const double denom = 1.0 - std::exp(x + 1.0);
  double s = (std::abs(denom) < 1e-12) ? 5.0 : 0.5 / denom;
  return std::min(std::abs(s), 5.0);
}

inline double toy2d_f(double x, double y) {
  return 0.5 * std::exp(0.03 * y) * std::sin(x) + std::exp(0.06 * x) * std::cos(0.8 * y);
}

inline double toy2d_sigma_i(double x, double y) {
  return (0.2 * std::sin(0.3 * y) + 0.4) / (1.0 + std::exp(-(x + 1.0)));
}

inline double toy2d_sigma_o(double x, double y) {
  return (0.15 * std::sin(0.3 * x) * std::sin(0.8 * y) + 1.1) / (1.0 + std::exp(2.0 - y));
}

struct ToyData {
  Dataset ds;        // standardized training data with train/val split
  Matrix eval_X;     // raw-unit evaluation grid
  Matrix eval_Y;     // noise-free values on the grid
};

inline ToyData gen_toy1d(std::uint64_t seed) {
  Rng rng(seed);
  const int n = 300;
  Matrix X(n, 1), Y(n, 1);
  for (int i = 0; i < n; ++i) {
    const double x = (i < 150) ? normal(rng, -1.0, 1.5) : normal(rng, 2.0, 1.1);
    const double xn = x + toy1d_sigma_i(x) * normal(rng);
    const double y = toy1d_f(xn) + toy1d_sigma_o(x) * normal(rng);
    X(i, 0) = x;
    Y(i, 0) = y;
  }
  ToyData td;
  td.ds = make_dataset(std::move(X), std::move(Y), {"x"}, {"f"}, {0.8, 0.2, 0.0}, seed ^ 0x9e3779b97f4a7c15ull);
  td.eval_X.resize(300, 1);
  td.eval_Y.resize(300, 1);
  for (int i = 0; i < 300; ++i) {
    const double x = -7.0 + 14.0 * static_cast<double>(i) / 299.0;
    td.eval_X(i, 0) = x;
    td.eval_Y(i, 0) = toy1d_f(x);
  }
  return td;
}

// Printed covariances are asymmetric; symmetrize and floor the eigenvalues
// so the sampler is valid.
inline Matrix repair_covariance(Matrix a, double floor_ev = 1e-3) {
  Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  Vector ev = es.eigenvalues().cwiseMax(floor_ev);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline ToyData gen_toy2d(std::uint64_t seed) {
  Rng rng(seed);
  struct Cluster {
    int count;
    Vector mean;
    Matrix cov;
  };
  std::vector<Cluster> clusters;
  clusters.push_back({100, (Vector(2) << -2.9, -3.4).finished(),
                      (Matrix(2, 2) << 2.5, 2.0, 0.5, 2.3).finished()});
  clusters.push_back({150, (Vector(2) << 2.5, 2.5).finished(),
                      (Matrix(2, 2) << 3.0, 0.0, 0.0, 2.5).finished()});
  clusters.push_back({50, (Vector(2) << 5.0, -5.0).finished(),
                      (Matrix(2, 2) << 1.2, -0.5, -0.7, 1.7).finished()});
  Matrix X(300, 2), Y(300, 1);
  int row = 0;
  for (const Cluster& cl : clusters) {
    Matrix cov = repair_covariance(cl.cov);
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    Matrix half = es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal();
    for (int i = 0; i < cl.count; ++i, ++row) {
      Vector z(2);
      z << normal(rng), normal(rng);
      Vector pt = cl.mean + half * z;
      const double ni = toy2d_sigma_i(pt[0], pt[1]) * normal(rng);  // one draw, added to both coords
      const double xn = pt[0] + ni, yn = pt[1] + ni;
      const double obs = toy2d_f(xn, yn) + toy2d_sigma_o(pt[0], pt[1]) * normal(rng);
      X.row(row) << pt[0], pt[1];
      Y(row, 0) = obs;
    }
  }
  ToyData td;
  td.ds = make_dataset(std::move(X), std::move(Y), {"x", "y"}, {"f"}, {0.8, 0.2, 0.0},
                       seed ^ 0x9e3779b97f4a7c15ull);
  td.eval_X.resize(2500, 2);
  td.eval_Y.resize(2500, 1);
  int k = 0;
  for (int i = 0; i < 50; ++i) {
    for (int j = 0; j < 50; ++j, ++k) {
      const double x = -10.0 + 20.0 * static_cast<double>(i) / 49.0;
      const double y = -10.0 + 20.0 * static_cast<double>(j) / 49.0;
      td.eval_X.row(k) << x, y;
      td.eval_Y(k, 0) = toy2d_f(x, y);
    }
  }
  return td;
}

// --- CSV ingestion -----------------------------------------------------------

struct CsvSchema {
  std::string target;
  std::map<std::string, std::map<std::string, double>> categorical_maps;
  std::vector<std::string> log_columns;

  static CsvSchema from_json(const nlohmann::json& j) {
    CsvSchema s;
    if (!j.contains("target")) throw schema_error("schema: missing 'target'");
    s.target = j.at("target").get<std::string>();
    if (j.contains("categorical_maps")) {
      for (auto it = j.at("categorical_maps").begin(); it != j.at("categorical_maps").end(); ++it) {
        std::map<std::string, double> m;
        for (auto v = it.value().begin(); v != it.value().end(); ++v) {
          m[v.key()] = v.value().get<double>();
        }
        s.categorical_maps[it.key()] = std::move(m);
      }
    }
    if (j.contains("log_columns")) {
      s.log_columns = j.at("log_columns").get<std::vector<std::string>>();
    }
    return s;
  }

  static CsvSchema load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open schema file: " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "na" || cell == "?" || cell == "nan";
}

}  // namespace detail

inline Dataset load_csv(const std::string& path, const CsvSchema& schema,
                        std::array<double, 3> ratios = {0.6, 0.2, 0.2}, std::uint64_t split_seed = 0) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open CSV file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw parse_error("CSV is empty: " + path);
  const std::vector<std::string> header = detail::split_csv_line(line);
  int target_col = -1;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == schema.target) target_col = static_cast<int>(j);
  }
  if (target_col < 0) throw schema_error("target column '" + schema.target + "' not found in " + path);

  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw parse_error("row " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                        " cells, got " + std::to_string(cells.size()));
    }
    std::vector<double> vals(cells.size());
    bool missing = false;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (detail::is_missing(cells[j])) {
        missing = true;  // rows with missing values are rejected, not imputed
        break;
      }
      auto cat = schema.categorical_maps.find(header[j]);
      if (cat != schema.categorical_maps.end()) {
        auto hit = cat->second.find(cells[j]);
        if (hit == cat->second.end()) {
          throw parse_error("row " + std::to_string(line_no) + ", column '" + header[j] +
                            "': unmapped category '" + cells[j] + "'");
        }
        vals[j] = hit->second;
        continue;
      }
      char* end = nullptr;
      const double v = std::strtod(cells[j].c_str(), &end);
      if (end == cells[j].c_str() || *end != '\0') {
        throw parse_error("row " + std::to_string(line_no) + ", column '" + header[j] +
                          "': non-numeric cell '" + cells[j] + "'");
      }
      vals[j] = v;
    }
    if (!missing) rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw parse_error("CSV has no usable rows: " + path);

  const int n = static_cast<int>(rows.size());
  const int m = static_cast<int>(header.size()) - 1;
  Matrix X(n, m), Y(n, 1);
  std::vector<std::string> feature_names;
  std::vector<bool> x_log, y_log(1, false);
  feature_names.reserve(static_cast<std::size_t>(m));
  auto wants_log = [&](const std::string& name) {
    return std::find(schema.log_columns.begin(), schema.log_columns.end(), name) != schema.log_columns.end();
  };
  int col = 0;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (static_cast<int>(j) == target_col) {
      y_log[0] = wants_log(header[j]);
      for (int i = 0; i < n; ++i) Y(i, 0) = rows[static_cast<std::size_t>(i)][j];
      continue;
    }
    feature_names.push_back(header[j]);
    x_log.push_back(wants_log(header[j]));
    for (int i = 0; i < n; ++i) X(i, col) = rows[static_cast<std::size_t>(i)][j];
    ++col;
  }
  return make_dataset(std::move(X), std::move(Y), std::move(feature_names), {schema.target}, ratios,
                      split_seed, x_log, y_log);
}

// --- canonical dumps ---------------------------------------------------------

inline void save_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write: " + path);
  out.precision(17);
  for (std::size_t j = 0; j < ds.feature_names.size(); ++j) out << ds.feature_names[j] << ",";
  for (std::size_t j = 0; j < ds.target_names.size(); ++j) out << ds.target_names[j] << ",";
  out << "split\n";
  std::vector<std::string> tag(static_cast<std::size_t>(ds.n()), "train");
  for (int i : ds.val_idx) tag[static_cast<std::size_t>(i)] = "val";
  for (int i : ds.test_idx) tag[static_cast<std::size_t>(i)] = "test";
  for (int i = 0; i < ds.n(); ++i) {
    for (int j = 0; j < ds.m(); ++j) out << ds.X(i, j) << ",";
    for (int j = 0; j < ds.l(); ++j) out << ds.Y(i, j) << ",";
    out << tag[static_cast<std::size_t>(i)] << "\n";
  }
}

inline nlohmann::json transform_log_json(const Dataset& ds) {
  nlohmann::json j;
  auto dump = [](const std::vector<ColumnTransform>& tf, const std::vector<std::string>& names) {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t i = 0; i < tf.size(); ++i) {
      arr.push_back({{"name", names[i]}, {"log1p", tf[i].log1p}, {"mean", tf[i].mean}, {"std", tf[i].std}});
    }
    return arr;
  };
  j["features"] = dump(ds.x_tf, ds.feature_names);
  j["targets"] = dump(ds.y_tf, ds.target_names);
  return j;
}

inline void save_transform_log(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write: " + path);
  out << transform_log_json(ds).dump(2) << "\n";
}

// --- noise plans --------------------------------------------------------------

enum class NoisePlanKind { GaussianAdditive, Gamma, Multiplicative, SaltPepper, GaussianNonzeroMean };

inline NoisePlanKind noise_plan_kind_from_string(const std::string& s) {
  if (s == "gaussian-additive") return NoisePlanKind::GaussianAdditive;
  if (s == "gamma") return NoisePlanKind::Gamma;
  if (s == "multiplicative") return NoisePlanKind::Multiplicative;
  if (s == "salt-pepper") return NoisePlanKind::SaltPepper;
  if (s == "gaussian-nonzero-mean") return NoisePlanKind::GaussianNonzeroMean;
  throw contract_error("unknown noise plan kind: " + s);
}

struct NoisePlan {
  NoisePlanKind kind = NoisePlanKind::GaussianAdditive;
  double feature_sigma = 0.4;  // standard deviations
  double system_sigma = 0.8;
  double rate = 0.0;
  double gamma_shape = 2.0;
  double mean_shift_feature = 0.4;
  double mean_shift_system = 0.8;

  void validate() const {
    if (rate < 0.0 || rate > 1.0) throw contract_error("NoisePlan: rate must lie in [0, 1]");
    if (feature_sigma < 0.0 || system_sigma < 0.0) throw contract_error("NoisePlan: sigmas must be >= 0");
  }
};

// Training split only; the test split is never touched. Gaussian, gamma,
// multiplicative, and nonzero-mean kinds noise a round(rate * n_train) row
// subset; salt-and-pepper replaces individual entries with per-entry
// probability `rate`.
inline Dataset inject_noise(const Dataset& input, const NoisePlan& plan, Rng& rng) {
  plan.validate();
  Dataset ds = input;
  if (plan.rate == 0.0) return ds;
  std::vector<int> rows = ds.train_idx;

  if (plan.kind == NoisePlanKind::SaltPepper) {
    Vector x_lo(ds.m()), x_hi(ds.m()), y_lo(ds.l()), y_hi(ds.l());
    for (int j = 0; j < ds.m(); ++j) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (int i : rows) {
        lo = std::min(lo, ds.X(i, j));
        hi = std::max(hi, ds.X(i, j));
      }
      x_lo[j] = lo;
      x_hi[j] = hi;
    }
    for (int j = 0; j < ds.l(); ++j) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (int i : rows) {
        lo = std::min(lo, ds.Y(i, j));
        hi = std::max(hi, ds.Y(i, j));
      }
      y_lo[j] = lo;
      y_hi[j] = hi;
    }
    for (int i : rows) {
      for (int j = 0; j < ds.m(); ++j) {
        if (uniform(rng, 0.0, 1.0) < plan.rate) {
          ds.X(i, j) = (uniform(rng, 0.0, 1.0) < 0.5) ? x_lo[j] : x_hi[j];
        }
      }
      for (int j = 0; j < ds.l(); ++j) {
        if (uniform(rng, 0.0, 1.0) < plan.rate) {
          ds.Y(i, j) = (uniform(rng, 0.0, 1.0) < 0.5) ? y_lo[j] : y_hi[j];
        }
      }
    }
    return ds;
  }

  std::shuffle(rows.begin(), rows.end(), rng);
  const auto count = static_cast<std::size_t>(std::llround(plan.rate * static_cast<double>(rows.size())));
  rows.resize(std::min(count, rows.size()));

  auto centered_gamma = [&](double sigma) {
    const double k = plan.gamma_shape;
    const double theta = sigma / std::sqrt(k);
    std::gamma_distribution<double> g(k, theta);
    return g(rng) - k * theta;
  };

  for (int i : rows) {
    switch (plan.kind) {
      case NoisePlanKind::GaussianAdditive:
        for (int j = 0; j < ds.m(); ++j) ds.X(i, j) += normal(rng, 0.0, plan.feature_sigma);
        for (int j = 0; j < ds.l(); ++j) ds.Y(i, j) += normal(rng, 0.0, plan.system_sigma);
        break;
      case NoisePlanKind::Gamma:
        for (int j = 0; j < ds.m(); ++j) ds.X(i, j) += centered_gamma(plan.feature_sigma);
        for (int j = 0; j < ds.l(); ++j) ds.Y(i, j) += centered_gamma(plan.system_sigma);
        break;
      case NoisePlanKind::Multiplicative:
        for (int j = 0; j < ds.m(); ++j) ds.X(i, j) *= 1.0 + normal(rng, 0.0, plan.feature_sigma);
        for (int j = 0; j < ds.l(); ++j) ds.Y(i, j) *= 1.0 + normal(rng, 0.0, plan.system_sigma);
        break;
      case NoisePlanKind::GaussianNonzeroMean:
        for (int j = 0; j < ds.m(); ++j) ds.X(i, j) += normal(rng, plan.mean_shift_feature, plan.feature_sigma);
        for (int j = 0; j < ds.l(); ++j) ds.Y(i, j) += normal(rng, plan.mean_shift_system, plan.system_sigma);
        break;
      case NoisePlanKind::SaltPepper:
        break;
    }
  }
  return ds;
}

}  // namespace tsnet
