#pragma once

// Experiment protocols on top of the training loop: comparison runs,
// anti-noise (RPI), active learning (PIR) with a random control arm, the
// 8-variant ablation grid, and plot-ready file emission.

#include "tsnet/core.hpp"
#include "tsnet/data.hpp"
#include "tsnet/model.hpp"
#include "tsnet/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace tsnet {

// Shortest round-trip decimal for CSV emission.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline Aggregate aggregate_of(const std::vector<double>& xs) {
  Aggregate a;
  if (xs.empty()) return a;
  a.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - a.mean) * (x - a.mean);
  a.std = std::sqrt(var / static_cast<double>(xs.size()));
  return a;
}

inline nlohmann::json aggregate_json(const std::vector<double>& xs) {
  const Aggregate a = aggregate_of(xs);
  return {{"mean", a.mean}, {"std", a.std}};
}

// --- configuration -----------------------------------------------------------

struct ExperimentConfig {
  std::string experiment;  // toy1d | toy2d | compare | antinoise | active | ablate | predict
  std::string source;      // toy1d | toy2d | csv
  std::string csv_path;
  std::string schema_path;
  std::string checkpoint_path;  // predict only
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string out_dir = "out";
  TrainConfig tc;
  std::array<double, 3> ratios{0.6, 0.2, 0.2};

  std::vector<double> rates{0.0, 0.2, 0.4, 0.8, 1.0};
  NoisePlan plan;

  double al_initial_fraction = 0.2;
  int al_cycles = 5;
  double al_acquire_fraction = 0.1;

  nlohmann::json echo;  // fully resolved document, embedded in every report

  void validate() const {
    if (seeds.empty()) throw contract_error("config: seeds must be non-empty");
    if (source == "csv" && (csv_path.empty() || schema_path.empty())) {
      throw contract_error("config: csv source needs dataset.csv_path and dataset.schema_path");
    }
  }
};

inline nlohmann::json default_config_json(const std::string& experiment) {
  nlohmann::json j;
  j["experiment"] = experiment;
  std::string source = "toy1d";
  if (experiment == "toy2d") source = "toy2d";
  if (experiment == "compare" || experiment == "predict") source = "csv";
  j["dataset"] = {{"source", source}, {"csv_path", ""}, {"schema_path", ""}};
  j["variant"] = "tsnet-full";
  j["seeds"] = {1, 2, 3};
  j["out_dir"] = "out";
  j["embed"] = {{"L", 3}};
  j["model"] = {{"mu_hidden", {64, 64, 64}}, {"si_hidden", {32, 32}}, {"so_hidden", {32, 32}}};
  j["ncl"] = {{"lambda1", 1.0}, {"lambda2", 0.1}, {"clamp_cap", 16.0},
              {"library", {"constant", "sine", "exp-sigmoid"}}};
  j["dpm"] = {{"k", 5}, {"sigma_aug_scale", 0.1}, {"embed_dim", 16}};
  j["loss"] = {{"lambda_h", 1.0}, {"lambda_cl", 1.0}, {"lambda_kl", 0.1}};
  j["prior"] = {{"mu", "auto"}, {"var_scale", 4.0}};
  int epochs = 2500, patience = 500;
  if (experiment == "antinoise") { epochs = 1200; patience = 300; }
  if (experiment == "active") { epochs = 600; patience = 150; }
  j["train"] = {{"lr", 3e-3}, {"batch_size", 64}, {"max_epochs", epochs},
                {"patience", patience}, {"grad_clip", 10.0}};
  j["split"] = {{"ratios", {0.6, 0.2, 0.2}}};
  j["antinoise"] = {{"rates", {0.0, 0.2, 0.4, 0.8, 1.0}}, {"kind", "gaussian-additive"},
                    {"feature_sigma", 0.4}, {"system_sigma", 0.8}, {"rate", 0.0}};
  j["active"] = {{"initial_fraction", 0.2}, {"cycles", 5}, {"acquire_fraction", 0.1}};
  j["checkpoint"] = "";
  return j;
}

namespace detail {

inline void merge_json(nlohmann::json& base, const nlohmann::json& overlay) {
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base.at(it.key()).is_object()) {
      merge_json(base.at(it.key()), it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

inline std::vector<NoiseKind> parse_noise_library(const nlohmann::json& arr) {
  std::vector<NoiseKind> lib;
  for (const auto& s : arr) {
    const std::string name = s.get<std::string>();
    if (name == "constant") lib.push_back(NoiseKind::Constant);
    else if (name == "sine") lib.push_back(NoiseKind::Sine);
    else if (name == "exp-sigmoid") lib.push_back(NoiseKind::ExpSigmoid);
    else throw contract_error("config: unknown ncl.library entry '" + name + "'");
  }
  return lib;
}

}  // namespace detail

inline ExperimentConfig resolve_config(const std::string& experiment, const nlohmann::json& overrides) {
  nlohmann::json doc = default_config_json(experiment);
  detail::merge_json(doc, overrides);
  doc["experiment"] = experiment;

  ExperimentConfig cfg;
  try {
    cfg.experiment = experiment;
    cfg.source = doc.at("dataset").at("source").get<std::string>();
    cfg.csv_path = doc.at("dataset").at("csv_path").get<std::string>();
    cfg.schema_path = doc.at("dataset").at("schema_path").get<std::string>();
    cfg.checkpoint_path = doc.at("checkpoint").get<std::string>();
    cfg.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
    cfg.out_dir = doc.at("out_dir").get<std::string>();

    cfg.tc.variant = variant_from_string(doc.at("variant").get<std::string>());
    cfg.tc.hyper.mu_hidden = doc.at("model").at("mu_hidden").get<std::vector<int>>();
    cfg.tc.hyper.si_hidden = doc.at("model").at("si_hidden").get<std::vector<int>>();
    cfg.tc.hyper.so_hidden = doc.at("model").at("so_hidden").get<std::vector<int>>();
    cfg.tc.hyper.embed_L = doc.at("embed").at("L").get<int>();
    cfg.tc.hyper.dpm_embed_dim = doc.at("dpm").at("embed_dim").get<int>();
    cfg.tc.ncl_lambda1 = doc.at("ncl").at("lambda1").get<double>();
    cfg.tc.ncl_lambda2 = doc.at("ncl").at("lambda2").get<double>();
    cfg.tc.ncl_cap = doc.at("ncl").at("clamp_cap").get<double>();
    cfg.tc.ncl_library = detail::parse_noise_library(doc.at("ncl").at("library"));
    cfg.tc.dpm_k = doc.at("dpm").at("k").get<int>();
    cfg.tc.sigma_aug_scale = doc.at("dpm").at("sigma_aug_scale").get<double>();
    cfg.tc.weights.lambda_h = doc.at("loss").at("lambda_h").get<double>();
    cfg.tc.weights.lambda_cl = doc.at("loss").at("lambda_cl").get<double>();
    cfg.tc.weights.lambda_kl = doc.at("loss").at("lambda_kl").get<double>();
    if (doc.at("prior").at("mu").is_array()) {
      Vector mu(static_cast<Eigen::Index>(doc.at("prior").at("mu").size()));
      for (std::size_t i = 0; i < doc.at("prior").at("mu").size(); ++i) {
        mu[static_cast<Eigen::Index>(i)] = doc.at("prior").at("mu").at(i).get<double>();
      }
      cfg.tc.prior_mu = mu;
    }
    cfg.tc.prior_var_scale = doc.at("prior").at("var_scale").get<double>();
    cfg.tc.lr = doc.at("train").at("lr").get<double>();
    cfg.tc.batch_size = doc.at("train").at("batch_size").get<int>();
    cfg.tc.max_epochs = doc.at("train").at("max_epochs").get<int>();
    cfg.tc.patience = doc.at("train").at("patience").get<int>();
    cfg.tc.grad_clip = doc.at("train").at("grad_clip").get<double>();

    const auto ratios = doc.at("split").at("ratios").get<std::vector<double>>();
    if (ratios.size() != 3) throw contract_error("config: split.ratios must have 3 entries");
    cfg.ratios = {ratios[0], ratios[1], ratios[2]};

    cfg.rates = doc.at("antinoise").at("rates").get<std::vector<double>>();
    cfg.plan.kind = noise_plan_kind_from_string(doc.at("antinoise").at("kind").get<std::string>());
    cfg.plan.feature_sigma = doc.at("antinoise").at("feature_sigma").get<double>();
    cfg.plan.system_sigma = doc.at("antinoise").at("system_sigma").get<double>();

    cfg.al_initial_fraction = doc.at("active").at("initial_fraction").get<double>();
    cfg.al_cycles = doc.at("active").at("cycles").get<int>();
    cfg.al_acquire_fraction = doc.at("active").at("acquire_fraction").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw contract_error(std::string("config: ") + e.what());
  }
  cfg.echo = doc;
  cfg.validate();
  return cfg;
}

// --- seed-parallel driver -----------------------------------------------------

inline int worker_cap() {
  if (const char* env = std::getenv("TSNET_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return 1;
}

// Runs fn(i) for i in [0, n); results are indexed, so report assembly is
// deterministic regardless of scheduling.
inline void for_each_index(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(worker_cap(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

// --- shared assembly ----------------------------------------------------------

struct RunReport {
  nlohmann::json doc;
  int exit_code = 0;
};

struct ExperimentOutputs {
  RunReport report;
  // Plot-ready artifacts from the first seed:
  Matrix pred_features;  // raw units
  RawPredictions pred;
  std::vector<std::string> feature_names;
  TrainHistory history;
  std::optional<Checkpoint> checkpoint;
  std::optional<Dataset> dataset_dump;
};

struct LoadedData {
  Dataset ds;
  Matrix eval_X;  // raw units; empty when the test split is the eval set
  Matrix eval_Y;
  bool has_grid = false;
};

inline LoadedData load_source(const ExperimentConfig& cfg, std::uint64_t seed) {
  LoadedData out;
  if (cfg.source == "toy1d") {
    ToyData td = gen_toy1d(seed);
    out.ds = std::move(td.ds);
    out.eval_X = std::move(td.eval_X);
    out.eval_Y = std::move(td.eval_Y);
    out.has_grid = true;
  } else if (cfg.source == "toy2d") {
    ToyData td = gen_toy2d(seed);
    out.ds = std::move(td.ds);
    out.eval_X = std::move(td.eval_X);
    out.eval_Y = std::move(td.eval_Y);
    out.has_grid = true;
  } else if (cfg.source == "csv") {
    out.ds = load_csv(cfg.csv_path, CsvSchema::load(cfg.schema_path), cfg.ratios, seed);
  } else {
    throw contract_error("config: unknown dataset source '" + cfg.source + "'");
  }
  return out;
}

// Test-set evaluation in raw units; toys evaluate on the noise-free grid.
inline Metrics evaluate_model(const TSNetModel& model, const Dataset& ds, const LoadedData& data,
                              Matrix* out_mu = nullptr, Matrix* out_var = nullptr, Vector* out_kd = nullptr,
                              Matrix* out_feats = nullptr) {
  Matrix X_std, Y_raw;
  if (data.has_grid) {
    X_std = standardize_features(ds, data.eval_X);
    Y_raw = data.eval_Y;
    if (out_feats) *out_feats = data.eval_X;
  } else {
    X_std = ds.test_X();
    Y_raw = labels_to_raw(ds, ds.test_Y());
    if (out_feats) {
      Matrix feats(X_std.rows(), X_std.cols());
      for (Eigen::Index j = 0; j < X_std.cols(); ++j)
        for (Eigen::Index i = 0; i < X_std.rows(); ++i)
          feats(i, j) = invert_value(ds.x_tf[static_cast<std::size_t>(j)], X_std(i, j));
      *out_feats = feats;
    }
  }
  Predictions p = predict(model, X_std);
  RawPredictions raw = predictions_to_raw(ds, p);
  if (out_mu) *out_mu = raw.mu;
  if (out_var) *out_var = raw.var;
  if (out_kd) *out_kd = raw.kd;
  return metrics(Y_raw, raw.mu, raw.var);
}

// Interpolation mask: inside [q01, q99] per 1D feature, or inside the train
// bounding box for multi-d; every eval point lands in exactly one region.
inline std::vector<bool> interpolation_mask(const Matrix& train_raw, const Matrix& eval_raw) {
  Vector lo(train_raw.cols()), hi(train_raw.cols());
  for (Eigen::Index j = 0; j < train_raw.cols(); ++j) {
    if (train_raw.cols() == 1) {
      std::vector<double> col(train_raw.rows());
      for (Eigen::Index i = 0; i < train_raw.rows(); ++i) col[static_cast<std::size_t>(i)] = train_raw(i, j);
      std::sort(col.begin(), col.end());
      const auto n = col.size();
      lo[j] = col[static_cast<std::size_t>(std::llround(0.01 * static_cast<double>(n - 1)))];
      hi[j] = col[static_cast<std::size_t>(std::llround(0.99 * static_cast<double>(n - 1)))];
    } else {
      lo[j] = train_raw.col(j).minCoeff();
      hi[j] = train_raw.col(j).maxCoeff();
    }
  }
  std::vector<bool> mask(static_cast<std::size_t>(eval_raw.rows()), true);
  for (Eigen::Index i = 0; i < eval_raw.rows(); ++i) {
    for (Eigen::Index j = 0; j < eval_raw.cols(); ++j) {
      if (eval_raw(i, j) < lo[j] || eval_raw(i, j) > hi[j]) {
        mask[static_cast<std::size_t>(i)] = false;
        break;
      }
    }
  }
  return mask;
}

inline double masked_mse(const Matrix& y, const Matrix& mu, const std::vector<bool>& mask, bool keep) {
  double acc = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    if (mask[static_cast<std::size_t>(i)] != keep) continue;
    acc += (y.row(i) - mu.row(i)).array().square().sum();
    ++count;
  }
  return count > 0 ? acc / (static_cast<double>(count) * static_cast<double>(y.cols())) : 0.0;
}

// Features in raw units for the training split (region partitions).
inline Matrix train_features_raw(const Dataset& ds) {
  Matrix x = ds.train_X();
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      x(i, j) = invert_value(ds.x_tf[static_cast<std::size_t>(j)], x(i, j));
  return x;
}

// --- experiments ----------------------------------------------------------------

// Single-variant run on the configured source: per-seed test metrics plus
// interpolation/extrapolation MSE on toy grids.
inline ExperimentOutputs run_comparison(const ExperimentConfig& cfg) {
  struct SeedOut {
    bool ok = false;
    std::string error;
    Metrics m;
    double in_mse = 0.0, ext_mse = 0.0;
    TrainHistory history;
    std::optional<Checkpoint> ck;
    std::optional<Dataset> ds;
    Matrix feats, mu, var;
    Vector kd;
    bool diverged = false;
  };
  std::vector<SeedOut> outs(cfg.seeds.size());

  for_each_index(static_cast<int>(cfg.seeds.size()), [&](int i) {
    SeedOut& so = outs[static_cast<std::size_t>(i)];
    try {
      const std::uint64_t seed = cfg.seeds[static_cast<std::size_t>(i)];
      LoadedData data = load_source(cfg, seed);
      TrainResult tr = train(cfg.tc, data.ds, seed);
      so.diverged = tr.diverged;
      if (tr.diverged) throw numeric_error(tr.diagnostic);
      Matrix mu, var, feats;
      Vector kd;
      so.m = evaluate_model(tr.model, data.ds, data, &mu, &var, &kd, &feats);
      if (data.has_grid) {
        const auto mask = interpolation_mask(train_features_raw(data.ds), data.eval_X);
        so.in_mse = masked_mse(data.eval_Y, mu, mask, true);
        so.ext_mse = masked_mse(data.eval_Y, mu, mask, false);
      }
      so.history = tr.history;
      Checkpoint ck;
      ck.model = tr.model;
      ck.x_tf = data.ds.x_tf;
      ck.y_tf = data.ds.y_tf;
      ck.feature_names = data.ds.feature_names;
      ck.target_names = data.ds.target_names;
      so.ck = std::move(ck);
      so.ds = std::move(data.ds);
      so.feats = std::move(feats);
      so.mu = std::move(mu);
      so.var = std::move(var);
      so.kd = std::move(kd);
      so.ok = true;
    } catch (const std::exception& e) {
      so.ok = false;
      so.error = e.what();
    }
  });

  ExperimentOutputs out;
  nlohmann::json runs = nlohmann::json::array();
  std::vector<double> mses, maes, nlls, ins, exts;
  bool any_failed = false, any_diverged = false;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const SeedOut& so = outs[i];
    nlohmann::json r;
    r["seed"] = cfg.seeds[i];
    r["ok"] = so.ok;
    if (so.ok) {
      r["metrics"] = {{"mse", so.m.mse}, {"mae", so.m.mae}, {"nll", so.m.nll}};
      if (cfg.source != "csv") {
        r["in_mse"] = so.in_mse;
        r["ext_mse"] = so.ext_mse;
        ins.push_back(so.in_mse);
        exts.push_back(so.ext_mse);
      }
      mses.push_back(so.m.mse);
      maes.push_back(so.m.mae);
      nlls.push_back(so.m.nll);
    } else {
      r["error"] = so.error;
      any_failed = true;
      any_diverged = any_diverged || so.diverged;
    }
    runs.push_back(std::move(r));
  }
  out.report.doc["experiment"] = cfg.experiment;
  out.report.doc["variant"] = variant_name(cfg.tc.variant);
  out.report.doc["config"] = cfg.echo;
  out.report.doc["seeds"] = cfg.seeds;
  out.report.doc["std_kind"] = "population";
  out.report.doc["runs"] = runs;
  out.report.doc["aggregate"] = {{"mse", aggregate_json(mses)}, {"mae", aggregate_json(maes)},
                                 {"nll", aggregate_json(nlls)}};
  if (!ins.empty()) {
    out.report.doc["aggregate"]["in_mse"] = aggregate_json(ins);
    out.report.doc["aggregate"]["ext_mse"] = aggregate_json(exts);
  }
  out.report.exit_code = any_failed ? (mses.empty() ? 4 : 5) : 0;

  for (const SeedOut& so : outs) {
    if (!so.ok) continue;
    out.pred_features = so.feats;
    out.pred.mu = so.mu;
    out.pred.var = so.var;
    out.pred.kd = so.kd;
    out.feature_names = so.ds->feature_names;
    out.history = so.history;
    out.checkpoint = so.ck;
    out.dataset_dump = so.ds;
    break;
  }
  return out;
}

// Anti-noise protocol: trains at each rate on a noised copy of the training
// split (test untouched) and reports the RPI series.
inline ExperimentOutputs run_antinoise(const ExperimentConfig& cfg) {
  const int n_rates = static_cast<int>(cfg.rates.size());
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  struct Cell {
    bool ok = false;
    std::string error;
    double mse = 0.0;
  };
  std::vector<Cell> cells(static_cast<std::size_t>(n_rates * n_seeds));

  for_each_index(n_rates * n_seeds, [&](int idx) {
    const int ri = idx / n_seeds;
    const int si = idx % n_seeds;
    Cell& cell = cells[static_cast<std::size_t>(idx)];
    try {
      const std::uint64_t seed = cfg.seeds[static_cast<std::size_t>(si)];
      LoadedData data = load_source(cfg, seed);
      NoisePlan plan = cfg.plan;
      plan.rate = cfg.rates[static_cast<std::size_t>(ri)];
      Rng noise_rng(seed * 7919u + static_cast<std::uint64_t>(ri) + 1u);
      Dataset noised = inject_noise(data.ds, plan, noise_rng);
      TrainResult tr = train(cfg.tc, noised, seed);
      if (tr.diverged) throw numeric_error(tr.diagnostic);
      cell.mse = evaluate_model(tr.model, noised, data).mse;
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  });

  ExperimentOutputs out;
  nlohmann::json per_rate = nlohmann::json::array();
  std::vector<double> mean_mse(static_cast<std::size_t>(n_rates), 0.0);
  bool any_failed = false;
  for (int ri = 0; ri < n_rates; ++ri) {
    nlohmann::json seed_mse = nlohmann::json::array();
    std::vector<double> ok_mses;
    for (int si = 0; si < n_seeds; ++si) {
      const Cell& c = cells[static_cast<std::size_t>(ri * n_seeds + si)];
      if (c.ok) {
        seed_mse.push_back(c.mse);
        ok_mses.push_back(c.mse);
      } else {
        seed_mse.push_back(nullptr);
        any_failed = true;
      }
    }
    mean_mse[static_cast<std::size_t>(ri)] = aggregate_of(ok_mses).mean;
    per_rate.push_back({{"rate", cfg.rates[static_cast<std::size_t>(ri)]},
                        {"seed_mse", seed_mse},
                        {"mean_mse", mean_mse[static_cast<std::size_t>(ri)]}});
  }
  nlohmann::json rpi = nlohmann::json::array();
  const double mse0 = mean_mse[0];
  for (int ri = 0; ri < n_rates; ++ri) {
    if (mse0 == 0.0) {
      rpi.push_back(nullptr);
    } else {
      rpi.push_back(mean_mse[static_cast<std::size_t>(ri)] / mse0);
    }
  }
  out.report.doc["experiment"] = cfg.experiment;
  out.report.doc["variant"] = variant_name(cfg.tc.variant);
  out.report.doc["config"] = cfg.echo;
  out.report.doc["seeds"] = cfg.seeds;
  out.report.doc["std_kind"] = "population";
  out.report.doc["rates"] = cfg.rates;
  out.report.doc["per_rate"] = per_rate;
  out.report.doc["rpi"] = rpi;
  out.report.exit_code = any_failed ? 5 : 0;
  return out;
}

// Active learning with an identical-budget random control arm. Cycle 0 trains
// on the initial labeled set; each later cycle acquires ceil(af * remaining0)
// pool points (highest predicted total variance, or uniformly at random).
inline ExperimentOutputs run_active_learning(const ExperimentConfig& cfg) {
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  struct ArmSeries {
    std::vector<double> mse;           // per cycle
    std::vector<int> labeled_sizes;
  };
  struct SeedOut {
    bool ok = false;
    std::string error;
    ArmSeries unc, rnd;
    bool stopped_early = false;
  };
  std::vector<SeedOut> outs(static_cast<std::size_t>(n_seeds));

  for_each_index(n_seeds, [&](int si) {
    SeedOut& so = outs[static_cast<std::size_t>(si)];
    try {
      const std::uint64_t seed = cfg.seeds[static_cast<std::size_t>(si)];
      LoadedData data = load_source(cfg, seed);
      const std::vector<int> pool_all = data.ds.train_idx;  // acquisition pool
      const int pool_n = static_cast<int>(pool_all.size());
      const int init_n = std::max(2, static_cast<int>(std::llround(cfg.al_initial_fraction * pool_n)));
      const int remaining0 = pool_n - init_n;
      const int per_cycle = static_cast<int>(std::ceil(cfg.al_acquire_fraction * remaining0));

      Rng arm_rng(seed ^ 0xa5a5a5a5ull);
      std::vector<int> shuffled = pool_all;
      std::shuffle(shuffled.begin(), shuffled.end(), arm_rng);
      const std::vector<int> initial(shuffled.begin(), shuffled.begin() + init_n);

      auto run_arm = [&](bool uncertainty_arm) {
        ArmSeries series;
        std::vector<int> labeled = initial;
        std::vector<int> pool;
        for (int idx : shuffled) {
          if (std::find(labeled.begin(), labeled.end(), idx) == labeled.end()) pool.push_back(idx);
        }
        Rng pick_rng(seed ^ (uncertainty_arm ? 0x1111ull : 0x2222ull));
        for (int cycle = 0; cycle <= cfg.al_cycles; ++cycle) {
          Dataset sub = data.ds;
          sub.train_idx = labeled;
          // refit the validation split inside the labeled set, 80/20
          std::vector<int> lab = labeled;
          Rng split_rng(seed + static_cast<std::uint64_t>(cycle) * 131u + (uncertainty_arm ? 0u : 7u));
          std::shuffle(lab.begin(), lab.end(), split_rng);
          const int n_val = std::max(1, static_cast<int>(lab.size() / 5));
          sub.val_idx.assign(lab.begin(), lab.begin() + n_val);
          sub.train_idx.assign(lab.begin() + n_val, lab.end());
          TrainResult tr = train(cfg.tc, sub, seed + static_cast<std::uint64_t>(cycle));
          if (tr.diverged) throw numeric_error(tr.diagnostic);
          series.mse.push_back(evaluate_model(tr.model, sub, data).mse);
          series.labeled_sizes.push_back(static_cast<int>(labeled.size()));
          if (cycle == cfg.al_cycles) break;
          if (pool.empty()) {
            so.stopped_early = true;
            break;
          }
          const int take = std::min<int>(per_cycle, static_cast<int>(pool.size()));
          std::vector<int> chosen;
          if (uncertainty_arm) {
            Matrix pool_X(static_cast<Eigen::Index>(pool.size()), data.ds.m());
            for (std::size_t i = 0; i < pool.size(); ++i) pool_X.row(static_cast<Eigen::Index>(i)) = data.ds.X.row(pool[i]);
            Predictions p = predict(tr.model, pool_X);
            std::vector<std::pair<double, int>> scored(pool.size());
            for (std::size_t i = 0; i < pool.size(); ++i) {
              scored[i] = {p.var.row(static_cast<Eigen::Index>(i)).mean(), pool[i]};
            }
            std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
              if (a.first != b.first) return a.first > b.first;
              return a.second < b.second;
            });
            for (int i = 0; i < take; ++i) chosen.push_back(scored[static_cast<std::size_t>(i)].second);
          } else {
            std::vector<int> tmp = pool;
            std::shuffle(tmp.begin(), tmp.end(), pick_rng);
            chosen.assign(tmp.begin(), tmp.begin() + take);
          }
          for (int idx : chosen) {
            labeled.push_back(idx);
            pool.erase(std::remove(pool.begin(), pool.end(), idx), pool.end());
          }
        }
        return series;
      };

      so.unc = run_arm(true);
      so.rnd = run_arm(false);
      so.ok = true;
    } catch (const std::exception& e) {
      so.ok = false;
      so.error = e.what();
    }
  });

  ExperimentOutputs out;
  bool any_failed = false;
  bool stopped_early = false;
  int n_cycles_seen = 0;
  for (const SeedOut& so : outs) {
    if (!so.ok) { any_failed = true; continue; }
    stopped_early = stopped_early || so.stopped_early;
    n_cycles_seen = std::max(n_cycles_seen, static_cast<int>(so.unc.mse.size()));
  }

  auto arm_json = [&](bool uncertainty_arm) {
    nlohmann::json j;
    std::vector<double> mean_mse;
    nlohmann::json per_seed = nlohmann::json::array();
    std::vector<int> sizes;
    for (int c = 0; c < n_cycles_seen; ++c) {
      std::vector<double> vals;
      for (const SeedOut& so : outs) {
        if (!so.ok) continue;
        const ArmSeries& s = uncertainty_arm ? so.unc : so.rnd;
        if (c < static_cast<int>(s.mse.size())) vals.push_back(s.mse[static_cast<std::size_t>(c)]);
        if (sizes.size() <= static_cast<std::size_t>(c) && c < static_cast<int>(s.labeled_sizes.size())) {
          sizes.push_back(s.labeled_sizes[static_cast<std::size_t>(c)]);
        }
      }
      mean_mse.push_back(aggregate_of(vals).mean);
    }
    for (const SeedOut& so : outs) {
      if (!so.ok) { per_seed.push_back(nullptr); continue; }
      const ArmSeries& s = uncertainty_arm ? so.unc : so.rnd;
      per_seed.push_back(s.mse);
    }
    nlohmann::json pir = nlohmann::json::array();
    const double mse0 = mean_mse.empty() ? 0.0 : mean_mse[0];
    for (double m : mean_mse) pir.push_back(mse0 == 0.0 ? nlohmann::json(nullptr) : nlohmann::json((mse0 - m) / mse0));
    j["mean_mse"] = mean_mse;
    j["pir"] = pir;
    j["per_seed_mse"] = per_seed;
    j["labeled_sizes"] = sizes;
    return j;
  };

  out.report.doc["experiment"] = cfg.experiment;
  out.report.doc["variant"] = variant_name(cfg.tc.variant);
  out.report.doc["config"] = cfg.echo;
  out.report.doc["seeds"] = cfg.seeds;
  out.report.doc["std_kind"] = "population";
  out.report.doc["cycles"] = cfg.al_cycles;
  out.report.doc["stopped_early"] = stopped_early;
  out.report.doc["arms"] = {{"uncertainty", arm_json(true)}, {"random", arm_json(false)}};
  out.report.exit_code = any_failed ? 5 : 0;
  return out;
}

// Ablation grid: all 8 variants on the toy source, reporting interpolation,
// extrapolation, and overall MSE per variant (3-seed aggregates).
inline ExperimentOutputs run_ablation(const ExperimentConfig& cfg) {
  const auto& variants = all_variants();
  const int n_var = static_cast<int>(variants.size());
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  struct Cell {
    bool ok = false;
    std::string error;
    double in_mse = 0.0, ext_mse = 0.0, all_mse = 0.0;
  };
  std::vector<Cell> cells(static_cast<std::size_t>(n_var * n_seeds));

  for_each_index(n_var * n_seeds, [&](int idx) {
    const int vi = idx / n_seeds;
    const int si = idx % n_seeds;
    Cell& cell = cells[static_cast<std::size_t>(idx)];
    try {
      const std::uint64_t seed = cfg.seeds[static_cast<std::size_t>(si)];
      LoadedData data = load_source(cfg, seed);
      TrainConfig tc = cfg.tc;
      tc.variant = variants[static_cast<std::size_t>(vi)];
      TrainResult tr = train(tc, data.ds, seed);
      if (tr.diverged) throw numeric_error(tr.diagnostic);
      Matrix mu, var;
      const Metrics m = evaluate_model(tr.model, data.ds, data, &mu, &var);
      const auto mask = interpolation_mask(train_features_raw(data.ds), data.eval_X);
      cell.in_mse = masked_mse(data.eval_Y, mu, mask, true);
      cell.ext_mse = masked_mse(data.eval_Y, mu, mask, false);
      cell.all_mse = m.mse;
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  });

  ExperimentOutputs out;
  nlohmann::json rows = nlohmann::json::array();
  bool any_failed = false;
  for (int vi = 0; vi < n_var; ++vi) {
    std::vector<double> ins, exts, alls;
    nlohmann::json per_seed = nlohmann::json::array();
    for (int si = 0; si < n_seeds; ++si) {
      const Cell& c = cells[static_cast<std::size_t>(vi * n_seeds + si)];
      if (c.ok) {
        ins.push_back(c.in_mse);
        exts.push_back(c.ext_mse);
        alls.push_back(c.all_mse);
        per_seed.push_back({{"in_mse", c.in_mse}, {"ext_mse", c.ext_mse}, {"all_mse", c.all_mse}});
      } else {
        per_seed.push_back({{"error", c.error}});
        any_failed = true;
      }
    }
    rows.push_back({{"variant", variant_name(variants[static_cast<std::size_t>(vi)])},
                    {"in_mse", aggregate_json(ins)},
                    {"ext_mse", aggregate_json(exts)},
                    {"all_mse", aggregate_json(alls)},
                    {"per_seed", per_seed}});
  }
  out.report.doc["experiment"] = cfg.experiment;
  out.report.doc["config"] = cfg.echo;
  out.report.doc["seeds"] = cfg.seeds;
  out.report.doc["std_kind"] = "population";
  out.report.doc["variants"] = rows;
  out.report.exit_code = any_failed ? 5 : 0;
  return out;
}

// --- emission -------------------------------------------------------------------

inline void write_predictions_csv(const std::string& path, const std::vector<std::string>& feature_names,
                                  const Matrix& feats, const RawPredictions& pred) {
  std::ofstream outf(path);
  if (!outf) throw io_error("cannot write: " + path);
  for (const std::string& n : feature_names) outf << n << ",";
  for (Eigen::Index j = 0; j < pred.mu.cols(); ++j) outf << "mu_" << (j + 1) << ",";
  for (Eigen::Index j = 0; j < pred.var.cols(); ++j) outf << "var_" << (j + 1) << ",";
  outf << "k_d\n";
  for (Eigen::Index i = 0; i < feats.rows(); ++i) {
    for (Eigen::Index j = 0; j < feats.cols(); ++j) outf << format_double(feats(i, j)) << ",";
    for (Eigen::Index j = 0; j < pred.mu.cols(); ++j) outf << format_double(pred.mu(i, j)) << ",";
    for (Eigen::Index j = 0; j < pred.var.cols(); ++j) outf << format_double(pred.var(i, j)) << ",";
    outf << format_double(pred.kd[i]) << "\n";
  }
}

inline void write_history_csv(const std::string& path, const TrainHistory& history) {
  std::ofstream outf(path);
  if (!outf) throw io_error("cannot write: " + path);
  outf << "epoch,cl,kl,hmse,total,val_mse,val_mae,val_nll,seconds\n";
  for (const EpochRecord& r : history.epochs) {
    outf << r.epoch << "," << format_double(r.cl) << "," << format_double(r.kl) << ","
         << format_double(r.hmse) << "," << format_double(r.total) << "," << format_double(r.val_mse)
         << "," << format_double(r.val_mae) << "," << format_double(r.val_nll) << ","
         << format_double(r.seconds) << "\n";
  }
}

// Writes metrics.json (with file manifest), predictions.csv, history.csv, and
// when available model.json plus the canonical dataset dump.
inline void emit_outputs(ExperimentOutputs& out, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create output directory: " + out_dir);

  std::vector<std::string> files{"metrics.json"};
  if (out.pred.mu.size() > 0) {
    write_predictions_csv(out_dir + "/predictions.csv", out.feature_names, out.pred_features, out.pred);
    files.push_back("predictions.csv");
  }
  if (!out.history.epochs.empty()) {
    write_history_csv(out_dir + "/history.csv", out.history);
    files.push_back("history.csv");
  }
  if (out.checkpoint.has_value()) {
    save_checkpoint(*out.checkpoint, out_dir + "/model.json");
    files.push_back("model.json");
  }
  if (out.dataset_dump.has_value()) {
    save_dataset_csv(*out.dataset_dump, out_dir + "/dataset.csv");
    save_transform_log(*out.dataset_dump, out_dir + "/transform_log.json");
    files.push_back("dataset.csv");
    files.push_back("transform_log.json");
  }
  out.report.doc["files"] = files;
  std::ofstream mf(out_dir + "/metrics.json");
  if (!mf) throw io_error("cannot write: " + out_dir + "/metrics.json");
  mf << out.report.doc.dump(2) << "\n";
}

}  // namespace tsnet
