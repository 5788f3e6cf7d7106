// Experiment front end: toy runs, dataset comparison, anti-noise, active
// learning, the ablation grid, and checkpoint-based prediction.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 training
// divergence, 5 partial-seed failure.

#include "tsnet/tsnet.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

nlohmann::json load_config_file(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw tsnet::io_error("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw tsnet::contract_error("config parse failure in " + path + ": " + e.what());
  }
  return j;
}

tsnet::ExperimentConfig build_config(const std::string& experiment, const std::string& config_path,
                                     const std::string& seed_csv, const std::string& out_dir) {
  nlohmann::json overrides = load_config_file(config_path);
  if (!seed_csv.empty()) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(seed_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) seeds.push_back(std::stoull(tok));
    }
    overrides["seeds"] = seeds;
  }
  if (!out_dir.empty()) overrides["out_dir"] = out_dir;
  return tsnet::resolve_config(experiment, overrides);
}

int finish(tsnet::ExperimentOutputs& outputs, const tsnet::ExperimentConfig& cfg) {
  tsnet::emit_outputs(outputs, cfg.out_dir);
  std::cout << "wrote " << cfg.out_dir << "/metrics.json" << std::endl;
  return outputs.report.exit_code;
}

int run_predict(const tsnet::ExperimentConfig& cfg) {
  if (cfg.checkpoint_path.empty()) throw tsnet::contract_error("predict: config needs 'checkpoint'");
  tsnet::Checkpoint ck = tsnet::load_checkpoint(cfg.checkpoint_path);

  tsnet::Matrix feats_raw;
  if (cfg.source == "toy1d") {
    feats_raw = tsnet::gen_toy1d(cfg.seeds.front()).eval_X;
  } else if (cfg.source == "toy2d") {
    feats_raw = tsnet::gen_toy2d(cfg.seeds.front()).eval_X;
  } else {
    // Raw feature CSV with the checkpoint's feature columns; extra columns
    // (e.g. the target) are ignored.
    std::ifstream in(cfg.csv_path);
    if (!in) throw tsnet::io_error("cannot open CSV file: " + cfg.csv_path);
    std::string line;
    if (!std::getline(in, line)) throw tsnet::parse_error("CSV is empty: " + cfg.csv_path);
    const auto header = tsnet::detail::split_csv_line(line);
    std::vector<int> cols;
    for (const std::string& name : ck.feature_names) {
      int found = -1;
      for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] == name) found = static_cast<int>(j);
      }
      if (found < 0) throw tsnet::schema_error("predict: CSV lacks feature column '" + name + "'");
      cols.push_back(found);
    }
    std::vector<std::vector<double>> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      const auto cells = tsnet::detail::split_csv_line(line);
      std::vector<double> vals;
      for (int c : cols) {
        if (c >= static_cast<int>(cells.size())) {
          throw tsnet::parse_error("row " + std::to_string(line_no) + ": too few cells");
        }
        char* end = nullptr;
        const double v = std::strtod(cells[static_cast<std::size_t>(c)].c_str(), &end);
        if (end == cells[static_cast<std::size_t>(c)].c_str() || *end != '\0') {
          throw tsnet::parse_error("row " + std::to_string(line_no) + ", column '" +
                                   header[static_cast<std::size_t>(c)] + "': non-numeric cell");
        }
        vals.push_back(v);
      }
      rows.push_back(std::move(vals));
    }
    feats_raw.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < rows[i].size(); ++j)
        feats_raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }

  tsnet::Matrix x_std(feats_raw.rows(), feats_raw.cols());
  for (Eigen::Index j = 0; j < feats_raw.cols(); ++j)
    for (Eigen::Index i = 0; i < feats_raw.rows(); ++i)
      x_std(i, j) = tsnet::transform_value(ck.x_tf[static_cast<std::size_t>(j)], feats_raw(i, j));

  tsnet::Predictions p = tsnet::predict(ck.model, x_std);
  tsnet::RawPredictions raw;
  raw.mu.resize(p.mu.rows(), p.mu.cols());
  raw.var.resize(p.var.rows(), p.var.cols());
  raw.kd = p.kd;
  for (Eigen::Index j = 0; j < p.mu.cols(); ++j) {
    for (Eigen::Index i = 0; i < p.mu.rows(); ++i) {
      raw.mu(i, j) = tsnet::invert_value(ck.y_tf[static_cast<std::size_t>(j)], p.mu(i, j));
      raw.var(i, j) = tsnet::invert_variance(ck.y_tf[static_cast<std::size_t>(j)], p.mu(i, j), p.var(i, j));
    }
  }

  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw tsnet::io_error("cannot create output directory: " + cfg.out_dir);
  tsnet::write_predictions_csv(cfg.out_dir + "/predictions.csv", ck.feature_names, feats_raw, raw);
  std::cout << "wrote " << cfg.out_dir << "/predictions.csv" << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TSNet: heteroscedastic-noise-aware regression experiments"};
  app.require_subcommand(1);

  std::string config_path, seed_csv, out_dir;
  app.add_option("--config", config_path, "JSON experiment config")->expected(1);
  app.add_option("--seed", seed_csv, "comma-separated seed list override")->expected(1);
  app.add_option("--out", out_dir, "output directory override")->expected(1);

  for (const char* name : {"toy1d", "toy2d", "compare", "antinoise", "active", "ablate", "predict"}) {
    app.add_subcommand(name)->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);
  const std::string experiment = app.get_subcommands().front()->get_name();

  try {
    tsnet::ExperimentConfig cfg = build_config(experiment, config_path, seed_csv, out_dir);
    if (experiment == "predict") return run_predict(cfg);

    tsnet::ExperimentOutputs outputs;
    if (experiment == "toy1d" || experiment == "toy2d" || experiment == "compare") {
      outputs = tsnet::run_comparison(cfg);
    } else if (experiment == "antinoise") {
      outputs = tsnet::run_antinoise(cfg);
    } else if (experiment == "active") {
      outputs = tsnet::run_active_learning(cfg);
    } else if (experiment == "ablate") {
      outputs = tsnet::run_ablation(cfg);
    }
    return finish(outputs, cfg);
  } catch (const tsnet::contract_error& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const tsnet::schema_error& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return 3;
  } catch (const tsnet::parse_error& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return 3;
  } catch (const tsnet::io_error& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return 3;
  } catch (const tsnet::numeric_error& e) {
    std::cerr << "training divergence: " << e.what() << std::endl;
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
}
