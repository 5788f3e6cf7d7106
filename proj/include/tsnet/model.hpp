#pragma once

// Model assembly: ablation variants, prediction path, and checkpoint I/O.
// MLP-based variants replace the DTB with two independent heads (mean and
// log-variance); NCL/DPN toggles select loss terms and the density weight.

#include "tsnet/core.hpp"
#include "tsnet/data.hpp"
#include "tsnet/dpm.hpp"
#include "tsnet/dtb.hpp"
#include "tsnet/gaussian.hpp"
#include "tsnet/loss.hpp"
#include "tsnet/mlp.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace tsnet {

enum class Variant { Mlp, MlpNcl, MlpDpn, MlpNclDpn, Dtb, DtbNcl, DtbDpn, TsnetFull };

inline const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::Mlp,    Variant::MlpNcl, Variant::MlpDpn,
                                      Variant::MlpNclDpn, Variant::Dtb, Variant::DtbNcl,
                                      Variant::DtbDpn, Variant::TsnetFull};
  return v;
}

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Mlp: return "mlp";
    case Variant::MlpNcl: return "mlp+ncl";
    case Variant::MlpDpn: return "mlp+dpn";
    case Variant::MlpNclDpn: return "mlp+ncl+dpn";
    case Variant::Dtb: return "dtb";
    case Variant::DtbNcl: return "dtb+ncl";
    case Variant::DtbDpn: return "dtb+dpn";
    case Variant::TsnetFull: return "tsnet-full";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  for (Variant v : all_variants()) {
    if (variant_name(v) == s) return v;
  }
  throw contract_error("unknown model variant: " + s);
}

inline bool uses_dtb(Variant v) {
  return v == Variant::Dtb || v == Variant::DtbNcl || v == Variant::DtbDpn || v == Variant::TsnetFull;
}
inline bool uses_ncl(Variant v) {
  return v == Variant::MlpNcl || v == Variant::MlpNclDpn || v == Variant::DtbNcl || v == Variant::TsnetFull;
}
inline bool uses_dpn(Variant v) {
  return v == Variant::MlpDpn || v == Variant::MlpNclDpn || v == Variant::DtbDpn || v == Variant::TsnetFull;
}

struct ModelHyper {
  std::vector<int> mu_hidden{64, 64, 64};
  std::vector<int> si_hidden{32, 32};
  std::vector<int> so_hidden{32, 32};
  int embed_L = 3;
  int dpm_embed_dim = 16;
};

struct TSNetModel {
  Variant variant = Variant::TsnetFull;
  int m_raw = 0;   // feature width before positional embedding
  int m_emb = 0;   // network input width
  int l = 0;
  int embed_L = 0;

  MLPSpec spec_mu, spec_si, spec_so;
  ParamStore p_mu, p_si, p_so;  // p_si is empty for MLP-based variants
  DensityNetParams dnp;         // populated iff uses_dpn(variant)
  std::optional<DensityCalibration> cal;
  PriorSpec prior;

  std::vector<ParamStore*> trainable() {
    std::vector<ParamStore*> out{&p_mu};
    if (uses_dtb(variant)) out.push_back(&p_si);
    out.push_back(&p_so);
    if (uses_dpn(variant)) out.push_back(&dnp.store);
    return out;
  }
};

inline TSNetModel init_model(Variant variant, int m_raw, int l, const ModelHyper& hyper,
                             std::uint64_t seed) {
  if (m_raw < 1 || l < 1) throw contract_error("init_model: need m >= 1 and l >= 1");
  Rng rng(seed);
  TSNetModel model;
  model.variant = variant;
  model.m_raw = m_raw;
  model.embed_L = hyper.embed_L;
  model.m_emb = m_raw * (2 * hyper.embed_L + 3);
  model.l = l;
  auto widths = [&](const std::vector<int>& hidden, int out) {
    std::vector<int> w{model.m_emb};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(out);
    return w;
  };
  model.spec_mu.widths = widths(hyper.mu_hidden, l);
  model.p_mu = make_mlp_params(model.spec_mu, "f_mu", rng);
  if (uses_dtb(variant)) {
    model.spec_si.widths = widths(hyper.si_hidden, model.m_emb);
    model.p_si = make_mlp_params(model.spec_si, "f_si", rng);
  }
  model.spec_so.widths = widths(hyper.so_hidden, l);
  model.p_so = make_mlp_params(model.spec_so, "f_so", rng);
  if (uses_dpn(variant)) model.dnp = make_density_net(m_raw, hyper.dpm_embed_dim, rng);
  model.prior.mu_p = Vector::Zero(l);
  model.prior.var_p = Vector::Ones(l);
  return model;
}

// Network Gaussian (mu_n, var_n) at an embedded input, standardized space.
inline GaussianDiag net_gaussian(const TSNetModel& model, const Vector& x_emb) {
  GaussianDiag g;
  g.mean = mlp_forward(model.spec_mu, model.p_mu, x_emb);
  if (uses_dtb(model.variant)) {
    const Matrix j = mlp_input_jacobian(model.spec_mu, model.p_mu, x_emb);
    const Vector si = variance_head(mlp_forward(model.spec_si, model.p_si, x_emb));
    const Vector so = variance_head(mlp_forward(model.spec_so, model.p_so, x_emb));
    g.var = (j.array().square().matrix().transpose() * si + so).eval();
  } else {
    g.var = variance_head(mlp_forward(model.spec_so, model.p_so, x_emb));
  }
  return g;
}

struct Predictions {
  Matrix mu;   // n x l, standardized space
  Matrix var;  // n x l
  Vector kd;   // n
};

// Inference: DTB forward, calibrated k_d, UCO combination. No sampling.
inline Predictions predict(const TSNetModel& model, const Matrix& X_std) {
  if (X_std.cols() != model.m_raw) throw shape_error("predict: feature width mismatch");
  const bool dpn = uses_dpn(model.variant);
  if (dpn && !model.cal.has_value()) {
    throw contract_error("predict: model is uncalibrated (train before inference)");
  }
  const Eigen::Index n = X_std.rows();
  Predictions out;
  out.mu.resize(n, model.l);
  out.var.resize(n, model.l);
  out.kd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const RowVector emb = positional_embed_row(X_std.row(i), model.embed_L);
    GaussianDiag g = net_gaussian(model, emb.transpose());
    const double kd = dpn ? k_d(model.dnp, *model.cal, X_std.row(i).transpose()) : 1.0;
    GaussianDiag combined = dpn ? uco_combine(kd, g, model.prior) : g;
    out.mu.row(i) = combined.mean.transpose();
    out.var.row(i) = combined.var.transpose();
    out.kd[i] = kd;
  }
  return out;
}

// --- checkpoints -------------------------------------------------------------

inline constexpr const char* kCheckpointFormat = "tsnet-checkpoint-v1";

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.size();
  if (rows == 0) return Matrix(0, 0);
  const auto cols = j.at(0).size();
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j.at(i).at(c).get<double>();
  return m;
}

inline nlohmann::json store_to_json(const ParamStore& ps) {
  nlohmann::json j;
  j["name"] = ps.name;
  j["mats"] = nlohmann::json::array();
  for (const Matrix& m : ps.mats) j["mats"].push_back(matrix_to_json(m));
  return j;
}

inline ParamStore store_from_json(const nlohmann::json& j) {
  ParamStore ps;
  ps.name = j.at("name").get<std::string>();
  for (const auto& m : j.at("mats")) ps.mats.push_back(matrix_from_json(m));
  return ps;
}

inline nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Vector vector_from_json(const nlohmann::json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
  return v;
}

}  // namespace detail

struct Checkpoint {
  TSNetModel model;
  std::vector<ColumnTransform> x_tf, y_tf;
  std::vector<std::string> feature_names, target_names;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& ck) {
  const TSNetModel& m = ck.model;
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["variant"] = variant_name(m.variant);
  j["m_raw"] = m.m_raw;
  j["l"] = m.l;
  j["embed_L"] = m.embed_L;
  j["spec_mu"] = m.spec_mu.widths;
  j["spec_so"] = m.spec_so.widths;
  j["p_mu"] = detail::store_to_json(m.p_mu);
  j["p_so"] = detail::store_to_json(m.p_so);
  if (uses_dtb(m.variant)) {
    j["spec_si"] = m.spec_si.widths;
    j["p_si"] = detail::store_to_json(m.p_si);
  }
  if (uses_dpn(m.variant)) {
    j["density"] = {{"m", m.dnp.m}, {"d", m.dnp.d}, {"store", detail::store_to_json(m.dnp.store)}};
  }
  if (m.cal.has_value()) {
    j["calibration"] = {{"s_min", m.cal->s_min}, {"s_max", m.cal->s_max}};
  } else {
    j["calibration"] = nullptr;
  }
  j["prior"] = {{"mu", detail::vector_to_json(m.prior.mu_p)}, {"var", detail::vector_to_json(m.prior.var_p)}};
  auto tf_json = [](const std::vector<ColumnTransform>& tf) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : tf) arr.push_back({{"log1p", t.log1p}, {"mean", t.mean}, {"std", t.std}});
    return arr;
  };
  j["transforms"] = {{"x", tf_json(ck.x_tf)},
                     {"y", tf_json(ck.y_tf)},
                     {"feature_names", ck.feature_names},
                     {"target_names", ck.target_names}};
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.contains("format") || j.at("format").get<std::string>() != kCheckpointFormat) {
    throw schema_error("checkpoint: unsupported or missing format tag");
  }
  Checkpoint ck;
  TSNetModel& m = ck.model;
  m.variant = variant_from_string(j.at("variant").get<std::string>());
  m.m_raw = j.at("m_raw").get<int>();
  m.l = j.at("l").get<int>();
  m.embed_L = j.at("embed_L").get<int>();
  m.m_emb = m.m_raw * (2 * m.embed_L + 3);
  m.spec_mu.widths = j.at("spec_mu").get<std::vector<int>>();
  m.spec_so.widths = j.at("spec_so").get<std::vector<int>>();
  m.p_mu = detail::store_from_json(j.at("p_mu"));
  m.p_so = detail::store_from_json(j.at("p_so"));
  if (uses_dtb(m.variant)) {
    m.spec_si.widths = j.at("spec_si").get<std::vector<int>>();
    m.p_si = detail::store_from_json(j.at("p_si"));
  }
  if (uses_dpn(m.variant)) {
    m.dnp.m = j.at("density").at("m").get<int>();
    m.dnp.d = j.at("density").at("d").get<int>();
    m.dnp.store = detail::store_from_json(j.at("density").at("store"));
  }
  if (!j.at("calibration").is_null()) {
    m.cal = DensityCalibration{j.at("calibration").at("s_min").get<double>(),
                               j.at("calibration").at("s_max").get<double>()};
  }
  m.prior.mu_p = detail::vector_from_json(j.at("prior").at("mu"));
  m.prior.var_p = detail::vector_from_json(j.at("prior").at("var"));
  auto tf_from = [](const nlohmann::json& arr) {
    std::vector<ColumnTransform> tf;
    for (const auto& t : arr) {
      tf.push_back({t.at("log1p").get<bool>(), t.at("mean").get<double>(), t.at("std").get<double>()});
    }
    return tf;
  };
  ck.x_tf = tf_from(j.at("transforms").at("x"));
  ck.y_tf = tf_from(j.at("transforms").at("y"));
  ck.feature_names = j.at("transforms").at("feature_names").get<std::vector<std::string>>();
  ck.target_names = j.at("transforms").at("target_names").get<std::vector<std::string>>();
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write checkpoint: " + path);
  out << checkpoint_to_json(ck).dump() << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open checkpoint: " + path);
  nlohmann::json j;
  in >> j;
  return checkpoint_from_json(j);
}

}  // namespace tsnet
