#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include <json.hpp>

#include "tshift/outcome_model.hpp"
#include "tshift/panel.hpp"

namespace tshift {

/// Knobs for single tests and scans. Defaults follow the algorithm boxes:
/// FDR 0.05, clinical threshold 0.01, 25-patient sample-size floor, 0.5 AUC
/// fit floor, 90% intervals, 2000 resamples, region share in [1%, 75%].
struct ScanConfig {
  double alpha = 0.05;
  double gamma = 0.01;
  std::size_t n_thr = 25;
  double c_thr = 0.5;
  double confidence = 0.90;
  int b_bootstrap = 2000;
  int b_permutation = 2000;
  double share_lower = 0.01;
  double share_upper = 0.75;
  ModelKind model_kind = ModelKind::logistic_regression;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha > 0 && alpha < 1)) throw DataError("config: alpha outside (0,1)");
    if (!(confidence > 0 && confidence < 1)) throw DataError("config: confidence outside (0,1)");
    if (b_bootstrap < 1 || b_permutation < 1) throw DataError("config: resample counts must be >= 1");
    if (!(share_lower <= share_upper)) throw DataError("config: share bounds out of order");
  }
};

namespace detail {

// gamma may be set to infinity to disable selection; JSON has no inf literal,
// so non-finite values round-trip as strings.
inline nlohmann::json encode_real(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : "-inf";
}

inline double decode_real(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw DataError("config: bad numeric string '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace detail

inline nlohmann::json to_json(const ScanConfig& c) {
  return {{"alpha", c.alpha},
          {"gamma", detail::encode_real(c.gamma)},
          {"n_thr", c.n_thr},
          {"c_thr", c.c_thr},
          {"confidence", c.confidence},
          {"b_bootstrap", c.b_bootstrap},
          {"b_permutation", c.b_permutation},
          {"share_lower", c.share_lower},
          {"share_upper", c.share_upper},
          {"model_kind", to_string(c.model_kind)},
          {"seed", c.seed}};
}

inline ScanConfig scan_config_from_json(const nlohmann::json& j) {
  ScanConfig c;
  if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
  if (j.contains("gamma")) c.gamma = detail::decode_real(j.at("gamma"));
  if (j.contains("n_thr")) c.n_thr = j.at("n_thr").get<std::size_t>();
  if (j.contains("c_thr")) c.c_thr = j.at("c_thr").get<double>();
  if (j.contains("confidence")) c.confidence = j.at("confidence").get<double>();
  if (j.contains("b_bootstrap")) c.b_bootstrap = j.at("b_bootstrap").get<int>();
  if (j.contains("b_permutation")) c.b_permutation = j.at("b_permutation").get<int>();
  if (j.contains("share_lower")) c.share_lower = j.at("share_lower").get<double>();
  if (j.contains("share_upper")) c.share_upper = j.at("share_upper").get<double>();
  if (j.contains("model_kind")) c.model_kind = model_kind_from_string(j.at("model_kind"));
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

}  // namespace tshift
