#pragma once

#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "tshift/analysis.hpp"
#include "tshift/config.hpp"
#include "tshift/outcome_model.hpp"
#include "tshift/panel.hpp"
#include "tshift/shift_test.hpp"
#include "tshift/subpop.hpp"
#include "tshift/synthetic.hpp"
#include "tshift/tree.hpp"

// JSON encodings for models, reports and scenarios. nlohmann serializes
// doubles with shortest round-trip precision, so encode/decode is exact.

namespace tshift {

inline nlohmann::json to_json(const DecisionTree& t) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : t.nodes)
    nodes.push_back({{"feature", n.feature},
                     {"threshold", n.threshold},
                     {"left", n.left},
                     {"right", n.right},
                     {"score", n.score},
                     {"n_train", n.n_train}});
  return {{"min_samples_leaf", t.min_samples_leaf}, {"nodes", nodes}};
}

inline DecisionTree tree_from_json(const nlohmann::json& j) {
  DecisionTree t;
  t.min_samples_leaf = j.at("min_samples_leaf").get<std::uint32_t>();
  for (const auto& n : j.at("nodes")) {
    DecisionTree::Node node;
    node.feature = n.at("feature").get<std::int32_t>();
    node.threshold = n.at("threshold").get<double>();
    node.left = n.at("left").get<std::int32_t>();
    node.right = n.at("right").get<std::int32_t>();
    node.score = n.at("score").get<double>();
    node.n_train = n.at("n_train").get<std::uint32_t>();
    t.nodes.push_back(node);
  }
  return t;
}

inline nlohmann::json to_json(const OutcomeModel& m) {
  nlohmann::json j{{"kind", to_string(m.kind)},
                   {"dim", m.dim},
                   {"vocab_hash", m.vocab_hash},
                   {"training_period", m.training_period},
                   {"seed", m.seed},
                   {"convergence_warning", m.convergence_warning},
                   {"validation_auc", m.validation_auc}};
  if (m.kind == ModelKind::logistic_regression) {
    j["weights"] = m.lr.weights;
    j["intercept"] = m.lr.intercept;
    j["lambda"] = m.lr.lambda;
    j["iterations"] = m.lr.iterations;
  } else {
    j["tree"] = to_json(m.tree);
  }
  return j;
}

inline OutcomeModel outcome_model_from_json(const nlohmann::json& j) {
  OutcomeModel m;
  m.kind = model_kind_from_string(j.at("kind").get<std::string>());
  m.dim = j.at("dim").get<std::uint32_t>();
  m.vocab_hash = j.at("vocab_hash").get<std::uint64_t>();
  m.training_period = j.at("training_period").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.convergence_warning = j.at("convergence_warning").get<bool>();
  m.validation_auc = j.at("validation_auc").get<double>();
  if (m.kind == ModelKind::logistic_regression) {
    m.lr.weights = j.at("weights").get<std::vector<double>>();
    m.lr.intercept = j.at("intercept").get<double>();
    m.lr.lambda = j.at("lambda").get<double>();
    m.lr.iterations = j.at("iterations").get<int>();
    m.lr.converged = !m.convergence_warning;
  } else {
    m.tree = tree_from_json(j.at("tree"));
  }
  return m;
}

inline nlohmann::json to_json(const SubpopModel& s) {
  switch (s.kind()) {
    case SubpopModel::Kind::entire_population:
      return {{"kind", "entire_population"}, {"no_region_found", s.no_region_found()}};
    case SubpopModel::Kind::complement_of:
      return {{"kind", "complement_of"}, {"reference", to_json(*s.reference())}};
    case SubpopModel::Kind::learned_tree:
      return {{"kind", "learned_tree"}, {"dim", s.dim()}, {"tree", to_json(s.tree())}};
  }
  return {};
}

inline SubpopModel subpop_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "entire_population") {
    auto m = SubpopModel::entire();
    m.set_no_region_found(j.value("no_region_found", false));
    return m;
  }
  if (kind == "complement_of") return SubpopModel::complement(subpop_from_json(j.at("reference")));
  if (kind == "learned_tree")
    return SubpopModel::from_tree(tree_from_json(j.at("tree")), j.at("dim").get<std::uint32_t>());
  throw DataError("unknown sub-population kind: " + kind);
}

inline nlohmann::json to_json(const CheckReport& c) {
  return {{"check", to_string(c.check)},
          {"passed", c.passed},
          {"reason", c.reason},
          {"details", c.details}};
}

inline nlohmann::json to_json(const TaskKey& k) {
  return {{"outcome_id", k.outcome_id}, {"period", k.period}, {"scope", to_string(k.scope)}};
}

inline nlohmann::json to_json(const TaskResult& r, const Vocabulary* vocab = nullptr) {
  nlohmann::json j{{"key", to_json(r.key)},
                   {"status", r.status == TaskStatus::tested ? "tested" : "gated_out"},
                   {"convergence_warning", r.convergence_warning}};
  nlohmann::json gates = nlohmann::json::array();
  for (const auto& g : r.gate_reports) gates.push_back(to_json(g));
  j["gates"] = gates;
  if (r.status == TaskStatus::gated_out) j["gate_reason"] = r.gate_reason;
  if (!r.error.empty()) j["error"] = r.error;
  if (r.p_value) j["p"] = *r.p_value;
  if (r.metric_diff) j["a"] = *r.metric_diff;
  if (r.exceed_count) j["exceed_count"] = *r.exceed_count;
  if (r.subpop) {
    j["subpop"] = to_json(*r.subpop);
    if (vocab && !r.subpop->is_entire_population()) j["subpop_rules"] = r.subpop->rules(*vocab);
  }
  return j;
}

inline nlohmann::json to_json(const ScanReport& r, const Vocabulary* vocab = nullptr) {
  nlohmann::json results = nlohmann::json::array();
  for (const auto& t : r.results) results.push_back(to_json(t, vocab));
  nlohmann::json selected = nlohmann::json::array();
  for (const auto& k : r.selected) selected.push_back(to_json(k));
  return {{"config", to_json(r.config)}, {"results", results}, {"selected", selected}};
}

inline nlohmann::json to_json(const ShiftScenario& sc) {
  nlohmann::json j{{"kind", to_string(sc.kind)},
                   {"latent_dim", sc.latent_dim},
                   {"n_features", sc.n_features},
                   {"n_patients", sc.n_patients},
                   {"samples_per_patient", sc.samples_per_patient},
                   {"magnitude", sc.magnitude},
                   {"prevalence", sc.prevalence},
                   {"patient_sigma", sc.patient_sigma},
                   {"flip_feature", sc.flip_feature},
                   {"separation_boost", sc.separation_boost},
                   {"label_noise_t", sc.label_noise_t},
                   {"seed", sc.seed}};
  if (sc.subgroup_feature) j["subgroup_feature"] = *sc.subgroup_feature;
  return j;
}

inline ShiftScenario scenario_from_json(const nlohmann::json& j) {
  ShiftScenario sc;
  sc.kind = shift_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("latent_dim")) sc.latent_dim = j.at("latent_dim").get<int>();
  if (j.contains("n_features")) sc.n_features = j.at("n_features").get<int>();
  if (j.contains("n_patients")) sc.n_patients = j.at("n_patients").get<int>();
  if (j.contains("samples_per_patient"))
    sc.samples_per_patient = j.at("samples_per_patient").get<int>();
  if (j.contains("magnitude")) sc.magnitude = j.at("magnitude").get<double>();
  if (j.contains("prevalence")) sc.prevalence = j.at("prevalence").get<double>();
  if (j.contains("patient_sigma")) sc.patient_sigma = j.at("patient_sigma").get<double>();
  if (j.contains("flip_feature")) sc.flip_feature = j.at("flip_feature").get<int>();
  if (j.contains("subgroup_feature")) sc.subgroup_feature = j.at("subgroup_feature").get<int>();
  if (j.contains("separation_boost")) sc.separation_boost = j.at("separation_boost").get<double>();
  if (j.contains("label_noise_t")) sc.label_noise_t = j.at("label_noise_t").get<double>();
  if (j.contains("seed")) sc.seed = j.at("seed").get<std::uint64_t>();
  return sc;
}

inline nlohmann::json to_json(const ScenarioGroundTruth& t) {
  nlohmann::json pred = nlohmann::json::array();
  for (const auto& [f, v] : t.affected_predicate) pred.push_back({{"feature", f}, {"value", v}});
  return {{"kind", to_string(t.kind)},
          {"affected_predicate", pred},
          {"true_prevalence", t.true_prevalence}};
}

inline void write_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open output file: " + path);
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad JSON in ") + path + ": " + e.what());
  }
}

}  // namespace tshift
