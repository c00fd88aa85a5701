#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "tshift/auc.hpp"
#include "tshift/logistic.hpp"
#include "tshift/panel.hpp"
#include "tshift/rng.hpp"
#include "tshift/subpop.hpp"
#include "tshift/tree.hpp"

namespace tshift {

enum class ModelKind : std::uint8_t { logistic_regression, decision_tree };

inline const char* to_string(ModelKind k) {
  return k == ModelKind::logistic_regression ? "logistic_regression" : "decision_tree";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "logistic_regression") return ModelKind::logistic_regression;
  if (s == "decision_tree") return ModelKind::decision_tree;
  throw DataError("unknown model kind: " + s);
}

constexpr double kProbabilityClamp = 1e-12;

/// L2 strengths tried for logistic regressions, strongest first so validation
/// ties resolve toward the simpler model.
inline const std::vector<double>& lr_lambda_grid() {
  static const std::vector<double> grid{10.0, 1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
  return grid;
}

/// Leaf-size grid for decision trees, again strongest regularization first.
inline const std::vector<std::uint32_t>& tree_min_leaf_grid() {
  static const std::vector<std::uint32_t> grid{100, 25, 10};
  return grid;
}

/// Per-period probabilistic outcome model: a class-weighted logistic
/// regression or a class-weighted CART tree, hyperparameters chosen by
/// validation AUC.
struct OutcomeModel {
  ModelKind kind = ModelKind::logistic_regression;
  LogisticModel lr;
  DecisionTree tree;
  std::uint32_t dim = 0;
  std::uint64_t vocab_hash = 0;
  int training_period = 0;
  std::uint64_t seed = 0;
  bool convergence_warning = false;
  double validation_auc = 0.0;
};

inline std::uint64_t vocabulary_hash(const Vocabulary& v) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& name : v.names()) h = splitmix64(h ^ stable_hash(name));
  return h;
}

/// P(Y=1 | x). Logistic outputs are clamped to [1e-12, 1-1e-12] so log losses
/// stay finite; tree leaves report the raw weighted positive fraction.
inline double predict_proba(const OutcomeModel& m, const FeatureVec& x) {
  if (m.kind == ModelKind::logistic_regression) {
    const double p = sigmoid(linear_score(m.lr, x));
    return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  }
  return tree_predict(m.tree, x, 0.0, m.dim);
}

inline double predict_proba(const OutcomeModel& m, const Sample& s) {
  return predict_proba(m, s.features);
}

/// Cross-entropy of a prediction against a binary label; the prediction is
/// clamped into (0,1) first.
inline double cross_entropy(double p, std::uint8_t y) {
  p = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return y ? -std::log(p) : -std::log1p(-p);
}

inline double cross_entropy(const OutcomeModel& m, const Sample& s) {
  return cross_entropy(predict_proba(m, s), s.outcome);
}

/// AUC of the model restricted to samples the sub-population selects.
/// Nullopt when the restriction has no positives or no negatives.
inline std::optional<MetricValue> auc_within(const OutcomeModel& m,
                                             std::span<const Sample* const> samples,
                                             const SubpopModel& subpop) {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  scores.reserve(samples.size());
  labels.reserve(samples.size());
  for (const Sample* s : samples) {
    if (!subpop.member(*s)) continue;
    scores.push_back(predict_proba(m, *s));
    labels.push_back(s->outcome);
  }
  return rank_auc(scores, labels);
}

namespace detail {

inline std::vector<TrainRow> weighted_rows(std::span<const Sample* const> samples) {
  std::vector<TrainRow> rows(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    rows[i] = {&samples[i]->features, samples[i]->outcome, 1.0};
  const auto [w0, w1] = balanced_class_weights(rows);
  for (auto& r : rows) r.w = r.y ? w1 : w0;
  return rows;
}

inline std::optional<double> validation_auc_of(const OutcomeModel& m,
                                               std::span<const Sample* const> validation) {
  std::vector<double> scores(validation.size());
  std::vector<std::uint8_t> labels(validation.size());
  for (std::size_t i = 0; i < validation.size(); ++i) {
    scores[i] = predict_proba(m, *validation[i]);
    labels[i] = validation[i]->outcome;
  }
  auto auc = rank_auc(scores, labels);
  if (!auc) return std::nullopt;
  return auc->value;
}

}  // namespace detail

/// Fit one outcome model: train on the training samples with balanced class
/// weights, pick the hyperparameter with the best validation AUC (ties go to
/// the stronger regularization). Deterministic given identical inputs.
inline OutcomeModel fit_outcome_model(std::span<const Sample* const> train,
                                      std::span<const Sample* const> validation, ModelKind kind,
                                      const Vocabulary& vocab, int training_period,
                                      std::uint64_t seed) {
  if (train.empty()) throw DataError("fit_outcome_model: empty training set");
  bool has0 = false, has1 = false;
  for (const Sample* s : train) (s->outcome ? has1 : has0) = true;
  if (!has0 || !has1) throw DataError("fit_outcome_model: single-class training data");

  const auto rows = detail::weighted_rows(train);
  OutcomeModel best;
  best.kind = kind;
  best.dim = vocab.size();
  best.vocab_hash = vocabulary_hash(vocab);
  best.training_period = training_period;
  best.seed = seed;

  double best_auc = -1.0;
  if (kind == ModelKind::logistic_regression) {
    for (double lambda : lr_lambda_grid()) {
      OutcomeModel cand = best;
      cand.lr = fit_logistic_l2(rows, vocab.size(), lambda);
      cand.convergence_warning = !cand.lr.converged;
      const auto auc = detail::validation_auc_of(cand, validation);
      const double a = auc.value_or(0.5);
      if (a > best_auc) {
        best_auc = a;
        cand.validation_auc = a;
        best = std::move(cand);
      }
    }
  } else {
    for (std::uint32_t min_leaf : tree_min_leaf_grid()) {
      std::vector<TreeRow> tree_rows(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i)
        tree_rows[i] = {rows[i].x, 0.0, rows[i].y, rows[i].w};
      OutcomeModel cand = best;
      cand.tree = fit_tree(tree_rows, vocab.size(), /*with_extra_column=*/false, min_leaf);
      const auto auc = detail::validation_auc_of(cand, validation);
      const double a = auc.value_or(0.5);
      if (a > best_auc) {
        best_auc = a;
        cand.validation_auc = a;
        best = std::move(cand);
      }
    }
  }
  return best;
}

}  // namespace tshift
