#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "tshift/outcome_model.hpp"
#include "tshift/panel.hpp"
#include "tshift/rng.hpp"
#include "tshift/subpop.hpp"
#include "tshift/tree.hpp"

namespace tshift {

/// z = 1 iff the historical model's cross entropy strictly exceeds the
/// current model's on the sample. Ties (including identical models) give 0.
inline std::vector<std::uint8_t> compute_subpop_labels(const OutcomeModel& f_prev,
                                                       const OutcomeModel& f_curr,
                                                       std::span<const Sample* const> samples) {
  std::vector<std::uint8_t> z(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    z[i] = cross_entropy(f_prev, *samples[i]) > cross_entropy(f_curr, *samples[i]) ? 1 : 0;
  return z;
}

/// Calibration form of the same labels: 1 iff the current model's prediction
/// is strictly closer to the label. Agrees with compute_subpop_labels
/// whenever both predictions are strictly inside (0,1).
inline std::vector<std::uint8_t> calibration_labels(const OutcomeModel& f_prev,
                                                    const OutcomeModel& f_curr,
                                                    std::span<const Sample* const> samples) {
  std::vector<std::uint8_t> z(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double y = samples[i]->outcome ? 1.0 : 0.0;
    const double d_prev = std::abs(y - predict_proba(f_prev, *samples[i]));
    const double d_curr = std::abs(y - predict_proba(f_curr, *samples[i]));
    z[i] = d_prev > d_curr ? 1 : 0;
  }
  return z;
}

/// Re-pool the train and validation patients and re-split them at the same
/// proportions, stratified by whether the patient carries any z=1 sample.
/// Test patients are untouched. `flagged_patients` marks patients with a z=1
/// sample (indexed like the dataset's panels).
inline PanelDataset reshuffle_splits(const PanelDataset& ds,
                                     const std::vector<bool>& flagged_patients,
                                     std::uint64_t seed) {
  if (!ds.has_splits()) throw DataError("reshuffle_splits: dataset has no split assignment");
  std::vector<std::uint32_t> strata[2];
  std::size_t n_train = 0, n_val = 0;
  for (std::uint32_t p = 0; p < ds.n_patients(); ++p) {
    const auto s = ds.split_of(p);
    if (s == DataSplit::test) continue;
    (s == DataSplit::train ? n_train : n_val) += 1;
    strata[flagged_patients[p] ? 1 : 0].push_back(p);
  }
  const double pool = static_cast<double>(n_train + n_val);
  if (pool == 0) throw DataError("reshuffle_splits: no train or validation patients");
  const double val_frac = static_cast<double>(n_val) / pool;

  std::vector<DataSplit> split = ds.splits();
  for (int k = 0; k < 2; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    rng.shuffle(strata[k]);
    const std::size_t n = strata[k].size();
    const auto nv = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n)));
    for (std::size_t i = 0; i < n; ++i)
      split[strata[k][i]] = i < nv ? DataSplit::validation : DataSplit::train;
  }
  return ds.with_splits(std::move(split));
}

/// Fit the sub-population tree over (features, outcome) with z targets:
/// class-weighted, leaf-size grid chosen by validation AUC on z, output
/// binarized at 0.5. Single-class z collapses to the entire population with
/// the no-region-found flag set.
inline SubpopModel fit_subpop_model(std::span<const Sample* const> train,
                                    std::span<const std::uint8_t> z_train,
                                    std::span<const Sample* const> validation,
                                    std::span<const std::uint8_t> z_validation,
                                    std::uint32_t dim) {
  bool has0 = false, has1 = false;
  for (auto z : z_train) (z ? has1 : has0) = true;
  if (!has0 || !has1) {
    auto m = SubpopModel::entire();
    m.set_no_region_found(true);
    return m;
  }

  std::vector<TreeRow> rows(train.size());
  double n0 = 0, n1 = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    rows[i] = {&train[i]->features, static_cast<double>(train[i]->outcome), z_train[i], 1.0};
    (z_train[i] ? n1 : n0) += 1;
  }
  const double n = n0 + n1;
  for (auto& r : rows) r.w = r.target ? n / (2 * n1) : n / (2 * n0);

  DecisionTree best_tree;
  double best_auc = -1.0;
  for (std::uint32_t min_leaf : tree_min_leaf_grid()) {
    auto tree = fit_tree(rows, dim, /*with_extra_column=*/true, min_leaf);
    std::vector<double> scores(validation.size());
    std::vector<std::uint8_t> labels(z_validation.begin(), z_validation.end());
    for (std::size_t i = 0; i < validation.size(); ++i)
      scores[i] = tree_predict(tree, validation[i]->features,
                               static_cast<double>(validation[i]->outcome), dim);
    const auto auc = rank_auc(scores, labels);
    const double a = auc ? auc->value : 0.5;
    if (a > best_auc) {
      best_auc = a;
      best_tree = std::move(tree);
    }
  }
  return SubpopModel::from_tree(std::move(best_tree), dim);
}

}  // namespace tshift
