#pragma once

// Shared test helpers: independent oracles and tiny data builders. These stay
// separate from the library so the checks they power do not share code with
// the implementation under test.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tshift/panel.hpp"

namespace testsupport {

/// O(n^2) pairwise AUC: concordant pairs count 1, ties 0.5.
inline double pairwise_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::uint64_t doubled_credit = 0, n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    ++n_pos;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) doubled_credit += 2;
      else if (scores[i] == scores[j]) doubled_credit += 1;
    }
  }
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (!labels[j]) ++n_neg;
  return static_cast<double>(doubled_credit) /
         (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline tshift::FeatureVec fv(std::initializer_list<std::pair<std::uint32_t, double>> items) {
  tshift::FeatureVec f(items.begin(), items.end());
  std::sort(f.begin(), f.end());
  return f;
}

inline tshift::Sample make_sample(int period, int month, int y, tshift::FeatureVec f = {}) {
  tshift::Sample s;
  s.period = period;
  s.month = month;
  s.outcome = static_cast<std::uint8_t>(y);
  s.features = std::move(f);
  return s;
}

}  // namespace testsupport
