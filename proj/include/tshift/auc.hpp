#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace tshift {

/// Value of the evaluation metric on a restricted sample set. Absent (nullopt
/// at call sites) when the restriction leaves no positives or no negatives.
struct MetricValue {
  double value = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

/// AUC by the rank (Mann-Whitney) method, ties credited 0.5 per pair.
/// Internally sums doubled ranks in integers, so the result is the exact
/// rational (2S - n1(n1+1)) / (2 n1 n0) evaluated once in double.
inline std::optional<MetricValue> rank_auc(std::span<const double> scores,
                                           std::span<const std::uint8_t> labels) {
  const std::size_t n = scores.size();
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return scores[a] < scores[b]; });

  std::uint64_t n_pos = 0, n_neg = 0;
  std::uint64_t doubled_rank_sum_pos = 0;  // sum over positives of 2*rank
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // ranks i+1 .. j (1-based); average doubled rank = (i+1) + j
    const std::uint64_t doubled_avg_rank = static_cast<std::uint64_t>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        ++n_pos;
        doubled_rank_sum_pos += doubled_avg_rank;
      } else {
        ++n_neg;
      }
    }
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double num = static_cast<double>(doubled_rank_sum_pos) -
                     static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return MetricValue{num / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg)),
                     n_pos, n_neg};
}

/// Average ranks (1-based, ties averaged), returned doubled so they stay
/// integral. Used by the permutation test's rank-conversion step.
inline std::vector<std::uint32_t> doubled_average_ranks(std::span<const double> scores) {
  const std::size_t n = scores.size();
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return scores[a] < scores[b]; });
  std::vector<std::uint32_t> out(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint32_t doubled_avg = static_cast<std::uint32_t>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) out[order[k]] = doubled_avg;
    i = j;
  }
  return out;
}

/// AUC over samples whose scores are small integer codes, via per-code
/// positive/negative counts. O(n + n_codes); the hot path for resampling.
class BucketAuc {
 public:
  explicit BucketAuc(std::uint32_t n_codes) : pos_(n_codes, 0), neg_(n_codes, 0) {}

  void reset() {
    std::fill(pos_.begin(), pos_.end(), 0);
    std::fill(neg_.begin(), neg_.end(), 0);
  }

  void add(std::uint32_t code, bool positive, std::uint64_t count = 1) {
    (positive ? pos_ : neg_)[code] += count;
  }

  /// Exact AUC (concordant + half ties over pos*neg pairs); nullopt if a class
  /// is empty.
  std::optional<MetricValue> value() const {
    std::uint64_t n_pos = 0, n_neg = 0;
    std::uint64_t doubled_credit = 0;  // 2*concordant + ties
    std::uint64_t neg_below = 0;
    for (std::size_t c = 0; c < pos_.size(); ++c) {
      doubled_credit += pos_[c] * (2 * neg_below + neg_[c]);
      neg_below += neg_[c];
      n_pos += pos_[c];
      n_neg += neg_[c];
    }
    if (n_pos == 0 || n_neg == 0) return std::nullopt;
    return MetricValue{static_cast<double>(doubled_credit) /
                           (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg)),
                       n_pos, n_neg};
  }

 private:
  std::vector<std::uint64_t> pos_, neg_;
};

/// Dense integer codes (0..k-1) preserving the order and ties of `values`.
inline std::vector<std::uint32_t> dense_order_codes(std::span<const double> values,
                                                    std::uint32_t* n_codes_out = nullptr) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<std::uint32_t> codes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    codes[i] = static_cast<std::uint32_t>(
        std::lower_bound(sorted.begin(), sorted.end(), values[i]) - sorted.begin());
  if (n_codes_out) *n_codes_out = static_cast<std::uint32_t>(sorted.size());
  return codes;
}

}  // namespace tshift
