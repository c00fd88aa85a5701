#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "tshift/auc.hpp"
#include "tshift/outcome_model.hpp"
#include "tshift/panel.hpp"
#include "tshift/rng.hpp"
#include "tshift/subpop.hpp"

namespace tshift {

struct ConfidenceInterval {
  double lower = 0.0;
  double upper = 0.0;
  double confidence = 0.90;
  int iterations = 2000;      // attempted resamples B
  int skipped = 0;            // degenerate resamples recorded and excluded
  double point_estimate = 0;  // a on the original data
};

struct PermutationResult {
  double p_value = 1.0;
  int exceed_count = 0;   // m
  int permutations = 0;   // B
  double observed_diff = 0.0;
};

namespace detail {

/// Flattened per-patient evaluation data for one period: model scores,
/// labels, and sub-population membership, in CSR layout.
struct EvalSet {
  std::vector<std::uint32_t> offsets;  // n_patients + 1
  std::vector<double> score_prev, score_curr;
  std::vector<std::uint8_t> label, member;
  std::vector<std::uint8_t> patient_has_outcome;

  std::size_t n_patients() const { return offsets.size() - 1; }
  std::size_t n_samples() const { return label.size(); }
};

inline EvalSet build_eval_set(std::span<const PatientSamples> groups, const OutcomeModel* f_prev,
                              const OutcomeModel* f_curr, const SubpopModel& subpop) {
  EvalSet ev;
  ev.offsets.push_back(0);
  for (const auto& g : groups) {
    bool has_outcome = false;
    for (const Sample* s : g.samples) {
      ev.score_prev.push_back(f_prev ? predict_proba(*f_prev, *s) : 0.0);
      ev.score_curr.push_back(f_curr ? predict_proba(*f_curr, *s) : 0.0);
      ev.label.push_back(s->outcome);
      ev.member.push_back(subpop.member(*s) ? 1 : 0);
      has_outcome |= s->outcome != 0;
    }
    ev.offsets.push_back(static_cast<std::uint32_t>(ev.label.size()));
    ev.patient_has_outcome.push_back(has_outcome ? 1 : 0);
  }
  return ev;
}

inline std::optional<MetricValue> member_auc(const EvalSet& ev, const std::vector<double>& scores) {
  std::vector<double> s;
  std::vector<std::uint8_t> l;
  for (std::size_t i = 0; i < ev.n_samples(); ++i) {
    if (!ev.member[i]) continue;
    s.push_back(scores[i]);
    l.push_back(ev.label[i]);
  }
  return rank_auc(s, l);
}

/// Linear-interpolation quantile of a sorted vector.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Basic (reverse-percentile) interval from resample statistics.
inline ConfidenceInterval basic_interval(double a, std::vector<double> stats, double confidence,
                                         int attempted, int skipped) {
  std::sort(stats.begin(), stats.end());
  const double alpha = 1.0 - confidence;
  ConfidenceInterval ci;
  ci.lower = 2.0 * a - sorted_quantile(stats, 1.0 - alpha / 2.0);
  ci.upper = 2.0 * a - sorted_quantile(stats, alpha / 2.0);
  ci.confidence = confidence;
  ci.iterations = attempted;
  ci.skipped = skipped;
  ci.point_estimate = a;
  return ci;
}

inline void check_skip_budget(int skipped, int B) {
  if (skipped > static_cast<double>(B) * 0.01)
    throw DataError("unstable bootstrap: " + std::to_string(skipped) + " of " +
                    std::to_string(B) + " resamples had a degenerate restricted set");
}

/// Patient indices split by outcome status for stratified draws.
struct Strata {
  std::vector<std::uint32_t> p0, p1;
};

inline Strata stratify(std::span<const std::uint8_t> has_outcome) {
  Strata st;
  for (std::uint32_t p = 0; p < has_outcome.size(); ++p)
    (has_outcome[p] ? st.p1 : st.p0).push_back(p);
  return st;
}

}  // namespace detail

/// Stratified patient-level bootstrap interval for the difference in metric
/// value of two models on one dataset: each resample draws |P0| patients with
/// replacement from the never-outcome stratum and |P1| from the outcome
/// stratum, carrying every sample of a drawn patient. The interval is the
/// basic (reverse-percentile) one, [2a - q_{1-alpha/2}, 2a - q_{alpha/2}].
inline ConfidenceInterval bootstrap_ci_two_models(std::span<const PatientSamples> groups,
                                                  const OutcomeModel& f_prev,
                                                  const OutcomeModel& f_curr,
                                                  const SubpopModel& subpop,
                                                  double confidence, int B, std::uint64_t seed,
                                                  std::vector<double>* stats_out = nullptr) {
  const auto ev = detail::build_eval_set(groups, &f_prev, &f_curr, subpop);
  const auto auc_prev = detail::member_auc(ev, ev.score_prev);
  const auto auc_curr = detail::member_auc(ev, ev.score_curr);
  if (!auc_prev || !auc_curr)
    throw DataError("bootstrap_ci_two_models: degenerate restricted set in observed data");
  const double a = auc_curr->value - auc_prev->value;

  const auto strata = detail::stratify(ev.patient_has_outcome);
  if (strata.p0.empty() || strata.p1.empty())
    throw DataError("bootstrap_ci_two_models: an outcome stratum is empty");

  std::uint32_t n_codes_prev = 0, n_codes_curr = 0;
  const auto code_prev = dense_order_codes(ev.score_prev, &n_codes_prev);
  const auto code_curr = dense_order_codes(ev.score_curr, &n_codes_curr);

  BucketAuc prev_auc(n_codes_prev), curr_auc(n_codes_curr);
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(B));
  int skipped = 0;
  for (int b = 0; b < B; ++b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    prev_auc.reset();
    curr_auc.reset();
    auto draw_from = [&](const std::vector<std::uint32_t>& stratum) {
      for (std::size_t i = 0; i < stratum.size(); ++i) {
        const auto p = stratum[rng.uniform_below(stratum.size())];
        for (std::uint32_t k = ev.offsets[p]; k < ev.offsets[p + 1]; ++k) {
          if (!ev.member[k]) continue;
          prev_auc.add(code_prev[k], ev.label[k] != 0);
          curr_auc.add(code_curr[k], ev.label[k] != 0);
        }
      }
    };
    draw_from(strata.p0);
    draw_from(strata.p1);
    const auto bp = prev_auc.value();
    const auto bc = curr_auc.value();
    if (!bp || !bc) {
      ++skipped;
      continue;
    }
    stats.push_back(bc->value - bp->value);
  }
  detail::check_skip_budget(skipped, B);
  if (stats_out) *stats_out = stats;
  return detail::basic_interval(a, std::move(stats), confidence, B, skipped);
}

/// Joint stratified bootstrap for one model on two datasets: a drawn patient
/// contributes its previous-period samples to the first resample and its
/// current-period samples to the second, simultaneously. P1 is the set of
/// patients with the outcome in either period.
inline ConfidenceInterval bootstrap_ci_one_model_two_datasets(
    std::span<const PatientSamples> groups_prev, std::span<const PatientSamples> groups_curr,
    const OutcomeModel& f_prev, const SubpopModel& subpop, double confidence, int B,
    std::uint64_t seed, std::vector<double>* stats_out = nullptr) {
  // Merge the two period groupings onto one patient axis.
  std::vector<std::uint32_t> patients;
  for (const auto& g : groups_prev) patients.push_back(g.patient);
  for (const auto& g : groups_curr) patients.push_back(g.patient);
  std::sort(patients.begin(), patients.end());
  patients.erase(std::unique(patients.begin(), patients.end()), patients.end());

  auto align = [&](std::span<const PatientSamples> groups) {
    std::vector<PatientSamples> out(patients.size());
    for (std::size_t i = 0; i < patients.size(); ++i) out[i].patient = patients[i];
    for (const auto& g : groups) {
      const auto it = std::lower_bound(patients.begin(), patients.end(), g.patient);
      out[static_cast<std::size_t>(it - patients.begin())].samples = g.samples;
    }
    return out;
  };
  const auto aligned_prev = align(groups_prev);
  const auto aligned_curr = align(groups_curr);

  const auto ev_prev = detail::build_eval_set(aligned_prev, &f_prev, nullptr, subpop);
  const auto ev_curr = detail::build_eval_set(aligned_curr, &f_prev, nullptr, subpop);
  const auto auc_before = detail::member_auc(ev_prev, ev_prev.score_prev);
  const auto auc_after = detail::member_auc(ev_curr, ev_curr.score_prev);
  if (!auc_before || !auc_after)
    throw DataError("bootstrap_ci_one_model_two_datasets: degenerate restricted set");
  const double a = auc_before->value - auc_after->value;

  std::vector<std::uint8_t> has_outcome(patients.size());
  for (std::size_t p = 0; p < patients.size(); ++p)
    has_outcome[p] = ev_prev.patient_has_outcome[p] || ev_curr.patient_has_outcome[p];
  const auto strata = detail::stratify(has_outcome);
  if (strata.p0.empty() || strata.p1.empty())
    throw DataError("bootstrap_ci_one_model_two_datasets: an outcome stratum is empty");

  std::uint32_t nc_before = 0, nc_after = 0;
  const auto code_before = dense_order_codes(ev_prev.score_prev, &nc_before);
  const auto code_after = dense_order_codes(ev_curr.score_prev, &nc_after);

  BucketAuc before_auc(nc_before), after_auc(nc_after);
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(B));
  int skipped = 0;
  for (int b = 0; b < B; ++b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    before_auc.reset();
    after_auc.reset();
    auto draw_from = [&](const std::vector<std::uint32_t>& stratum) {
      for (std::size_t i = 0; i < stratum.size(); ++i) {
        const auto p = stratum[rng.uniform_below(stratum.size())];
        for (std::uint32_t k = ev_prev.offsets[p]; k < ev_prev.offsets[p + 1]; ++k)
          if (ev_prev.member[k]) before_auc.add(code_before[k], ev_prev.label[k] != 0);
        for (std::uint32_t k = ev_curr.offsets[p]; k < ev_curr.offsets[p + 1]; ++k)
          if (ev_curr.member[k]) after_auc.add(code_after[k], ev_curr.label[k] != 0);
      }
    };
    draw_from(strata.p0);
    draw_from(strata.p1);
    const auto bb = before_auc.value();
    const auto ba = after_auc.value();
    if (!bb || !ba) {
      ++skipped;
      continue;
    }
    stats.push_back(bb->value - ba->value);
  }
  detail::check_skip_budget(skipped, B);
  if (stats_out) *stats_out = stats;
  return detail::basic_interval(a, std::move(stats), confidence, B, skipped);
}

/// Stratified patient bootstrap of a single model's AUC; returns the observed
/// value and the resample standard deviation. Backs the AUC-series report.
inline std::pair<MetricValue, double> bootstrap_auc_se(std::span<const PatientSamples> groups,
                                                       const OutcomeModel& model,
                                                       const SubpopModel& subpop, int B,
                                                       std::uint64_t seed) {
  const auto ev = detail::build_eval_set(groups, &model, nullptr, subpop);
  const auto observed = detail::member_auc(ev, ev.score_prev);
  if (!observed) throw DataError("bootstrap_auc_se: degenerate restricted set");
  const auto strata = detail::stratify(ev.patient_has_outcome);
  if (strata.p0.empty() || strata.p1.empty())
    throw DataError("bootstrap_auc_se: an outcome stratum is empty");

  std::uint32_t n_codes = 0;
  const auto codes = dense_order_codes(ev.score_prev, &n_codes);
  BucketAuc auc(n_codes);
  double sum = 0, sumsq = 0;
  int kept = 0;
  for (int b = 0; b < B; ++b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    auc.reset();
    auto draw_from = [&](const std::vector<std::uint32_t>& stratum) {
      for (std::size_t i = 0; i < stratum.size(); ++i) {
        const auto p = stratum[rng.uniform_below(stratum.size())];
        for (std::uint32_t k = ev.offsets[p]; k < ev.offsets[p + 1]; ++k)
          if (ev.member[k]) auc.add(codes[k], ev.label[k] != 0);
      }
    };
    draw_from(strata.p0);
    draw_from(strata.p1);
    const auto v = auc.value();
    if (!v) continue;
    sum += v->value;
    sumsq += v->value * v->value;
    ++kept;
  }
  if (kept < 2) throw DataError("bootstrap_auc_se: too few valid resamples");
  const double mean = sum / kept;
  const double var = std::max(0.0, (sumsq - sum * mean) / (kept - 1));
  return {*observed, std::sqrt(var)};
}

/// Monte-Carlo permutation test for the difference in metric value of two
/// models on one dataset. Predictions are converted to ranks over the full
/// evaluation set; each permutation flips a fair coin per patient and, on
/// heads, swaps the two models' rank vectors on all of that patient's
/// samples. p = (1+m)/(1+B) with m counting permuted differences strictly
/// above the observed one.
inline PermutationResult permutation_test_two_models(std::span<const PatientSamples> groups,
                                                     const OutcomeModel& f_prev,
                                                     const OutcomeModel& f_curr,
                                                     const SubpopModel& subpop, int B,
                                                     std::uint64_t seed,
                                                     std::vector<double>* stats_out = nullptr) {
  const auto ev = detail::build_eval_set(groups, &f_prev, &f_curr, subpop);
  const auto auc_prev = detail::member_auc(ev, ev.score_prev);
  const auto auc_curr = detail::member_auc(ev, ev.score_curr);
  if (!auc_prev || !auc_curr)
    throw DataError("permutation_test_two_models: degenerate restricted set");
  const double a = auc_curr->value - auc_prev->value;

  // Ranks over the full evaluation set put both models on one scale.
  const auto rank_prev = doubled_average_ranks(ev.score_prev);
  const auto rank_curr = doubled_average_ranks(ev.score_curr);
  const auto n_codes = static_cast<std::uint32_t>(2 * ev.n_samples() + 1);

  BucketAuc auc_r(n_codes), auc_s(n_codes);
  PermutationResult res;
  res.permutations = B;
  res.observed_diff = a;
  if (stats_out) stats_out->clear();
  for (int b = 0; b < B; ++b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    auc_r.reset();
    auc_s.reset();
    for (std::size_t p = 0; p < ev.n_patients(); ++p) {
      const bool swap = rng.bernoulli(0.5);
      for (std::uint32_t k = ev.offsets[p]; k < ev.offsets[p + 1]; ++k) {
        if (!ev.member[k]) continue;
        const bool pos = ev.label[k] != 0;
        auc_r.add(swap ? rank_curr[k] : rank_prev[k], pos);
        auc_s.add(swap ? rank_prev[k] : rank_curr[k], pos);
      }
    }
    const double stat = auc_r.value()->value - auc_s.value()->value;
    if (stats_out) stats_out->push_back(stat);
    if (stat > a) ++res.exceed_count;
  }
  res.p_value = (1.0 + res.exceed_count) / (1.0 + B);
  return res;
}

/// Permutation test for one model on two datasets: a fair coin per patient
/// swaps the patient's full previous-period and current-period sample blocks
/// between the two datasets.
inline PermutationResult permutation_test_one_model_two_datasets(
    std::span<const PatientSamples> groups_prev, std::span<const PatientSamples> groups_curr,
    const OutcomeModel& f_prev, const SubpopModel& subpop, int B, std::uint64_t seed,
    std::vector<double>* stats_out = nullptr) {
  std::vector<std::uint32_t> patients;
  for (const auto& g : groups_prev) patients.push_back(g.patient);
  for (const auto& g : groups_curr) patients.push_back(g.patient);
  std::sort(patients.begin(), patients.end());
  patients.erase(std::unique(patients.begin(), patients.end()), patients.end());

  auto align = [&](std::span<const PatientSamples> groups) {
    std::vector<PatientSamples> out(patients.size());
    for (std::size_t i = 0; i < patients.size(); ++i) out[i].patient = patients[i];
    for (const auto& g : groups) {
      const auto it = std::lower_bound(patients.begin(), patients.end(), g.patient);
      out[static_cast<std::size_t>(it - patients.begin())].samples = g.samples;
    }
    return out;
  };
  const auto aligned_prev = align(groups_prev);
  const auto aligned_curr = align(groups_curr);
  const auto ev_prev = detail::build_eval_set(aligned_prev, &f_prev, nullptr, subpop);
  const auto ev_curr = detail::build_eval_set(aligned_curr, &f_prev, nullptr, subpop);

  const auto auc_before = detail::member_auc(ev_prev, ev_prev.score_prev);
  const auto auc_after = detail::member_auc(ev_curr, ev_curr.score_prev);
  if (!auc_before || !auc_after)
    throw DataError("permutation_test_one_model_two_datasets: degenerate restricted set");
  const double a = auc_before->value - auc_after->value;

  // One shared code space so scores keep their order when blocks move
  // between the two datasets.
  std::vector<double> all_scores = ev_prev.score_prev;
  all_scores.insert(all_scores.end(), ev_curr.score_prev.begin(), ev_curr.score_prev.end());
  std::uint32_t n_codes = 0;
  const auto codes = dense_order_codes(all_scores, &n_codes);
  const std::size_t n_prev = ev_prev.n_samples();

  BucketAuc auc_a(n_codes), auc_b(n_codes);
  PermutationResult res;
  res.permutations = B;
  res.observed_diff = a;
  if (stats_out) stats_out->clear();
  for (int b = 0; b < B; ++b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    auc_a.reset();
    auc_b.reset();
    for (std::size_t p = 0; p < patients.size(); ++p) {
      const bool swap = rng.bernoulli(0.5);
      BucketAuc& dest_prev = swap ? auc_b : auc_a;
      BucketAuc& dest_curr = swap ? auc_a : auc_b;
      for (std::uint32_t k = ev_prev.offsets[p]; k < ev_prev.offsets[p + 1]; ++k)
        if (ev_prev.member[k]) dest_prev.add(codes[k], ev_prev.label[k] != 0);
      for (std::uint32_t k = ev_curr.offsets[p]; k < ev_curr.offsets[p + 1]; ++k)
        if (ev_curr.member[k]) dest_curr.add(codes[n_prev + k], ev_curr.label[k] != 0);
    }
    const auto va = auc_a.value();
    const auto vb = auc_b.value();
    if (!va || !vb) {
      // A permuted arrangement emptied a class; count it as exceeding, which
      // can only enlarge the p-value.
      ++res.exceed_count;
      if (stats_out) stats_out->push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double stat = va->value - vb->value;
    if (stats_out) stats_out->push_back(stat);
    if (stat > a) ++res.exceed_count;
  }
  res.p_value = (1.0 + res.exceed_count) / (1.0 + B);
  return res;
}

}  // namespace tshift
