#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tshift/outcome_model.hpp"
#include "tshift/panel.hpp"
#include "tshift/resampling.hpp"
#include "tshift/subpop.hpp"

namespace tshift {

enum class CheckKind : std::uint8_t {
  sample_size,
  model_fit,
  performance_comparison,
  baseline_comparison
};

inline const char* to_string(CheckKind k) {
  switch (k) {
    case CheckKind::sample_size: return "sample_size";
    case CheckKind::model_fit: return "model_fit";
    case CheckKind::performance_comparison: return "performance_comparison";
    case CheckKind::baseline_comparison: return "baseline_comparison";
  }
  return "?";
}

/// One pre-test gate outcome. `details` carries every quantity the decision
/// used, so `passed` can be recomputed from the report alone.
struct CheckReport {
  CheckKind check = CheckKind::sample_size;
  bool passed = false;
  std::string reason;  // first failing criterion, empty when passed
  nlohmann::json details = nlohmann::json::object();
};

namespace detail {

/// Patient-distinct counts of the four (outcome, region) quadrants.
struct QuadrantCounts {
  std::size_t outcome_in = 0, outcome_out = 0, no_outcome_in = 0, no_outcome_out = 0;
};

inline QuadrantCounts quadrant_patient_counts(std::span<const PatientSamples> groups,
                                              const SubpopModel& subpop) {
  QuadrantCounts q;
  for (const auto& g : groups) {
    bool oi = false, oo = false, ni = false, no = false;
    for (const Sample* s : g.samples) {
      const bool in = subpop.member(*s);
      if (s->outcome)
        (in ? oi : oo) = true;
      else
        (in ? ni : no) = true;
    }
    q.outcome_in += oi;
    q.outcome_out += oo;
    q.no_outcome_in += ni;
    q.no_outcome_out += no;
  }
  return q;
}

}  // namespace detail

/// Sample-size gate: in both periods' validation data, at least n_thr
/// patients carry the outcome inside the region; for a proper region the
/// other three (outcome, region) quadrants need n_thr patients too, and the
/// region's share of current-period samples must lie in
/// [share_lower * m, share_upper * m].
inline CheckReport sample_size_check(std::span<const PatientSamples> validation_prev,
                                     std::span<const PatientSamples> validation_curr,
                                     const SubpopModel& subpop, std::size_t n_thr = 25,
                                     double share_lower = 0.01, double share_upper = 0.75) {
  CheckReport rep;
  rep.check = CheckKind::sample_size;
  const bool proper = !subpop.is_entire_population();

  const auto q_prev = detail::quadrant_patient_counts(validation_prev, subpop);
  const auto q_curr = detail::quadrant_patient_counts(validation_curr, subpop);

  std::size_t m = 0, s = 0;
  for (const auto& g : validation_curr)
    for (const Sample* smp : g.samples) {
      ++m;
      s += subpop.member(*smp) ? 1 : 0;
    }

  rep.details = {{"n_thr", n_thr},
                 {"proper_region", proper},
                 {"share_lower", share_lower},
                 {"share_upper", share_upper},
                 {"region_samples", s},
                 {"total_samples", m},
                 {"prev", {{"outcome_in", q_prev.outcome_in},
                           {"outcome_out", q_prev.outcome_out},
                           {"no_outcome_in", q_prev.no_outcome_in},
                           {"no_outcome_out", q_prev.no_outcome_out}}},
                 {"curr", {{"outcome_in", q_curr.outcome_in},
                           {"outcome_out", q_curr.outcome_out},
                           {"no_outcome_in", q_curr.no_outcome_in},
                           {"no_outcome_out", q_curr.no_outcome_out}}}};

  auto fail = [&](const std::string& why) {
    rep.passed = false;
    rep.reason = why;
    return rep;
  };

  const detail::QuadrantCounts* qs[2] = {&q_prev, &q_curr};
  const char* period_name[2] = {"previous", "current"};
  for (int t = 0; t < 2; ++t) {
    if (qs[t]->outcome_in < n_thr)
      return fail(std::string("too few patients with outcome in region (") + period_name[t] +
                  " period)");
    if (proper) {
      if (qs[t]->outcome_out < n_thr)
        return fail(std::string("too few patients with outcome outside region (") +
                    period_name[t] + " period)");
      if (qs[t]->no_outcome_in < n_thr)
        return fail(std::string("too few patients without outcome in region (") + period_name[t] +
                    " period)");
      if (qs[t]->no_outcome_out < n_thr)
        return fail(std::string("too few patients without outcome outside region (") +
                    period_name[t] + " period)");
    }
  }
  if (proper) {
    if (static_cast<double>(s) < share_lower * static_cast<double>(m))
      return fail("sub-population too small");
    if (static_cast<double>(s) > share_upper * static_cast<double>(m))
      return fail("sub-population too large");
  }
  rep.passed = true;
  return rep;
}

/// Model-fit gate: f_prev clears c_thr on previous-period validation data
/// across the entire population; unless baseline_mode, f_curr clears c_thr on
/// current-period validation both overall and within the region. Strict
/// inequalities, so a random-guess AUC of exactly 0.5 fails.
inline CheckReport model_fit_check(std::span<const PatientSamples> validation_prev,
                                   std::span<const PatientSamples> validation_curr,
                                   const OutcomeModel& f_prev, const OutcomeModel* f_curr,
                                   const SubpopModel& subpop, double c_thr = 0.5,
                                   bool baseline_mode = false) {
  CheckReport rep;
  rep.check = CheckKind::model_fit;
  rep.details["c_thr"] = c_thr;
  rep.details["baseline_mode"] = baseline_mode;

  const auto h_e = SubpopModel::entire();
  const auto flat_prev = flatten({validation_prev.begin(), validation_prev.end()});
  const auto flat_curr = flatten({validation_curr.begin(), validation_curr.end()});

  const auto r_prev = auc_within(f_prev, flat_prev, h_e);
  if (!r_prev) {
    rep.reason = "previous-period AUC undefined";
    return rep;
  }
  rep.details["auc_prev_model_prev_data"] = r_prev->value;
  if (!(r_prev->value > c_thr)) {
    rep.reason = "previous model not well-fit";
    return rep;
  }

  if (!baseline_mode) {
    if (!f_curr) throw DataError("model_fit_check: current model required unless baseline_mode");
    const auto r_curr = auc_within(*f_curr, flat_curr, h_e);
    if (!r_curr) {
      rep.reason = "current-period AUC undefined";
      return rep;
    }
    rep.details["auc_curr_model_curr_data"] = r_curr->value;
    if (!(r_curr->value > c_thr)) {
      rep.reason = "current model not well-fit";
      return rep;
    }
    const auto r_sub = auc_within(*f_curr, flat_curr, subpop);
    if (!r_sub) {
      rep.reason = "region AUC undefined";
      return rep;
    }
    rep.details["auc_curr_model_region"] = r_sub->value;
    if (!(r_sub->value > c_thr)) {
      rep.reason = "current model not well-fit in region";
      return rep;
    }
  }
  rep.passed = true;
  return rep;
}

/// Performance-comparison gate on current-period validation data: the new
/// model must beat the old one inside the region (point estimate positive and
/// bootstrap interval above 0), and for a proper region the same difference
/// outside the region must not be significantly positive.
inline CheckReport performance_comparison_check(std::span<const PatientSamples> validation_curr,
                                                const OutcomeModel& f_prev,
                                                const OutcomeModel& f_curr,
                                                const SubpopModel& subpop,
                                                double confidence = 0.90, int B = 2000,
                                                std::uint64_t seed = 0) {
  CheckReport rep;
  rep.check = CheckKind::performance_comparison;
  rep.details["confidence"] = confidence;

  const auto flat = flatten({validation_curr.begin(), validation_curr.end()});
  const auto auc_prev = auc_within(f_prev, flat, subpop);
  const auto auc_curr = auc_within(f_curr, flat, subpop);
  if (!auc_prev || !auc_curr) {
    rep.reason = "region AUC undefined";
    return rep;
  }
  const double a = auc_curr->value - auc_prev->value;
  rep.details["a"] = a;
  if (a <= 0) {
    rep.reason = "current model not better in region";
    return rep;
  }

  const auto ci = bootstrap_ci_two_models(validation_curr, f_prev, f_curr, subpop, confidence, B,
                                          derive_seed(seed, 0xc1));
  rep.details["interval"] = {ci.lower, ci.upper};
  if (ci.lower <= 0) {
    rep.reason = "difference not significant in region";
    return rep;
  }

  if (!subpop.is_entire_population()) {
    const auto complement = SubpopModel::complement(subpop);
    try {
      const auto cci = bootstrap_ci_two_models(validation_curr, f_prev, f_curr, complement,
                                               confidence, B, derive_seed(seed, 0xc2));
      rep.details["complement_interval"] = {cci.lower, cci.upper};
      if (cci.lower > 0) {
        rep.reason = "shift also present outside region";
        return rep;
      }
    } catch (const DataError&) {
      rep.details["complement_undefined"] = true;
      rep.reason = "complement AUC undefined";
      return rep;
    }
  }
  rep.passed = true;
  return rep;
}

/// Baseline gate: the previous model must score higher on previous-period
/// validation data than on current-period validation data, with the joint
/// two-dataset bootstrap interval above 0; complement clause as above.
inline CheckReport baseline_comparison_check(std::span<const PatientSamples> validation_prev,
                                             std::span<const PatientSamples> validation_curr,
                                             const OutcomeModel& f_prev, const SubpopModel& subpop,
                                             double confidence = 0.90, int B = 2000,
                                             std::uint64_t seed = 0) {
  CheckReport rep;
  rep.check = CheckKind::baseline_comparison;
  rep.details["confidence"] = confidence;

  const auto flat_prev = flatten({validation_prev.begin(), validation_prev.end()});
  const auto flat_curr = flatten({validation_curr.begin(), validation_curr.end()});
  const auto before = auc_within(f_prev, flat_prev, subpop);
  const auto after = auc_within(f_prev, flat_curr, subpop);
  if (!before || !after) {
    rep.reason = "region AUC undefined";
    return rep;
  }
  const double a = before->value - after->value;
  rep.details["a"] = a;
  if (a <= 0) {
    rep.reason = "no performance drop";
    return rep;
  }

  const auto ci = bootstrap_ci_one_model_two_datasets(validation_prev, validation_curr, f_prev,
                                                      subpop, confidence, B, derive_seed(seed, 0xb1));
  rep.details["interval"] = {ci.lower, ci.upper};
  if (ci.lower <= 0) {
    rep.reason = "drop not significant";
    return rep;
  }

  if (!subpop.is_entire_population()) {
    const auto complement = SubpopModel::complement(subpop);
    try {
      const auto cci = bootstrap_ci_one_model_two_datasets(validation_prev, validation_curr,
                                                           f_prev, complement, confidence, B,
                                                           derive_seed(seed, 0xb2));
      rep.details["complement_interval"] = {cci.lower, cci.upper};
      if (cci.lower > 0) {
        rep.reason = "drop also present outside region";
        return rep;
      }
    } catch (const DataError&) {
      rep.details["complement_undefined"] = true;
      rep.reason = "complement AUC undefined";
      return rep;
    }
  }
  rep.passed = true;
  return rep;
}

/// Recompute a report's verdict from its recorded details alone; test hook
/// for the "passed is a pure function of details" property.
inline bool recompute_passed(const CheckReport& rep) {
  const auto& d = rep.details;
  switch (rep.check) {
    case CheckKind::sample_size: {
      const auto n_thr = d.at("n_thr").get<std::size_t>();
      const bool proper = d.at("proper_region").get<bool>();
      for (const char* period : {"prev", "curr"}) {
        const auto& q = d.at(period);
        if (q.at("outcome_in").get<std::size_t>() < n_thr) return false;
        if (proper) {
          if (q.at("outcome_out").get<std::size_t>() < n_thr) return false;
          if (q.at("no_outcome_in").get<std::size_t>() < n_thr) return false;
          if (q.at("no_outcome_out").get<std::size_t>() < n_thr) return false;
        }
      }
      if (proper) {
        const auto s = d.at("region_samples").get<double>();
        const auto m = d.at("total_samples").get<double>();
        if (s < d.at("share_lower").get<double>() * m) return false;
        if (s > d.at("share_upper").get<double>() * m) return false;
      }
      return true;
    }
    case CheckKind::model_fit: {
      const double c = d.at("c_thr").get<double>();
      if (!d.contains("auc_prev_model_prev_data") ||
          !(d.at("auc_prev_model_prev_data").get<double>() > c))
        return false;
      if (d.at("baseline_mode").get<bool>()) return true;
      return d.contains("auc_curr_model_curr_data") &&
             d.at("auc_curr_model_curr_data").get<double>() > c &&
             d.contains("auc_curr_model_region") && d.at("auc_curr_model_region").get<double>() > c;
    }
    case CheckKind::performance_comparison:
    case CheckKind::baseline_comparison: {
      if (!d.contains("a") || !(d.at("a").get<double>() > 0)) return false;
      if (!d.contains("interval") || !(d.at("interval")[0].get<double>() > 0)) return false;
      if (d.contains("complement_undefined")) return false;
      if (d.contains("complement_interval") &&
          d.at("complement_interval")[0].get<double>() > 0)
        return false;
      return true;
    }
  }
  return false;
}

}  // namespace tshift
