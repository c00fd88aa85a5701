#pragma once

#include <algorithm>
#include <atomic>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "tshift/config.hpp"
#include "tshift/discovery.hpp"
#include "tshift/outcome_model.hpp"
#include "tshift/panel.hpp"
#include "tshift/resampling.hpp"
#include "tshift/rng.hpp"
#include "tshift/screening.hpp"
#include "tshift/subpop.hpp"

namespace tshift {

enum class TaskScope : std::uint8_t { population, discovered_subpop };

inline const char* to_string(TaskScope s) {
  return s == TaskScope::population ? "population" : "discovered_subpop";
}

struct TaskKey {
  std::string outcome_id;
  int period = 0;  // the t of a (t-1, t) comparison
  TaskScope scope = TaskScope::population;

  std::string str() const {
    return outcome_id + "|" + std::to_string(period) + "|" + to_string(scope);
  }
  auto operator<=>(const TaskKey&) const = default;
};

enum class TaskStatus : std::uint8_t { tested, gated_out };

/// Outcome of one task: either a hypothesis test was spent (p-value and
/// metric difference on held-out test data) or a gate stopped it first.
struct TaskResult {
  TaskKey key;
  TaskStatus status = TaskStatus::gated_out;
  std::string gate_reason;                // gate name when gated_out
  std::vector<CheckReport> gate_reports;
  std::optional<double> p_value;
  std::optional<double> metric_diff;      // a, on test data
  std::optional<int> exceed_count;        // m
  std::optional<SubpopModel> subpop;      // evaluated region (when applicable)
  bool convergence_warning = false;
  std::string error;                      // degenerate-data failures, task not aborted
};

struct ScanReport {
  ScanConfig config;
  std::vector<TaskResult> results;
  std::vector<TaskKey> selected;  // statistically and clinically significant
};

/// Benjamini-Hochberg step-up at level alpha: sort p-values ascending, find
/// the largest k with p_(k) <= k * alpha / m, reject the k smallest. Tied
/// p-values stand or fall together.
inline std::vector<std::size_t> benjamini_hochberg(std::span<const double> p_values,
                                                   double alpha) {
  const std::size_t m = p_values.size();
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  std::size_t k = 0;
  for (std::size_t i = 0; i < m; ++i)
    if (p_values[order[i]] <= alpha * static_cast<double>(i + 1) / static_cast<double>(m))
      k = i + 1;
  return {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k)};
}

inline std::set<TaskKey> benjamini_hochberg(const std::map<TaskKey, double>& p_values,
                                            double alpha) {
  std::vector<TaskKey> keys;
  std::vector<double> ps;
  for (const auto& [k, p] : p_values) {
    keys.push_back(k);
    ps.push_back(p);
  }
  std::set<TaskKey> out;
  for (auto idx : benjamini_hochberg(ps, alpha)) out.insert(keys[idx]);
  return out;
}

namespace detail {

struct PeriodViews {
  std::vector<PatientSamples> train, validation, test;
};

inline PeriodViews period_views(const PanelDataset& ds, int period) {
  PeriodViews v;
  v.train = collect_period(ds, period, DataSplit::train);
  v.validation = collect_period(ds, period, DataSplit::validation);
  v.test = collect_period(ds, period, DataSplit::test);
  return v;
}

inline std::vector<const Sample*> train_val_flat(const PeriodViews& v) {
  auto flat = flatten(v.train);
  const auto more = flatten(v.validation);
  flat.insert(flat.end(), more.begin(), more.end());
  return flat;
}

inline OutcomeModel fit_period_model(const PanelDataset& ds, int period, const ScanConfig& cfg,
                                     std::uint64_t seed) {
  const auto views = period_views(ds, period);
  const auto train = flatten(views.train);
  const auto validation = flatten(views.validation);
  return fit_outcome_model(train, validation, cfg.model_kind, ds.vocab(), period, seed);
}

/// Discover the sub-population for the current period: label every
/// train+validation sample by the loss comparison, reshuffle those splits
/// stratified by the patient-level flag, and fit the tree on the new splits.
inline SubpopModel discover_subpop(const PanelDataset& ds, int period_curr,
                                   const OutcomeModel& f_prev, const OutcomeModel& f_curr,
                                   std::uint64_t seed) {
  struct Labeled {
    std::uint32_t patient;
    const Sample* sample;
    std::uint8_t z;
  };
  std::vector<Labeled> labeled;
  std::vector<bool> flagged(ds.n_patients(), false);
  for (auto split : {DataSplit::train, DataSplit::validation}) {
    for (const auto& g : collect_period(ds, period_curr, split)) {
      for (const Sample* s : g.samples) {
        const std::uint8_t z =
            cross_entropy(f_prev, *s) > cross_entropy(f_curr, *s) ? 1 : 0;
        labeled.push_back({g.patient, s, z});
        if (z) flagged[g.patient] = true;
      }
    }
  }
  const auto reshuffled = reshuffle_splits(ds, flagged, derive_seed(seed, 0x5e));

  std::vector<const Sample*> train, validation;
  std::vector<std::uint8_t> z_train, z_validation;
  for (const auto& l : labeled) {
    if (reshuffled.split_of(l.patient) == DataSplit::train) {
      train.push_back(l.sample);
      z_train.push_back(l.z);
    } else {
      validation.push_back(l.sample);
      z_validation.push_back(l.z);
    }
  }
  return fit_subpop_model(train, z_train, validation, z_validation, ds.vocab().size());
}

}  // namespace detail

/// One temporal-shift test between period_prev and period_curr. Fits both
/// period models (train split, validation-selected), discovers the
/// sub-population unless one is pre-specified, runs the gates in order on the
/// original validation split, and only then spends the permutation test on
/// held-out test data. Degenerate-data errors surface as gated_out results
/// rather than exceptions so scans are never aborted by one task.
inline TaskResult test_shift(const PanelDataset& ds, int period_prev, int period_curr,
                             const std::optional<SubpopModel>& predefined, const ScanConfig& cfg,
                             std::uint64_t seed, const OutcomeModel* prefit_prev = nullptr,
                             const OutcomeModel* prefit_curr = nullptr,
                             const std::string& outcome_id = "outcome") {
  TaskResult res;
  res.key = {outcome_id, period_curr,
             predefined ? TaskScope::population : TaskScope::discovered_subpop};
  if (!ds.has_splits()) throw DataError("test_shift: dataset has no split assignment");

  try {
    OutcomeModel local_prev, local_curr;
    const OutcomeModel* f_prev = prefit_prev;
    const OutcomeModel* f_curr = prefit_curr;
    if (!f_prev) {
      local_prev = detail::fit_period_model(ds, period_prev, cfg, derive_seed(seed, 0xf0));
      f_prev = &local_prev;
    }
    if (!f_curr) {
      local_curr = detail::fit_period_model(ds, period_curr, cfg, derive_seed(seed, 0xf1));
      f_curr = &local_curr;
    }
    res.convergence_warning = f_prev->convergence_warning || f_curr->convergence_warning;

    SubpopModel subpop =
        predefined ? *predefined
                   : detail::discover_subpop(ds, period_curr, *f_prev, *f_curr, seed);
    res.subpop = subpop;

    const auto views_prev = detail::period_views(ds, period_prev);
    const auto views_curr = detail::period_views(ds, period_curr);

    auto gate = [&](CheckReport rep) {
      const bool passed = rep.passed;
      if (!passed) {
        res.status = TaskStatus::gated_out;
        res.gate_reason = to_string(rep.check);
      }
      res.gate_reports.push_back(std::move(rep));
      return passed;
    };

    if (!gate(sample_size_check(views_prev.validation, views_curr.validation, subpop, cfg.n_thr,
                                cfg.share_lower, cfg.share_upper)))
      return res;
    if (!gate(model_fit_check(views_prev.validation, views_curr.validation, *f_prev, f_curr,
                              subpop, cfg.c_thr, /*baseline_mode=*/false)))
      return res;
    if (!gate(performance_comparison_check(views_curr.validation, *f_prev, *f_curr, subpop,
                                           cfg.confidence, cfg.b_bootstrap,
                                           derive_seed(seed, 0xa6))))
      return res;

    const auto perm = permutation_test_two_models(views_curr.test, *f_prev, *f_curr, subpop,
                                                  cfg.b_permutation, derive_seed(seed, 0xa9));
    res.status = TaskStatus::tested;
    res.p_value = perm.p_value;
    res.metric_diff = perm.observed_diff;
    res.exceed_count = perm.exceed_count;
  } catch (const DataError& e) {
    res.status = TaskStatus::gated_out;
    res.gate_reason = "error";
    res.error = e.what();
  }
  return res;
}

/// The deterioration baseline: population scope only, the previous model
/// compared against itself across the two periods (drop gate instead of the
/// performance comparison, two-dataset permutation test instead of the
/// two-model one).
inline TaskResult test_shift_baseline(const PanelDataset& ds, int period_prev, int period_curr,
                                      const ScanConfig& cfg, std::uint64_t seed,
                                      const OutcomeModel* prefit_prev = nullptr,
                                      const std::string& outcome_id = "outcome") {
  TaskResult res;
  res.key = {outcome_id, period_curr, TaskScope::population};
  if (!ds.has_splits()) throw DataError("test_shift_baseline: dataset has no split assignment");

  try {
    OutcomeModel local_prev;
    const OutcomeModel* f_prev = prefit_prev;
    if (!f_prev) {
      local_prev = detail::fit_period_model(ds, period_prev, cfg, derive_seed(seed, 0xf0));
      f_prev = &local_prev;
    }
    res.convergence_warning = f_prev->convergence_warning;
    const auto subpop = SubpopModel::entire();
    res.subpop = subpop;

    const auto views_prev = detail::period_views(ds, period_prev);
    const auto views_curr = detail::period_views(ds, period_curr);

    auto gate = [&](CheckReport rep) {
      const bool passed = rep.passed;
      if (!passed) {
        res.status = TaskStatus::gated_out;
        res.gate_reason = to_string(rep.check);
      }
      res.gate_reports.push_back(std::move(rep));
      return passed;
    };

    if (!gate(sample_size_check(views_prev.validation, views_curr.validation, subpop, cfg.n_thr,
                                cfg.share_lower, cfg.share_upper)))
      return res;
    if (!gate(model_fit_check(views_prev.validation, views_curr.validation, *f_prev, nullptr,
                              subpop, cfg.c_thr, /*baseline_mode=*/true)))
      return res;
    if (!gate(baseline_comparison_check(views_prev.validation, views_curr.validation, *f_prev,
                                        subpop, cfg.confidence, cfg.b_bootstrap,
                                        derive_seed(seed, 0xa8))))
      return res;

    const auto perm = permutation_test_one_model_two_datasets(
        views_prev.test, views_curr.test, *f_prev, subpop, cfg.b_permutation,
        derive_seed(seed, 0xaa));
    res.status = TaskStatus::tested;
    res.p_value = perm.p_value;
    res.metric_diff = perm.observed_diff;
    res.exceed_count = perm.exceed_count;
  } catch (const DataError& e) {
    res.status = TaskStatus::gated_out;
    res.gate_reason = "error";
    res.error = e.what();
  }
  return res;
}

namespace detail {

/// Run fn(i) for i in [0, n) on `workers` threads. Each index writes only its
/// own slot, so results are identical for any worker count.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const int k = std::min<int>(workers, static_cast<int>(n));
  pool.reserve(static_cast<std::size_t>(k));
  for (int w = 0; w < k; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  for (auto& t : pool) t.join();
}

}  // namespace detail

/// Scan every outcome and adjacent period pair at both scopes, then apply
/// Benjamini-Hochberg over the tested tasks and the clinical-significance
/// filter. Period-t models are fit once per outcome and shared by the two
/// tasks that evaluate them. Results are independent of the worker count.
inline ScanReport scan_shift(const std::map<std::string, PanelDataset>& datasets,
                             const ScanConfig& cfg, int workers = 1) {
  cfg.validate();
  ScanReport report;
  report.config = cfg;

  struct FitJob {
    const std::string* outcome;
    const PanelDataset* ds;
    int period;
  };
  std::vector<FitJob> fit_jobs;
  std::map<std::pair<std::string, int>, std::shared_ptr<const OutcomeModel>> models;
  for (const auto& [outcome, ds] : datasets) {
    if (!ds.has_splits()) throw DataError("scan_shift: dataset '" + outcome + "' has no splits");
    for (int period : ds.periods()) fit_jobs.push_back({&outcome, &ds, period});
  }
  std::vector<std::shared_ptr<const OutcomeModel>> fitted(fit_jobs.size());
  detail::parallel_for(fit_jobs.size(), workers, [&](std::size_t i) {
    const auto& job = fit_jobs[i];
    const auto seed =
        derive_seed(cfg.seed, stable_hash(*job.outcome + "|fit|" + std::to_string(job.period)));
    try {
      fitted[i] = std::make_shared<const OutcomeModel>(
          detail::fit_period_model(*job.ds, job.period, cfg, seed));
    } catch (const DataError&) {
      // left empty; the affected tasks refit locally and report the error
    }
  });
  for (std::size_t i = 0; i < fit_jobs.size(); ++i)
    models[{*fit_jobs[i].outcome, fit_jobs[i].period}] = fitted[i];

  struct TaskJob {
    const std::string* outcome;
    const PanelDataset* ds;
    int period_prev, period_curr;
    TaskScope scope;
  };
  std::vector<TaskJob> jobs;
  for (const auto& [outcome, ds] : datasets) {
    const auto periods = ds.periods();
    for (std::size_t i = 1; i < periods.size(); ++i)
      for (auto scope : {TaskScope::population, TaskScope::discovered_subpop})
        jobs.push_back({&outcome, &ds, periods[i - 1], periods[i], scope});
  }

  report.results.resize(jobs.size());
  detail::parallel_for(jobs.size(), workers, [&](std::size_t i) {
    const auto& job = jobs[i];
    TaskKey key{*job.outcome, job.period_curr, job.scope};
    const auto seed = derive_seed(cfg.seed, stable_hash(key.str()));
    const auto* f_prev = models.at({*job.outcome, job.period_prev}).get();  // may be null
    const auto* f_curr = models.at({*job.outcome, job.period_curr}).get();
    std::optional<SubpopModel> predefined;
    if (job.scope == TaskScope::population) predefined = SubpopModel::entire();
    report.results[i] = test_shift(*job.ds, job.period_prev, job.period_curr, predefined, cfg,
                                   seed, f_prev, f_curr, *job.outcome);
  });

  std::map<TaskKey, double> p_values;
  for (const auto& r : report.results)
    if (r.status == TaskStatus::tested) p_values[r.key] = *r.p_value;
  const auto q = benjamini_hochberg(p_values, cfg.alpha);
  for (const auto& r : report.results)
    if (r.status == TaskStatus::tested && q.count(r.key) && *r.metric_diff > cfg.gamma)
      report.selected.push_back(r.key);
  std::sort(report.selected.begin(), report.selected.end());
  return report;
}

}  // namespace tshift
