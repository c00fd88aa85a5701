#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tshift/auc.hpp"
#include "tshift/logistic.hpp"
#include "tshift/outcome_model.hpp"
#include "tshift/panel.hpp"
#include "tshift/shift_test.hpp"

namespace tshift {

// ---------------------------------------------------------------------------
// Univariate covariate-shift scan
// ---------------------------------------------------------------------------

struct UnivariateShiftFinding {
  std::uint32_t feature = 0;
  double freq_prev = 0.0, freq_curr = 0.0;  // fraction of samples with the feature
  double statistic = 0.0;                   // chi-squared (0 when the exact test ran)
  double p_value = 1.0;
  bool exact_test = false;  // expected count < 5, two-proportion exact test used
  bool bh_accepted = false;
};

namespace detail {

/// Textbook chi-squared statistic on a 2x2 table (no continuity correction).
inline double chi_squared_2x2(double a, double b, double c, double d) {
  const double n = a + b + c + d;
  const double r1 = a + b, r2 = c + d, c1 = a + c, c2 = b + d;
  if (r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0) return 0.0;
  const double o[4] = {a, b, c, d};
  const double e[4] = {r1 * c1 / n, r1 * c2 / n, r2 * c1 / n, r2 * c2 / n};
  double stat = 0;
  for (int i = 0; i < 4; ++i) stat += (o[i] - e[i]) * (o[i] - e[i]) / e[i];
  return stat;
}

/// Upper tail of chi-squared with one degree of freedom.
inline double chi_squared_1df_pvalue(double stat) { return std::erfc(std::sqrt(stat / 2.0)); }

inline double log_choose(double n, double k) {
  return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1);
}

/// Two-sided Fisher exact test on a 2x2 table with margins fixed.
inline double fisher_exact_2x2(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
  const std::int64_t r1 = a + b, r2 = c + d, c1 = a + c, n = a + b + c + d;
  auto log_p = [&](std::int64_t x) {
    return log_choose(static_cast<double>(r1), static_cast<double>(x)) +
           log_choose(static_cast<double>(r2), static_cast<double>(c1 - x)) -
           log_choose(static_cast<double>(n), static_cast<double>(c1));
  };
  const double lp_obs = log_p(a);
  const std::int64_t lo = std::max<std::int64_t>(0, c1 - r2);
  const std::int64_t hi = std::min(r1, c1);
  double total = 0;
  for (std::int64_t x = lo; x <= hi; ++x) {
    const double lp = log_p(x);
    if (lp <= lp_obs + 1e-9) total += std::exp(lp);
  }
  return std::min(1.0, total);
}

}  // namespace detail

/// Fit an L1-penalized period classifier on the training split of both
/// periods, choose the sparsest penalty within 0.01 of the best validation
/// AUC, then run a frequency test per nonzero-coefficient feature with BH
/// correction over exactly those features.
inline std::vector<UnivariateShiftFinding> univariate_shift_scan(const PanelDataset& ds,
                                                                 int period_prev, int period_curr,
                                                                 double alpha = 0.05) {
  if (!ds.has_splits()) throw DataError("univariate_shift_scan: dataset has no splits");
  const auto dim = ds.vocab().size();

  auto flat = [&](int period, DataSplit split) {
    return flatten(collect_period(ds, period, split));
  };
  const auto train_prev = flat(period_prev, DataSplit::train);
  const auto train_curr = flat(period_curr, DataSplit::train);
  const auto val_prev = flat(period_prev, DataSplit::validation);
  const auto val_curr = flat(period_curr, DataSplit::validation);

  std::vector<TrainRow> rows;
  for (const auto* s : train_prev) rows.push_back({&s->features, 0, 1.0});
  for (const auto* s : train_curr) rows.push_back({&s->features, 1, 1.0});

  // validation AUC of a fitted classifier against the period label
  auto val_auc = [&](const LogisticModel& m) {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (const auto* s : val_prev) {
      scores.push_back(sigmoid(linear_score(m, s->features)));
      labels.push_back(0);
    }
    for (const auto* s : val_curr) {
      scores.push_back(sigmoid(linear_score(m, s->features)));
      labels.push_back(1);
    }
    const auto auc = rank_auc(scores, labels);
    return auc ? auc->value : 0.5;
  };

  static const std::vector<double> l1_grid{3e-1, 1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4};
  struct Cand {
    LogisticModel model;
    double auc;
    int nonzero;
  };
  std::vector<Cand> cands;
  for (double lambda : l1_grid) {
    Cand c;
    c.model = fit_logistic_l1(rows, dim, lambda);
    c.auc = val_auc(c.model);
    c.nonzero = 0;
    for (double w : c.model.weights)
      if (w != 0.0) ++c.nonzero;
    cands.push_back(std::move(c));
  }
  double best_auc = 0;
  for (const auto& c : cands) best_auc = std::max(best_auc, c.auc);
  // sparsest within 0.01 of the best; grid order breaks ties toward the
  // stronger penalty
  const Cand* chosen = nullptr;
  for (const auto& c : cands)
    if (c.auc >= best_auc - 0.01 && (!chosen || c.nonzero < chosen->nonzero)) chosen = &c;

  std::vector<UnivariateShiftFinding> findings;
  if (!chosen || chosen->nonzero == 0) return findings;

  // frequency tables over train+validation samples of the two periods
  auto samples_prev = train_prev;
  samples_prev.insert(samples_prev.end(), val_prev.begin(), val_prev.end());
  auto samples_curr = train_curr;
  samples_curr.insert(samples_curr.end(), val_curr.begin(), val_curr.end());

  for (std::uint32_t f = 0; f < dim; ++f) {
    if (chosen->model.weights[f] == 0.0) continue;
    std::int64_t on_prev = 0, on_curr = 0;
    for (const auto* s : samples_prev) on_prev += feature_value(s->features, f) != 0.0;
    for (const auto* s : samples_curr) on_curr += feature_value(s->features, f) != 0.0;
    const auto n_prev = static_cast<std::int64_t>(samples_prev.size());
    const auto n_curr = static_cast<std::int64_t>(samples_curr.size());

    UnivariateShiftFinding fd;
    fd.feature = f;
    fd.freq_prev = static_cast<double>(on_prev) / static_cast<double>(n_prev);
    fd.freq_curr = static_cast<double>(on_curr) / static_cast<double>(n_curr);

    const double table[4] = {static_cast<double>(on_prev), static_cast<double>(n_prev - on_prev),
                             static_cast<double>(on_curr), static_cast<double>(n_curr - on_curr)};
    const double n = table[0] + table[1] + table[2] + table[3];
    const double min_expected =
        std::min({(table[0] + table[1]) * (table[0] + table[2]) / n,
                  (table[0] + table[1]) * (table[1] + table[3]) / n,
                  (table[2] + table[3]) * (table[0] + table[2]) / n,
                  (table[2] + table[3]) * (table[1] + table[3]) / n});
    if (min_expected >= 5.0) {
      fd.statistic = detail::chi_squared_2x2(table[0], table[1], table[2], table[3]);
      fd.p_value = detail::chi_squared_1df_pvalue(fd.statistic);
    } else {
      fd.exact_test = true;
      fd.p_value = detail::fisher_exact_2x2(on_prev, n_prev - on_prev, on_curr, n_curr - on_curr);
    }
    findings.push_back(fd);
  }

  std::vector<double> ps(findings.size());
  for (std::size_t i = 0; i < findings.size(); ++i) ps[i] = findings[i].p_value;
  for (auto idx : benjamini_hochberg(ps, alpha)) findings[idx].bh_accepted = true;
  return findings;
}

// ---------------------------------------------------------------------------
// Coefficient sign-flip candidates
// ---------------------------------------------------------------------------

struct CoefficientInterval {
  std::string column;
  int period = 0;
  double estimate = 0.0, lower = 0.0, upper = 0.0;
};

struct SignFlipCandidate {
  std::string column;
  CoefficientInterval prev, curr;
};

struct SignFlipConfig {
  std::vector<std::string> demographics;  // always-kept feature block
  std::size_t top_k = 100;                // chi-squared cut per period
  double min_frequency = 100;             // count floor per period
  double correlation_threshold = 0.95;
  double frequency_tolerance = 100;
};

namespace detail {

/// Cholesky factorization; returns false (and the offending pivot) when the
/// matrix is not positive definite.
inline bool cholesky(std::vector<double>& a, std::size_t k, std::size_t* bad_pivot) {
  for (std::size_t j = 0; j < k; ++j) {
    double d = a[j * k + j];
    for (std::size_t p = 0; p < j; ++p) d -= a[j * k + p] * a[j * k + p];
    if (d <= 1e-10) {
      if (bad_pivot) *bad_pivot = j;
      return false;
    }
    const double l = std::sqrt(d);
    a[j * k + j] = l;
    for (std::size_t i = j + 1; i < k; ++i) {
      double v = a[i * k + j];
      for (std::size_t p = 0; p < j; ++p) v -= a[i * k + p] * a[j * k + p];
      a[i * k + j] = v / l;
    }
  }
  return true;
}

/// Solve L L^T x = b in place given the factor from cholesky().
inline void cholesky_solve(const std::vector<double>& l, std::size_t k, std::vector<double>& b) {
  for (std::size_t i = 0; i < k; ++i) {
    double v = b[i];
    for (std::size_t p = 0; p < i; ++p) v -= l[i * k + p] * b[p];
    b[i] = v / l[i * k + i];
  }
  for (std::size_t i = k; i-- > 0;) {
    double v = b[i];
    for (std::size_t p = i + 1; p < k; ++p) v -= l[p * k + i] * b[p];
    b[i] = v / l[i * k + i];
  }
}

struct NewtonFit {
  std::vector<double> beta;
  std::vector<double> covariance;  // inverse observed information, k x k
  std::vector<std::size_t> dropped_columns;
  bool converged = false;
};

/// Unpenalized logistic regression by Newton-Raphson on a dense design
/// matrix. Columns whose pivot collapses during the information-matrix
/// factorization are dropped (recorded) and the fit restarts without them.
inline NewtonFit newton_logistic(const std::vector<double>& design, std::size_t n, std::size_t k,
                                 const std::vector<std::uint8_t>& y, int max_iter = 100) {
  std::vector<std::size_t> active(k);
  for (std::size_t j = 0; j < k; ++j) active[j] = j;
  std::vector<std::size_t> dropped;

  for (;;) {
    const std::size_t ka = active.size();
    std::vector<double> beta(ka, 0.0);
    std::vector<double> info(ka * ka);
    bool converged = false;
    bool singular = false;
    std::size_t bad = 0;

    for (int it = 0; it < max_iter; ++it) {
      std::vector<double> grad(ka, 0.0);
      std::fill(info.begin(), info.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        double z = 0;
        for (std::size_t j = 0; j < ka; ++j) z += design[i * k + active[j]] * beta[j];
        const double p = sigmoid(z);
        const double w = std::max(p * (1 - p), 1e-10);
        const double r = (y[i] ? 1.0 : 0.0) - p;
        for (std::size_t j = 0; j < ka; ++j) {
          const double xj = design[i * k + active[j]];
          if (xj == 0.0) continue;
          grad[j] += xj * r;
          for (std::size_t l = 0; l <= j; ++l)
            info[j * ka + l] += w * xj * design[i * k + active[l]];
        }
      }
      for (std::size_t j = 0; j < ka; ++j)
        for (std::size_t l = j + 1; l < ka; ++l) info[j * ka + l] = info[l * ka + j];

      auto factor = info;
      if (!cholesky(factor, ka, &bad)) {
        singular = true;
        break;
      }
      auto step = grad;
      cholesky_solve(factor, ka, step);
      double max_step = 0;
      for (std::size_t j = 0; j < ka; ++j) {
        // dampen huge early steps for stability
        step[j] = std::clamp(step[j], -5.0, 5.0);
        beta[j] += step[j];
        max_step = std::max(max_step, std::abs(step[j]));
      }
      if (max_step < 1e-8) {
        converged = true;
        break;
      }
    }

    if (singular) {
      dropped.push_back(active[bad]);
      active.erase(active.begin() + static_cast<std::ptrdiff_t>(bad));
      if (active.empty()) throw DataError("newton_logistic: all columns dropped");
      continue;
    }

    // covariance of the reduced fit, scattered back to full indexing
    NewtonFit out;
    out.converged = converged;
    out.dropped_columns = dropped;
    out.beta.assign(k, 0.0);
    out.covariance.assign(k * k, 0.0);
    auto factor = info;
    std::size_t ignored = 0;
    if (!cholesky(factor, ka, &ignored))
      throw DataError("newton_logistic: information matrix not positive definite at optimum");
    for (std::size_t j = 0; j < ka; ++j) {
      std::vector<double> e(ka, 0.0);
      e[j] = 1.0;
      cholesky_solve(factor, ka, e);
      for (std::size_t l = 0; l < ka; ++l) out.covariance[active[l] * k + active[j]] = e[l];
      out.beta[active[j]] = beta[j];
    }
    return out;
  }
}

inline double pearson_binary(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  const double n = static_cast<double>(a.size());
  double sa = 0, sb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    sab += a[i] && b[i];
  }
  const double cov = sab / n - (sa / n) * (sb / n);
  const double va = sa / n * (1 - sa / n), vb = sb / n * (1 - sb / n);
  if (va <= 0 || vb <= 0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace detail

/// Feature selection after the multicollinearity recipe, then unpenalized
/// per-period logistic fits with Wald 95% intervals from the inverse observed
/// information. Returns the columns whose intervals are strictly
/// opposite-signed across the two periods.
inline std::vector<SignFlipCandidate> coefficient_sign_flip_candidates(
    const PanelDataset& ds, int period_prev, int period_curr, const SignFlipConfig& cfg = {},
    std::vector<CoefficientInterval>* all_intervals = nullptr,
    std::vector<std::string>* warnings = nullptr) {
  if (!ds.has_splits()) throw DataError("coefficient_sign_flip_candidates: dataset has no splits");
  const auto& vocab = ds.vocab();

  const auto train_prev = flatten(collect_period(ds, period_prev, DataSplit::train));
  const auto train_curr = flatten(collect_period(ds, period_curr, DataSplit::train));
  const std::vector<const Sample*>* trains[2] = {&train_prev, &train_curr};

  std::set<std::uint32_t> demo;
  for (const auto& name : cfg.demographics) {
    const auto idx = vocab.find(name);
    if (idx) demo.insert(*idx);
  }

  // per-period chi-squared of feature vs outcome; keep the top_k union
  std::set<std::uint32_t> kept;
  for (const auto* train : trains) {
    std::vector<std::pair<double, std::uint32_t>> scored;
    for (std::uint32_t f = 0; f < vocab.size(); ++f) {
      if (demo.count(f)) continue;
      double on_pos = 0, on_neg = 0, off_pos = 0, off_neg = 0;
      for (const auto* s : *train) {
        const bool on = feature_value(s->features, f) != 0.0;
        if (on)
          (s->outcome ? on_pos : on_neg) += 1;
        else
          (s->outcome ? off_pos : off_neg) += 1;
      }
      scored.emplace_back(detail::chi_squared_2x2(on_pos, on_neg, off_pos, off_neg), f);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t i = 0; i < std::min(cfg.top_k, scored.size()); ++i)
      kept.insert(scored[i].second);
  }

  // frequency floor in both periods
  std::map<std::uint32_t, std::array<double, 2>> freq;
  for (auto f : kept) {
    for (int t = 0; t < 2; ++t) {
      double c = 0;
      for (const auto* s : *trains[t]) c += feature_value(s->features, f) != 0.0;
      freq[f][static_cast<std::size_t>(t)] = c;
    }
  }
  for (auto it = kept.begin(); it != kept.end();) {
    if (freq[*it][0] < cfg.min_frequency || freq[*it][1] < cfg.min_frequency)
      it = kept.erase(it);
    else
      ++it;
  }

  // drop the lower-frequency member of near-duplicate pairs
  std::vector<std::uint32_t> kept_v(kept.begin(), kept.end());
  std::vector<bool> removed(kept_v.size(), false);
  for (int t = 0; t < 2; ++t) {
    const auto& train = *trains[t];
    std::vector<std::vector<std::uint8_t>> cols(kept_v.size(),
                                                std::vector<std::uint8_t>(train.size()));
    for (std::size_t j = 0; j < kept_v.size(); ++j)
      for (std::size_t i = 0; i < train.size(); ++i)
        cols[j][i] = feature_value(train[i]->features, kept_v[j]) != 0.0;
    for (std::size_t a = 0; a < kept_v.size(); ++a) {
      if (removed[a]) continue;
      for (std::size_t b = a + 1; b < kept_v.size(); ++b) {
        if (removed[b]) continue;
        const double fa = freq[kept_v[a]][static_cast<std::size_t>(t)];
        const double fb = freq[kept_v[b]][static_cast<std::size_t>(t)];
        if (std::abs(fa - fb) > cfg.frequency_tolerance) continue;
        if (detail::pearson_binary(cols[a], cols[b]) > cfg.correlation_threshold)
          removed[fa <= fb ? a : b] = true;
      }
    }
  }
  std::vector<std::uint32_t> selected;
  for (std::size_t j = 0; j < kept_v.size(); ++j)
    if (!removed[j]) selected.push_back(kept_v[j]);

  // design: intercept | demographics | month indicators (December dropped) |
  // selected features
  std::vector<std::string> columns{"(intercept)"};
  for (auto f : demo) columns.push_back(vocab.name(f));
  for (int m = 1; m <= 11; ++m) columns.push_back("month_" + std::to_string(m));
  for (auto f : selected) columns.push_back(vocab.name(f));
  const std::size_t k = columns.size();

  std::vector<std::vector<CoefficientInterval>> intervals(2);
  constexpr double z95 = 1.959963984540054;
  for (int t = 0; t < 2; ++t) {
    const auto& train = *trains[t];
    const std::size_t n = train.size();
    std::vector<double> design(n * k, 0.0);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto* s = train[i];
      y[i] = s->outcome;
      std::size_t col = 0;
      design[i * k + col++] = 1.0;
      for (auto f : demo) design[i * k + col++] = feature_value(s->features, f);
      for (int m = 1; m <= 11; ++m) design[i * k + col++] = s->month == m ? 1.0 : 0.0;
      for (auto f : selected) design[i * k + col++] = feature_value(s->features, f);
    }
    const auto fit = detail::newton_logistic(design, n, k, y);
    if (warnings)
      for (auto dcol : fit.dropped_columns)
        warnings->push_back("period " + std::to_string(t == 0 ? period_prev : period_curr) +
                            ": dropped collinear column " + columns[dcol]);
    std::set<std::size_t> dropped(fit.dropped_columns.begin(), fit.dropped_columns.end());
    for (std::size_t j = 0; j < k; ++j) {
      if (dropped.count(j)) continue;
      CoefficientInterval ci;
      ci.column = columns[j];
      ci.period = t == 0 ? period_prev : period_curr;
      ci.estimate = fit.beta[j];
      const double se = std::sqrt(std::max(fit.covariance[j * k + j], 0.0));
      ci.lower = ci.estimate - z95 * se;
      ci.upper = ci.estimate + z95 * se;
      intervals[static_cast<std::size_t>(t)].push_back(ci);
      if (all_intervals) all_intervals->push_back(ci);
    }
  }

  std::vector<SignFlipCandidate> out;
  for (const auto& prev : intervals[0]) {
    if (prev.column == "(intercept)") continue;
    for (const auto& curr : intervals[1]) {
      if (curr.column != prev.column) continue;
      const bool flip_down = prev.lower > 0 && curr.upper < 0;
      const bool flip_up = prev.upper < 0 && curr.lower > 0;
      if (flip_down || flip_up) out.push_back({prev.column, prev, curr});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Conditional-shift re-calibration and importance reweighting
// ---------------------------------------------------------------------------

/// Per-stratum multipliers P_t(Y|C) / P_{t-1}(Y|C) keyed by the values of the
/// stratum features C.
struct RecalibrationTable {
  std::vector<std::uint32_t> stratum_features;
  std::map<std::vector<std::uint8_t>, double> ratios;

  void validate() const {
    for (const auto& [key, r] : ratios)
      if (!(r > 0)) throw DataError("recalibration ratio must be strictly positive");
  }

  double ratio_for(const FeatureVec& x) const {
    std::vector<std::uint8_t> key(stratum_features.size());
    for (std::size_t i = 0; i < stratum_features.size(); ++i)
      key[i] = feature_value(x, stratum_features[i]) != 0.0 ? 1 : 0;
    const auto it = ratios.find(key);
    return it == ratios.end() ? 1.0 : it->second;  // unknown stratum: no adjustment
  }
};

/// min(1, f_prev(x) * ratio(stratum(x))).
inline double recalibrate_conditional(double p_prev, const RecalibrationTable& table,
                                      const FeatureVec& x) {
  return std::min(1.0, p_prev * table.ratio_for(x));
}

inline double recalibrate_conditional(const OutcomeModel& f_prev, const RecalibrationTable& table,
                                      const Sample& s) {
  return recalibrate_conditional(predict_proba(f_prev, s), table, s.features);
}

/// Covariate-shift importance weights n0 P(t=1|x) / (n1 (1 - P(t=1|x))),
/// clipped to [0.01, 10].
inline std::vector<double> importance_weights(std::span<const double> period_scores, double n0,
                                              double n1) {
  std::vector<double> w(period_scores.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double p = period_scores[i];
    if (!(p > 0 && p < 1)) throw DataError("importance_weights: score outside (0,1)");
    w[i] = std::clamp(n0 * p / (n1 * (1 - p)), 0.01, 10.0);
  }
  return w;
}

}  // namespace tshift
