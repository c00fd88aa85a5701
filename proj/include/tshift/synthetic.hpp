#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tshift/logistic.hpp"
#include "tshift/panel.hpp"
#include "tshift/rng.hpp"

namespace tshift {

enum class ShiftKind : std::uint8_t { none, label_shift, domain_shift, conditional_shift };

inline const char* to_string(ShiftKind k) {
  switch (k) {
    case ShiftKind::none: return "none";
    case ShiftKind::label_shift: return "label_shift";
    case ShiftKind::domain_shift: return "domain_shift";
    case ShiftKind::conditional_shift: return "conditional_shift";
  }
  return "?";
}

inline ShiftKind shift_kind_from_string(const std::string& s) {
  if (s == "none") return ShiftKind::none;
  if (s == "label_shift") return ShiftKind::label_shift;
  if (s == "domain_shift") return ShiftKind::domain_shift;
  if (s == "conditional_shift") return ShiftKind::conditional_shift;
  throw DataError("unknown shift kind: " + s);
}

/// Generative specification of a two-period synthetic cohort with a known
/// injected shift. Periods are 0 (historical) and 1 (current); magnitude 0
/// makes the two periods identically distributed.
struct ShiftScenario {
  ShiftKind kind = ShiftKind::none;
  int latent_dim = 2;            // |U|, domain shift only
  int n_features = 10;           // d
  int n_patients = 1000;
  int samples_per_patient = 12;  // per period, at most 12 (one per month)
  double magnitude = 1.0;
  double prevalence = 0.10;      // base P(Y) at period 0
  double patient_sigma = 0.8;    // sd of the per-patient latent intercept
  // conditional shift knobs
  int flip_feature = 0;                     // coefficient whose sign flips at period 1
  std::optional<int> subgroup_feature;      // confine the flip to {x_g = 1}
  double separation_boost = 0.0;            // scales all coefficients at period 1
  // post-step: symmetric label noise applied to period-1 outcomes
  double label_noise_t = 0.0;
  std::uint64_t seed = 0;
};

/// Known truth for a generated cohort: the affected sub-population as a
/// feature conjunction (empty = entire population) and the per-period P(Y).
struct ScenarioGroundTruth {
  ShiftKind kind = ShiftKind::none;
  std::vector<std::pair<std::uint32_t, double>> affected_predicate;
  std::array<double, 2> true_prevalence{0.0, 0.0};

  bool affected(const FeatureVec& x) const {
    for (const auto& [f, v] : affected_predicate)
      if (feature_value(x, f) != v) return false;
    return true;
  }
};

/// Exact discrete joint distribution over named variables; the oracle type
/// for enumeration-based identity checks.
struct JointTable {
  std::vector<std::string> vars;
  std::vector<std::uint32_t> card;
  std::vector<double> p;  // row-major over var assignments

  std::size_t index(std::span<const std::uint32_t> assignment) const {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < card.size(); ++i) idx = idx * card[i] + assignment[i];
    return idx;
  }

  std::size_t var_index(const std::string& name) const {
    for (std::size_t i = 0; i < vars.size(); ++i)
      if (vars[i] == name) return i;
    throw DataError("JointTable: unknown variable " + name);
  }

  /// Marginal over a subset of variables (kept in the given order).
  JointTable marginal(const std::vector<std::string>& keep) const {
    JointTable out;
    out.vars = keep;
    std::vector<std::size_t> keep_idx;
    for (const auto& k : keep) {
      keep_idx.push_back(var_index(k));
      out.card.push_back(card[keep_idx.back()]);
    }
    std::size_t out_size = 1;
    for (auto c : out.card) out_size *= c;
    out.p.assign(out_size, 0.0);

    std::vector<std::uint32_t> assignment(card.size(), 0);
    for (std::size_t flat = 0; flat < p.size(); ++flat) {
      std::size_t rem = flat;
      for (std::size_t i = card.size(); i-- > 0;) {
        assignment[i] = static_cast<std::uint32_t>(rem % card[i]);
        rem /= card[i];
      }
      std::size_t out_flat = 0;
      for (std::size_t i = 0; i < keep_idx.size(); ++i)
        out_flat = out_flat * out.card[i] + assignment[keep_idx[i]];
      out.p[out_flat] += p[flat];
    }
    return out;
  }

  /// P(target = value | rest of `given` variables assigned), computed from
  /// marginals of this joint.
  double conditional(const std::string& target, std::uint32_t value,
                     const std::vector<std::pair<std::string, std::uint32_t>>& given) const {
    std::vector<std::string> keep{target};
    for (const auto& [v, _] : given) keep.push_back(v);
    const auto m = marginal(keep);
    std::vector<std::uint32_t> assign(m.card.size());
    double denom = 0.0, num = 0.0;
    for (std::uint32_t t = 0; t < m.card[0]; ++t) {
      assign[0] = t;
      for (std::size_t i = 0; i < given.size(); ++i) assign[i + 1] = given[i].second;
      const double q = m.p[m.index(assign)];
      denom += q;
      if (t == value) num = q;
    }
    if (denom <= 0) throw DataError("conditional on a zero-probability event");
    return num / denom;
  }
};

namespace detail {

/// E[sigmoid(c + sigma Z)] for Z ~ N(0,1), by composite Simpson; exact enough
/// to calibrate intercepts well below Monte-Carlo resolution.
inline double expected_sigmoid(double c, double sigma) {
  if (sigma == 0.0) return sigmoid(c);
  const int n = 800;  // intervals
  const double lo = -8.0, hi = 8.0, h = (hi - lo) / n;
  auto f = [&](double z) {
    return sigmoid(c + sigma * z) * std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  };
  double s = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) s += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

/// Solve E[sigmoid(c + sigma Z)] = target for c by bisection.
inline double calibrate_intercept(double target, double sigma) {
  double lo = -30, hi = 30;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (expected_sigmoid(mid, sigma) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Dense interpolation table for c -> E[sigmoid(c + sigma Z)]; the intercept
/// calibration evaluates this once per enumerated feature state, so the
/// direct quadrature would dominate generation time.
class ExpectedSigmoidTable {
 public:
  explicit ExpectedSigmoidTable(double sigma) : sigma_(sigma) {
    if (sigma_ == 0.0) return;
    values_.resize(kPoints);
    for (std::size_t i = 0; i < kPoints; ++i)
      values_[i] = expected_sigmoid(kLo + static_cast<double>(i) * kStep, sigma_);
  }

  double operator()(double c) const {
    if (sigma_ == 0.0) return sigmoid(c);
    if (c <= kLo) return values_.front();
    if (c >= kLo + (kPoints - 1) * kStep) return values_.back();
    const double pos = (c - kLo) / kStep;
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return values_[i] + frac * (values_[i + 1] - values_[i]);
  }

 private:
  static constexpr double kLo = -42.0, kStep = 0.01;
  static constexpr std::size_t kPoints = 8401;
  double sigma_;
  std::vector<double> values_;
};

/// Fixed per-scenario parameters drawn once from the setup stream.
struct ScenarioParams {
  // label shift: class conditionals
  std::vector<double> q_y0, q_y1;
  std::array<double, 2> label_intercept{0, 0};  // per period
  // domain shift
  std::vector<double> u_prior;                 // |U|
  std::vector<double> py_u;                    // P(Y=1|u), patient latent added on top
  std::vector<std::vector<double>> qx_u;       // [u][feature]
  std::vector<std::uint8_t> maskable;          // masked at period 1 w.p. magnitude
  // conditional / none: logistic Y|X with a correlated feature block driven
  // by a per-sample Gaussian factor (so heavy coefficient shrinkage costs
  // real ranking quality and hyperparameter selection stays honest)
  std::vector<double> qx;                      // base P(x_k = 1)
  std::vector<double> rho;                     // factor loading per feature
  std::vector<double> beta;                    // period-0 coefficients
  std::array<double, 2> beta0{0.0, 0.0};       // per-period intercepts
  double flip_beta_curr = 0.0;                 // period-1 coefficient of the flip feature

  double feature_prob(std::size_t k, double factor) const {
    if (rho[k] == 0.0) return qx[k];
    return sigmoid(std::log(qx[k] / (1 - qx[k])) + rho[k] * factor);
  }
};

/// Coefficient part of the outcome logit (intercept excluded); the flip and
/// boost apply only at period 1 of a conditional-shift scenario.
inline double conditional_effects(const ScenarioParams& par, const ShiftScenario& sc,
                                  std::span<const std::uint8_t> x, int period) {
  const bool shifted = period == 1 && sc.kind == ShiftKind::conditional_shift;
  const double scale = shifted ? 1.0 + sc.separation_boost : 1.0;
  const bool flip_active =
      shifted && (!sc.subgroup_feature || x[static_cast<std::size_t>(*sc.subgroup_feature)] != 0);
  double logit = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!x[k]) continue;
    double b = par.beta[k];
    if (flip_active && static_cast<int>(k) == sc.flip_feature) b = par.flip_beta_curr;
    logit += scale * b;
  }
  return logit;
}

inline double conditional_logit(const ScenarioParams& par, const ShiftScenario& sc,
                                std::span<const std::uint8_t> x, int period) {
  return par.beta0[static_cast<std::size_t>(period)] + conditional_effects(par, sc, x, period);
}

/// P(X = state) for every feature state of a conditional/none scenario, the
/// Gaussian factor behind the correlated block integrated out by Simpson.
inline std::vector<double> feature_state_masses(const ScenarioParams& par, std::size_t d) {
  const std::size_t n_states = std::size_t{1} << d;
  std::vector<double> mass(n_states, 0.0);
  const int n_intervals = 160;
  const double lo = -6.0, hi = 6.0, h = (hi - lo) / n_intervals;
  std::vector<double> q(d);
  for (int node = 0; node <= n_intervals; ++node) {
    const double v = lo + node * h;
    const double weight = (node == 0 || node == n_intervals) ? 1.0 : (node % 2 ? 4.0 : 2.0);
    const double density = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
    for (std::size_t k = 0; k < d; ++k) q[k] = par.feature_prob(k, v);
    for (std::size_t s = 0; s < n_states; ++s) {
      double px = 1.0;
      for (std::size_t k = 0; k < d; ++k) px *= ((s >> k) & 1) ? q[k] : 1 - q[k];
      mass[s] += weight * density * px;
    }
  }
  for (auto& m : mass) m *= h / 3.0;
  return mass;
}

inline ScenarioParams scenario_params(const ShiftScenario& sc) {
  ScenarioParams par;
  Rng setup(derive_seed(sc.seed, 0xa11ce));
  const auto d = static_cast<std::size_t>(sc.n_features);

  switch (sc.kind) {
    case ShiftKind::label_shift: {
      const double pi1 = sc.prevalence + sc.magnitude;
      if (pi1 <= 0.0 || pi1 >= 1.0 || sc.prevalence <= 0.0 || sc.prevalence >= 1.0)
        throw DataError("label_shift: infeasible prevalence/magnitude combination");
      par.q_y0.resize(d);
      par.q_y1.resize(d);
      for (std::size_t k = 0; k < d; ++k) {
        par.q_y0[k] = 0.15 + 0.3 * setup.uniform01();
        par.q_y1[k] = par.q_y0[k] + 0.05 + 0.25 * setup.uniform01();
      }
      par.label_intercept[0] = calibrate_intercept(sc.prevalence, sc.patient_sigma);
      par.label_intercept[1] = calibrate_intercept(pi1, sc.patient_sigma);
      break;
    }
    case ShiftKind::domain_shift: {
      const auto nu = static_cast<std::size_t>(sc.latent_dim);
      if (nu < 2) throw DataError("domain_shift: latent_dim must be at least 2");
      par.u_prior.assign(nu, 1.0 / static_cast<double>(nu));
      par.py_u.resize(nu);
      par.qx_u.assign(nu, std::vector<double>(d));
      // P(Y|u) spread around the target prevalence; the shared intercept `a`
      // is calibrated so the overall prevalence matches.
      std::vector<double> offsets(nu);
      for (std::size_t u = 0; u < nu; ++u)
        offsets[u] = 2.0 * (static_cast<double>(u) / static_cast<double>(nu - 1) - 0.5);
      double lo = -30, hi = 30;
      for (int it = 0; it < 200; ++it) {
        const double a = 0.5 * (lo + hi);
        double prev = 0;
        for (std::size_t u = 0; u < nu; ++u)
          prev += par.u_prior[u] * expected_sigmoid(a + offsets[u], sc.patient_sigma);
        (prev < sc.prevalence ? lo : hi) = a;
      }
      const double a = 0.5 * (lo + hi);
      for (std::size_t u = 0; u < nu; ++u) par.py_u[u] = a + offsets[u];  // logits
      for (std::size_t k = 0; k < d; ++k) {
        const double base = 0.1 + 0.3 * setup.uniform01();
        for (std::size_t u = 0; u < nu; ++u) {
          const double tilt = 1.2 * (static_cast<double>(u) / static_cast<double>(nu - 1) - 0.5);
          par.qx_u[u][k] = sigmoid(std::log(base / (1 - base)) + tilt);
        }
      }
      par.maskable.assign(d, 0);
      for (std::size_t k = 0; k < (d + 1) / 2; ++k) par.maskable[k] = 1;
      break;
    }
    case ShiftKind::none:
    case ShiftKind::conditional_shift: {
      if (d > 16) throw DataError("conditional/none scenarios require n_features <= 16");
      par.qx.resize(d);
      par.rho.assign(d, 0.0);
      par.beta.resize(d);
      for (std::size_t k = 0; k < d; ++k) {
        par.qx[k] = 0.25 + 0.25 * setup.uniform01();
        par.beta[k] = (k % 2 == 0 ? 1.0 : -1.0) * (0.5 + 0.5 * setup.uniform01());
        if (k >= d / 2) par.rho[k] = 1.6;  // correlated block
      }
      if (sc.kind == ShiftKind::conditional_shift) {
        if (sc.flip_feature < 0 || sc.flip_feature >= sc.n_features)
          throw DataError("conditional_shift: flip_feature out of range");
        const auto f = static_cast<std::size_t>(sc.flip_feature);
        par.qx[f] = 0.55;
        par.beta[f] = 2.0;
        par.flip_beta_curr = (1.0 - 2.0 * std::min(sc.magnitude, 1.0)) * par.beta[f];
        if (sc.subgroup_feature) {
          if (*sc.subgroup_feature < 0 || *sc.subgroup_feature >= sc.n_features)
            throw DataError("conditional_shift: bad subgroup_feature");
          par.qx[static_cast<std::size_t>(*sc.subgroup_feature)] = 0.65;
        }
      } else {
        par.flip_beta_curr = 0.0;
      }
      // Calibrate each period's intercept so P(Y) stays at the target:
      // enumerate x and integrate the patient latent. An intercept change
      // never alters the ranking, so the injected shift stays conditional.
      const std::size_t n_states = std::size_t{1} << d;
      const ExpectedSigmoidTable latent_mean(sc.patient_sigma);
      const auto cell_mass = feature_state_masses(par, d);
      std::vector<double> cell_effect(n_states);
      for (int period = 0; period < 2; ++period) {
        std::vector<std::uint8_t> x(d);
        for (std::size_t s = 0; s < n_states; ++s) {
          for (std::size_t k = 0; k < d; ++k) x[k] = (s >> k) & 1;
          cell_effect[s] = conditional_effects(par, sc, x, period);
        }
        if (period == 1 && sc.kind == ShiftKind::conditional_shift && sc.subgroup_feature) {
          // A subgroup-confined shift changes nothing outside the subgroup,
          // so the intercept stays put and P(Y) moves as a consequence.
          par.beta0[1] = par.beta0[0];
          continue;
        }
        double blo = -30, bhi = 30;
        for (int it = 0; it < 100; ++it) {
          const double b0 = 0.5 * (blo + bhi);
          double prev = 0;
          for (std::size_t s = 0; s < n_states; ++s)
            prev += cell_mass[s] * latent_mean(b0 + cell_effect[s]);
          (prev < sc.prevalence ? blo : bhi) = b0;
        }
        par.beta0[static_cast<std::size_t>(period)] = 0.5 * (blo + bhi);
      }
      break;
    }
  }
  return par;
}

/// P(Y=1) at a period, patient latent integrated out. Exact up to quadrature.
inline double true_prevalence(const ShiftScenario& sc, const ScenarioParams& par, int period) {
  double prev = 0.0;
  switch (sc.kind) {
    case ShiftKind::label_shift:
      prev = expected_sigmoid(par.label_intercept[static_cast<std::size_t>(period)],
                              sc.patient_sigma);
      break;
    case ShiftKind::domain_shift: {
      for (std::size_t u = 0; u < par.u_prior.size(); ++u)
        prev += par.u_prior[u] * expected_sigmoid(par.py_u[u], sc.patient_sigma);
      break;
    }
    case ShiftKind::none:
    case ShiftKind::conditional_shift: {
      const auto d = static_cast<std::size_t>(sc.n_features);
      const auto mass = feature_state_masses(par, d);
      std::vector<std::uint8_t> x(d);
      for (std::size_t s = 0; s < (std::size_t{1} << d); ++s) {
        for (std::size_t k = 0; k < d; ++k) x[k] = (s >> k) & 1;
        prev += mass[s] * expected_sigmoid(conditional_logit(par, sc, x, period), sc.patient_sigma);
      }
      break;
    }
  }
  if (period == 1 && sc.label_noise_t > 0)
    prev = prev * (1 - sc.label_noise_t) + (1 - prev) * sc.label_noise_t;
  return prev;
}

}  // namespace detail

struct GeneratedCohort {
  PanelDataset data;
  ScenarioGroundTruth truth;
};

/// Generate a two-period cohort under the scenario's causal mechanism.
/// Patients carry correlated samples through a per-patient latent intercept
/// on the outcome logit. Deterministic in (seed, replicate); patients use
/// independent substreams, so generation order does not matter. Distinct
/// replicate values draw i.i.d. cohorts from the same scenario law.
inline GeneratedCohort generate(const ShiftScenario& sc, std::uint64_t replicate = 0) {
  if (sc.n_patients <= 0) throw DataError("scenario: n_patients must be positive");
  if (sc.samples_per_patient < 1 || sc.samples_per_patient > 12)
    throw DataError("scenario: samples_per_patient must be in [1,12]");
  if (sc.prevalence <= 0 || sc.prevalence >= 1) throw DataError("scenario: prevalence outside (0,1)");
  if (sc.label_noise_t < 0 || sc.label_noise_t >= 0.5)
    throw DataError("scenario: label_noise_t must be in [0, 0.5)");

  const auto par = detail::scenario_params(sc);
  const auto d = static_cast<std::size_t>(sc.n_features);

  std::vector<std::string> names(d);
  for (std::size_t k = 0; k < d; ++k) names[k] = "f" + std::to_string(k);
  Vocabulary vocab(names);

  const int digits = static_cast<int>(std::to_string(sc.n_patients).size());
  std::vector<PatientPanel> panels(static_cast<std::size_t>(sc.n_patients));

  const std::uint64_t sample_seed = derive_seed(sc.seed, 0xda7aULL + replicate);
  for (int pi = 0; pi < sc.n_patients; ++pi) {
    Rng latent_rng(derive_seed(sample_seed, 0x70000000ULL + static_cast<std::uint64_t>(pi)));
    const double b_p = sc.patient_sigma > 0 ? latent_rng.normal(0.0, sc.patient_sigma) : 0.0;

    auto& panel = panels[static_cast<std::size_t>(pi)];
    std::string id = std::to_string(pi);
    panel.patient_id = "p" + std::string(static_cast<std::size_t>(digits) - id.size(), '0') + id;

    for (int period = 0; period < 2; ++period) {
      // independent substream per (patient, period)
      Rng rng(derive_seed(sample_seed, 0x20000000ULL +
                                           2 * static_cast<std::uint64_t>(pi) +
                                           static_cast<std::uint64_t>(period)));
      for (int j = 0; j < sc.samples_per_patient; ++j) {
        Sample s;
        s.period = period;
        s.month = 1 + (j * 12) / sc.samples_per_patient;

        std::vector<std::uint8_t> x(d, 0);
        switch (sc.kind) {
          case ShiftKind::label_shift: {
            const double pi_t = sigmoid(par.label_intercept[static_cast<std::size_t>(period)] + b_p);
            s.outcome = rng.bernoulli(pi_t) ? 1 : 0;
            const auto& q = s.outcome ? par.q_y1 : par.q_y0;
            for (std::size_t k = 0; k < d; ++k) x[k] = rng.bernoulli(q[k]) ? 1 : 0;
            break;
          }
          case ShiftKind::domain_shift: {
            const auto u = static_cast<std::size_t>(rng.uniform_below(par.u_prior.size()));
            s.outcome = rng.bernoulli(sigmoid(par.py_u[u] + b_p)) ? 1 : 0;
            for (std::size_t k = 0; k < d; ++k) {
              x[k] = rng.bernoulli(par.qx_u[u][k]) ? 1 : 0;
              if (period == 1 && par.maskable[k] && x[k] && rng.bernoulli(sc.magnitude)) x[k] = 0;
            }
            break;
          }
          case ShiftKind::none:
          case ShiftKind::conditional_shift: {
            const double factor = rng.normal(0.0, 1.0);
            for (std::size_t k = 0; k < d; ++k)
              x[k] = rng.bernoulli(par.feature_prob(k, factor)) ? 1 : 0;
            const double logit = detail::conditional_logit(par, sc, x, period);
            s.outcome = rng.bernoulli(sigmoid(logit + b_p)) ? 1 : 0;
            break;
          }
        }
        if (period == 1 && sc.label_noise_t > 0 && rng.bernoulli(sc.label_noise_t))
          s.outcome = 1 - s.outcome;

        for (std::size_t k = 0; k < d; ++k)
          if (x[k]) s.features.emplace_back(static_cast<std::uint32_t>(k), 1.0);
        panel.samples.push_back(std::move(s));
      }
    }
  }

  GeneratedCohort out;
  out.data = PanelDataset(std::move(panels), std::move(vocab));
  out.truth.kind = sc.kind;
  out.truth.true_prevalence = {detail::true_prevalence(sc, par, 0),
                               detail::true_prevalence(sc, par, 1)};
  if (sc.kind == ShiftKind::conditional_shift && sc.magnitude > 0) {
    out.truth.affected_predicate.emplace_back(static_cast<std::uint32_t>(sc.flip_feature), 1.0);
    if (sc.subgroup_feature)
      out.truth.affected_predicate.emplace_back(static_cast<std::uint32_t>(*sc.subgroup_feature),
                                                1.0);
    std::sort(out.truth.affected_predicate.begin(), out.truth.affected_predicate.end());
    out.truth.affected_predicate.erase(
        std::unique(out.truth.affected_predicate.begin(), out.truth.affected_predicate.end()),
        out.truth.affected_predicate.end());
  }
  return out;
}

/// Exact per-period joint tables for scenarios with small discrete state
/// spaces. Requires patient_sigma == 0 (the latent intercept would make the
/// sample law non-enumerable) and at most 2^16 joint states.
inline std::array<JointTable, 2> enumerate_exact(const ShiftScenario& sc) {
  if (sc.patient_sigma != 0.0)
    throw DataError("enumerate_exact: requires patient_sigma == 0");
  if (sc.label_noise_t != 0.0)
    throw DataError("enumerate_exact: label noise not supported");
  const auto d = static_cast<std::size_t>(sc.n_features);
  const auto par = detail::scenario_params(sc);
  std::vector<double> cond_mass;
  if (sc.kind == ShiftKind::none || sc.kind == ShiftKind::conditional_shift)
    cond_mass = detail::feature_state_masses(par, d);

  std::array<JointTable, 2> out;
  for (int period = 0; period < 2; ++period) {
    JointTable t;
    for (std::size_t k = 0; k < d; ++k) {
      t.vars.push_back("f" + std::to_string(k));
      t.card.push_back(2);
    }
    t.vars.push_back("y");
    t.card.push_back(2);

    const std::size_t x_states = std::size_t{1} << d;
    if (x_states * 2 > (std::size_t{1} << 16))
      throw DataError("enumerate_exact: state space too large");
    t.p.assign(x_states * 2, 0.0);

    std::vector<std::uint8_t> x(d);
    for (std::size_t s = 0; s < x_states; ++s) {
      for (std::size_t k = 0; k < d; ++k) x[k] = (s >> k) & 1;
      // index with y as the last (fastest) axis
      std::size_t flat = 0;
      for (std::size_t k = 0; k < d; ++k) flat = flat * 2 + x[k];
      flat *= 2;

      switch (sc.kind) {
        case ShiftKind::label_shift: {
          const double pi_t = sigmoid(par.label_intercept[static_cast<std::size_t>(period)]);
          for (int y = 0; y < 2; ++y) {
            const auto& q = y ? par.q_y1 : par.q_y0;
            double px = 1.0;
            for (std::size_t k = 0; k < d; ++k) px *= x[k] ? q[k] : 1 - q[k];
            t.p[flat + static_cast<std::size_t>(y)] = (y ? pi_t : 1 - pi_t) * px;
          }
          break;
        }
        case ShiftKind::domain_shift: {
          for (int y = 0; y < 2; ++y) {
            double total = 0;
            for (std::size_t u = 0; u < par.u_prior.size(); ++u) {
              const double py = sigmoid(par.py_u[u]);
              double px = 1.0;
              for (std::size_t k = 0; k < d; ++k) {
                double q1 = par.qx_u[u][k];
                if (period == 1 && par.maskable[k]) q1 *= 1.0 - sc.magnitude;
                px *= x[k] ? q1 : 1 - q1;
              }
              total += par.u_prior[u] * px * (y ? py : 1 - py);
            }
            t.p[flat + static_cast<std::size_t>(y)] = total;
          }
          break;
        }
        case ShiftKind::none:
        case ShiftKind::conditional_shift: {
          const double px = cond_mass[s];
          const double py = sigmoid(detail::conditional_logit(par, sc, x, period));
          t.p[flat] = px * (1 - py);
          t.p[flat + 1] = px * py;
          break;
        }
      }
    }
    out[static_cast<std::size_t>(period)] = std::move(t);
  }
  return out;
}

/// Exact binary (U, X, X', Y) instance of the domain-shift feature structure:
/// the latent prior, Y|U, and X'|U are period-free while X|U shifts. P(Y|X')
/// is then identical across periods though P(Y|X) is not.
inline std::array<JointTable, 2> domain_shift_feature_instance() {
  const double pu = 0.4;                      // P(U=1)
  const double py_u[2] = {0.15, 0.6};         // P(Y=1|U)
  const double pxp_u[2] = {0.2, 0.7};         // P(X'=1|U), period-free
  const double px_u_prev[2] = {0.3, 0.8};     // P(X=1|U) at t-1
  const double px_u_curr[2] = {0.1, 0.45};    // shifted at t

  std::array<JointTable, 2> out;
  for (int period = 0; period < 2; ++period) {
    JointTable t;
    t.vars = {"u", "x", "xp", "y"};
    t.card = {2, 2, 2, 2};
    t.p.assign(16, 0.0);
    const double* px_u = period == 0 ? px_u_prev : px_u_curr;
    for (std::uint32_t u = 0; u < 2; ++u)
      for (std::uint32_t xv = 0; xv < 2; ++xv)
        for (std::uint32_t xp = 0; xp < 2; ++xp)
          for (std::uint32_t y = 0; y < 2; ++y) {
            const double prob = (u ? pu : 1 - pu) * (xv ? px_u[u] : 1 - px_u[u]) *
                                (xp ? pxp_u[u] : 1 - pxp_u[u]) * (y ? py_u[u] : 1 - py_u[u]);
            t.p[t.index(std::array<std::uint32_t, 4>{u, xv, xp, y})] = prob;
          }
    out[static_cast<std::size_t>(period)] = std::move(t);
  }
  return out;
}

/// Exact binary (B, C, Y) instance satisfying the four re-calibration
/// conditions: P(Y) and P(X) fixed, P(Y|B) fixed, B and C independent given
/// Y. Built via the factorization in the proof; with binary Y those
/// conditions force B independent of Y, so B is a genuinely uninformative
/// block while the C-stratum ratio is non-trivial.
inline std::array<JointTable, 2> recalibration_instance() {
  const double py = 0.4;
  const double pb = 0.3;                       // P(B=1), independent of Y
  const double pc_y_prev[2] = {0.3, 0.7};      // P(C=1|Y) at t-1
  const double pc_y_curr[2] = {0.4, 0.55};     // same marginal P(C)=0.46 at t

  std::array<JointTable, 2> out;
  for (int period = 0; period < 2; ++period) {
    JointTable t;
    t.vars = {"b", "c", "y"};
    t.card = {2, 2, 2};
    t.p.assign(8, 0.0);
    const double* pc_y = period == 0 ? pc_y_prev : pc_y_curr;
    for (std::uint32_t b = 0; b < 2; ++b)
      for (std::uint32_t c = 0; c < 2; ++c)
        for (std::uint32_t y = 0; y < 2; ++y) {
          const double prob = (y ? py : 1 - py) * (b ? pb : 1 - pb) *
                              (c ? pc_y[y] : 1 - pc_y[y]);
          t.p[t.index(std::array<std::uint32_t, 3>{b, c, y})] = prob;
        }
    out[static_cast<std::size_t>(period)] = std::move(t);
  }
  return out;
}

}  // namespace tshift
