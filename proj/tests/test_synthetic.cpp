#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "support.hpp"
#include "tshift/discovery.hpp"
#include "tshift/outcome_model.hpp"
#include "tshift/panel.hpp"
#include "tshift/synthetic.hpp"

using namespace tshift;

namespace {

double empirical_prevalence(const PanelDataset& ds, int period) {
  double pos = 0, n = 0;
  for (const auto& p : ds.panels())
    for (const auto& s : p.samples)
      if (s.period == period) {
        pos += s.outcome;
        n += 1;
      }
  return pos / n;
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
  ShiftScenario sc;
  sc.kind = ShiftKind::conditional_shift;
  sc.n_patients = 200;
  sc.samples_per_patient = 3;
  sc.seed = 5;
  const auto a = generate(sc);
  const auto b = generate(sc);
  REQUIRE(a.data == b.data);
  sc.seed = 6;
  const auto c = generate(sc);
  REQUIRE(!(a.data == c.data));
}

TEST_CASE("scenario validation rejects infeasible settings") {
  ShiftScenario sc;
  sc.kind = ShiftKind::label_shift;
  sc.prevalence = 0.95;
  sc.magnitude = 0.10;  // period-1 prevalence 1.05
  REQUIRE_THROWS_AS(generate(sc), DataError);
  sc.prevalence = 0.2;
  sc.samples_per_patient = 13;
  REQUIRE_THROWS_AS(generate(sc), DataError);
}

TEST_CASE("zero magnitude makes the two periods indistinguishable") {
  ShiftScenario sc;
  sc.kind = ShiftKind::label_shift;
  sc.magnitude = 0.0;
  sc.n_patients = 2500;
  sc.samples_per_patient = 4;  // 10,000 samples per period
  sc.prevalence = 0.15;
  sc.seed = 42;
  const auto cohort = generate(sc);

  // period classifier: one model over merged samples with the period as the
  // label; its validation AUC should be indistinguishable from chance
  std::vector<Sample> relabeled;
  for (const auto& p : cohort.data.panels())
    for (const auto& s : p.samples) {
      Sample r = s;
      r.outcome = static_cast<std::uint8_t>(s.period);
      relabeled.push_back(std::move(r));
    }
  std::vector<const Sample*> train, validation;
  for (std::size_t i = 0; i < relabeled.size(); ++i)
    (i % 5 == 0 ? validation : train).push_back(&relabeled[i]);
  const auto clf = fit_outcome_model(train, validation, ModelKind::logistic_regression,
                                     cohort.data.vocab(), 0, 7);
  REQUIRE(clf.validation_auc > 0.47);
  REQUIRE(clf.validation_auc < 0.53);
}

TEST_CASE("label shift hits its prevalence targets") {
  ShiftScenario sc;
  sc.kind = ShiftKind::label_shift;
  sc.prevalence = 0.05;
  sc.magnitude = 0.10;  // 0.05 -> 0.15
  sc.n_patients = 5000;
  sc.samples_per_patient = 4;  // 20,000 samples per period
  sc.seed = 11;
  const auto cohort = generate(sc);
  REQUIRE(cohort.truth.true_prevalence[0] == Catch::Approx(0.05).margin(1e-6));
  REQUIRE(cohort.truth.true_prevalence[1] == Catch::Approx(0.15).margin(1e-6));
  REQUIRE(std::abs(empirical_prevalence(cohort.data, 0) - 0.05) < 0.01);
  REQUIRE(std::abs(empirical_prevalence(cohort.data, 1) - 0.15) < 0.01);
}

TEST_CASE("domain shift masks features at the current period only") {
  ShiftScenario sc;
  sc.kind = ShiftKind::domain_shift;
  sc.magnitude = 0.5;
  sc.n_patients = 4000;
  sc.samples_per_patient = 3;
  sc.seed = 19;
  const auto cohort = generate(sc);

  // maskable features (the first half) lose roughly half their frequency
  const auto d = cohort.data.vocab().size();
  std::vector<double> freq[2];
  freq[0].assign(d, 0);
  freq[1].assign(d, 0);
  double n[2] = {0, 0};
  for (const auto& p : cohort.data.panels())
    for (const auto& s : p.samples) {
      n[s.period] += 1;
      for (const auto& [f, v] : s.features) freq[s.period][f] += v != 0.0;
    }
  for (std::uint32_t f = 0; f < d; ++f) {
    const double r = (freq[1][f] / n[1]) / (freq[0][f] / n[0]);
    if (f < (d + 1) / 2)
      REQUIRE(r == Catch::Approx(0.5).margin(0.08));
    else
      REQUIRE(r == Catch::Approx(1.0).margin(0.08));
  }
  // prevalence unchanged by construction
  REQUIRE(std::abs(empirical_prevalence(cohort.data, 0) -
                   empirical_prevalence(cohort.data, 1)) < 0.015);
}

TEST_CASE("the ground-truth predicate matches a re-evaluation on the features") {
  ShiftScenario sc;
  sc.kind = ShiftKind::conditional_shift;
  sc.flip_feature = 2;
  sc.n_patients = 300;
  sc.samples_per_patient = 2;
  sc.seed = 23;
  const auto cohort = generate(sc);
  REQUIRE(cohort.truth.affected_predicate.size() == 1);
  REQUIRE(cohort.truth.affected_predicate[0].first == 2);
  for (const auto& p : cohort.data.panels())
    for (const auto& s : p.samples)
      REQUIRE(cohort.truth.affected(s.features) == (feature_value(s.features, 2) == 1.0));
}

TEST_CASE("conditional shift concentrates loss-difference labels in the flipped group") {
  ShiftScenario sc;
  sc.kind = ShiftKind::conditional_shift;
  sc.flip_feature = 0;
  sc.magnitude = 1.0;
  sc.n_patients = 4000;
  sc.samples_per_patient = 2;
  sc.prevalence = 0.25;
  sc.patient_sigma = 0.5;
  sc.seed = 31;
  const auto cohort = generate(sc);
  auto ds = split_patients_stratified(cohort.data, {0.7, 0.15, 0.15}, 1);

  auto fit = [&](int period) {
    const auto train = flatten(collect_period(ds, period, DataSplit::train));
    const auto val = flatten(collect_period(ds, period, DataSplit::validation));
    return fit_outcome_model(train, val, ModelKind::logistic_regression, ds.vocab(), period, 3);
  };
  const auto f_prev = fit(0);
  const auto f_curr = fit(1);

  const auto curr_all = flatten(collect_period(ds, 1));
  const auto z = compute_subpop_labels(f_prev, f_curr, curr_all);
  double in_z = 0, in_n = 0, out_z = 0, out_n = 0;
  for (std::size_t i = 0; i < curr_all.size(); ++i) {
    if (feature_value(curr_all[i]->features, 0) != 0.0) {
      in_z += z[i];
      in_n += 1;
    } else {
      out_z += z[i];
      out_n += 1;
    }
  }
  REQUIRE(in_z / in_n - out_z / out_n >= 0.2);
}

TEST_CASE("a generated cohort round-trips through the ingestion format") {
  ShiftScenario sc;
  sc.kind = ShiftKind::domain_shift;
  sc.n_patients = 1250;
  sc.samples_per_patient = 4;  // 10,000 lines
  sc.seed = 3;
  const auto cohort = generate(sc);
  const auto path = (std::filesystem::temp_directory_path() / "tshift_synth_rt.jsonl").string();
  store_dataset(cohort.data, path);
  IngestSchema schema;
  schema.vocabulary = cohort.data.vocab().names();
  const auto back = load_dataset(path, schema);
  REQUIRE(back == cohort.data);
  std::remove(path.c_str());
}

TEST_CASE("exact enumeration requires enumerable scenarios") {
  ShiftScenario sc;
  sc.kind = ShiftKind::none;
  sc.patient_sigma = 0.5;
  REQUIRE_THROWS_AS(enumerate_exact(sc), DataError);
  sc.patient_sigma = 0.0;
  sc.n_features = 6;
  const auto tables = enumerate_exact(sc);
  double total = 0;
  for (double p : tables[0].p) total += p;
  REQUIRE(total == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("zero magnitude gives identical per-period tables") {
  for (auto kind : {ShiftKind::none, ShiftKind::label_shift, ShiftKind::domain_shift,
                    ShiftKind::conditional_shift}) {
    ShiftScenario sc;
    sc.kind = kind;
    sc.magnitude = 0.0;
    sc.patient_sigma = 0.0;
    sc.n_features = 5;
    sc.seed = 9;
    const auto tables = enumerate_exact(sc);
    REQUIRE(tables[0].p == tables[1].p);
  }
}

TEST_CASE("enumerated tables match empirical frequencies") {
  ShiftScenario sc;
  sc.kind = ShiftKind::conditional_shift;
  sc.magnitude = 1.0;
  sc.patient_sigma = 0.0;
  sc.n_features = 3;
  sc.n_patients = 30000;
  sc.samples_per_patient = 1;
  sc.prevalence = 0.2;
  sc.seed = 13;
  const auto tables = enumerate_exact(sc);
  const auto cohort = generate(sc);

  // empirical P(y=1, x=101) at period 1 vs the table
  double count = 0, n = 0;
  for (const auto& p : cohort.data.panels())
    for (const auto& s : p.samples) {
      if (s.period != 1) continue;
      n += 1;
      if (feature_value(s.features, 0) == 1 && feature_value(s.features, 1) == 0 &&
          feature_value(s.features, 2) == 1 && s.outcome == 1)
        count += 1;
    }
  const auto& t = tables[1];
  const double expect = t.p[t.index(std::array<std::uint32_t, 4>{1, 0, 1, 1})];
  REQUIRE(count / n == Catch::Approx(expect).margin(0.01));
}

TEST_CASE("domain-shift feature theorem holds exactly on the enumerated instance") {
  const auto tables = domain_shift_feature_instance();
  const auto& prev = tables[0];
  const auto& curr = tables[1];

  // conditions: P(U), P(Y|U), P(X'|U) period-free; P(X|U) shifted
  for (std::uint32_t u = 0; u < 2; ++u) {
    REQUIRE(std::abs(prev.marginal({"u"}).p[u] - curr.marginal({"u"}).p[u]) <= 1e-12);
    REQUIRE(std::abs(prev.conditional("y", 1, {{"u", u}}) -
                     curr.conditional("y", 1, {{"u", u}})) <= 1e-12);
    REQUIRE(std::abs(prev.conditional("xp", 1, {{"u", u}}) -
                     curr.conditional("xp", 1, {{"u", u}})) <= 1e-12);
  }
  REQUIRE(prev.conditional("x", 1, {{"u", 0}}) != curr.conditional("x", 1, {{"u", 0}}));

  // P_t(Y|X') = P_{t-1}(Y|X') exactly; P_t(Y|X) differs
  for (std::uint32_t v = 0; v < 2; ++v) {
    REQUIRE(std::abs(prev.conditional("y", 1, {{"xp", v}}) -
                     curr.conditional("y", 1, {{"xp", v}})) <= 1e-12);
  }
  REQUIRE(std::abs(prev.conditional("y", 1, {{"x", 1}}) -
                   curr.conditional("y", 1, {{"x", 1}})) > 1e-3);
}

TEST_CASE("re-calibration identity holds exactly on the enumerated instance") {
  const auto tables = recalibration_instance();
  const auto& prev = tables[0];
  const auto& curr = tables[1];

  // conditions 1-4
  REQUIRE(std::abs(prev.marginal({"y"}).p[1] - curr.marginal({"y"}).p[1]) <= 1e-12);
  for (std::uint32_t b = 0; b < 2; ++b)
    for (std::uint32_t c = 0; c < 2; ++c) {
      const auto x = prev.marginal({"b", "c"});
      const auto x2 = curr.marginal({"b", "c"});
      REQUIRE(std::abs(x.p[x.index(std::array<std::uint32_t, 2>{b, c})] -
                       x2.p[x2.index(std::array<std::uint32_t, 2>{b, c})]) <= 1e-12);
    }
  for (std::uint32_t b = 0; b < 2; ++b)
    REQUIRE(std::abs(prev.conditional("y", 1, {{"b", b}}) -
                     curr.conditional("y", 1, {{"b", b}})) <= 1e-12);

  // P_t(Y|B,C) = P_{t-1}(Y|B,C) * ratio(C) for all four combinations
  for (std::uint32_t c = 0; c < 2; ++c) {
    const double ratio = curr.conditional("y", 1, {{"c", c}}) /
                         prev.conditional("y", 1, {{"c", c}});
    for (std::uint32_t b = 0; b < 2; ++b) {
      const double lhs = curr.conditional("y", 1, {{"b", b}, {"c", c}});
      const double rhs = prev.conditional("y", 1, {{"b", b}, {"c", c}}) * ratio;
      REQUIRE(std::abs(lhs - rhs) <= 1e-12);
    }
  }
}
