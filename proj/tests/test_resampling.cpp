#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "support.hpp"
#include "tshift/discovery.hpp"
#include "tshift/resampling.hpp"
#include "tshift/rng.hpp"
#include "tshift/synthetic.hpp"

using namespace tshift;
using testsupport::fv;
using testsupport::make_sample;

namespace {

// Controlled-score models as in the discovery tests: feature 0 carries the
// previous model's logit, feature 1 the current model's.
struct ScorePair {
  OutcomeModel prev, curr;
  ScorePair() {
    prev.kind = curr.kind = ModelKind::logistic_regression;
    prev.dim = curr.dim = 2;
    prev.lr.weights = {1.0, 0.0};
    curr.lr.weights = {0.0, 1.0};
  }
};

struct Cohort {
  std::vector<std::vector<Sample>> storage;  // per patient
  std::vector<PatientSamples> groups;

  void add_patient(std::vector<Sample> samples) { storage.push_back(std::move(samples)); }
  std::span<const PatientSamples> view() {
    groups.clear();
    for (std::uint32_t p = 0; p < storage.size(); ++p) {
      PatientSamples g;
      g.patient = p;
      for (const auto& s : storage[p]) g.samples.push_back(&s);
      groups.push_back(std::move(g));
    }
    return groups;
  }
};

Sample scored_sample(Rng& rng, double quality, int y) {
  // previous model: pure noise; current model: informative with `quality`
  const double lp = rng.normal(0.0, 1.0);
  const double lc = quality * (y ? 1.0 : -1.0) + rng.normal(0.0, 1.0);
  return make_sample(1, 1, y, fv({{0, lp}, {1, lc}}));
}

Cohort random_cohort(std::uint64_t seed, int n_patients, double quality, double outcome_rate) {
  Rng rng(seed);
  Cohort c;
  for (int p = 0; p < n_patients; ++p) {
    std::vector<Sample> samples;
    const int k = 1 + static_cast<int>(rng.uniform_below(3));
    for (int j = 0; j < k; ++j)
      samples.push_back(scored_sample(rng, quality, rng.bernoulli(outcome_rate) ? 1 : 0));
    c.add_patient(std::move(samples));
  }
  return c;
}

/// Straightforward mirror of the documented resampling protocol, evaluating
/// AUCs with rank_auc on materialized resamples. Bit-identical agreement with
/// the production path checks the draw order, stratification, block carrying
/// and the bucket-AUC evaluation at once.
std::vector<double> oracle_bootstrap_two_models(std::span<const PatientSamples> groups,
                                                const OutcomeModel& f_prev,
                                                const OutcomeModel& f_curr,
                                                const SubpopModel& subpop, int B,
                                                std::uint64_t seed) {
  std::vector<std::uint32_t> p0, p1;
  for (std::uint32_t g = 0; g < groups.size(); ++g) {
    bool has = false;
    for (const auto* s : groups[g].samples) has |= s->outcome != 0;
    (has ? p1 : p0).push_back(g);
  }
  std::vector<double> stats;
  for (int b = 0; b < B; ++b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    std::vector<double> sp, scu;
    std::vector<std::uint8_t> lab;
    auto draw = [&](const std::vector<std::uint32_t>& stratum) {
      for (std::size_t i = 0; i < stratum.size(); ++i) {
        const auto g = stratum[rng.uniform_below(stratum.size())];
        for (const auto* s : groups[g].samples) {
          if (!subpop.member(*s)) continue;
          sp.push_back(predict_proba(f_prev, *s));
          scu.push_back(predict_proba(f_curr, *s));
          lab.push_back(s->outcome);
        }
      }
    };
    draw(p0);
    draw(p1);
    const auto ap = rank_auc(sp, lab);
    const auto ac = rank_auc(scu, lab);
    if (!ap || !ac) continue;
    stats.push_back(ac->value - ap->value);
  }
  return stats;
}

}  // namespace

TEST_CASE("identical models give a zero point estimate and a [0,0] interval") {
  ScorePair m;
  m.curr = m.prev;
  auto cohort = random_cohort(3, 80, 1.0, 0.3);
  const auto ci = bootstrap_ci_two_models(cohort.view(), m.prev, m.curr, SubpopModel::entire(),
                                          0.90, 200, 5);
  REQUIRE(ci.point_estimate == 0.0);
  REQUIRE(ci.lower == 0.0);
  REQUIRE(ci.upper == 0.0);
}

TEST_CASE("the basic interval folds quantiles around the point estimate") {
  // a = 0.05 with 5th/95th bootstrap percentiles at 0.01/0.09 gives
  // [2*0.05-0.09, 2*0.05-0.01] = [0.01, 0.09]. With 21 sorted values the
  // quantiles land exactly on indices 1 and 19.
  std::vector<double> stats(21);
  stats[0] = 0.005;
  for (int i = 1; i <= 19; ++i) stats[static_cast<std::size_t>(i)] = 0.01 + 0.08 * (i - 1) / 18.0;
  stats[20] = 0.095;
  const auto ci = tshift::detail::basic_interval(0.05, stats, 0.90, 21, 0);
  REQUIRE(std::abs(ci.lower - 0.01) < 1e-12);
  REQUIRE(std::abs(ci.upper - 0.09) < 1e-12);
}

TEST_CASE("bootstrap stats match an independent mirror of the protocol") {
  ScorePair m;
  auto cohort = random_cohort(11, 60, 0.8, 0.25);
  std::vector<double> stats;
  const auto ci = bootstrap_ci_two_models(cohort.view(), m.prev, m.curr, SubpopModel::entire(),
                                          0.90, 100, 42, &stats);
  const auto expect = oracle_bootstrap_two_models(cohort.view(), m.prev, m.curr,
                                                  SubpopModel::entire(), 100, 42);
  REQUIRE(stats.size() == expect.size());
  for (std::size_t i = 0; i < stats.size(); ++i) REQUIRE(stats[i] == expect[i]);
  REQUIRE(ci.iterations == 100);
}

TEST_CASE("joint two-dataset bootstrap carries patients across periods") {
  ScorePair m;
  Rng rng(7);
  Cohort prev_cohort, curr_cohort;
  // 40 patients in both periods, 10 only in the current period
  for (int p = 0; p < 40; ++p) {
    std::vector<Sample> a{scored_sample(rng, 1.0, rng.bernoulli(0.4) ? 1 : 0),
                          scored_sample(rng, 1.0, 0)};
    std::vector<Sample> b{scored_sample(rng, 1.0, rng.bernoulli(0.4) ? 1 : 0)};
    prev_cohort.add_patient(std::move(a));
    curr_cohort.add_patient(std::move(b));
  }
  auto prev_view = prev_cohort.view();
  auto curr_groups = std::vector<PatientSamples>(curr_cohort.view().begin(),
                                                 curr_cohort.view().end());
  std::vector<std::vector<Sample>> extra;
  for (int p = 0; p < 10; ++p) {
    extra.push_back({scored_sample(rng, 1.0, rng.bernoulli(0.4) ? 1 : 0),
                     scored_sample(rng, 1.0, 0)});
  }
  for (int p = 0; p < 10; ++p) {
    PatientSamples g;
    g.patient = static_cast<std::uint32_t>(40 + p);
    for (const auto& s : extra[static_cast<std::size_t>(p)]) g.samples.push_back(&s);
    curr_groups.push_back(std::move(g));
  }

  const auto ci = bootstrap_ci_one_model_two_datasets(prev_view, curr_groups, m.prev,
                                                      SubpopModel::entire(), 0.90, 200, 9);
  REQUIRE(ci.iterations == 200);
  REQUIRE(std::isfinite(ci.lower));
  REQUIRE(ci.lower <= ci.upper);
}

TEST_CASE("identical periods give a zero estimate and an interval containing zero") {
  ScorePair m;
  auto cohort = random_cohort(21, 70, 1.0, 0.3);
  const auto view = cohort.view();
  const auto ci = bootstrap_ci_one_model_two_datasets(view, view, m.prev, SubpopModel::entire(),
                                                      0.90, 300, 13);
  REQUIRE(ci.point_estimate == 0.0);
  REQUIRE(ci.lower <= 0.0);
  REQUIRE(ci.upper >= 0.0);
}

namespace {

SubpopModel region_on_feature(std::uint32_t feature, std::uint32_t dim) {
  DecisionTree t;
  DecisionTree::Node root;
  root.feature = static_cast<std::int32_t>(feature);
  root.threshold = 0.5;
  root.left = 1;
  root.right = 2;
  DecisionTree::Node lo, hi;
  lo.score = 0.0;
  hi.score = 1.0;
  t.nodes = {root, lo, hi};
  return SubpopModel::from_tree(std::move(t), dim);
}

}  // namespace

TEST_CASE("degenerate observed restriction is an error") {
  ScorePair m;
  Cohort c;
  Rng rng(3);
  for (int p = 0; p < 20; ++p) c.add_patient({scored_sample(rng, 1.0, p < 3 ? 1 : 0)});
  // feature 2 never set: the restricted set is empty
  REQUIRE_THROWS_AS(bootstrap_ci_two_models(c.view(), m.prev, m.curr, region_on_feature(2, 3),
                                            0.9, 100, 1),
                    DataError);
}

TEST_CASE("frequent degenerate resamples abort as unstable") {
  ScorePair m;
  Cohort c;
  Rng rng(9);
  // P1: one patient whose positive sample is in the region. P0: one patient
  // with a region negative and one with no region samples at all; a resample
  // drawing the latter twice has no region negatives, which happens for
  // roughly a quarter of resamples.
  Sample pos = scored_sample(rng, 1.0, 1);
  pos.features.emplace_back(2, 1.0);
  std::sort(pos.features.begin(), pos.features.end());
  Sample neg_in = scored_sample(rng, 1.0, 0);
  neg_in.features.emplace_back(2, 1.0);
  std::sort(neg_in.features.begin(), neg_in.features.end());
  Sample neg_out = scored_sample(rng, 1.0, 0);
  c.add_patient({pos});
  c.add_patient({neg_in});
  c.add_patient({neg_out});
  REQUIRE_THROWS_WITH(bootstrap_ci_two_models(c.view(), m.prev, m.curr, region_on_feature(2, 3),
                                              0.9, 400, 1),
                      Catch::Matchers::ContainsSubstring("unstable bootstrap"));
}

TEST_CASE("permutation test with identical models yields the minimal p-value") {
  ScorePair m;
  m.curr = m.prev;
  auto cohort = random_cohort(31, 100, 1.0, 0.3);
  const auto res = permutation_test_two_models(cohort.view(), m.prev, m.curr,
                                               SubpopModel::entire(), 2000, 4);
  REQUIRE(res.observed_diff == 0.0);
  REQUIRE(res.exceed_count == 0);  // permuted diffs are exactly 0, never > 0
  REQUIRE(res.p_value == 1.0 / 2001.0);
}

TEST_CASE("p-value formula and bounds hold") {
  ScorePair m;
  auto cohort = random_cohort(41, 90, 0.5, 0.3);
  const auto res = permutation_test_two_models(cohort.view(), m.prev, m.curr,
                                               SubpopModel::entire(), 500, 6);
  REQUIRE(res.p_value == (1.0 + res.exceed_count) / (1.0 + res.permutations));
  REQUIRE(res.p_value >= 1.0 / 501.0);
  REQUIRE(res.p_value <= 1.0);
}

TEST_CASE("permutation keeps patient blocks together and matches a mirror") {
  ScorePair m;
  auto cohort = random_cohort(51, 50, 0.7, 0.3);
  const auto view = cohort.view();
  std::vector<double> stats;
  const auto res = permutation_test_two_models(view, m.prev, m.curr, SubpopModel::entire(), 50,
                                               77, &stats);

  // mirror: materialize rank vectors, swap per patient with the same stream
  const auto ev = tshift::detail::build_eval_set(view, &m.prev, &m.curr, SubpopModel::entire());
  const auto rp = doubled_average_ranks(ev.score_prev);
  const auto rc = doubled_average_ranks(ev.score_curr);
  int mirror_m = 0;
  for (int b = 0; b < 50; ++b) {
    Rng rng(derive_seed(77, static_cast<std::uint64_t>(b)));
    std::vector<double> r_scores, s_scores;
    std::vector<std::uint8_t> labels;
    for (std::size_t p = 0; p < ev.n_patients(); ++p) {
      const bool swap = rng.bernoulli(0.5);
      for (std::uint32_t k = ev.offsets[p]; k < ev.offsets[p + 1]; ++k) {
        r_scores.push_back(swap ? rc[k] : rp[k]);
        s_scores.push_back(swap ? rp[k] : rc[k]);
        labels.push_back(ev.label[k]);
      }
    }
    const double stat = rank_auc(r_scores, labels)->value - rank_auc(s_scores, labels)->value;
    REQUIRE(stat == stats[static_cast<std::size_t>(b)]);
    if (stat > res.observed_diff) ++mirror_m;
  }
  REQUIRE(mirror_m == res.exceed_count);
}

TEST_CASE("two-dataset permutation swaps whole patients between periods") {
  ScorePair m;
  Rng rng(61);
  Cohort prev_cohort, curr_cohort;
  for (int p = 0; p < 60; ++p) {
    prev_cohort.add_patient({scored_sample(rng, 1.2, rng.bernoulli(0.35) ? 1 : 0),
                             scored_sample(rng, 1.2, 0)});
    curr_cohort.add_patient({scored_sample(rng, 0.4, rng.bernoulli(0.35) ? 1 : 0)});
  }
  std::vector<double> stats;
  const auto res = permutation_test_one_model_two_datasets(
      prev_cohort.view(), curr_cohort.view(), m.curr, SubpopModel::entire(), 400, 19, &stats);
  REQUIRE(res.p_value == (1.0 + res.exceed_count) / 401.0);
  REQUIRE(stats.size() == 400);

  // determinism across calls
  const auto res2 = permutation_test_one_model_two_datasets(
      prev_cohort.view(), curr_cohort.view(), m.curr, SubpopModel::entire(), 400, 19);
  REQUIRE(res2.exceed_count == res.exceed_count);
}

TEST_CASE("equal seeds reproduce intervals exactly") {
  ScorePair m;
  auto cohort = random_cohort(71, 80, 0.9, 0.3);
  const auto view = cohort.view();
  const auto a = bootstrap_ci_two_models(view, m.prev, m.curr, SubpopModel::entire(), 0.9, 300, 5);
  const auto b = bootstrap_ci_two_models(view, m.prev, m.curr, SubpopModel::entire(), 0.9, 300, 5);
  const auto c = bootstrap_ci_two_models(view, m.prev, m.curr, SubpopModel::entire(), 0.9, 300, 6);
  REQUIRE(a.lower == b.lower);
  REQUIRE(a.upper == b.upper);
  REQUIRE((a.lower != c.lower || a.upper != c.upper));
}
