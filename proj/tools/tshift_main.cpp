// tshift: detect temporal dataset shift in patient-clustered panel data by
// comparing freshly trained against historical outcome models.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tshift/analysis.hpp"
#include "tshift/config.hpp"
#include "tshift/discovery.hpp"
#include "tshift/panel.hpp"
#include "tshift/serialize.hpp"
#include "tshift/shift_test.hpp"
#include "tshift/synthetic.hpp"

namespace {

using namespace tshift;

struct ConfigArgs {
  std::string config_path;
  std::optional<double> alpha, gamma, c_thr, confidence, share_lower, share_upper;
  std::optional<std::size_t> n_thr;
  std::optional<int> b_bootstrap, b_permutation;
  std::optional<std::string> model_kind;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "Config file (JSON); flags override its values");
    app->add_option("--alpha", alpha, "False discovery rate (default 0.05)");
    app->add_option("--gamma", gamma, "Clinical significance threshold (default 0.01)");
    app->add_option("--n-thr", n_thr, "Minimum patients with outcome (default 25)");
    app->add_option("--c-thr", c_thr, "Model fit AUC floor (default 0.5)");
    app->add_option("--confidence", confidence, "Bootstrap confidence (default 0.90)");
    app->add_option("--b-bootstrap", b_bootstrap, "Bootstrap iterations (default 2000)");
    app->add_option("--b-permutation", b_permutation, "Permutations (default 2000)");
    app->add_option("--share-lower", share_lower, "Region share lower bound (default 0.01)");
    app->add_option("--share-upper", share_upper, "Region share upper bound (default 0.75)");
    app->add_option("--model-kind", model_kind,
                    "Outcome model: logistic_regression or decision_tree");
    app->add_option("--seed", seed, "Master seed; all randomness derives from it");
  }

  ScanConfig resolve() const {
    ScanConfig cfg;
    if (!config_path.empty()) cfg = scan_config_from_json(read_json_file(config_path));
    if (alpha) cfg.alpha = *alpha;
    if (gamma) cfg.gamma = *gamma;
    if (n_thr) cfg.n_thr = *n_thr;
    if (c_thr) cfg.c_thr = *c_thr;
    if (confidence) cfg.confidence = *confidence;
    if (b_bootstrap) cfg.b_bootstrap = *b_bootstrap;
    if (b_permutation) cfg.b_permutation = *b_permutation;
    if (share_lower) cfg.share_lower = *share_lower;
    if (share_upper) cfg.share_upper = *share_upper;
    if (model_kind) cfg.model_kind = model_kind_from_string(*model_kind);
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
  }
};

PanelDataset load_with_splits(const std::string& data_path, const std::string& splits_path,
                              const std::string& schema_path) {
  IngestSchema schema;
  if (!schema_path.empty()) {
    const auto j = read_json_file(schema_path);
    if (j.contains("vocabulary"))
      schema.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    if (j.contains("feature_window")) schema.feature_window = j.at("feature_window");
  }
  auto ds = load_dataset(data_path, schema);
  if (!splits_path.empty()) ds = load_splits(ds, splits_path);
  return ds;
}

nlohmann::json task_row(const TaskResult& r) {
  // flat row for the tabular export
  nlohmann::json row{{"outcome_id", r.key.outcome_id},
                     {"period", r.key.period},
                     {"scope", to_string(r.key.scope)},
                     {"status", r.status == TaskStatus::tested ? "tested" : "gated_out"},
                     {"gate_reason", r.gate_reason},
                     {"p", r.p_value ? nlohmann::json(*r.p_value) : nlohmann::json()},
                     {"a", r.metric_diff ? nlohmann::json(*r.metric_diff) : nlohmann::json()}};
  return row;
}

void write_task_table(const std::vector<TaskResult>& results,
                      const std::vector<TaskKey>& selected, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open output file: " + path);
  out << "outcome_id\tperiod\tscope\tstatus\tgate_reason\tp\ta\tselected\n";
  std::set<TaskKey> sel(selected.begin(), selected.end());
  for (const auto& r : results) {
    out << r.key.outcome_id << '\t' << r.key.period << '\t' << to_string(r.key.scope) << '\t'
        << (r.status == TaskStatus::tested ? "tested" : "gated_out") << '\t'
        << (r.gate_reason.empty() ? "-" : r.gate_reason) << '\t';
    if (r.p_value)
      out << *r.p_value;
    else
      out << "-";
    out << '\t';
    if (r.metric_diff)
      out << *r.metric_diff;
    else
      out << "-";
    out << '\t' << (sel.count(r.key) ? 1 : 0) << '\n';
  }
}

int run(int argc, char** argv) {
  CLI::App app{"temporal dataset shift detection for patient panel data"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "Generate a synthetic two-period cohort");
  std::string synth_scenario, synth_out, synth_truth;
  std::optional<std::uint64_t> synth_seed;
  synth->add_option("--scenario", synth_scenario, "Scenario JSON")->required();
  synth->add_option("--out", synth_out, "Output dataset (JSON lines)")->required();
  synth->add_option("--truth", synth_truth, "Ground-truth sidecar file");
  synth->add_option("--seed", synth_seed, "Override the scenario seed");

  // ---- split ----
  auto* split = app.add_subcommand("split", "Stratified patient-level split");
  std::string split_data, split_out, split_schema;
  double f_train = 0.7, f_val = 0.15, f_test = 0.15;
  std::uint64_t split_seed = 0;
  split->add_option("--data", split_data)->required();
  split->add_option("--out", split_out, "Sidecar split file")->required();
  split->add_option("--schema", split_schema, "Ingestion schema JSON");
  split->add_option("--train", f_train);
  split->add_option("--validation", f_val);
  split->add_option("--test", f_test);
  split->add_option("--seed", split_seed);

  // ---- fit ----
  auto* fit = app.add_subcommand("fit", "Fit one per-period outcome model");
  std::string fit_data, fit_splits, fit_schema, fit_out;
  int fit_period = 0;
  ConfigArgs fit_cfg;
  fit->add_option("--data", fit_data)->required();
  fit->add_option("--splits", fit_splits)->required();
  fit->add_option("--schema", fit_schema);
  fit->add_option("--period", fit_period)->required();
  fit->add_option("--out", fit_out, "Model file")->required();
  fit_cfg.attach(fit);

  // ---- test / test-baseline ----
  auto* test = app.add_subcommand("test", "Test one task for temporal shift");
  auto* test_base = app.add_subcommand("test-baseline", "Deterioration baseline test");
  std::string t_data, t_splits, t_schema, t_out, t_stats, t_outcome = "outcome";
  int t_prev = 0, t_curr = 1;
  bool t_population = false;
  ConfigArgs t_cfg, tb_cfg;
  for (auto* cmd : {test, test_base}) {
    cmd->add_option("--data", t_data)->required();
    cmd->add_option("--splits", t_splits)->required();
    cmd->add_option("--schema", t_schema);
    cmd->add_option("--period-prev", t_prev)->required();
    cmd->add_option("--period-curr", t_curr)->required();
    cmd->add_option("--out", t_out, "Result JSON")->required();
    cmd->add_option("--outcome-id", t_outcome);
  }
  test->add_flag("--population", t_population,
                 "Evaluate the entire population instead of discovering a sub-population");
  test->add_option("--dump-stats", t_stats, "Audit dump of the permutation statistic vector");
  t_cfg.attach(test);
  tb_cfg.attach(test_base);

  // ---- scan ----
  auto* scan = app.add_subcommand("scan", "Scan outcomes x periods for temporal shift");
  std::string scan_dir, scan_out, scan_table;
  int scan_workers = 1;
  ConfigArgs scan_cfg;
  scan->add_option("--data-dir", scan_dir,
                   "Directory of <outcome>.jsonl with <outcome>.splits.jsonl sidecars")
      ->required();
  scan->add_option("--out", scan_out, "Scan report JSON")->required();
  scan->add_option("--table", scan_table, "Flat tabular export (TSV)");
  scan->add_option("--workers", scan_workers, "Worker threads; output independent of this");
  scan_cfg.attach(scan);

  // ---- analyze ----
  auto* analyze = app.add_subcommand("analyze", "Univariate shift scan and sign-flip candidates");
  std::string a_data, a_splits, a_schema, a_univ, a_flips, a_weights, a_recal_table, a_recal_out,
      a_model;
  int a_prev = 0, a_curr = 1;
  double a_alpha = 0.05;
  analyze->add_option("--data", a_data)->required();
  analyze->add_option("--splits", a_splits)->required();
  analyze->add_option("--schema", a_schema);
  analyze->add_option("--period-prev", a_prev)->required();
  analyze->add_option("--period-curr", a_curr)->required();
  analyze->add_option("--alpha", a_alpha, "FDR level for the univariate scan");
  analyze->add_option("--univariate", a_univ, "Write univariate covariate-shift findings (TSV)");
  analyze->add_option("--sign-flips", a_flips, "Write coefficient sign-flip candidates (JSON)");
  analyze->add_option("--importance", a_weights,
                      "Write clipped importance weights for previous-period samples (TSV)");
  analyze->add_option("--recalibrate", a_recal_table,
                      "Stratum-ratio table JSON; apply to --model over current-period samples");
  analyze->add_option("--model", a_model, "Model file for --recalibrate");
  analyze->add_option("--recalibrated-out", a_recal_out, "Output for --recalibrate (TSV)");

  // ---- report ----
  auto* report = app.add_subcommand("report", "Export plot data from results or datasets");
  std::string r_result, r_out, r_data, r_splits, r_schema;
  bool r_auc_series = false, r_loss_hist = false;
  int r_bins = 40;
  ConfigArgs r_cfg;
  report->add_option("--result", r_result, "Scan or test result JSON to tabulate");
  report->add_option("--out", r_out)->required();
  report->add_flag("--auc-series", r_auc_series,
                   "Per-period AUC of current and previous models with bootstrap SEs");
  report->add_flag("--loss-hist", r_loss_hist,
                   "Loss-difference histogram with a fold-vs-fold control");
  report->add_option("--bins", r_bins, "Histogram bins for --loss-hist");
  report->add_option("--data", r_data);
  report->add_option("--splits", r_splits);
  report->add_option("--schema", r_schema);
  r_cfg.attach(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage error
  }

  if (synth->parsed()) {
    auto sc = scenario_from_json(read_json_file(synth_scenario));
    if (synth_seed) sc.seed = *synth_seed;
    const auto cohort = generate(sc);
    store_dataset(cohort.data, synth_out);
    if (!synth_truth.empty()) write_json_file(to_json(cohort.truth), synth_truth);
    std::printf("wrote %d patients to %s\n", sc.n_patients, synth_out.c_str());
    return 0;
  }

  if (split->parsed()) {
    auto ds = load_with_splits(split_data, "", split_schema);
    ds = split_patients_stratified(ds, {f_train, f_val, f_test}, split_seed);
    store_splits(ds, split_out);
    std::printf("wrote split assignment for %zu patients to %s\n", ds.n_patients(),
                split_out.c_str());
    return 0;
  }

  if (fit->parsed()) {
    const auto cfg = fit_cfg.resolve();
    const auto ds = load_with_splits(fit_data, fit_splits, fit_schema);
    const auto train = flatten(collect_period(ds, fit_period, DataSplit::train));
    const auto validation = flatten(collect_period(ds, fit_period, DataSplit::validation));
    const auto model = fit_outcome_model(train, validation, cfg.model_kind, ds.vocab(),
                                         fit_period, cfg.seed);
    write_json_file(to_json(model), fit_out);
    std::printf("validation AUC %.4f%s\n", model.validation_auc,
                model.convergence_warning ? " (convergence warning)" : "");
    return 0;
  }

  if (test->parsed() || test_base->parsed()) {
    const auto cfg = (test->parsed() ? t_cfg : tb_cfg).resolve();
    const auto ds = load_with_splits(t_data, t_splits, t_schema);
    TaskResult result;
    if (test->parsed()) {
      std::optional<SubpopModel> predefined;
      if (t_population) predefined = SubpopModel::entire();
      result = test_shift(ds, t_prev, t_curr, predefined, cfg, cfg.seed, nullptr, nullptr,
                          t_outcome);
      if (!t_stats.empty() && result.status == TaskStatus::tested) {
        // rerun the final permutation with an audit dump
        std::vector<double> stats;
        const auto views = collect_period(ds, t_curr, DataSplit::test);
        const auto f_prev = tshift::detail::fit_period_model(ds, t_prev, cfg, derive_seed(cfg.seed, 0xf0));
        const auto f_curr = tshift::detail::fit_period_model(ds, t_curr, cfg, derive_seed(cfg.seed, 0xf1));
        permutation_test_two_models(views, f_prev, f_curr, *result.subpop, cfg.b_permutation,
                                    derive_seed(cfg.seed, 0xa9), &stats);
        write_json_file(nlohmann::json{{"permutation_stats", stats}}, t_stats);
      }
    } else {
      result = test_shift_baseline(ds, t_prev, t_curr, cfg, cfg.seed, nullptr, t_outcome);
    }
    nlohmann::json out = to_json(result, &ds.vocab());
    out["config"] = to_json(cfg);
    write_json_file(out, t_out);
    if (result.status == TaskStatus::tested)
      std::printf("tested: p=%.6g a=%.6g\n", *result.p_value, *result.metric_diff);
    else
      std::printf("gated_out at %s\n", result.gate_reason.c_str());
    return 0;
  }

  if (scan->parsed()) {
    const auto cfg = scan_cfg.resolve();
    std::map<std::string, PanelDataset> datasets;
    for (const auto& entry : std::filesystem::directory_iterator(scan_dir)) {
      const auto path = entry.path();
      if (path.extension() != ".jsonl") continue;
      const auto stem = path.stem().string();
      if (stem.size() > 7 && stem.substr(stem.size() - 7) == ".splits") continue;
      const auto splits_path = path.parent_path() / (stem + ".splits.jsonl");
      if (!std::filesystem::exists(splits_path))
        throw DataError("missing split sidecar for " + path.string());
      datasets[stem] = load_with_splits(path.string(), splits_path.string(), "");
    }
    if (datasets.empty()) throw DataError("no <outcome>.jsonl datasets in " + scan_dir);
    const auto report_out = scan_shift(datasets, cfg, scan_workers);
    const Vocabulary* vocab = &datasets.begin()->second.vocab();
    write_json_file(to_json(report_out, vocab), scan_out);
    if (!scan_table.empty()) write_task_table(report_out.results, report_out.selected, scan_table);
    std::printf("%zu tasks, %zu selected\n", report_out.results.size(),
                report_out.selected.size());
    return 0;
  }

  if (analyze->parsed()) {
    const auto ds = load_with_splits(a_data, a_splits, a_schema);
    if (!a_univ.empty()) {
      const auto findings = univariate_shift_scan(ds, a_prev, a_curr, a_alpha);
      std::ofstream out(a_univ);
      if (!out) throw DataError("cannot open output file: " + a_univ);
      out << "feature\tfreq_prev\tfreq_curr\tstatistic\tp\texact_test\tbh_accepted\n";
      for (const auto& f : findings)
        out << ds.vocab().name(f.feature) << '\t' << f.freq_prev << '\t' << f.freq_curr << '\t'
            << f.statistic << '\t' << f.p_value << '\t' << f.exact_test << '\t' << f.bh_accepted
            << '\n';
      std::printf("univariate scan: %zu findings\n", findings.size());
    }
    if (!a_flips.empty()) {
      std::vector<CoefficientInterval> intervals;
      std::vector<std::string> warnings;
      const auto flips =
          coefficient_sign_flip_candidates(ds, a_prev, a_curr, {}, &intervals, &warnings);
      nlohmann::json j;
      j["candidates"] = nlohmann::json::array();
      for (const auto& c : flips)
        j["candidates"].push_back(
            {{"column", c.column},
             {"prev", {{"estimate", c.prev.estimate}, {"lower", c.prev.lower}, {"upper", c.prev.upper}}},
             {"curr", {{"estimate", c.curr.estimate}, {"lower", c.curr.lower}, {"upper", c.curr.upper}}}});
      j["intervals"] = nlohmann::json::array();
      for (const auto& ci : intervals)
        j["intervals"].push_back({{"column", ci.column},
                                  {"period", ci.period},
                                  {"estimate", ci.estimate},
                                  {"lower", ci.lower},
                                  {"upper", ci.upper}});
      j["warnings"] = warnings;
      write_json_file(j, a_flips);
      std::printf("sign-flip candidates: %zu\n", flips.size());
    }
    if (!a_weights.empty()) {
      // period classifier on training data, weights for previous-period samples
      const auto train_prev = flatten(collect_period(ds, a_prev, DataSplit::train));
      const auto train_curr = flatten(collect_period(ds, a_curr, DataSplit::train));
      std::vector<TrainRow> rows;
      for (const auto* s : train_prev) rows.push_back({&s->features, 0, 1.0});
      for (const auto* s : train_curr) rows.push_back({&s->features, 1, 1.0});
      const auto clf = fit_logistic_l2(rows, ds.vocab().size(), 1e-3);
      std::vector<double> scores;
      for (const auto* s : train_prev)
        scores.push_back(std::clamp(sigmoid(linear_score(clf, s->features)), 1e-9, 1 - 1e-9));
      const auto w = importance_weights(scores, static_cast<double>(train_prev.size()),
                                        static_cast<double>(train_curr.size()));
      std::ofstream out(a_weights);
      if (!out) throw DataError("cannot open output file: " + a_weights);
      out << "sample\tscore\tweight\n";
      for (std::size_t i = 0; i < w.size(); ++i)
        out << i << '\t' << scores[i] << '\t' << w[i] << '\n';
      std::printf("importance weights for %zu samples\n", w.size());
    }
    if (!a_recal_table.empty()) {
      if (a_model.empty() || a_recal_out.empty())
        throw DataError("--recalibrate requires --model and --recalibrated-out");
      const auto model = outcome_model_from_json(read_json_file(a_model));
      const auto tj = read_json_file(a_recal_table);
      RecalibrationTable table;
      for (const auto& name : tj.at("stratum_features")) {
        const auto idx = ds.vocab().find(name.get<std::string>());
        if (!idx) throw DataError("unknown stratum feature: " + name.get<std::string>());
        table.stratum_features.push_back(*idx);
      }
      for (const auto& row : tj.at("ratios"))
        table.ratios[row.at("stratum").get<std::vector<std::uint8_t>>()] =
            row.at("ratio").get<double>();
      table.validate();
      std::ofstream out(a_recal_out);
      if (!out) throw DataError("cannot open output file: " + a_recal_out);
      out << "sample\tp_original\tp_recalibrated\n";
      std::size_t i = 0;
      for (const auto* s : flatten(collect_period(ds, a_curr))) {
        const double p = predict_proba(model, *s);
        out << i++ << '\t' << p << '\t' << recalibrate_conditional(p, table, s->features) << '\n';
      }
      std::printf("recalibrated %zu samples\n", i);
    }
    return 0;
  }

  if (report->parsed()) {
    if (r_auc_series || r_loss_hist) {
      const auto cfg = r_cfg.resolve();
      const auto ds = load_with_splits(r_data, r_splits, r_schema);
      const auto periods = ds.periods();
      std::ofstream out(r_out);
      if (!out) throw DataError("cannot open output file: " + r_out);
      if (r_auc_series) {
        out << "period\tmodel_period\tauc\tbootstrap_se\n";
        std::map<int, OutcomeModel> models;
        for (int t : periods)
          models[t] = tshift::detail::fit_period_model(
              ds, t, cfg, derive_seed(cfg.seed, stable_hash("fit|" + std::to_string(t))));
        for (std::size_t i = 1; i < periods.size(); ++i) {
          const int t = periods[i];
          const auto test_groups = collect_period(ds, t, DataSplit::test);
          for (int model_t : {periods[i - 1], t}) {
            const auto [auc, se] = bootstrap_auc_se(
                test_groups, models.at(model_t), SubpopModel::entire(), cfg.b_bootstrap,
                derive_seed(cfg.seed, stable_hash("se|" + std::to_string(t) + "|" +
                                                  std::to_string(model_t))));
            out << t << '\t' << model_t << '\t' << auc.value << '\t' << se << '\n';
          }
        }
      } else {
        // loss-difference histogram for the last adjacent period pair plus a
        // fold-vs-fold control on the current period
        if (periods.size() < 2) throw DataError("loss histogram needs two periods");
        const int t_prev_p = periods[periods.size() - 2], t_curr_p = periods.back();
        const auto f_prev = tshift::detail::fit_period_model(ds, t_prev_p, cfg, derive_seed(cfg.seed, 1));
        const auto f_curr = tshift::detail::fit_period_model(ds, t_curr_p, cfg, derive_seed(cfg.seed, 2));
        auto train_curr = flatten(collect_period(ds, t_curr_p, DataSplit::train));

        // control: two models on folds of the current period
        std::vector<bool> fold_flag(ds.n_patients(), false);
        Rng fold_rng(derive_seed(cfg.seed, 3));
        for (std::size_t p = 0; p < ds.n_patients(); ++p) fold_flag[p] = fold_rng.bernoulli(0.5);
        std::vector<const Sample*> fold0, fold1;
        for (const auto& g : collect_period(ds, t_curr_p)) {
          for (const auto* s : g.samples)
            (fold_flag[g.patient] ? fold1 : fold0).push_back(s);
        }
        const auto half = fold0.size() / 2;
        std::vector<const Sample*> fold0_train(fold0.begin(), fold0.begin() + half);
        std::vector<const Sample*> fold0_val(fold0.begin() + half, fold0.end());
        const auto half1 = fold1.size() / 2;
        std::vector<const Sample*> fold1_train(fold1.begin(), fold1.begin() + half1);
        std::vector<const Sample*> fold1_val(fold1.begin() + half1, fold1.end());
        const auto m0 = fit_outcome_model(fold0_train, fold0_val, cfg.model_kind, ds.vocab(),
                                          t_curr_p, derive_seed(cfg.seed, 4));
        const auto m1 = fit_outcome_model(fold1_train, fold1_val, cfg.model_kind, ds.vocab(),
                                          t_curr_p, derive_seed(cfg.seed, 5));

        auto histogram = [&](auto&& loss_diff) {
          std::vector<double> diffs;
          for (const auto* s : train_curr) diffs.push_back(loss_diff(*s));
          double lo = *std::min_element(diffs.begin(), diffs.end());
          double hi = *std::max_element(diffs.begin(), diffs.end());
          if (lo == hi) hi = lo + 1e-9;
          std::vector<int> counts(static_cast<std::size_t>(r_bins), 0);
          for (double dv : diffs) {
            auto b = static_cast<std::size_t>((dv - lo) / (hi - lo) * r_bins);
            counts[std::min(b, counts.size() - 1)] += 1;
          }
          return std::tuple{lo, hi, counts};
        };
        const auto [lo_a, hi_a, shift_counts] = histogram([&](const Sample& s) {
          return cross_entropy(f_prev, s) - cross_entropy(f_curr, s);
        });
        const auto [lo_b, hi_b, control_counts] = histogram([&](const Sample& s) {
          return cross_entropy(m0, s) - cross_entropy(m1, s);
        });
        out << "series\tbin_lo\tbin_hi\tcount\n";
        for (int b = 0; b < r_bins; ++b)
          out << "shift\t" << lo_a + (hi_a - lo_a) * b / r_bins << '\t'
              << lo_a + (hi_a - lo_a) * (b + 1) / r_bins << '\t'
              << shift_counts[static_cast<std::size_t>(b)] << '\n';
        for (int b = 0; b < r_bins; ++b)
          out << "control\t" << lo_b + (hi_b - lo_b) * b / r_bins << '\t'
              << lo_b + (hi_b - lo_b) * (b + 1) / r_bins << '\t'
              << control_counts[static_cast<std::size_t>(b)] << '\n';
      }
      std::printf("wrote %s\n", r_out.c_str());
      return 0;
    }
    if (r_result.empty()) throw DataError("report needs --result or --auc-series/--loss-hist");
    const auto j = read_json_file(r_result);
    std::ofstream out(r_out);
    if (!out) throw DataError("cannot open output file: " + r_out);
    out << "outcome_id\tperiod\tscope\tstatus\tgate_reason\tp\ta\tselected\n";
    std::set<std::string> selected;
    if (j.contains("selected"))
      for (const auto& k : j.at("selected"))
        selected.insert(k.at("outcome_id").get<std::string>() + "|" +
                        std::to_string(k.at("period").get<int>()) + "|" +
                        k.at("scope").get<std::string>());
    auto emit = [&](const nlohmann::json& r) {
      const auto& key = r.at("key");
      const std::string id = key.at("outcome_id").get<std::string>() + "|" +
                             std::to_string(key.at("period").get<int>()) + "|" +
                             key.at("scope").get<std::string>();
      out << key.at("outcome_id").get<std::string>() << '\t' << key.at("period").get<int>()
          << '\t' << key.at("scope").get<std::string>() << '\t'
          << r.at("status").get<std::string>() << '\t' << r.value("gate_reason", "-") << '\t';
      if (r.contains("p"))
        out << r.at("p").get<double>();
      else
        out << '-';
      out << '\t';
      if (r.contains("a"))
        out << r.at("a").get<double>();
      else
        out << '-';
      out << '\t' << (selected.count(id) ? 1 : 0) << '\n';
    };
    if (j.contains("results"))
      for (const auto& r : j.at("results")) emit(r);
    else
      emit(j);
    std::printf("wrote %s\n", r_out.c_str());
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const tshift::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
