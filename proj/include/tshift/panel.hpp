#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "tshift/rng.hpp"

namespace tshift {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataSplit : std::uint8_t { train, validation, test };

inline const char* to_string(DataSplit s) {
  switch (s) {
    case DataSplit::train: return "train";
    case DataSplit::validation: return "validation";
    case DataSplit::test: return "test";
  }
  return "?";
}

inline DataSplit split_from_string(const std::string& s) {
  if (s == "train") return DataSplit::train;
  if (s == "validation") return DataSplit::validation;
  if (s == "test") return DataSplit::test;
  throw DataError("unknown split name: " + s);
}

/// Feature names <-> dense indices. Datasets share one vocabulary; sparse
/// feature vectors store indices into it.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::uint32_t i = 0; i < names_.size(); ++i) index_[names_[i]] = i;
    if (index_.size() != names_.size()) throw DataError("duplicate feature name in vocabulary");
  }

  std::uint32_t size() const { return static_cast<std::uint32_t>(names_.size()); }
  const std::string& name(std::uint32_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }

  std::optional<std::uint32_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool operator==(const Vocabulary& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Sparse feature vector, sorted by feature index. Absent index means 0.
using FeatureVec = std::vector<std::pair<std::uint32_t, double>>;

inline double feature_value(const FeatureVec& f, std::uint32_t idx) {
  auto it = std::lower_bound(f.begin(), f.end(), idx,
                             [](const auto& p, std::uint32_t i) { return p.first < i; });
  return (it != f.end() && it->first == idx) ? it->second : 0.0;
}

struct Sample {
  int period = 0;
  int month = 1;  // 1..12
  std::uint8_t outcome = 0;
  FeatureVec features;

  bool operator==(const Sample&) const = default;
};

struct PatientPanel {
  std::string patient_id;
  std::vector<Sample> samples;  // sorted by (period, month)

  bool operator==(const PatientPanel&) const = default;
};

/// Patient-clustered longitudinal dataset. Immutable after construction;
/// splitting produces a new dataset sharing the panel storage.
class PanelDataset {
 public:
  PanelDataset() = default;
  PanelDataset(std::vector<PatientPanel> panels, Vocabulary vocab)
      : panels_(std::make_shared<const std::vector<PatientPanel>>(std::move(panels))),
        vocab_(std::make_shared<const Vocabulary>(std::move(vocab))) {}

  const std::vector<PatientPanel>& panels() const { return *panels_; }
  const Vocabulary& vocab() const { return *vocab_; }
  std::size_t n_patients() const { return panels_ ? panels_->size() : 0; }

  bool has_splits() const { return !split_.empty(); }
  DataSplit split_of(std::size_t patient_idx) const { return split_.at(patient_idx); }
  const std::vector<DataSplit>& splits() const { return split_; }

  PanelDataset with_splits(std::vector<DataSplit> split) const {
    if (split.size() != n_patients()) throw DataError("split assignment size mismatch");
    PanelDataset out = *this;
    out.split_ = std::move(split);
    return out;
  }

  std::optional<std::size_t> find_patient(const std::string& id) const {
    const auto& ps = panels();
    auto it = std::lower_bound(ps.begin(), ps.end(), id,
                               [](const PatientPanel& p, const std::string& s) { return p.patient_id < s; });
    if (it == ps.end() || it->patient_id != id) return std::nullopt;
    return static_cast<std::size_t>(it - ps.begin());
  }

  std::vector<int> periods() const {
    std::vector<int> out;
    for (const auto& p : panels())
      for (const auto& s : p.samples) out.push_back(s.period);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  bool operator==(const PanelDataset& other) const {
    return panels() == other.panels() && vocab() == other.vocab() && split_ == other.split_;
  }

 private:
  std::shared_ptr<const std::vector<PatientPanel>> panels_ =
      std::make_shared<const std::vector<PatientPanel>>();
  std::shared_ptr<const Vocabulary> vocab_ = std::make_shared<const Vocabulary>();
  std::vector<DataSplit> split_;  // empty until assigned
};

/// One patient's samples within some (period, split) selection.
struct PatientSamples {
  std::uint32_t patient = 0;
  std::vector<const Sample*> samples;
};

/// Collect samples of one period, optionally restricted to a split, grouped by
/// patient. Patients without samples in the selection are omitted.
inline std::vector<PatientSamples> collect_period(const PanelDataset& ds, int period,
                                                  std::optional<DataSplit> split = std::nullopt) {
  std::vector<PatientSamples> out;
  const auto& panels = ds.panels();
  for (std::uint32_t p = 0; p < panels.size(); ++p) {
    if (split && (!ds.has_splits() || ds.split_of(p) != *split)) continue;
    PatientSamples ps;
    ps.patient = p;
    for (const auto& s : panels[p].samples)
      if (s.period == period) ps.samples.push_back(&s);
    if (!ps.samples.empty()) out.push_back(std::move(ps));
  }
  return out;
}

inline std::vector<const Sample*> flatten(const std::vector<PatientSamples>& groups) {
  std::vector<const Sample*> out;
  for (const auto& g : groups) out.insert(out.end(), g.samples.begin(), g.samples.end());
  return out;
}

struct IngestSchema {
  std::optional<std::vector<std::string>> vocabulary;  // fixed when declared
  std::string feature_window;                          // informational tag
};

struct SplitFractions {
  double train = 0.7;
  double validation = 0.15;
  double test = 0.15;
};

namespace detail {

inline void check_record(const nlohmann::json& j, std::size_t line_no) {
  if (!j.is_object()) throw DataError("line " + std::to_string(line_no) + ": record is not an object");
  for (const char* key : {"patient_id", "period", "month", "y", "features"})
    if (!j.contains(key))
      throw DataError("line " + std::to_string(line_no) + ": missing field '" + key + "'");
}

}  // namespace detail

/// Load a dataset from the line-oriented ingestion format: one JSON record per
/// line with fields patient_id, period, month, y, features. Errors carry the
/// offending line number.
inline PanelDataset load_dataset(const std::string& path, const IngestSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);

  std::optional<Vocabulary> declared;
  if (schema.vocabulary) declared.emplace(*schema.vocabulary);

  std::map<std::string, std::vector<Sample>> by_patient;
  std::unordered_set<std::string> seen_keys;
  std::map<std::string, std::uint32_t> inferred_index;

  struct RawSample {
    std::string patient;
    Sample sample;
    std::vector<std::pair<std::string, double>> named_features;
  };
  std::vector<RawSample> raws;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    detail::check_record(j, line_no);

    RawSample raw;
    try {
      raw.patient = j.at("patient_id").get<std::string>();
      raw.sample.period = j.at("period").get<int>();
      raw.sample.month = j.at("month").get<int>();
      const int y = j.at("y").get<int>();
      if (y != 0 && y != 1)
        throw DataError("line " + std::to_string(line_no) + ": outcome y=" + std::to_string(y) +
                        " outside {0,1}");
      raw.sample.outcome = static_cast<std::uint8_t>(y);
      if (raw.sample.month < 1 || raw.sample.month > 12)
        throw DataError("line " + std::to_string(line_no) + ": month outside [1,12]");
      const auto& feats = j.at("features");
      if (!feats.is_object())
        throw DataError("line " + std::to_string(line_no) + ": features must be an object");
      for (auto it = feats.begin(); it != feats.end(); ++it) {
        const double v = it.value().get<double>();
        if (!std::isfinite(v))
          throw DataError("line " + std::to_string(line_no) + ": non-finite value for feature '" +
                          it.key() + "'");
        raw.named_features.emplace_back(it.key(), v);
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": bad field type: " + e.what());
    }

    const std::string key = raw.patient + "\x1f" + std::to_string(raw.sample.period) + "\x1f" +
                            std::to_string(raw.sample.month);
    if (!seen_keys.insert(key).second)
      throw DataError("line " + std::to_string(line_no) + ": duplicate record for patient '" +
                      raw.patient + "' period " + std::to_string(raw.sample.period) + " month " +
                      std::to_string(raw.sample.month));

    if (declared) {
      for (auto& [name, value] : raw.named_features) {
        auto idx = declared->find(name);
        if (!idx)
          throw DataError("line " + std::to_string(line_no) + ": feature '" + name +
                          "' not in declared vocabulary");
        raw.sample.features.emplace_back(*idx, value);
      }
    } else {
      for (auto& [name, value] : raw.named_features) inferred_index.emplace(name, 0);
    }
    raws.push_back(std::move(raw));
  }

  Vocabulary vocab;
  if (declared) {
    vocab = *declared;
  } else {
    // Vocabulary is the union of observed feature names, in sorted order.
    std::vector<std::string> names;
    names.reserve(inferred_index.size());
    for (auto& [name, _] : inferred_index) names.push_back(name);
    vocab = Vocabulary(std::move(names));
  }

  for (auto& raw : raws) {
    if (!declared) {
      raw.sample.features.clear();
      for (auto& [name, value] : raw.named_features)
        raw.sample.features.emplace_back(*vocab.find(name), value);
    }
    std::sort(raw.sample.features.begin(), raw.sample.features.end());
    by_patient[raw.patient].push_back(std::move(raw.sample));
  }

  std::vector<PatientPanel> panels;
  panels.reserve(by_patient.size());
  for (auto& [pid, samples] : by_patient) {
    PatientPanel panel;
    panel.patient_id = pid;
    panel.samples = std::move(samples);
    std::sort(panel.samples.begin(), panel.samples.end(), [](const Sample& a, const Sample& b) {
      return std::tie(a.period, a.month) < std::tie(b.period, b.month);
    });
    panels.push_back(std::move(panel));
  }
  return PanelDataset(std::move(panels), std::move(vocab));
}

/// Write a dataset in the ingestion format. load(store(ds)) == ds when the
/// same vocabulary is declared (or the dataset uses every feature).
inline void store_dataset(const PanelDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open output file: " + path);
  for (const auto& panel : ds.panels()) {
    for (const auto& s : panel.samples) {
      nlohmann::json feats = nlohmann::json::object();
      for (const auto& [idx, value] : s.features) feats[ds.vocab().name(idx)] = value;
      nlohmann::json j{{"patient_id", panel.patient_id},
                       {"period", s.period},
                       {"month", s.month},
                       {"y", static_cast<int>(s.outcome)},
                       {"features", feats}};
      out << j.dump() << '\n';
    }
  }
}

/// Sidecar split file: one {"patient_id", "split"} record per line.
inline void store_splits(const PanelDataset& ds, const std::string& path) {
  if (!ds.has_splits()) throw DataError("dataset has no split assignment to store");
  std::ofstream out(path);
  if (!out) throw DataError("cannot open output file: " + path);
  for (std::size_t p = 0; p < ds.n_patients(); ++p) {
    nlohmann::json j{{"patient_id", ds.panels()[p].patient_id},
                     {"split", to_string(ds.split_of(p))}};
    out << j.dump() << '\n';
  }
}

inline PanelDataset load_splits(const PanelDataset& ds, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split file: " + path);
  std::vector<DataSplit> split(ds.n_patients(), DataSplit::train);
  std::vector<bool> seen(ds.n_patients(), false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("split file line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto pid = j.at("patient_id").get<std::string>();
    auto idx = ds.find_patient(pid);
    if (!idx) throw DataError("split file line " + std::to_string(line_no) + ": unknown patient '" + pid + "'");
    if (seen[*idx]) throw DataError("split file line " + std::to_string(line_no) + ": duplicate patient '" + pid + "'");
    seen[*idx] = true;
    split[*idx] = split_from_string(j.at("split").get<std::string>());
  }
  for (std::size_t p = 0; p < ds.n_patients(); ++p)
    if (!seen[p]) throw DataError("split file missing patient '" + ds.panels()[p].patient_id + "'");
  return ds.with_splits(std::move(split));
}

/// Partition patients having samples in `periods` into those with the outcome
/// in some such sample (P1) and those never having it there (P0).
inline std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>> partition_by_outcome(
    const PanelDataset& ds, const std::vector<int>& periods) {
  if (periods.empty()) throw DataError("partition_by_outcome: empty period set");
  std::vector<std::uint32_t> p0, p1;
  for (std::uint32_t p = 0; p < ds.n_patients(); ++p) {
    bool present = false, positive = false;
    for (const auto& s : ds.panels()[p].samples) {
      if (std::find(periods.begin(), periods.end(), s.period) == periods.end()) continue;
      present = true;
      if (s.outcome) positive = true;
    }
    if (!present) continue;
    (positive ? p1 : p0).push_back(p);
  }
  return {std::move(p0), std::move(p1)};
}

namespace detail {

/// Allocate a shuffled stratum to splits at the given proportions; rounding
/// remainders go to train so validation/test are never larger than requested.
inline void allocate_stratum(const std::vector<std::uint32_t>& members, const SplitFractions& f,
                             std::vector<DataSplit>& out) {
  const std::size_t n = members.size();
  std::size_t n_val = static_cast<std::size_t>(std::llround(f.validation * static_cast<double>(n)));
  std::size_t n_test = static_cast<std::size_t>(std::llround(f.test * static_cast<double>(n)));
  while (n_val + n_test > n) (n_test >= n_val ? n_test : n_val) -= 1;
  const std::size_t n_train = n - n_val - n_test;
  for (std::size_t i = 0; i < n; ++i) {
    DataSplit s = i < n_train                ? DataSplit::train
                  : i < n_train + n_val      ? DataSplit::validation
                                             : DataSplit::test;
    out[members[i]] = s;
  }
}

}  // namespace detail

/// Patient-level split stratified by (first outcome period, first outcome
/// month), with one stratum for patients in whom the outcome never occurs.
/// Keeps outcome frequency balanced across splits over time; all samples of a
/// patient land in the same split.
inline PanelDataset split_patients_stratified(const PanelDataset& ds, const SplitFractions& f,
                                              std::uint64_t seed) {
  if (ds.n_patients() == 0) throw DataError("split_patients_stratified: empty dataset");
  if (!(f.train > 0 && f.validation > 0 && f.test > 0))
    throw DataError("split fractions must be positive");
  if (std::abs(f.train + f.validation + f.test - 1.0) > 1e-9)
    throw DataError("split fractions must sum to 1");

  // Stratum key: first (period, month) with outcome, or a sentinel for never.
  std::map<std::pair<int, int>, std::vector<std::uint32_t>> strata;
  for (std::uint32_t p = 0; p < ds.n_patients(); ++p) {
    std::pair<int, int> key{std::numeric_limits<int>::max(), 0};
    for (const auto& s : ds.panels()[p].samples) {
      if (s.outcome) {
        key = {s.period, s.month};
        break;  // samples are sorted by (period, month)
      }
    }
    strata[key].push_back(p);
  }

  std::vector<DataSplit> split(ds.n_patients(), DataSplit::train);
  std::uint64_t stratum_no = 0;
  for (auto& [key, members] : strata) {
    Rng rng(derive_seed(seed, stratum_no++));
    rng.shuffle(members);
    detail::allocate_stratum(members, f, split);
  }
  return ds.with_splits(std::move(split));
}

}  // namespace tshift
