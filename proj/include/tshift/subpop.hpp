#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tshift/panel.hpp"
#include "tshift/tree.hpp"

namespace tshift {

/// Indicator over (features, outcome) restricting where the metric is
/// evaluated: the constant-1 "entire population", a complement, or a learned
/// decision tree whose score is binarized at 0.5.
class SubpopModel {
 public:
  enum class Kind { entire_population, complement_of, learned_tree };

  static SubpopModel entire() { return SubpopModel(); }

  static SubpopModel from_tree(DecisionTree tree, std::uint32_t dim) {
    SubpopModel m;
    m.kind_ = Kind::learned_tree;
    m.tree_ = std::move(tree);
    m.dim_ = dim;
    return m;
  }

  static SubpopModel complement(SubpopModel inner) {
    SubpopModel m;
    m.kind_ = Kind::complement_of;
    m.reference_ = std::make_shared<SubpopModel>(std::move(inner));
    return m;
  }

  Kind kind() const { return kind_; }
  bool is_entire_population() const { return kind_ == Kind::entire_population; }
  bool no_region_found() const { return no_region_found_; }
  void set_no_region_found(bool v) { no_region_found_ = v; }
  const DecisionTree& tree() const { return tree_; }
  std::uint32_t dim() const { return dim_; }
  const SubpopModel* reference() const { return reference_.get(); }

  bool member(const FeatureVec& x, std::uint8_t y) const {
    switch (kind_) {
      case Kind::entire_population: return true;
      case Kind::complement_of: return !reference_->member(x, y);
      case Kind::learned_tree:
        return tree_predict(tree_, x, static_cast<double>(y), dim_) >= 0.5;
    }
    return true;
  }

  bool member(const Sample& s) const { return member(s.features, s.outcome); }

  /// Human-readable conjunctions for the selected leaves. Empty for the
  /// entire population.
  std::vector<std::string> rules(const Vocabulary& vocab) const {
    switch (kind_) {
      case Kind::entire_population: return {};
      case Kind::complement_of: {
        auto inner = reference_->rules(vocab);
        for (auto& r : inner) r = "not(" + r + ")";
        return inner;
      }
      case Kind::learned_tree:
        return tree_rules(tree_, 0.5, [&](std::uint32_t f) {
          return f < dim_ ? vocab.name(f) : std::string("outcome");
        });
    }
    return {};
  }

 private:
  Kind kind_ = Kind::entire_population;
  DecisionTree tree_;
  std::uint32_t dim_ = 0;
  std::shared_ptr<const SubpopModel> reference_;
  bool no_region_found_ = false;
};

}  // namespace tshift
