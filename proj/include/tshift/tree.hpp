#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tshift/panel.hpp"

namespace tshift {

/// Binary CART tree, weighted Gini impurity, "value <= threshold goes left".
/// Leaves hold the class-weighted positive fraction.
struct DecisionTree {
  struct Node {
    std::int32_t feature = -1;  // -1 for leaves
    double threshold = 0.0;
    std::int32_t left = -1, right = -1;
    double score = 0.0;       // weighted positive fraction
    std::uint32_t n_train = 0;
  };
  std::vector<Node> nodes;  // nodes[0] is the root
  std::uint32_t min_samples_leaf = 1;

  bool empty() const { return nodes.empty(); }
};

/// A training/prediction row: vocabulary features plus one optional extra
/// column (used to feed the outcome into sub-population trees). Feature index
/// `dim` addresses the extra column.
struct TreeRow {
  const FeatureVec* x = nullptr;
  double extra = 0.0;
  std::uint8_t target = 0;
  double w = 1.0;
};

inline double tree_row_value(const TreeRow& r, std::uint32_t feature, std::uint32_t dim) {
  return feature < dim ? feature_value(*r.x, feature) : r.extra;
}

inline double tree_predict(const DecisionTree& tree, const FeatureVec& x, double extra,
                           std::uint32_t dim) {
  std::int32_t node = 0;
  while (tree.nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const auto& nd = tree.nodes[static_cast<std::size_t>(node)];
    const double v = static_cast<std::uint32_t>(nd.feature) < dim
                         ? feature_value(x, static_cast<std::uint32_t>(nd.feature))
                         : extra;
    node = v <= nd.threshold ? nd.left : nd.right;
  }
  return tree.nodes[static_cast<std::size_t>(node)].score;
}

namespace detail {

struct TreeBuilder {
  std::span<const TreeRow> rows;
  std::uint32_t n_features;  // including the extra column when present
  std::uint32_t dim;         // vocabulary size; feature==dim reads `extra`
  std::uint32_t min_leaf;
  DecisionTree* tree;

  struct Split {
    double gain = 0.0;
    std::uint32_t feature = 0;
    double threshold = 0.0;
  };

  static double gini(double w0, double w1) {
    const double w = w0 + w1;
    if (w <= 0) return 0.0;
    const double p = w1 / w;
    return 2.0 * p * (1.0 - p);
  }

  std::int32_t build(std::vector<std::uint32_t>& members) {
    double w0 = 0, w1 = 0;
    for (auto i : members) (rows[i].target ? w1 : w0) += rows[i].w;

    DecisionTree::Node node;
    node.score = (w0 + w1) > 0 ? w1 / (w0 + w1) : 0.0;
    node.n_train = static_cast<std::uint32_t>(members.size());

    const double node_impurity_mass = (w0 + w1) * gini(w0, w1);
    Split best;
    if (w0 > 0 && w1 > 0 && members.size() >= 2 * min_leaf) {
      std::vector<std::pair<double, std::uint32_t>> vals(members.size());
      for (std::uint32_t f = 0; f < n_features; ++f) {
        for (std::size_t k = 0; k < members.size(); ++k)
          vals[k] = {tree_row_value(rows[members[k]], f, dim), members[k]};
        std::sort(vals.begin(), vals.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        double lw0 = 0, lw1 = 0;
        for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
          const auto& r = rows[vals[k].second];
          (r.target ? lw1 : lw0) += r.w;
          if (vals[k].first == vals[k + 1].first) continue;
          const std::size_t n_left = k + 1;
          if (n_left < min_leaf || vals.size() - n_left < min_leaf) continue;
          const double gain = node_impurity_mass - (lw0 + lw1) * gini(lw0, lw1) -
                              (w0 - lw0 + w1 - lw1) * gini(w0 - lw0, w1 - lw1);
          if (gain > best.gain + 1e-12) {
            best.gain = gain;
            best.feature = f;
            best.threshold = 0.5 * (vals[k].first + vals[k + 1].first);
          }
        }
      }
    }

    const auto node_idx = static_cast<std::int32_t>(tree->nodes.size());
    tree->nodes.push_back(node);
    if (best.gain > 1e-12) {
      std::vector<std::uint32_t> left, right;
      for (auto i : members)
        (tree_row_value(rows[i], best.feature, dim) <= best.threshold ? left : right).push_back(i);
      members.clear();
      members.shrink_to_fit();
      auto& nd = tree->nodes[static_cast<std::size_t>(node_idx)];
      nd.feature = static_cast<std::int32_t>(best.feature);
      nd.threshold = best.threshold;
      const auto l = build(left);
      const auto r = build(right);
      tree->nodes[static_cast<std::size_t>(node_idx)].left = l;
      tree->nodes[static_cast<std::size_t>(node_idx)].right = r;
    }
    return node_idx;
  }
};

}  // namespace detail

/// Grow a tree greedily until leaves are pure or the min-samples-per-leaf
/// constraint stops splitting. Ties in gain are broken toward the smaller
/// feature index, then the smaller threshold, so fitting is deterministic.
inline DecisionTree fit_tree(std::span<const TreeRow> rows, std::uint32_t dim,
                             bool with_extra_column, std::uint32_t min_samples_leaf) {
  DecisionTree tree;
  tree.min_samples_leaf = min_samples_leaf;
  detail::TreeBuilder builder{rows, dim + (with_extra_column ? 1u : 0u), dim, min_samples_leaf,
                              &tree};
  std::vector<std::uint32_t> all(rows.size());
  for (std::uint32_t i = 0; i < rows.size(); ++i) all[i] = i;
  builder.build(all);
  return tree;
}

/// Root-to-leaf conjunctions for every leaf whose score clears `threshold`.
/// `name(feature)` renders a feature index (the extra column included).
template <typename NameFn>
std::vector<std::string> tree_rules(const DecisionTree& tree, double threshold, NameFn&& name) {
  std::vector<std::string> out;
  std::vector<std::pair<std::int32_t, std::string>> stack{{0, ""}};
  while (!stack.empty()) {
    auto [idx, path] = std::move(stack.back());
    stack.pop_back();
    const auto& nd = tree.nodes[static_cast<std::size_t>(idx)];
    if (nd.feature < 0) {
      if (nd.score >= threshold)
        out.push_back((path.empty() ? std::string("(always)") : path) + " => score " +
                      std::to_string(nd.score));
      continue;
    }
    const std::string fname = name(static_cast<std::uint32_t>(nd.feature));
    const std::string prefix = path.empty() ? "" : path + " and ";
    stack.emplace_back(nd.right, prefix + fname + " > " + std::to_string(nd.threshold));
    stack.emplace_back(nd.left, prefix + fname + " <= " + std::to_string(nd.threshold));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace tshift
