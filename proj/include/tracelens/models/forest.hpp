#pragma once

// Random forest of CART trees with Gini impurity.
//
// Each tree is grown on a bootstrap sample (optional). At every node a
// random subset of features is searched for the split with the lowest
// weighted Gini impurity; ties go to the lowest feature index, then the
// lowest threshold. If none of the sampled features can split the node
// the remaining features are tried in index order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "tracelens/dataset.hpp"
#include "tracelens/random.hpp"

namespace tracelens::models {

struct TreeNode {
  /// -1 marks a leaf.
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  /// Leaf class distribution.
  std::vector<double> distribution;

  bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;

  bool operator==(const DecisionTree&) const = default;
};

struct ForestParams {
  std::vector<DecisionTree> trees;

  bool operator==(const ForestParams&) const = default;
};

struct ForestOptions {
  int trees = 50;
  int max_depth = 12;
  /// 0 selects floor(sqrt(d)), at least 1.
  int features_per_split = 0;
  bool bootstrap = true;
};

namespace detail {

struct SplitCandidate {
  double impurity = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

inline double gini_sum(std::span<const std::size_t> counts, std::size_t n) {
  // n * gini = n - sum(count^2) / n
  if (n == 0) return 0.0;
  double sq = 0.0;
  for (auto c : counts) sq += static_cast<double>(c) * static_cast<double>(c);
  return static_cast<double>(n) - sq / static_cast<double>(n);
}

class TreeBuilder {
 public:
  TreeBuilder(const LabeledDataset& data, const ForestOptions& options, Rng& rng)
      : data_(data), options_(options), rng_(rng) {
    const auto d = static_cast<int>(data.dim);
    mtry_ = options.features_per_split > 0
                ? std::min(options.features_per_split, d)
                : std::max(1, static_cast<int>(std::sqrt(static_cast<double>(d))));
  }

  DecisionTree build(std::vector<std::size_t> samples) {
    DecisionTree tree;
    struct Pending {
      int node;
      int depth;
      std::vector<std::size_t> samples;
    };
    tree.nodes.emplace_back();
    std::vector<Pending> stack;
    stack.push_back({0, 0, std::move(samples)});
    while (!stack.empty()) {
      Pending job = std::move(stack.back());
      stack.pop_back();
      auto counts = count_classes(job.samples);
      const bool pure = std::count_if(counts.begin(), counts.end(),
                                      [](std::size_t c) { return c > 0; }) <= 1;
      std::optional<SplitCandidate> split;
      if (!pure && job.depth < options_.max_depth) split = find_split(job.samples);
      if (!split) {
        auto& leaf = tree.nodes[static_cast<std::size_t>(job.node)];
        leaf.distribution.resize(counts.size());
        for (std::size_t c = 0; c < counts.size(); ++c) {
          leaf.distribution[c] =
              static_cast<double>(counts[c]) / static_cast<double>(job.samples.size());
        }
        continue;
      }
      std::vector<std::size_t> left, right;
      for (auto i : job.samples) {
        (data_.row(i)[static_cast<std::size_t>(split->feature)] <= split->threshold ? left : right)
            .push_back(i);
      }
      const int left_id = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      auto& node = tree.nodes[static_cast<std::size_t>(job.node)];
      node.feature = split->feature;
      node.threshold = split->threshold;
      node.left = left_id;
      node.right = left_id + 1;
      // Right pushed first so the left subtree is expanded first.
      stack.push_back({left_id + 1, job.depth + 1, std::move(right)});
      stack.push_back({left_id, job.depth + 1, std::move(left)});
    }
    return tree;
  }

 private:
  std::vector<std::size_t> count_classes(std::span<const std::size_t> samples) const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(data_.classes), 0);
    for (auto i : samples) ++counts[static_cast<std::size_t>(data_.labels[i])];
    return counts;
  }

  std::optional<SplitCandidate> find_split(std::span<const std::size_t> samples) {
    const auto d = static_cast<int>(data_.dim);
    std::vector<int> features(static_cast<std::size_t>(d));
    for (int f = 0; f < d; ++f) features[static_cast<std::size_t>(f)] = f;
    // Partial Fisher-Yates: the first mtry entries are the sample.
    for (int i = 0; i < mtry_; ++i) {
      const auto j = static_cast<std::size_t>(i) + rng_.below(static_cast<std::uint64_t>(d - i));
      std::swap(features[static_cast<std::size_t>(i)], features[j]);
    }
    std::vector<int> sampled(features.begin(), features.begin() + mtry_);
    std::vector<int> rest(features.begin() + mtry_, features.end());
    std::sort(sampled.begin(), sampled.end());
    std::sort(rest.begin(), rest.end());

    if (auto s = best_split(samples, sampled)) return s;
    return best_split(samples, rest);
  }

  std::optional<SplitCandidate> best_split(std::span<const std::size_t> samples,
                                           std::span<const int> features) {
    const std::size_t n = samples.size();
    const auto c_count = static_cast<std::size_t>(data_.classes);
    std::optional<SplitCandidate> best;
    std::vector<std::pair<double, int>> column(n);
    std::vector<std::size_t> left(c_count), right(c_count);
    for (int f : features) {
      for (std::size_t i = 0; i < n; ++i) {
        column[i] = {data_.row(samples[i])[static_cast<std::size_t>(f)],
                     data_.labels[samples[i]]};
      }
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;
      std::fill(left.begin(), left.end(), 0);
      std::fill(right.begin(), right.end(), 0);
      for (const auto& [v, y] : column) ++right[static_cast<std::size_t>(y)];
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const auto y = static_cast<std::size_t>(column[i].second);
        ++left[y];
        --right[y];
        if (column[i].first == column[i + 1].first) continue;
        const double impurity = gini_sum(left, i + 1) + gini_sum(right, n - i - 1);
        if (!best || impurity < best->impurity) {
          const double a = column[i].first;
          const double b = column[i + 1].first;
          double threshold = a + (b - a) / 2.0;
          if (!(threshold < b)) threshold = a;
          best = SplitCandidate{impurity, f, threshold};
        }
      }
    }
    return best;
  }

  const LabeledDataset& data_;
  const ForestOptions& options_;
  Rng& rng_;
  int mtry_ = 1;
};

}  // namespace detail

inline ForestParams forest_fit(const LabeledDataset& train, const ForestOptions& options,
                               std::uint64_t seed) {
  ForestParams params;
  params.trees.reserve(static_cast<std::size_t>(options.trees));
  for (int t = 0; t < options.trees; ++t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    std::vector<std::size_t> samples(train.size());
    if (options.bootstrap) {
      for (auto& s : samples) s = rng.below(train.size());
    } else {
      for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = i;
    }
    detail::TreeBuilder builder(train, options, rng);
    params.trees.push_back(builder.build(std::move(samples)));
  }
  return params;
}

inline std::span<const double> tree_leaf(const DecisionTree& tree, std::span<const double> x) {
  std::size_t at = 0;
  while (tree.nodes[at].feature >= 0) {
    const auto& node = tree.nodes[at];
    at = static_cast<std::size_t>(x[static_cast<std::size_t>(node.feature)] <= node.threshold
                                      ? node.left
                                      : node.right);
  }
  return tree.nodes[at].distribution;
}

/// Mean of the per-tree leaf distributions.
inline std::vector<double> forest_predict(const ForestParams& params, int classes,
                                          std::span<const double> x) {
  std::vector<double> proba(static_cast<std::size_t>(classes), 0.0);
  for (const auto& tree : params.trees) {
    auto leaf = tree_leaf(tree, x);
    for (std::size_t c = 0; c < proba.size(); ++c) proba[c] += leaf[c];
  }
  for (auto& p : proba) p /= static_cast<double>(params.trees.size());
  return proba;
}

}  // namespace tracelens::models
