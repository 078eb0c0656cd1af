#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "tracelens/dataset.hpp"

namespace tracelens::models {

/// k-nearest-neighbor keeps the whole training set.
struct KnnParams {
  LabeledDataset reference;

  bool operator==(const KnnParams&) const = default;
};

inline KnnParams knn_fit(const LabeledDataset& train) { return KnnParams{train}; }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

/// Class frequencies among the k nearest reference rows. Equal distances
/// are ordered by reference index.
inline std::vector<double> knn_predict(const KnnParams& params, int k,
                                       std::span<const double> x) {
  const auto& ref = params.reference;
  std::vector<std::pair<double, std::size_t>> order(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) order[i] = {squared_distance(ref.row(i), x), i};
  const std::size_t take = std::min(static_cast<std::size_t>(k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end());

  std::vector<double> proba(static_cast<std::size_t>(ref.classes), 0.0);
  for (std::size_t i = 0; i < take; ++i) {
    proba[static_cast<std::size_t>(ref.labels[order[i].second])] += 1.0;
  }
  for (auto& p : proba) p /= static_cast<double>(take);
  return proba;
}

}  // namespace tracelens::models
