#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include <fmt/format.h>

#include "tracelens/error.hpp"

namespace tracelens {

/// Feature rows of uniform dimension stored contiguously, one class index
/// per row.
struct LabeledDataset {
  std::size_t dim = 0;
  int classes = 2;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  std::span<const double> row(std::size_t i) const {
    return std::span(features).subspan(i * dim, dim);
  }

  void add(std::span<const double> x, int label) {
    if (dim == 0 && labels.empty()) dim = x.size();
    if (x.size() != dim || dim == 0) {
      throw Error("DimensionMismatch",
                  fmt::format("row has dimension {}, dataset has {}", x.size(), dim));
    }
    if (label < 0 || label >= classes) {
      throw Error("PreconditionViolation",
                  fmt::format("label {} outside [0, {})", label, classes));
    }
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(label);
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    return counts;
  }

  LabeledDataset subset(std::span<const std::size_t> indices) const {
    LabeledDataset out{.dim = dim, .classes = classes};
    out.features.reserve(indices.size() * dim);
    out.labels.reserve(indices.size());
    for (auto i : indices) {
      auto r = row(i);
      out.features.insert(out.features.end(), r.begin(), r.end());
      out.labels.push_back(labels[i]);
    }
    return out;
  }

  bool operator==(const LabeledDataset&) const = default;
};

inline void check_dataset(const LabeledDataset& data) {
  if (data.empty()) throw Error("EmptyDataset", "training set has no rows");
  detail::require(data.classes >= 2, "class count must be >= 2");
  detail::require(data.dim > 0, "feature dimension must be > 0");
  detail::require(data.features.size() == data.size() * data.dim,
                  "feature storage does not match row count");
  const auto counts = data.class_counts();
  const auto present = std::count_if(counts.begin(), counts.end(),
                                     [](std::size_t c) { return c > 0; });
  if (present < 2) {
    throw Error("SingleClassDataset", "training needs at least two classes present");
  }
}

}  // namespace tracelens
