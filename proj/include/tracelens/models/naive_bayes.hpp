#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "tracelens/dataset.hpp"

namespace tracelens::models {

inline constexpr double kGnbVarianceFloor = 1e-9;

/// Gaussian naive Bayes. Means and variances are class-major
/// (classes x dim). Absent classes have an empty-prior marker of -inf.
struct GnbParams {
  std::vector<double> means;
  std::vector<double> variances;
  std::vector<double> log_priors;

  bool operator==(const GnbParams&) const = default;
};

inline GnbParams gnb_fit(const LabeledDataset& train) {
  const std::size_t c_count = static_cast<std::size_t>(train.classes);
  const std::size_t d = train.dim;
  GnbParams p;
  p.means.assign(c_count * d, 0.0);
  p.variances.assign(c_count * d, 0.0);
  p.log_priors.assign(c_count, -std::numeric_limits<double>::infinity());
  const auto counts = train.class_counts();

  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto c = static_cast<std::size_t>(train.labels[i]);
    auto x = train.row(i);
    for (std::size_t j = 0; j < d; ++j) p.means[c * d + j] += x[j];
  }
  for (std::size_t c = 0; c < c_count; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t j = 0; j < d; ++j) p.means[c * d + j] /= static_cast<double>(counts[c]);
  }
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto c = static_cast<std::size_t>(train.labels[i]);
    auto x = train.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x[j] - p.means[c * d + j];
      p.variances[c * d + j] += diff * diff;
    }
  }
  for (std::size_t c = 0; c < c_count; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t j = 0; j < d; ++j) {
      auto& v = p.variances[c * d + j];
      v = std::max(v / static_cast<double>(counts[c]), kGnbVarianceFloor);
    }
    p.log_priors[c] =
        std::log(static_cast<double>(counts[c]) / static_cast<double>(train.size()));
  }
  return p;
}

inline std::vector<double> gnb_predict(const GnbParams& p, std::span<const double> x) {
  const std::size_t c_count = p.log_priors.size();
  const std::size_t d = x.size();
  std::vector<double> score(c_count, -std::numeric_limits<double>::infinity());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < c_count; ++c) {
    if (std::isinf(p.log_priors[c])) continue;
    double s = p.log_priors[c];
    for (std::size_t j = 0; j < d; ++j) {
      const double var = p.variances[c * d + j];
      const double diff = x[j] - p.means[c * d + j];
      s -= 0.5 * (std::log(2.0 * std::numbers::pi * var) + diff * diff / var);
    }
    score[c] = s;
    best = std::max(best, s);
  }
  double total = 0.0;
  for (auto& s : score) {
    s = std::isinf(s) ? 0.0 : std::exp(s - best);
    total += s;
  }
  for (auto& s : score) s /= total;
  return score;
}

}  // namespace tracelens::models
