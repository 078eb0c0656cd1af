#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tracelens/dataset.hpp"

namespace oracles {

// Exhaustive oracle: full stable sort on true Euclidean distance.
inline std::vector<double> knn_oracle(const tracelens::LabeledDataset& ref, int k, const std::vector<double>& x) {
  std::vector<std::size_t> idx(ref.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<double> dist(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < ref.dim; ++j) s += std::pow(ref.row(i)[j] - x[j], 2);
    dist[i] = std::sqrt(s);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  std::vector<double> votes(static_cast<std::size_t>(ref.classes), 0.0);
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), ref.size());
  for (std::size_t i = 0; i < take; ++i) votes[static_cast<std::size_t>(ref.labels[idx[i]])] += 1.0;
  for (auto& v : votes) v /= static_cast<double>(take);
  return votes;
}

struct EigenPairs {
  std::vector<double> values;                // descending
  std::vector<std::vector<double>> vectors;  // one per value
};

// Cyclic Jacobi rotations on a dense symmetric matrix.
inline EigenPairs jacobi_eigen(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x][x] > a[y][y]; });
  EigenPairs e;
  for (std::size_t i : order) {
    e.values.push_back(a[i][i]);
    std::vector<double> col(n);
    for (std::size_t k = 0; k < n; ++k) col[k] = v[k][i];
    e.vectors.push_back(col);
  }
  return e;
}

inline std::vector<std::vector<double>> covariance(const std::vector<double>& data, std::size_t dim) {
  const std::size_t n = data.size() / dim;
  std::vector<double> mean(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) mean[j] += data[i * dim + j] / static_cast<double>(n);
  std::vector<std::vector<double>> c(dim, std::vector<double>(dim, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j)
      for (std::size_t k = 0; k < dim; ++k)
        c[j][k] += (data[i * dim + j] - mean[j]) * (data[i * dim + k] - mean[k]) /
                   static_cast<double>(n - 1);
  return c;
}

}  // namespace oracles
