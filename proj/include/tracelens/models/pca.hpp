#pragma once

// Principal component analysis by eigendecomposition of the sample
// covariance (denominator n - 1). When there are fewer samples than
// dimensions the n x n Gram matrix is decomposed instead and its
// eigenvectors are mapped back to feature space.
//
// Each component is sign-normalized so that its largest-magnitude entry
// (first one on ties) is positive.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "tracelens/error.hpp"

namespace tracelens::models {

inline constexpr double kPcaVarianceFloor = 1e-12;

struct PcaModel {
  std::size_t dim = 0;
  std::vector<double> mean;
  /// rank x dim, row-major, orthonormal rows.
  std::vector<double> components;
  /// Nonincreasing, one per component.
  std::vector<double> explained_variance;
  /// Sum of all covariance eigenvalues.
  double total_variance = 0.0;
  /// Set when fewer directions than requested carry variance.
  bool rank_deficient = false;

  std::size_t rank() const { return explained_variance.size(); }
  std::span<const double> component(std::size_t i) const {
    return std::span(components).subspan(i * dim, dim);
  }

  bool operator==(const PcaModel&) const = default;
};

/// Checks the shape preconditions of a PCA request without fitting.
inline void pca_check_request(std::size_t dim, std::size_t samples, std::size_t rank) {
  tracelens::detail::require(samples >= 2, "PCA needs at least two samples");
  tracelens::detail::require(dim >= 1, "PCA needs a positive dimension");
  tracelens::detail::require(rank >= 1, "PCA rank must be >= 1");
  if (rank > std::min(dim, samples)) {
    throw Error("PreconditionViolation",
                fmt::format("PCA rank {} exceeds min(d={}, samples={})", rank, dim, samples));
  }
}

/// `data` is row-major, samples x dim.
inline PcaModel pca_fit(std::span<const double> data, std::size_t dim, std::size_t rank) {
  tracelens::detail::require(dim >= 1 && data.size() % dim == 0, "data size is not a multiple of dim");
  const std::size_t n = data.size() / dim;
  pca_check_request(dim, n, rank);

  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMatrix> x(data.data(), static_cast<Eigen::Index>(n),
                                static_cast<Eigen::Index>(dim));
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  const double denom = static_cast<double>(n - 1);

  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // columns in feature space
  if (dim <= n) {
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw Error("EigenFailure", "covariance eigensolver failed");
    values = solver.eigenvalues();
    vectors = solver.eigenvectors();
  } else {
    const Eigen::MatrixXd gram = (centered * centered.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success) throw Error("EigenFailure", "Gram eigensolver failed");
    values = solver.eigenvalues();
    vectors = centered.transpose() * solver.eigenvectors();
    for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
      const double norm = vectors.col(j).norm();
      if (norm > 0.0) vectors.col(j) /= norm;
    }
  }

  PcaModel model;
  model.dim = dim;
  model.mean.assign(mean.data(), mean.data() + dim);
  model.total_variance = std::max(0.0, values.sum());
  const auto available = static_cast<std::size_t>(values.size());
  for (std::size_t i = 0; i < rank; ++i) {
    const auto col = static_cast<Eigen::Index>(available - 1 - i);
    const double variance = values(col);
    if (!(variance > kPcaVarianceFloor)) {
      model.rank_deficient = true;
      break;
    }
    Eigen::VectorXd v = vectors.col(col);
    Eigen::Index top = 0;
    for (Eigen::Index j = 1; j < v.size(); ++j) {
      if (std::abs(v(j)) > std::abs(v(top))) top = j;
    }
    if (v(top) < 0) v = -v;
    model.components.insert(model.components.end(), v.data(), v.data() + v.size());
    model.explained_variance.push_back(variance);
  }
  return model;
}

inline std::vector<double> pca_transform(const PcaModel& model, std::span<const double> v) {
  if (v.size() != model.dim) {
    throw Error("DimensionMismatch",
                fmt::format("vector has dimension {}, PCA expects {}", v.size(), model.dim));
  }
  std::vector<double> centered(model.dim);
  for (std::size_t j = 0; j < model.dim; ++j) centered[j] = v[j] - model.mean[j];
  std::vector<double> out(model.rank(), 0.0);
  for (std::size_t i = 0; i < model.rank(); ++i) {
    auto c = model.component(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < model.dim; ++j) dot += c[j] * centered[j];
    out[i] = dot;
  }
  return out;
}

/// Maps a projection back to feature space.
inline std::vector<double> pca_reconstruct(const PcaModel& model, std::span<const double> z) {
  std::vector<double> out(model.mean);
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto c = model.component(i);
    for (std::size_t j = 0; j < model.dim; ++j) out[j] += z[i] * c[j];
  }
  return out;
}

}  // namespace tracelens::models
