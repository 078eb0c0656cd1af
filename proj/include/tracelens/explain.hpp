#pragma once

// Local surrogate explanations over a g x g region grid.
//
// Random on/off masks over the regions perturb the tile (switched-off
// regions take a baseline value), the model scores each perturbation, and
// a ridge-damped weighted least-squares fit from mask indicators to the
// malicious probability gives one coefficient per region. Samples are
// weighted by exp(-h^2 / sigma^2), h being the fraction of regions off.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "json.hpp"
#include "tracelens/error.hpp"
#include "tracelens/henet.hpp"
#include "tracelens/imaging.hpp"
#include "tracelens/models/classifier.hpp"
#include "tracelens/random.hpp"

namespace tracelens {

inline constexpr double kExplainRidge = 1e-6;

enum class MaskBaseline { kTileMean, kZero };

struct ExplainOptions {
  int grid = 4;
  int samples = 2000;
  std::uint64_t seed = 0;
  double sigma = 0.25;
  MaskBaseline baseline = MaskBaseline::kTileMean;
};

struct ExplanationMap {
  int grid = 0;
  /// One weight per region, region rows top to bottom, left to right.
  std::vector<double> weights;
  double intercept = 0.0;
  int samples = 0;
  std::uint64_t seed = 0;
  double sigma = 0.0;
  MaskBaseline baseline = MaskBaseline::kTileMean;

  bool operator==(const ExplanationMap&) const = default;
};

/// Probability of the malicious class for a (possibly perturbed) tile.
using TileScorer = std::function<double(const ImageTile&)>;

namespace detail {

inline void check_grid(int side, int grid) {
  require(grid >= 1, "grid must be >= 1");
  if (side % grid != 0) {
    throw Error("GridMismatch", fmt::format("grid {} does not divide tile side {}", grid, side));
  }
}

inline int region_of(int row, int col, int side, int grid) {
  const int cell = side / grid;
  return (row / cell) * grid + (col / cell);
}

inline std::uint8_t baseline_value(const ImageTile& tile, MaskBaseline baseline) {
  if (baseline == MaskBaseline::kZero) return 0;
  const std::uint64_t sum =
      std::accumulate(tile.values.begin(), tile.values.end(), std::uint64_t{0});
  const std::uint64_t n = tile.values.size();
  return static_cast<std::uint8_t>((2 * sum + n) / (2 * n));
}

inline ImageTile apply_mask(const ImageTile& tile, const std::vector<char>& on, int grid,
                            std::uint8_t fill) {
  ImageTile out = tile;
  const int side = tile.side;
  for (int c = 0; c < tile.channels; ++c) {
    for (int r = 0; r < side; ++r) {
      for (int col = 0; col < side; ++col) {
        if (!on[static_cast<std::size_t>(region_of(r, col, side, grid))]) {
          out.values[static_cast<std::size_t>(c) * tile.plane_size() +
                     static_cast<std::size_t>(r) * static_cast<std::size_t>(side) +
                     static_cast<std::size_t>(col)] = fill;
        }
      }
    }
  }
  return out;
}

}  // namespace detail

/// Kernel weight of a sample with `off_fraction` of its regions masked.
inline double kernel_weight(double off_fraction, double sigma) {
  return std::exp(-(off_fraction * off_fraction) / (sigma * sigma));
}

inline ExplanationMap explain_tile(const TileScorer& scorer, const ImageTile& tile,
                                   const ExplainOptions& options) {
  detail::check_grid(tile.side, options.grid);
  const int regions = options.grid * options.grid;
  detail::require(options.samples >= regions + 1, "need at least grid^2 + 1 samples");
  detail::require(options.sigma > 0.0, "kernel width sigma must be > 0");

  const auto n = static_cast<Eigen::Index>(options.samples);
  const auto p = static_cast<Eigen::Index>(regions + 1);
  Eigen::MatrixXd design(n, p);
  Eigen::VectorXd target(n);
  Eigen::VectorXd weight(n);
  const std::uint8_t fill = detail::baseline_value(tile, options.baseline);

  // Masks are drawn sequentially; the model queries depend only on them.
  Rng rng(options.seed);
  std::vector<char> on(static_cast<std::size_t>(regions));
  for (Eigen::Index i = 0; i < n; ++i) {
    int off = 0;
    design(i, 0) = 1.0;
    for (int r = 0; r < regions; ++r) {
      on[static_cast<std::size_t>(r)] = static_cast<char>(rng.next() >> 63);
      design(i, r + 1) = on[static_cast<std::size_t>(r)] ? 1.0 : 0.0;
      off += on[static_cast<std::size_t>(r)] ? 0 : 1;
    }
    weight(i) = kernel_weight(static_cast<double>(off) / regions, options.sigma);
    target(i) = scorer(detail::apply_mask(tile, on, options.grid, fill));
  }

  if (!(weight.sum() > 0.0)) {
    throw Error("DegenerateFit", "all kernel weights vanished; increase sigma");
  }
  const Eigen::MatrixXd weighted = design.array().colwise() * weight.array();
  Eigen::MatrixXd normal = design.transpose() * weighted;
  for (Eigen::Index j = 1; j < p; ++j) normal(j, j) += kExplainRidge;
  const Eigen::VectorXd rhs = weighted.transpose() * target;
  Eigen::LDLT<Eigen::MatrixXd> solver(normal);
  if (solver.info() != Eigen::Success || !solver.isPositive() ||
      solver.rcond() < 1e4 * std::numeric_limits<double>::epsilon()) {
    throw Error("DegenerateFit", "weighted design matrix is numerically singular");
  }
  const Eigen::VectorXd beta = solver.solve(rhs);
  if (!beta.allFinite()) throw Error("DegenerateFit", "surrogate coefficients are not finite");

  ExplanationMap map{.grid = options.grid,
                     .intercept = beta(0),
                     .samples = options.samples,
                     .seed = options.seed,
                     .sigma = options.sigma,
                     .baseline = options.baseline};
  map.weights.assign(beta.data() + 1, beta.data() + p);
  return map;
}

inline ExplanationMap explain_tile(const HenetModel& model, const ImageTile& tile,
                                   const ExplainOptions& options) {
  return explain_tile([&](const ImageTile& t) { return tile_probability(model, t); }, tile,
                      options);
}

inline ExplanationMap explain_tile(const models::TrainedModel& model, const ImageTile& tile,
                                   const ExplainOptions& options, int malicious_class = 1) {
  return explain_tile(
      [&](const ImageTile& t) {
        return models::predict_proba(model, normalize(t))[static_cast<std::size_t>(malicious_class)];
      },
      tile, options);
}

/// Overlays region weights on a grayscale tile: positive weights tint
/// green, negative weights tint red, with opacity 0.5 * |w| / max|w|.
inline ImageTile render_heatmap(const ImageTile& tile, const ExplanationMap& ex) {
  if (tile.channels != 1) throw Error("PreconditionViolation", "heatmap needs a grayscale tile");
  detail::check_grid(tile.side, ex.grid);
  if (ex.weights.size() != static_cast<std::size_t>(ex.grid * ex.grid)) {
    throw Error("GridMismatch", "weight count does not match grid");
  }
  double top = 0.0;
  for (double w : ex.weights) top = std::max(top, std::abs(w));

  ImageTile out = replicate_channels(tile);
  if (top == 0.0) return out;
  const std::size_t area = tile.plane_size();
  for (int r = 0; r < tile.side; ++r) {
    for (int c = 0; c < tile.side; ++c) {
      const double w = ex.weights[static_cast<std::size_t>(detail::region_of(r, c, tile.side, ex.grid))];
      if (w == 0.0) continue;
      const double alpha = 0.5 * std::abs(w) / top;
      const std::size_t i = static_cast<std::size_t>(r) * static_cast<std::size_t>(tile.side) +
                            static_cast<std::size_t>(c);
      const double gray = tile.values[i];
      const auto dim = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * gray));
      const auto lit = static_cast<std::uint8_t>(
          std::clamp(std::lround((1.0 - alpha) * gray + alpha * 255.0), 0L, 255L));
      const std::size_t tinted = w > 0.0 ? 1 : 0;  // green : red
      for (std::size_t ch = 0; ch < 3; ++ch) {
        out.values[ch * area + i] = ch == tinted ? lit : dim;
      }
    }
  }
  return out;
}

inline nlohmann::json to_json(const ExplanationMap& ex) {
  nlohmann::json weights = nlohmann::json::array();
  for (double w : ex.weights) weights.push_back(w);
  return {{"grid", ex.grid},
          {"weights", weights},
          {"intercept", ex.intercept},
          {"seed", ex.seed},
          {"sigma", ex.sigma},
          {"samples", ex.samples},
          {"baseline", ex.baseline == MaskBaseline::kZero ? "zero" : "mean"}};
}

}  // namespace tracelens
