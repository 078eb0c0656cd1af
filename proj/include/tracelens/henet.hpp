#pragma once

// Hierarchical ensemble scoring of control-flow traces.
//
//   trace bytes -> packets -> pixel stream X -> tiles I_1..I_n
//               -> per-tile malicious probability p_k -> mean -> verdict
//
// The per-tile model is any TrainedModel, optionally behind a PCA
// projection. Every tile of a training trace inherits the trace label.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "json.hpp"
#include "tracelens/dataset.hpp"
#include "tracelens/error.hpp"
#include "tracelens/imaging.hpp"
#include "tracelens/io.hpp"
#include "tracelens/models/classifier.hpp"
#include "tracelens/models/model_io.hpp"
#include "tracelens/models/pca.hpp"
#include "tracelens/ptcodec.hpp"

namespace tracelens {

enum class TraceLabel { kBenign = 0, kMalicious = 1 };

inline constexpr int kMaliciousClass = static_cast<int>(TraceLabel::kMalicious);

inline std::string_view to_string(TraceLabel label) {
  return label == TraceLabel::kMalicious ? "malicious" : "benign";
}

struct PipelineConfig {
  int m = 28;
  TailPolicy tail = TailPolicy::kDrop;
  bool tip_family = false;
  int channels = 1;
  /// Block-mean pooling factor applied before the model; 1 = none.
  int pool = 1;
  double threshold = 0.5;

  bool operator==(const PipelineConfig&) const = default;
};

inline void validate(const PipelineConfig& cfg) {
  detail::require(cfg.m >= 1, "tile side m must be >= 1");
  detail::require(cfg.channels == 1 || cfg.channels == 3, "channels must be 1 or 3");
  detail::require(cfg.pool >= 1, "pool factor must be >= 1");
  if (cfg.m % cfg.pool != 0) {
    throw Error("NonDivisibleFactor",
                fmt::format("pool factor {} does not divide m = {}", cfg.pool, cfg.m));
  }
  detail::require(cfg.threshold > 0.0 && cfg.threshold < 1.0, "threshold must lie in (0, 1)");
}

/// Model input width after pooling and channel replication.
inline std::size_t feature_dim(const PipelineConfig& cfg) {
  const auto side = static_cast<std::size_t>(cfg.m / cfg.pool);
  return side * side * static_cast<std::size_t>(cfg.channels);
}

/// "28x28x1" style geometry label, with the Unicode multiplication sign.
inline std::string resolution_label(const PipelineConfig& cfg) {
  const int side = cfg.m / cfg.pool;
  return fmt::format("{}×{}×{}", side, side, cfg.channels);
}

/// Steps 1-3: decode, pixelize and slice one trace.
inline std::vector<ImageTile> trace_tiles(std::span<const std::uint8_t> raw,
                                          const PipelineConfig& cfg,
                                          DecodeMode mode = DecodeMode::kLenient) {
  const auto report = decode_stream(raw, mode);
  const auto pixels = pixels_from_packets(report.packets, cfg.tip_family);
  if (pixels.empty()) return {};
  return slice_tiles(pixels, cfg.m, cfg.tail).tiles;
}

inline std::vector<double> tile_features(const ImageTile& tile, const PipelineConfig& cfg) {
  ImageTile t = cfg.pool > 1 ? pool_downscale(tile, cfg.pool) : tile;
  if (cfg.channels == 3) t = replicate_channels(t);
  return normalize(t);
}

struct HenetModel {
  std::string name = "henet";
  PipelineConfig pipeline;
  std::optional<models::PcaModel> reducer;
  models::TrainedModel tile_model;
  int malicious_class = kMaliciousClass;

  bool operator==(const HenetModel&) const = default;
};

/// Malicious-class probability for one feature vector.
inline double tile_probability(const HenetModel& model, std::span<const double> features) {
  if (model.reducer) {
    const auto projected = models::pca_transform(*model.reducer, features);
    return models::predict_proba(model.tile_model, projected)[static_cast<std::size_t>(model.malicious_class)];
  }
  return models::predict_proba(model.tile_model, features)[static_cast<std::size_t>(model.malicious_class)];
}

inline double tile_probability(const HenetModel& model, const ImageTile& tile) {
  return tile_probability(model, tile_features(tile, model.pipeline));
}

struct LabeledTrace {
  std::string id;
  std::vector<std::uint8_t> bytes;
  TraceLabel label = TraceLabel::kBenign;
};

struct TileOrigin {
  std::size_t trace = 0;
  /// 1-based tile index within the trace.
  std::size_t k = 1;

  bool operator==(const TileOrigin&) const = default;
};

struct TileDataset {
  LabeledDataset data;
  std::vector<TileOrigin> provenance;
};

inline TileDataset build_tile_dataset(std::span<const LabeledTrace> traces,
                                      const PipelineConfig& cfg) {
  validate(cfg);
  TileDataset out;
  out.data.classes = 2;
  out.data.dim = feature_dim(cfg);
  for (std::size_t t = 0; t < traces.size(); ++t) {
    for (const auto& tile : trace_tiles(traces[t].bytes, cfg)) {
      out.data.add(tile_features(tile, cfg), static_cast<int>(traces[t].label));
      out.provenance.push_back({t, tile.index});
    }
  }
  if (out.data.empty()) {
    throw Error("NoTilesProduced",
                fmt::format("no trace yields a full {}x{} tile", cfg.m, cfg.m));
  }
  return out;
}

/// Trains the per-tile model. A positive `pca_rank` fits a PCA projection
/// on the training tiles first and trains the classifier in that space.
inline HenetModel henet_train(const LabeledDataset& tiles, const PipelineConfig& cfg,
                              models::ModelKind kind, const models::Hyperparams& hyper,
                              std::uint64_t seed, std::size_t pca_rank = 0,
                              std::string name = "henet") {
  validate(cfg);
  check_dataset(tiles);
  if (tiles.dim != feature_dim(cfg)) {
    throw Error("DimensionMismatch",
                fmt::format("tiles have dimension {}, pipeline produces {}", tiles.dim,
                            feature_dim(cfg)));
  }
  HenetModel model{.name = std::move(name), .pipeline = cfg};
  if (pca_rank == 0) {
    model.tile_model = models::train_classifier(kind, hyper, tiles, seed);
    return model;
  }
  model.reducer = models::pca_fit(tiles.features, tiles.dim, pca_rank);
  LabeledDataset projected{.dim = model.reducer->rank(), .classes = tiles.classes};
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    projected.add(models::pca_transform(*model.reducer, tiles.row(i)), tiles.labels[i]);
  }
  model.tile_model = models::train_classifier(kind, hyper, projected, seed);
  return model;
}

struct TraceVerdict {
  /// Malicious-class probability p_k of each tile, k ascending.
  std::vector<double> tile_probabilities;
  double mean = 0.0;
  TraceLabel label = TraceLabel::kBenign;

  std::size_t n() const { return tile_probabilities.size(); }
};

/// Step 5: mean of p_1..p_n accumulated in ascending k on one accumulator.
inline TraceVerdict aggregate_verdict(std::vector<double> probabilities, double threshold) {
  if (probabilities.empty()) throw Error("NoTilesProduced", "no tile probabilities to average");
  double sum = 0.0;
  for (double p : probabilities) sum += p;
  TraceVerdict v{.tile_probabilities = std::move(probabilities)};
  v.mean = sum / static_cast<double>(v.tile_probabilities.size());
  v.label = v.mean >= threshold ? TraceLabel::kMalicious : TraceLabel::kBenign;
  return v;
}

inline TraceVerdict henet_score_trace(const HenetModel& model, std::span<const std::uint8_t> raw,
                                      DecodeMode mode = DecodeMode::kLenient) {
  const auto tiles = trace_tiles(raw, model.pipeline, mode);
  if (tiles.empty()) {
    throw Error("NoTilesProduced",
                fmt::format("trace is shorter than one {}x{} tile", model.pipeline.m,
                            model.pipeline.m));
  }
  std::vector<double> p(tiles.size());
  for (std::size_t k = 0; k < tiles.size(); ++k) p[k] = tile_probability(model, tiles[k]);
  return aggregate_verdict(std::move(p), model.pipeline.threshold);
}

/// One JSON object per trace; the mean is printed with 17 significant
/// digits so it round-trips.
inline std::string verdict_json_line(std::string_view trace_id, const TraceVerdict& v,
                                     bool include_tiles) {
  std::string line = fmt::format(R"({{"trace":{},"n":{},"mean":{:.17g},"label":"{}")",
                                 nlohmann::json(std::string(trace_id)).dump(), v.n(), v.mean,
                                 to_string(v.label));
  if (include_tiles) {
    line += R"(,"p":[)";
    for (std::size_t k = 0; k < v.tile_probabilities.size(); ++k) {
      if (k > 0) line += ',';
      line += fmt::format("{:.17g}", v.tile_probabilities[k]);
    }
    line += ']';
  }
  line += '}';
  return line;
}

// Model files wrap a classifier file with the pipeline configuration.

inline nlohmann::json to_json(const PipelineConfig& cfg) {
  return {{"m", cfg.m},
          {"tail", std::string(to_string(cfg.tail))},
          {"tip_family", cfg.tip_family},
          {"channels", cfg.channels},
          {"pool", cfg.pool},
          {"threshold", cfg.threshold}};
}

inline nlohmann::json to_json(const HenetModel& model) {
  return {{"format_version", models::kModelFormatVersion},
          {"kind", "henet"},
          {"name", model.name},
          {"pipeline", to_json(model.pipeline)},
          {"malicious_class", model.malicious_class},
          {"reducer", model.reducer ? models::to_json(*model.reducer) : nlohmann::json(nullptr)},
          {"tile_model", models::to_json(model.tile_model)}};
}

inline HenetModel henet_model_from_json(const nlohmann::json& j) {
  HenetModel model = models::detail::guarded([&] {
    models::detail::expect(j.is_object(), "model must be a JSON object");
    models::detail::check_version(j);
    models::detail::expect(j.at("kind").get<std::string>() == "henet", "not a henet model");
    HenetModel m;
    m.name = j.at("name").get<std::string>();
    const auto& p = j.at("pipeline");
    m.pipeline.m = p.at("m").get<int>();
    const auto tail = p.at("tail").get<std::string>();
    models::detail::expect(tail == "drop" || tail == "pad", "tail must be drop or pad");
    m.pipeline.tail = tail == "drop" ? TailPolicy::kDrop : TailPolicy::kPadZero;
    m.pipeline.tip_family = p.at("tip_family").get<bool>();
    m.pipeline.channels = p.at("channels").get<int>();
    m.pipeline.pool = p.at("pool").get<int>();
    m.pipeline.threshold = p.at("threshold").get<double>();
    m.malicious_class = j.at("malicious_class").get<int>();
    if (!j.at("reducer").is_null()) m.reducer = models::pca_model_from_json(j.at("reducer"));
    m.tile_model = models::trained_model_from_json(j.at("tile_model"));
    return m;
  });
  try {
    validate(model.pipeline);
  } catch (const Error& e) {
    models::detail::corrupt(e.what());
  }
  const std::size_t expected_input =
      model.reducer ? model.reducer->rank() : feature_dim(model.pipeline);
  models::detail::expect(!model.reducer || model.reducer->dim == feature_dim(model.pipeline),
                         "reducer dimension does not match the pipeline");
  models::detail::expect(model.tile_model.dim == expected_input,
                         "tile model dimension does not match the pipeline");
  models::detail::expect(model.malicious_class >= 0 && model.malicious_class < model.tile_model.classes,
                         "malicious class out of range");
  return model;
}

inline void save_henet_model(const HenetModel& model, const std::filesystem::path& path) {
  write_file_text(path, to_json(model).dump() + "\n");
}

inline HenetModel load_henet_model(const std::filesystem::path& path) {
  return henet_model_from_json(models::parse_model_text(read_file_text(path)));
}

}  // namespace tracelens
