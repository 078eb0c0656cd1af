#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <fmt/format.h>

#include "tracelens/dataset.hpp"
#include "tracelens/error.hpp"
#include "tracelens/models/forest.hpp"
#include "tracelens/models/knn.hpp"
#include "tracelens/models/mlp.hpp"
#include "tracelens/models/naive_bayes.hpp"

namespace tracelens::models {

enum class ModelKind { kKnn, kGnb, kForest, kNn };

inline std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kKnn: return "knn";
    case ModelKind::kGnb: return "gnb";
    case ModelKind::kForest: return "rf";
    case ModelKind::kNn: return "nn";
  }
  return "?";
}

inline std::optional<ModelKind> parse_model_kind(std::string_view name) {
  if (name == "knn") return ModelKind::kKnn;
  if (name == "gnb") return ModelKind::kGnb;
  if (name == "rf") return ModelKind::kForest;
  if (name == "nn") return ModelKind::kNn;
  return std::nullopt;
}

/// Union of the per-kind hyperparameters; each kind reads its own fields.
struct Hyperparams {
  int k = 3;

  ForestOptions forest;
  MlpOptions nn;

  bool operator==(const Hyperparams& o) const {
    return k == o.k && forest.trees == o.forest.trees &&
           forest.max_depth == o.forest.max_depth &&
           forest.features_per_split == o.forest.features_per_split &&
           forest.bootstrap == o.forest.bootstrap && nn.hidden == o.nn.hidden &&
           nn.epochs == o.nn.epochs && nn.learning_rate == o.nn.learning_rate &&
           nn.batch_size == o.nn.batch_size && nn.decay == o.nn.decay;
  }
};

inline void validate_hyperparams(ModelKind kind, const Hyperparams& h) {
  switch (kind) {
    case ModelKind::kKnn:
      tracelens::detail::require(h.k >= 1, "knn: k must be >= 1");
      break;
    case ModelKind::kGnb:
      break;
    case ModelKind::kForest:
      tracelens::detail::require(h.forest.trees >= 1, "rf: trees must be >= 1");
      tracelens::detail::require(h.forest.max_depth >= 1, "rf: max_depth must be >= 1");
      tracelens::detail::require(h.forest.features_per_split >= 0, "rf: features_per_split must be >= 0");
      break;
    case ModelKind::kNn:
      tracelens::detail::require(h.nn.hidden >= 1, "nn: hidden width must be >= 1");
      tracelens::detail::require(h.nn.epochs >= 0, "nn: epochs must be >= 0");
      tracelens::detail::require(h.nn.learning_rate > 0.0, "nn: learning rate must be > 0");
      tracelens::detail::require(h.nn.batch_size >= 1, "nn: batch size must be >= 1");
      tracelens::detail::require(h.nn.decay >= 0.0, "nn: decay must be >= 0");
      break;
  }
}

using ModelParams = std::variant<KnnParams, GnbParams, ForestParams, MlpParams>;

/// Immutable once trained; prediction is const and thread-safe.
struct TrainedModel {
  ModelKind kind = ModelKind::kNn;
  Hyperparams hyper;
  int classes = 2;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  ModelParams params;

  bool operator==(const TrainedModel&) const = default;
};

/// Copy of `hyper` with the fields `kind` does not use reset to defaults.
inline Hyperparams relevant_hyperparams(ModelKind kind, const Hyperparams& hyper) {
  Hyperparams out;
  switch (kind) {
    case ModelKind::kKnn: out.k = hyper.k; break;
    case ModelKind::kGnb: break;
    case ModelKind::kForest: out.forest = hyper.forest; break;
    case ModelKind::kNn: out.nn = hyper.nn; break;
  }
  return out;
}

inline TrainedModel train_classifier(ModelKind kind, const Hyperparams& hyper,
                                     const LabeledDataset& train, std::uint64_t seed) {
  check_dataset(train);
  validate_hyperparams(kind, hyper);
  TrainedModel model{.kind = kind,
                     .hyper = relevant_hyperparams(kind, hyper),
                     .classes = train.classes,
                     .dim = train.dim,
                     .seed = seed};
  switch (kind) {
    case ModelKind::kKnn: model.params = knn_fit(train); break;
    case ModelKind::kGnb: model.params = gnb_fit(train); break;
    case ModelKind::kForest: model.params = forest_fit(train, hyper.forest, seed); break;
    case ModelKind::kNn: model.params = mlp_fit(train, hyper.nn, seed); break;
  }
  return model;
}

inline std::vector<double> predict_proba(const TrainedModel& model, std::span<const double> x) {
  if (x.size() != model.dim) {
    throw Error("DimensionMismatch",
                fmt::format("input has dimension {}, model expects {}", x.size(), model.dim));
  }
  switch (model.kind) {
    case ModelKind::kKnn:
      return knn_predict(std::get<KnnParams>(model.params), model.hyper.k, x);
    case ModelKind::kGnb:
      return gnb_predict(std::get<GnbParams>(model.params), x);
    case ModelKind::kForest:
      return forest_predict(std::get<ForestParams>(model.params), model.classes, x);
    case ModelKind::kNn:
      return mlp_predict(std::get<MlpParams>(model.params), x);
  }
  return {};
}

inline int predict_label(const TrainedModel& model, std::span<const double> x) {
  const auto p = predict_proba(model, x);
  std::size_t best = 0;
  for (std::size_t c = 1; c < p.size(); ++c) {
    if (p[c] > p[best]) best = c;
  }
  return static_cast<int>(best);
}

inline double nn_gradient_check(const TrainedModel& model, const LabeledDataset& batch,
                                double epsilon = 1e-5) {
  if (model.kind != ModelKind::kNn) {
    throw Error("WrongKind", "gradient check needs an nn model");
  }
  tracelens::detail::require(epsilon > 0.0, "epsilon must be > 0");
  tracelens::detail::require(!batch.empty() && batch.dim == model.dim, "batch does not match model");
  return mlp_gradient_check(std::get<MlpParams>(model.params), batch, epsilon);
}

}  // namespace tracelens::models
