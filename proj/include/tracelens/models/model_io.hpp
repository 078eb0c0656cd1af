#pragma once

// JSON model files.
//
//   {"format_version": 1, "kind": "nn"|"knn"|"gnb"|"rf"|"pca",
//    "hyper": {...}, "params": {...}, "d": <int>, "C": <int>, "seed": <int>}
//
// Reals are written in shortest round-trip decimal form, so loading a saved
// model reproduces every parameter bit for bit. Non-finite values (only the
// -inf prior of an absent naive-Bayes class) are written as null.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include <fmt/format.h>

#include "json.hpp"
#include "tracelens/error.hpp"
#include "tracelens/io.hpp"
#include "tracelens/models/classifier.hpp"
#include "tracelens/models/pca.hpp"

namespace tracelens::models {

using Json = nlohmann::json;

inline constexpr int kModelFormatVersion = 1;

using AnyModel = std::variant<TrainedModel, PcaModel>;

namespace detail {

[[noreturn]] inline void corrupt(const std::string& why,
                                 std::optional<std::size_t> offset = std::nullopt) {
  throw Error("CorruptModelFile", "corrupt model file: " + why, offset);
}

inline void expect(bool condition, const char* why) {
  if (!condition) corrupt(why);
}

inline Json reals_to_json(const std::vector<double>& values) {
  Json out = Json::array();
  for (double v : values) {
    if (std::isfinite(v)) {
      out.push_back(v);
    } else {
      out.push_back(nullptr);
    }
  }
  return out;
}

inline std::vector<double> reals_from_json(const Json& j) {
  expect(j.is_array(), "expected an array of reals");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (v.is_null()) {
      out.push_back(-std::numeric_limits<double>::infinity());
    } else {
      expect(v.is_number(), "expected a real");
      out.push_back(v.get<double>());
    }
  }
  return out;
}

inline Json hyper_to_json(ModelKind kind, const Hyperparams& h) {
  switch (kind) {
    case ModelKind::kKnn: return {{"k", h.k}};
    case ModelKind::kGnb: return Json::object();
    case ModelKind::kForest:
      return {{"trees", h.forest.trees},
              {"max_depth", h.forest.max_depth},
              {"features_per_split", h.forest.features_per_split},
              {"bootstrap", h.forest.bootstrap}};
    case ModelKind::kNn:
      return {{"hidden", h.nn.hidden},
              {"epochs", h.nn.epochs},
              {"learning_rate", h.nn.learning_rate},
              {"batch_size", h.nn.batch_size},
              {"decay", h.nn.decay}};
  }
  return Json::object();
}

inline Hyperparams hyper_from_json(ModelKind kind, const Json& j) {
  Hyperparams h;
  switch (kind) {
    case ModelKind::kKnn: h.k = j.at("k").get<int>(); break;
    case ModelKind::kGnb: break;
    case ModelKind::kForest:
      h.forest.trees = j.at("trees").get<int>();
      h.forest.max_depth = j.at("max_depth").get<int>();
      h.forest.features_per_split = j.at("features_per_split").get<int>();
      h.forest.bootstrap = j.at("bootstrap").get<bool>();
      break;
    case ModelKind::kNn:
      h.nn.hidden = j.at("hidden").get<int>();
      h.nn.epochs = j.at("epochs").get<int>();
      h.nn.learning_rate = j.at("learning_rate").get<double>();
      h.nn.batch_size = j.at("batch_size").get<int>();
      h.nn.decay = j.at("decay").get<double>();
      break;
  }
  return h;
}

inline Json tree_to_json(const DecisionTree& tree) {
  Json nodes = Json::array();
  for (const auto& n : tree.nodes) {
    if (n.feature < 0) {
      nodes.push_back({{"p", reals_to_json(n.distribution)}});
    } else {
      nodes.push_back({{"f", n.feature}, {"t", n.threshold}, {"l", n.left}, {"r", n.right}});
    }
  }
  return nodes;
}

inline DecisionTree tree_from_json(const Json& j, std::size_t dim, int classes) {
  expect(j.is_array() && !j.empty(), "tree must be a nonempty array");
  DecisionTree tree;
  const auto count = static_cast<int>(j.size());
  for (int i = 0; i < count; ++i) {
    const auto& n = j[static_cast<std::size_t>(i)];
    TreeNode node;
    if (n.contains("p")) {
      node.distribution = reals_from_json(n.at("p"));
      expect(node.distribution.size() == static_cast<std::size_t>(classes),
             "leaf distribution has wrong length");
    } else {
      node.feature = n.at("f").get<int>();
      node.threshold = n.at("t").get<double>();
      node.left = n.at("l").get<int>();
      node.right = n.at("r").get<int>();
      expect(node.feature >= 0 && static_cast<std::size_t>(node.feature) < dim,
             "split feature out of range");
      // Children always follow their parent, which rules out cycles.
      expect(node.left > i && node.left < count && node.right > i && node.right < count,
             "child index out of range");
    }
    tree.nodes.push_back(std::move(node));
  }
  return tree;
}

inline Json params_to_json(const TrainedModel& m) {
  return std::visit(
      [](const auto& p) -> Json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, KnnParams>) {
          return {{"features", reals_to_json(p.reference.features)},
                  {"labels", p.reference.labels}};
        } else if constexpr (std::is_same_v<T, GnbParams>) {
          return {{"means", reals_to_json(p.means)},
                  {"variances", reals_to_json(p.variances)},
                  {"log_priors", reals_to_json(p.log_priors)}};
        } else if constexpr (std::is_same_v<T, ForestParams>) {
          Json trees = Json::array();
          for (const auto& t : p.trees) trees.push_back(tree_to_json(t));
          return {{"trees", trees}};
        } else {
          return {{"hidden", p.hidden},
                  {"w1", reals_to_json(p.w1)},
                  {"b1", reals_to_json(p.b1)},
                  {"w2", reals_to_json(p.w2)},
                  {"b2", reals_to_json(p.b2)},
                  {"shift", reals_to_json(p.shift)},
                  {"scale", reals_to_json(p.scale)}};
        }
      },
      m.params);
}

inline ModelParams params_from_json(ModelKind kind, const Json& j, std::size_t dim,
                                    int classes) {
  const auto c = static_cast<std::size_t>(classes);
  switch (kind) {
    case ModelKind::kKnn: {
      KnnParams p;
      p.reference.dim = dim;
      p.reference.classes = classes;
      p.reference.features = reals_from_json(j.at("features"));
      p.reference.labels = j.at("labels").get<std::vector<int>>();
      expect(!p.reference.labels.empty(), "knn reference set is empty");
      expect(p.reference.features.size() == p.reference.labels.size() * dim,
             "knn feature count does not match labels");
      for (int y : p.reference.labels) expect(y >= 0 && y < classes, "knn label out of range");
      return p;
    }
    case ModelKind::kGnb: {
      GnbParams p;
      p.means = reals_from_json(j.at("means"));
      p.variances = reals_from_json(j.at("variances"));
      p.log_priors = reals_from_json(j.at("log_priors"));
      expect(p.means.size() == c * dim && p.variances.size() == c * dim &&
                 p.log_priors.size() == c,
             "gnb parameter shapes do not match d and C");
      for (std::size_t k = 0; k < c; ++k) {
        if (std::isinf(p.log_priors[k])) continue;
        for (std::size_t f = 0; f < dim; ++f)
          expect(p.variances[k * dim + f] > 0.0, "gnb variance must be positive");
      }
      return p;
    }
    case ModelKind::kForest: {
      ForestParams p;
      const auto& trees = j.at("trees");
      expect(trees.is_array() && !trees.empty(), "forest needs at least one tree");
      for (const auto& t : trees) p.trees.push_back(tree_from_json(t, dim, classes));
      return p;
    }
    case ModelKind::kNn: {
      MlpParams p;
      p.input = dim;
      p.classes = c;
      p.hidden = j.at("hidden").get<std::size_t>();
      p.w1 = reals_from_json(j.at("w1"));
      p.b1 = reals_from_json(j.at("b1"));
      p.w2 = reals_from_json(j.at("w2"));
      p.b2 = reals_from_json(j.at("b2"));
      p.shift = reals_from_json(j.at("shift"));
      p.scale = reals_from_json(j.at("scale"));
      expect(p.hidden >= 1 && p.w1.size() == p.hidden * dim && p.b1.size() == p.hidden &&
                 p.w2.size() == c * p.hidden && p.b2.size() == c && p.shift.size() == dim &&
                 p.scale.size() == dim,
             "nn parameter shapes do not match d, hidden and C");
      return p;
    }
  }
  corrupt("unknown kind");
}

inline void check_version(const Json& j) {
  const auto& version = j.at("format_version");
  expect(version.is_number_integer(), "format_version must be an integer");
  if (version.get<long long>() != kModelFormatVersion) {
    throw Error("UnsupportedVersion",
                fmt::format("model format_version {} is not supported (expected {})",
                            version.dump(), kModelFormatVersion));
  }
}

// Runs `fn`, translating JSON access failures into CorruptModelFile.
template <typename Fn>
auto guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    corrupt(e.what());
  }
}

}  // namespace detail

inline Json to_json(const TrainedModel& m) {
  return {{"format_version", kModelFormatVersion},
          {"kind", std::string(to_string(m.kind))},
          {"hyper", detail::hyper_to_json(m.kind, m.hyper)},
          {"params", detail::params_to_json(m)},
          {"d", m.dim},
          {"C", m.classes},
          {"seed", m.seed}};
}

inline Json to_json(const PcaModel& m) {
  return {{"format_version", kModelFormatVersion},
          {"kind", "pca"},
          {"d", m.dim},
          {"params",
           {{"mean", detail::reals_to_json(m.mean)},
            {"components", detail::reals_to_json(m.components)},
            {"explained_variance", detail::reals_to_json(m.explained_variance)},
            {"total_variance", m.total_variance},
            {"rank_deficient", m.rank_deficient}}}};
}

inline TrainedModel trained_model_from_json(const Json& j) {
  return detail::guarded([&] {
    detail::expect(j.is_object(), "model must be a JSON object");
    detail::check_version(j);
    const auto kind = parse_model_kind(j.at("kind").get<std::string>());
    detail::expect(kind.has_value(), "unknown classifier kind");
    TrainedModel m;
    m.kind = *kind;
    m.dim = j.at("d").get<std::size_t>();
    m.classes = j.at("C").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    detail::expect(m.dim >= 1 && m.classes >= 2, "d must be >= 1 and C >= 2");
    m.hyper = detail::hyper_from_json(m.kind, j.at("hyper"));
    try {
      validate_hyperparams(m.kind, m.hyper);
    } catch (const Error& e) {
      detail::corrupt(e.what());
    }
    m.params = detail::params_from_json(m.kind, j.at("params"), m.dim, m.classes);
    return m;
  });
}

inline PcaModel pca_model_from_json(const Json& j) {
  return detail::guarded([&] {
    detail::expect(j.is_object(), "model must be a JSON object");
    detail::check_version(j);
    detail::expect(j.at("kind").get<std::string>() == "pca", "not a PCA model");
    PcaModel m;
    m.dim = j.at("d").get<std::size_t>();
    const auto& p = j.at("params");
    m.mean = detail::reals_from_json(p.at("mean"));
    m.components = detail::reals_from_json(p.at("components"));
    m.explained_variance = detail::reals_from_json(p.at("explained_variance"));
    m.total_variance = p.at("total_variance").get<double>();
    m.rank_deficient = p.at("rank_deficient").get<bool>();
    detail::expect(m.dim >= 1 && m.mean.size() == m.dim &&
                       m.components.size() == m.explained_variance.size() * m.dim,
                   "PCA shapes do not match d");
    return m;
  });
}

inline AnyModel model_from_json(const Json& j) {
  const bool is_pca = detail::guarded([&] {
    detail::expect(j.is_object(), "model must be a JSON object");
    return j.at("kind").get<std::string>() == "pca";
  });
  if (is_pca) return pca_model_from_json(j);
  return trained_model_from_json(j);
}

/// Parses model text; syntax errors carry the byte offset.
inline Json parse_model_text(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    detail::corrupt(e.what(), e.byte);
  }
}

inline void save_model(const AnyModel& model, const std::filesystem::path& path) {
  const Json j = std::visit([](const auto& m) { return to_json(m); }, model);
  write_file_text(path, j.dump() + "\n");
}

inline AnyModel load_model(const std::filesystem::path& path) {
  return model_from_json(parse_model_text(read_file_text(path)));
}

}  // namespace tracelens::models
