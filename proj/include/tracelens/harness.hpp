#pragma once

// Dataset manifests, train/test splits, classification metrics and
// comparison tables.
//
// Manifest CSV: header "path,label,split", LF line endings, split one of
// "train", "test" or empty. Paths are relative to the manifest directory.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "tracelens/error.hpp"
#include "tracelens/henet.hpp"
#include "tracelens/io.hpp"
#include "tracelens/models/classifier.hpp"
#include "tracelens/random.hpp"

namespace tracelens {

struct ManifestRow {
  std::string path;
  std::string label;
  std::string split;

  bool operator==(const ManifestRow&) const = default;
};

struct Manifest {
  std::vector<ManifestRow> rows;
  std::vector<std::string> vocabulary = {"benign", "malicious"};

  int label_index(std::string_view label) const {
    for (std::size_t i = 0; i < vocabulary.size(); ++i) {
      if (vocabulary[i] == label) return static_cast<int>(i);
    }
    return -1;
  }

  bool operator==(const Manifest&) const = default;
};

inline constexpr std::string_view kManifestHeader = "path,label,split";

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.emplace_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

}  // namespace detail

inline Manifest parse_manifest(std::string_view text,
                               std::vector<std::string> vocabulary = {"benign", "malicious"}) {
  Manifest manifest{.vocabulary = std::move(vocabulary)};
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  auto parse_error = [&](std::string_view why) {
    throw Error("ParseError", fmt::format("manifest line {}: {}", line_no, why));
  };
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header_seen) {
      if (line != kManifestHeader) parse_error("expected header \"path,label,split\"");
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != 3) parse_error(fmt::format("expected 3 columns, found {}", fields.size()));
    if (fields[0].empty()) parse_error("empty path");
    if (manifest.label_index(fields[1]) < 0) parse_error(fmt::format("unknown label \"{}\"", fields[1]));
    if (!fields[2].empty() && fields[2] != "train" && fields[2] != "test") {
      parse_error(fmt::format("split must be train, test or empty, got \"{}\"", fields[2]));
    }
    if (!seen.insert(fields[0]).second) {
      throw Error("DuplicatePath", fmt::format("manifest line {}: duplicate path {}", line_no, fields[0]));
    }
    manifest.rows.push_back({std::move(fields[0]), std::move(fields[1]), std::move(fields[2])});
  }
  if (!header_seen) {
    line_no = 1;
    parse_error("missing header");
  }
  return manifest;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file_text(path));
}

inline std::string manifest_to_csv(const Manifest& manifest) {
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& r : manifest.rows) out += fmt::format("{},{},{}\n", r.path, r.label, r.split);
  return out;
}

struct ManifestSplit {
  Manifest train;
  Manifest test;
};

/// Seeded partition. Stratified mode draws round(fraction * class size)
/// test rows per class; rows keep their manifest order in both halves and
/// carry the matching split tag.
inline ManifestSplit split_manifest(const Manifest& manifest, double test_fraction,
                                    std::uint64_t seed, bool stratified = true) {
  detail::require(test_fraction > 0.0 && test_fraction < 1.0, "test fraction must lie in (0, 1)");
  Rng rng(seed);
  std::vector<char> is_test(manifest.rows.size(), 0);
  auto draw = [&](std::vector<std::size_t> members) {
    rng.shuffle(std::span(members));
    const auto take = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < take; ++i) is_test[members[i]] = 1;
  };
  if (stratified) {
    for (const auto& label : manifest.vocabulary) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
        if (manifest.rows[i].label == label) members.push_back(i);
      }
      if (members.empty()) continue;
      if (members.size() < 2) {
        throw Error("ClassTooSmall",
                    fmt::format("class \"{}\" has fewer than 2 rows; cannot stratify", label));
      }
      draw(std::move(members));
    }
  } else {
    std::vector<std::size_t> all(manifest.rows.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    draw(std::move(all));
  }
  ManifestSplit out{.train = {.vocabulary = manifest.vocabulary},
                    .test = {.vocabulary = manifest.vocabulary}};
  for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
    ManifestRow row = manifest.rows[i];
    row.split = is_test[i] ? "test" : "train";
    (is_test[i] ? out.test : out.train).rows.push_back(std::move(row));
  }
  return out;
}

/// Rows tagged `split`; when no row carries any tag, all rows.
inline Manifest select_split(const Manifest& manifest, std::string_view split) {
  const bool tagged = std::any_of(manifest.rows.begin(), manifest.rows.end(),
                                  [](const ManifestRow& r) { return !r.split.empty(); });
  Manifest out{.vocabulary = manifest.vocabulary};
  for (const auto& r : manifest.rows) {
    if (!tagged || r.split == split) out.rows.push_back(r);
  }
  return out;
}

inline std::vector<LabeledTrace> load_traces(const Manifest& manifest,
                                             const std::filesystem::path& base_dir) {
  std::vector<LabeledTrace> traces;
  traces.reserve(manifest.rows.size());
  for (const auto& r : manifest.rows) {
    traces.push_back({r.path, read_file_bytes(base_dir / r.path),
                      manifest.label_index(r.label) == kMaliciousClass ? TraceLabel::kMalicious
                                                                       : TraceLabel::kBenign});
  }
  return traces;
}

/// Confusion matrix rows are true classes, columns predicted classes.
/// In the binary case class 1 ("malicious") is the positive class and
/// fpr/tpr/f1 refer to it; otherwise they are one-vs-rest macro averages.
struct Metrics {
  int classes = 2;
  std::vector<std::size_t> confusion;
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  std::vector<double> class_fpr;
  std::vector<double> class_tpr;
  std::vector<double> class_f1;
  double fpr_macro = 0.0;
  double tpr_macro = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
  double f1 = 0.0;

  std::size_t count(int truth, int predicted) const {
    return confusion[static_cast<std::size_t>(truth * classes + predicted)];
  }
};

inline Metrics compute_metrics(std::span<const int> predicted, std::span<const int> truth,
                               int classes = 2) {
  if (predicted.size() != truth.size()) {
    throw Error("LengthMismatch", fmt::format("{} predictions for {} labels", predicted.size(),
                                              truth.size()));
  }
  detail::require(classes >= 2, "class count must be >= 2");
  const auto c_count = static_cast<std::size_t>(classes);
  Metrics m{.classes = classes, .confusion = std::vector<std::size_t>(c_count * c_count, 0)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    detail::require(truth[i] >= 0 && truth[i] < classes && predicted[i] >= 0 &&
                        predicted[i] < classes,
                    "label out of range");
    ++m.confusion[static_cast<std::size_t>(truth[i]) * c_count + static_cast<std::size_t>(predicted[i])];
    if (truth[i] == predicted[i]) ++m.correct;
  }
  m.total = truth.size();
  m.accuracy = m.total == 0 ? 0.0 : static_cast<double>(m.correct) / static_cast<double>(m.total);

  auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  for (int c = 0; c < classes; ++c) {
    std::size_t tp = m.count(c, c), fn = 0, fp = 0;
    for (int o = 0; o < classes; ++o) {
      if (o == c) continue;
      fn += m.count(c, o);
      fp += m.count(o, c);
    }
    const std::size_t tn = m.total - tp - fn - fp;
    const double precision = ratio(tp, tp + fp);
    const double recall = ratio(tp, tp + fn);
    m.class_fpr.push_back(ratio(fp, fp + tn));
    m.class_tpr.push_back(recall);
    m.class_f1.push_back(precision + recall == 0.0 ? 0.0
                                                   : 2.0 * precision * recall / (precision + recall));
  }
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  m.fpr_macro = mean(m.class_fpr);
  m.tpr_macro = mean(m.class_tpr);
  if (classes == 2) {
    m.fpr = m.class_fpr[1];
    m.tpr = m.class_tpr[1];
    m.f1 = m.class_f1[1];
  } else {
    m.fpr = m.fpr_macro;
    m.tpr = m.tpr_macro;
    m.f1 = mean(m.class_f1);
  }
  return m;
}

// Comparison tables.

struct BenchmarkConfig {
  std::string name;
  models::ModelKind kind = models::ModelKind::kNn;
  models::Hyperparams hyper;
  std::size_t pca_rank = 0;
};

/// The baseline matrix: shallow nn, 3-NN, 3-NN + PCA, Gaussian naive Bayes,
/// random forest + PCA.
inline std::vector<BenchmarkConfig> default_benchmark_configs(std::size_t pca_rank = 50) {
  models::Hyperparams knn;
  knn.k = 3;
  return {
      {"henet-nn", models::ModelKind::kNn, models::Hyperparams{}, 0},
      {"3nn", models::ModelKind::kKnn, knn, 0},
      {"3nn+pca", models::ModelKind::kKnn, knn, pca_rank},
      {"gnb", models::ModelKind::kGnb, models::Hyperparams{}, 0},
      {"rf+pca", models::ModelKind::kForest, models::Hyperparams{}, pca_rank},
  };
}

inline std::string resolution_label(const HenetModel& model) {
  if (!model.reducer) return resolution_label(model.pipeline);
  const int side = model.pipeline.m / model.pipeline.pool;
  const std::string base = model.pipeline.channels == 1
                               ? fmt::format("{}²", side)
                               : fmt::format("{}²×{}", side, model.pipeline.channels);
  return fmt::format("{}→{}", base, model.reducer->rank());
}

struct TableRow {
  std::string name;
  Metrics metrics;
  std::string resolution;
};

struct ComparisonTable {
  std::vector<TableRow> rows;

  std::string to_csv() const {
    std::string out = "name,accuracy,fpr,tpr,f1,resolution\n";
    for (const auto& r : rows) {
      out += fmt::format("{},{:.4f},{:#.4g},{:.4f},{:.4f},{}\n", r.name, r.metrics.accuracy,
                         r.metrics.fpr, r.metrics.tpr, r.metrics.f1, r.resolution);
    }
    return out;
  }

  std::string to_text() const {
    std::vector<std::vector<std::string>> cells = {
        {"model", "accuracy", "FPR", "TPR", "F1", "resolution"}};
    for (const auto& r : rows) {
      cells.push_back({r.name, fmt::format("{:.4f}", r.metrics.accuracy),
                       fmt::format("{:#.4g}", r.metrics.fpr), fmt::format("{:.4f}", r.metrics.tpr),
                       fmt::format("{:.4f}", r.metrics.f1), r.resolution});
    }
    // Width in code points so the multiplication signs line up.
    auto width = [](const std::string& s) {
      return static_cast<std::size_t>(std::count_if(
          s.begin(), s.end(), [](char ch) { return (static_cast<unsigned char>(ch) & 0xC0) != 0x80; }));
    };
    std::vector<std::size_t> widths(cells[0].size(), 0);
    for (const auto& row : cells)
      for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], width(row[c]));
    std::string out;
    for (const auto& row : cells) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        out += row[c];
        if (c + 1 < row.size()) out += std::string(widths[c] - width(row[c]) + 2, ' ');
      }
      out += '\n';
    }
    return out;
  }
};

struct TraceEvaluation {
  std::vector<int> truth;
  std::vector<int> predicted;
  std::vector<TraceVerdict> verdicts;
  /// Tile-level predictions (argmax of p_k against 0.5) over every tile.
  std::vector<int> tile_truth;
  std::vector<int> tile_predicted;
};

inline TraceEvaluation evaluate_traces(const HenetModel& model, std::span<const LabeledTrace> traces) {
  TraceEvaluation ev;
  for (const auto& t : traces) {
    auto verdict = henet_score_trace(model, t.bytes);
    ev.truth.push_back(static_cast<int>(t.label));
    ev.predicted.push_back(static_cast<int>(verdict.label));
    for (double p : verdict.tile_probabilities) {
      ev.tile_truth.push_back(static_cast<int>(t.label));
      ev.tile_predicted.push_back(p >= 0.5 ? kMaliciousClass : 0);
    }
    ev.verdicts.push_back(std::move(verdict));
  }
  return ev;
}

inline TableRow evaluate_model(const HenetModel& model, std::span<const LabeledTrace> test) {
  const auto ev = evaluate_traces(model, test);
  return {model.name, compute_metrics(ev.predicted, ev.truth), resolution_label(model)};
}

inline HenetModel train_config(const BenchmarkConfig& config, const LabeledDataset& tiles,
                               const PipelineConfig& cfg, std::uint64_t seed) {
  return henet_train(tiles, cfg, config.kind, config.hyper, seed, config.pca_rank, config.name);
}

/// Trains every config on the same training tiles and scores the same test
/// traces; rows come out in config order.
inline ComparisonTable benchmark_table(std::span<const BenchmarkConfig> configs,
                                       std::span<const LabeledTrace> train,
                                       std::span<const LabeledTrace> test,
                                       const PipelineConfig& cfg, std::uint64_t seed) {
  auto has_both = [](std::span<const LabeledTrace> traces) {
    bool benign = false, malicious = false;
    for (const auto& t : traces) (t.label == TraceLabel::kMalicious ? malicious : benign) = true;
    return benign && malicious;
  };
  detail::require(has_both(train) && has_both(test), "both classes must appear in both splits");
  const auto tiles = build_tile_dataset(train, cfg);
  ComparisonTable table;
  for (const auto& config : configs) {
    table.rows.push_back(evaluate_model(train_config(config, tiles.data, cfg, seed), test));
  }
  return table;
}

}  // namespace tracelens
