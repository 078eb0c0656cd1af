// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. Every tolerance is fixed below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "tracelens/tracelens.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace tracelens;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kBenchSeed = 42;
constexpr std::size_t kBenchPerClass = 100;
constexpr double kBenchMinNnAccuracy = 0.95;
constexpr double kBenchMaxSeconds = 180.0;
constexpr std::size_t kCodecSequences = 100'000;
constexpr std::size_t kFuzzBytes = 1'000'000;
constexpr double kGradientTolerance = 1e-4;
constexpr double kOrthonormalTolerance = 1e-8;
constexpr double kOracleTolerance = 1e-6;
constexpr double kMseSlack = 1e-12;
constexpr std::size_t kKnnQueries = 200;
constexpr double kMinSpearman = 0.9;
constexpr double kConstantWeightTolerance = 1e-6;
constexpr double kMetricTolerance = 1e-12;

struct Outcome {
  bool pass = false;
  std::string detail;
};

/// Benchmark state shared by criteria 2 and 10.
struct Bench {
  std::vector<LabeledTrace> train, test;
  LabeledDataset tiles;
  std::vector<HenetModel> models;
  std::vector<TraceEvaluation> evals;
  ComparisonTable table;
  double seconds = 0.0;
};

Bench& bench() {
  static Bench b;
  return b;
}

Outcome run_benchmark() {
  auto& b = bench();
  const auto start = std::chrono::steady_clock::now();
  const auto dir = testing_support::scratch_dir("acceptance_bench");
  const auto manifest = load_manifest(gen_dataset(kBenchPerClass, kBenchPerClass, SynthProfile{}, kBenchSeed, dir));
  const auto split = split_manifest(manifest, 0.2, kBenchSeed);
  b.train = load_traces(split.train, dir);
  b.test = load_traces(split.test, dir);
  b.tiles = build_tile_dataset(b.train, PipelineConfig{}).data;
  for (const auto& config : default_benchmark_configs()) {
    b.models.push_back(train_config(config, b.tiles, PipelineConfig{}, kBenchSeed));
    b.evals.push_back(evaluate_traces(b.models.back(), b.test));
    b.table.rows.push_back({config.name, compute_metrics(b.evals.back().predicted, b.evals.back().truth),
                            resolution_label(b.models.back())});
  }
  b.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {};
}

Outcome criterion_computed_rows() {
  const auto rows = bench().table.rows;
  std::vector<std::string> names;
  for (const auto& r : rows) names.push_back(r.name);
  std::vector<std::string> expected;
  for (const auto& c : default_benchmark_configs()) expected.push_back(c.name);
  const bool ok = names == expected && rows.size() == bench().evals.size();
  return {ok, fmt::format("{} table rows, all computed from the synthetic test split", rows.size())};
}

Outcome criterion_benchmark() {
  const auto& b = bench();
  const auto& nn = b.evals[0];
  const auto nn_trace = compute_metrics(nn.predicted, nn.truth).accuracy;
  const auto nn_tile = compute_metrics(nn.tile_predicted, nn.tile_truth).accuracy;
  double gnb = -1.0;
  for (const auto& r : b.table.rows) {
    if (r.name == "gnb") gnb = r.metrics.accuracy;
  }
  const bool ok = nn_trace >= kBenchMinNnAccuracy && nn_trace >= nn_tile && gnb < nn_trace &&
                  b.seconds < kBenchMaxSeconds;
  return {ok, fmt::format("seed {}, {}+{} traces: nn trace acc {:.4f} (>= {}), nn tile acc {:.4f}, "
                          "gnb {:.4f} (< nn), {:.1f}s (< {:.0f}s)",
                          kBenchSeed, kBenchPerClass, kBenchPerClass, nn_trace, kBenchMinNnAccuracy,
                          nn_tile, gnb, b.seconds, kBenchMaxSeconds)};
}

Outcome criterion_codec() {
  Rng rng(101);
  for (std::size_t i = 0; i < kCodecSequences; ++i) {
    const auto packets = testing_support::random_packets(rng, rng.between(1, 12));
    const auto bytes = encode_stream(packets);
    const auto back = decode_stream(bytes, DecodeMode::kStrict);
    if (back.packets != packets || !back.diagnostics.empty()) {
      return {false, fmt::format("round trip differs on sequence {}", i)};
    }
  }
  std::size_t fuzzed = 0, buffers = 0, diagnostics = 0;
  while (fuzzed < kFuzzBytes) {
    std::vector<std::uint8_t> buf(rng.between(1, 4096));
    for (auto& v : buf) v = static_cast<std::uint8_t>(rng.below(256));
    try {
      const auto report = decode_stream(buf, DecodeMode::kLenient);
      std::size_t last = 0;
      bool first = true;
      for (const auto& d : report.diagnostics) {
        if (d.byte_offset >= buf.size() || (!first && d.byte_offset <= last)) {
          return {false, fmt::format("diagnostic offset {} out of order in buffer {}", d.byte_offset, buffers)};
        }
        last = d.byte_offset;
        first = false;
      }
      for (const auto& p : report.packets) {
        if (p.byte_offset >= buf.size()) return {false, "packet offset past end of buffer"};
      }
      diagnostics += report.diagnostics.size();
    } catch (const std::exception& e) {
      return {false, fmt::format("lenient decode threw on buffer {}: {}", buffers, e.what())};
    }
    fuzzed += buf.size();
    ++buffers;
  }
  return {true, fmt::format("{} sequences round-trip; {} fuzz bytes in {} buffers decoded leniently "
                            "({} diagnostics)",
                            kCodecSequences, fuzzed, buffers, diagnostics)};
}

Outcome criterion_slicing() {
  Rng rng(102);
  std::size_t cases = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const int m = static_cast<int>(rng.between(1, 64));
    const std::size_t area = static_cast<std::size_t>(m) * static_cast<std::size_t>(m);
    PixelArray x;
    x.pixels.resize(rng.between(1, 20'000));
    for (auto& v : x.pixels) v = static_cast<std::uint8_t>(rng.below(256));
    const std::size_t length = x.size();
    const auto dropped = slice_tiles(x, m, TailPolicy::kDrop);
    const auto padded = slice_tiles(x, m, TailPolicy::kPadZero);
    if (dropped.n() != length / area || padded.n() != (length + area - 1) / area) {
      return {false, fmt::format("tile count wrong for L={} m={}", length, m)};
    }
    std::vector<std::uint8_t> joined;
    for (const auto& t : padded.tiles) joined.insert(joined.end(), t.values.begin(), t.values.end());
    for (std::size_t i = 0; i < joined.size(); ++i) {
      if (joined[i] != (i < length ? x.pixels[i] : 0)) {
        return {false, fmt::format("tile content mismatch at pixel {} for L={} m={}", i, length, m)};
      }
    }
    for (std::size_t k = 0; k < dropped.n(); ++k) {
      if (dropped.tiles[k].values != padded.tiles[k].values || dropped.tiles[k].index != k + 1) {
        return {false, "drop and pad disagree on full tiles"};
      }
    }
    ++cases;
  }
  return {true, fmt::format("{} random (L, m) cases: n = floor(L/m^2), row-major contiguous tiles, "
                            "zero padding",
                            cases)};
}

Outcome criterion_gradient() {
  Rng rng(103);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto dim = rng.between(1, 16);
    const auto hidden = rng.between(1, 8);
    const auto batch = testing_support::random_dataset(rng, rng.between(1, 8), dim);
    Rng init(rng.next());
    models::TrainedModel m{.kind = models::ModelKind::kNn, .classes = 2, .dim = dim,
                           .params = models::mlp_init(dim, hidden, 2, init)};
    auto& p = std::get<models::MlpParams>(m.params);
    for (auto& b : p.b1) b = rng.uniform(-0.5, 0.5);
    for (auto& b : p.b2) b = rng.uniform(-0.5, 0.5);
    worst = std::max(worst, models::nn_gradient_check(m, batch));
  }
  return {worst < kGradientTolerance,
          fmt::format("max relative gradient error {:.3e} over 20 nets (< {:.0e})", worst, kGradientTolerance)};
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Outcome criterion_pca() {
  Rng rng(104);
  double ortho = 0.0, oracle = 0.0;
  bool monotone = true;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = rng.between(3, 14), dim = rng.between(1, 9);
    std::vector<double> data(n * dim);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dim; ++j) data[i * dim + j] = rng.uniform(-1.0, 1.0) * static_cast<double>(j + 1);
    const std::size_t rank = std::min(dim, n - 1);
    const auto model = models::pca_fit(data, dim, rank);
    const auto truth = oracles::jacobi_eigen(oracles::covariance(data, dim));
    for (std::size_t i = 0; i < rank; ++i) {
      for (std::size_t j = 0; j < rank; ++j) {
        ortho = std::max(ortho, std::abs(dot(model.component(i), model.component(j)) - (i == j ? 1.0 : 0.0)));
      }
      oracle = std::max(oracle, std::abs(model.explained_variance[i] - truth.values[i]));
      const double sign = dot(model.component(i), truth.vectors[i]) < 0 ? -1.0 : 1.0;
      for (std::size_t j = 0; j < dim; ++j) {
        oracle = std::max(oracle, std::abs(model.component(i)[j] - sign * truth.vectors[i][j]));
      }
    }
    double previous = INFINITY;
    for (std::size_t r = 1; r <= rank; ++r) {
      const auto m = models::pca_fit(data, dim, r);
      double mse = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::span row(data.data() + i * dim, dim);
        const auto back = models::pca_reconstruct(m, models::pca_transform(m, row));
        for (std::size_t j = 0; j < dim; ++j) mse += (back[j] - row[j]) * (back[j] - row[j]);
      }
      mse /= static_cast<double>(n * dim);
      if (mse > previous + kMseSlack) monotone = false;
      previous = mse;
    }
  }
  const bool ok = ortho <= kOrthonormalTolerance && oracle <= kOracleTolerance && monotone;
  return {ok, fmt::format("orthonormality error {:.2e} (<= {:.0e}), Jacobi disagreement {:.2e} (<= {:.0e}), "
                          "reconstruction MSE {} in rank",
                          ortho, kOrthonormalTolerance, oracle, kOracleTolerance,
                          monotone ? "nonincreasing" : "NOT nonincreasing")};
}

Outcome criterion_knn() {
  Rng rng(105);
  std::size_t mismatches = 0;
  for (std::size_t q = 0; q < kKnnQueries; ++q) {
    const std::size_t dim = rng.between(1, 6);
    const int classes = static_cast<int>(rng.between(2, 4));
    LabeledDataset ref{.dim = dim, .classes = classes};
    std::vector<double> x(dim);
    const auto n = rng.between(1, 60);
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& v : x) v = static_cast<double>(rng.between(0, 4));
      ref.add(x, static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
    }
    for (auto& v : x) v = static_cast<double>(rng.between(0, 4));
    const int k = static_cast<int>(rng.between(1, 9));
    if (models::knn_predict(models::knn_fit(ref), k, x) != oracles::knn_oracle(ref, k, x)) ++mismatches;
  }
  return {mismatches == 0, fmt::format("{} queries on tie-heavy integer grids, {} mismatches against "
                                       "the exhaustive oracle",
                                       kKnnQueries, mismatches)};
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size(); ++i) r[order[i]] = static_cast<double>(i);
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

Outcome criterion_explainer() {
  Rng rng(106);
  ImageTile tile{.side = 28, .channels = 1};
  tile.values.resize(784);
  for (auto& v : tile.values) v = static_cast<std::uint8_t>(rng.below(256));
  std::vector<double> planted(16);
  for (auto& w : planted) w = rng.uniform(-2.0, 2.0);
  const TileScorer scorer = [&](const ImageTile& t) {
    std::vector<double> energy(16, 0.0);
    for (int r = 0; r < 28; ++r)
      for (int c = 0; c < 28; ++c)
        energy[static_cast<std::size_t>(detail::region_of(r, c, 28, 4))] +=
            std::abs(t.values[static_cast<std::size_t>(r * 28 + c)] - 128.0) / (128.0 * 49.0);
    double z = 0.0;
    for (std::size_t i = 0; i < 16; ++i) z += planted[i] * energy[i];
    return 1.0 / (1.0 + std::exp(-z));
  };
  const auto ex = explain_tile(scorer, tile, {.grid = 4, .samples = 2000, .seed = 7});
  const double rho = spearman(ex.weights, planted);
  const auto flat = explain_tile([](const ImageTile&) { return 0.42; }, tile, {.grid = 4, .samples = 2000, .seed = 7});
  double worst = 0.0;
  for (double w : flat.weights) worst = std::max(worst, std::abs(w));
  return {rho >= kMinSpearman && worst <= kConstantWeightTolerance,
          fmt::format("planted model Spearman {:.4f} (>= {}) at N=2000, g=4, m=28; constant model "
                      "max |w| {:.2e} (<= {:.0e})",
                      rho, kMinSpearman, worst, kConstantWeightTolerance)};
}

Outcome criterion_metrics() {
  std::vector<int> truth, predicted;
  auto add = [&](int t, int p, int count) {
    for (int i = 0; i < count; ++i) {
      truth.push_back(t);
      predicted.push_back(p);
    }
  };
  add(1, 1, 9);
  add(1, 0, 1);
  add(0, 0, 8);
  add(0, 1, 2);
  const auto m = compute_metrics(predicted, truth);
  const bool ok = std::abs(m.accuracy - 0.85) <= kMetricTolerance && std::abs(m.fpr - 0.2) <= kMetricTolerance &&
                  std::abs(m.tpr - 0.9) <= kMetricTolerance;
  return {ok, fmt::format("TP/FN/TN/FP = 9/1/8/2 gives accuracy {:.4f}, FPR {:.4f}, TPR {:.4f}", m.accuracy,
                          m.fpr, m.tpr)};
}

Outcome criterion_quickstart() {
  const auto work = testing_support::scratch_dir("acceptance_quickstart");
  const auto data = (work / "data").string();
  auto r = testing_support::run_tool({"synth", "--benign", "100", "--malicious", "100", "--seed", "42", "--out", data},
                                     work);
  if (r.status != 0) return {false, "synth failed: " + r.err};
  r = testing_support::run_tool({"eval", "--manifest", data + "/manifest.csv", "--seed", "42", "--out",
                                 (work / "table.csv").string()},
                                work);
  if (r.status != 0) return {false, "eval failed: " + r.err};
  const fs::path golden(TRACELENS_GOLDEN_DIR);
  const bool table_ok =
      testing_support::slurp(work / "table.csv") == testing_support::slurp(golden / "quickstart_table.csv");
  const bool in_process_ok = bench().table.to_csv() == testing_support::slurp(golden / "quickstart_table.csv");

  bool images_ok = true;
  for (const auto& [channels, name] : {std::pair{"1", "trace_00001_tile3.pgm"}, std::pair{"3", "trace_00001_tile3.ppm"}}) {
    r = testing_support::run_tool({"export-image", "--trace", data + "/trace_00001.pt", "--tile", "3", "--channels",
                                   channels, "--out", (work / name).string()},
                                  work);
    images_ok = images_ok && r.status == 0 &&
                testing_support::slurp(work / name) == testing_support::slurp(golden / name);
  }

  bool io_ok = true;
  std::size_t compared = 0;
  for (const auto& model : bench().models) {
    save_henet_model(model, work / "model.json");
    const auto loaded = load_henet_model(work / "model.json");
    for (const auto& t : bench().test) {
      io_ok = io_ok && henet_score_trace(loaded, t.bytes).tile_probabilities ==
                           henet_score_trace(model, t.bytes).tile_probabilities;
      ++compared;
    }
  }
  return {table_ok && in_process_ok && images_ok && io_ok,
          fmt::format("quickstart CSV {} golden (in-process table {}); PGM/PPM {} golden; "
                      "save/load predictions {} on {} model-trace pairs",
                      table_ok ? "matches" : "DIFFERS from", in_process_ok ? "matches" : "DIFFERS",
                      images_ok ? "match" : "DIFFER from", io_ok ? "bitwise equal" : "DIFFER", compared)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"table holds computed rows only", criterion_computed_rows},
      {"synthetic benchmark", criterion_benchmark},
      {"codec round trip and lenient fuzz", criterion_codec},
      {"slicing law", criterion_slicing},
      {"nn gradient check", criterion_gradient},
      {"pca orthonormality, oracle, monotone MSE", criterion_pca},
      {"knn exhaustive oracle", criterion_knn},
      {"explainer fidelity", criterion_explainer},
      {"metrics fixture", criterion_metrics},
      {"quickstart goldens and model round trip", criterion_quickstart},
  };
  std::string bench_error;
  try {
    run_benchmark();
  } catch (const std::exception& e) {
    bench_error = e.what();
  }
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const bool needs_bench = i == 0 || i == 1 || i == 9;
    if (needs_bench && !bench_error.empty()) {
      o = {false, "benchmark failed: " + bench_error};
    } else {
      try {
        o = criteria[i].second();
      } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
      }
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s [%2zu] %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
