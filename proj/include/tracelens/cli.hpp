#pragma once

// The `tracelens` command line: synth, decode, pixels, tile, train, eval,
// score, explain, export-image.
//
// Exit codes: 0 success, 1 usage error (message and usage on the error
// stream), 2 data or model error (error name, byte offset when known).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "tracelens/error.hpp"
#include "tracelens/explain.hpp"
#include "tracelens/harness.hpp"
#include "tracelens/henet.hpp"
#include "tracelens/imaging.hpp"
#include "tracelens/io.hpp"
#include "tracelens/ptcodec.hpp"
#include "tracelens/synthgen.hpp"

namespace tracelens::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void usage_check(bool ok, const std::string& message) {
  if (!ok) throw UsageError(message);
}

inline std::string hex(std::span<const std::uint8_t> bytes) {
  std::string s;
  for (auto b : bytes) s += fmt::format("{:02x}", b);
  return s;
}

inline std::string packet_json(const Packet& p) {
  std::string line = fmt::format(R"({{"offset":{},"kind":"{}")", p.byte_offset, to_string(p.kind));
  if (is_tnt(p.kind)) {
    std::string bits;
    for (bool b : p.branches) bits += b ? '1' : '0';
    line += fmt::format(R"(,"branches":"{}")", bits);
  } else if (is_tip_family(p.kind)) {
    line += fmt::format(R"(,"code":{},"payload":"{}")", p.ip_bytes_code, hex(p.payload));
  }
  return line + "}";
}

struct PipelineFlags {
  int m = 28;
  std::string tail = "drop";
  bool tip_family = false;
  int channels = 1;
  int pool = 1;
  double threshold = 0.5;

  void add_to(CLI::App& app, bool model_flags) {
    app.add_option("--m", m, "Tile side in pixels")->capture_default_str();
    app.add_option("--tail", tail, "Trailing partial tile: drop|pad")
        ->check(CLI::IsMember({"drop", "pad"}))
        ->capture_default_str();
    app.add_flag("--tip-family", tip_family, "Also pixelize TIP.PGE, TIP.PGD and FUP payloads");
    if (!model_flags) return;
    app.add_option("--channels", channels, "Model input channels: 1|3")->capture_default_str();
    app.add_option("--pool", pool, "Block-mean pooling factor before the model")
        ->capture_default_str();
    app.add_option("--threshold", threshold, "Trace verdict threshold on the mean probability")
        ->capture_default_str();
  }

  PipelineConfig config() const {
    usage_check(m >= 1, fmt::format("--m must be >= 1 (got {})", m));
    usage_check(channels == 1 || channels == 3,
                fmt::format("--channels must be 1 or 3 (got {})", channels));
    usage_check(pool >= 1, fmt::format("--pool must be >= 1 (got {})", pool));
    usage_check(m % pool == 0, fmt::format("--pool {} must divide --m {}", pool, m));
    usage_check(threshold > 0.0 && threshold < 1.0,
                fmt::format("--threshold must lie in (0, 1) (got {})", threshold));
    return {.m = m,
            .tail = tail == "pad" ? TailPolicy::kPadZero : TailPolicy::kDrop,
            .tip_family = tip_family,
            .channels = channels,
            .pool = pool,
            .threshold = threshold};
  }
};

struct HyperFlags {
  models::Hyperparams h;

  void add_to(CLI::App& app) {
    app.add_option("--k", h.k, "knn: neighbours")->capture_default_str();
    app.add_option("--trees", h.forest.trees, "rf: number of trees")->capture_default_str();
    app.add_option("--max-depth", h.forest.max_depth, "rf: maximum depth")->capture_default_str();
    app.add_option("--hidden", h.nn.hidden, "nn: hidden width")->capture_default_str();
    app.add_option("--epochs", h.nn.epochs, "nn: training epochs")->capture_default_str();
    app.add_option("--learning-rate", h.nn.learning_rate, "nn: initial step size")
        ->capture_default_str();
    app.add_option("--batch-size", h.nn.batch_size, "nn: mini-batch size")->capture_default_str();
    app.add_option("--decay", h.nn.decay, "nn: step size in epoch e is rate / (1 + decay * e)")
        ->capture_default_str();
  }

  models::Hyperparams checked(models::ModelKind kind) const {
    try {
      models::validate_hyperparams(kind, h);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return h;
  }
};

inline void add_seed(CLI::App& app, std::uint64_t& seed, bool required) {
  auto* opt = app.add_option("--seed", seed, "Seed for every random choice");
  if (required) opt->required();
}

inline std::filesystem::path manifest_dir(const std::filesystem::path& manifest) {
  auto dir = manifest.parent_path();
  return dir.empty() ? std::filesystem::path(".") : dir;
}

inline std::vector<ImageTile> tiles_of_file(const std::string& path, const PipelineConfig& cfg,
                                            bool binary) {
  const auto bytes = read_file_bytes(path);
  if (!binary) return trace_tiles(bytes, cfg);
  const auto pixels = pixels_from_binary(bytes);
  if (pixels.empty()) return {};
  return slice_tiles(pixels, cfg.m, cfg.tail).tiles;
}

inline const ImageTile& pick_tile(const std::vector<ImageTile>& tiles, std::size_t k) {
  if (k < 1 || k > tiles.size()) {
    throw Error("TileOutOfRange",
                fmt::format("tile {} requested, input has {} tile(s)", k, tiles.size()));
  }
  return tiles[k - 1];
}

}  // namespace detail

/// Runs one invocation. `args` excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Control-flow trace imaging and hierarchical ensemble malware detection",
               "tracelens"};
  app.require_subcommand(1);
  app.set_help_flag("--help", "Print this help message and exit");
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  std::function<void()> action;

  // synth
  struct {
    std::size_t benign = 0, malicious = 0, length = 50'000;
    double rho = 0.3, test_fraction = 0.2;
    std::uint64_t seed = 0;
    std::string out;
  } synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a labeled synthetic trace dataset");
  synth_cmd->add_option("--benign", synth.benign, "Benign trace count")->required();
  synth_cmd->add_option("--malicious", synth.malicious, "Malicious trace count")->required();
  synth_cmd->add_option("--length", synth.length, "Pixels per trace")->capture_default_str();
  synth_cmd->add_option("--rho", synth.rho, "Fraction of malicious pixels inside gadget bursts")
      ->capture_default_str();
  synth_cmd->add_option("--test-fraction", synth.test_fraction,
                        "Stratified test share written to the split column; 0 leaves it empty")
      ->capture_default_str();
  detail::add_seed(*synth_cmd, synth.seed, true);
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->callback([&] {
    action = [&] {
      detail::usage_check(synth.rho >= 0.0 && synth.rho <= 1.0, "--rho must lie in [0, 1]");
      detail::usage_check(synth.test_fraction >= 0.0 && synth.test_fraction < 1.0,
                          "--test-fraction must lie in [0, 1)");
      SynthProfile base{.length = synth.length, .burst_rate = synth.rho};
      const auto path = gen_dataset(synth.benign, synth.malicious, base, synth.seed, synth.out);
      if (synth.test_fraction > 0.0) {
        Manifest tagged = load_manifest(path);
        const auto split = split_manifest(tagged, synth.test_fraction, synth.seed);
        std::set<std::string> test_paths;
        for (const auto& r : split.test.rows) test_paths.insert(r.path);
        for (auto& r : tagged.rows) r.split = test_paths.count(r.path) ? "test" : "train";
        write_file_text(path, manifest_to_csv(tagged));
      }
      out << fmt::format(R"({{"manifest":{},"traces":{}}})",
                         nlohmann::json(path.generic_string()).dump(),
                         synth.benign + synth.malicious)
          << "\n";
    };
  });

  // decode
  struct {
    std::string trace;
    bool strict = false;
  } decode;
  auto* decode_cmd = app.add_subcommand("decode", "Decode a trace into one JSON line per packet");
  decode_cmd->add_option("--trace", decode.trace, "Raw trace file")->required();
  decode_cmd->add_flag("--strict", decode.strict, "Fail on the first malformed byte");
  decode_cmd->callback([&] {
    action = [&] {
      const auto bytes = read_file_bytes(decode.trace);
      const auto report =
          decode_stream(bytes, decode.strict ? DecodeMode::kStrict : DecodeMode::kLenient);
      std::size_t d = 0;
      for (const auto& p : report.packets) {
        for (; d < report.diagnostics.size() && report.diagnostics[d].byte_offset < p.byte_offset; ++d) {
          out << fmt::format(R"({{"offset":{},"diagnostic":"{}"}})", report.diagnostics[d].byte_offset,
                             report.diagnostics[d].reason)
              << "\n";
        }
        out << detail::packet_json(p) << "\n";
      }
      for (; d < report.diagnostics.size(); ++d) {
        out << fmt::format(R"({{"offset":{},"diagnostic":"{}"}})", report.diagnostics[d].byte_offset,
                           report.diagnostics[d].reason)
            << "\n";
      }
    };
  });

  // pixels
  struct {
    std::string trace, out;
    bool tip_family = false;
  } pix;
  auto* pixels_cmd = app.add_subcommand("pixels", "Write the pixel stream of a trace as raw bytes");
  pixels_cmd->add_option("--trace", pix.trace, "Raw trace file")->required();
  pixels_cmd->add_flag("--tip-family", pix.tip_family,
                       "Also pixelize TIP.PGE, TIP.PGD and FUP payloads");
  pixels_cmd->add_option("--out", pix.out, "Output file for the pixel bytes")->required();
  pixels_cmd->callback([&] {
    action = [&] {
      const auto report = decode_stream(read_file_bytes(pix.trace), DecodeMode::kLenient);
      const auto x = pixels_from_packets(report.packets, pix.tip_family);
      write_file_bytes(pix.out, x.pixels);
      out << fmt::format(R"({{"pixels":{},"diagnostics":{}}})", x.size(), report.diagnostics.size())
          << "\n";
    };
  });

  // tile
  struct {
    std::string trace, out_dir;
    detail::PipelineFlags pipe;
  } tile;
  auto* tile_cmd = app.add_subcommand("tile", "Slice a trace into m x m tiles written as PGM files");
  tile_cmd->add_option("--trace", tile.trace, "Raw trace file")->required();
  tile.pipe.add_to(*tile_cmd, false);
  tile_cmd->add_option("--out-dir", tile.out_dir, "Directory for tile_NNNNN.pgm")->required();
  tile_cmd->callback([&] {
    action = [&] {
      const auto cfg = tile.pipe.config();
      const auto tiles = trace_tiles(read_file_bytes(tile.trace), cfg);
      std::error_code ec;
      std::filesystem::create_directories(tile.out_dir, ec);
      for (const auto& t : tiles) {
        write_netpbm(t, (std::filesystem::path(tile.out_dir) / fmt::format("tile_{:05d}.pgm", t.index))
                            .string());
      }
      out << fmt::format(R"({{"tiles":{},"m":{},"tail":"{}"}})", tiles.size(), cfg.m,
                         to_string(cfg.tail))
          << "\n";
    };
  });

  // train
  struct {
    std::string manifest, kind = "nn", out, name;
    std::uint64_t seed = 0;
    std::size_t pca = 0;
    detail::PipelineFlags pipe;
    detail::HyperFlags hyper;
  } train;
  auto* train_cmd = app.add_subcommand("train", "Train a tile model on the train rows of a manifest");
  train_cmd->add_option("--manifest", train.manifest, "Dataset manifest CSV")->required();
  train_cmd->add_option("--kind", train.kind, "Tile model: nn|knn|gnb|rf")
      ->check(CLI::IsMember({"nn", "knn", "gnb", "rf"}))
      ->capture_default_str();
  detail::add_seed(*train_cmd, train.seed, true);
  train_cmd->add_option("--out", train.out, "Model file to write")->required();
  train_cmd->add_option("--name", train.name, "Model name in tables (default henet-<kind>)");
  train_cmd->add_option("--pca", train.pca, "Project tiles onto this many principal components")
      ->capture_default_str();
  train.pipe.add_to(*train_cmd, true);
  train.hyper.add_to(*train_cmd);
  train_cmd->callback([&] {
    action = [&] {
      const auto cfg = train.pipe.config();
      const auto kind = *models::parse_model_kind(train.kind);
      const auto hyper = train.hyper.checked(kind);
      const auto manifest = select_split(load_manifest(train.manifest), "train");
      const auto traces = load_traces(manifest, detail::manifest_dir(train.manifest));
      const auto tiles = build_tile_dataset(traces, cfg);
      if (train.pca > 0) {
        try {
          models::pca_check_request(tiles.data.dim, tiles.data.size(), train.pca);
        } catch (const Error& e) {
          throw UsageError(fmt::format("--pca {}: {}", train.pca, e.what()));
        }
      }
      const auto model = henet_train(tiles.data, cfg, kind, hyper, train.seed, train.pca,
                                     train.name.empty() ? "henet-" + train.kind : train.name);
      save_henet_model(model, train.out);
      out << fmt::format(R"({{"model":{},"traces":{},"tiles":{}}})",
                         nlohmann::json(train.out).dump(), traces.size(), tiles.data.size())
          << "\n";
    };
  });

  // eval
  struct {
    std::string manifest, out;
    std::vector<std::string> models, configs;
    std::uint64_t seed = 0;
    std::size_t pca_rank = 50;
    detail::PipelineFlags pipe;
  } eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score the test rows of a manifest into a comparison table");
  eval_cmd->add_option("--manifest", eval.manifest, "Dataset manifest CSV")->required();
  eval_cmd->add_option("--model", eval.models, "Saved model to evaluate (repeatable)");
  eval_cmd->add_option("--config", eval.configs,
                       "Baseline trained here on the train rows: henet-nn|3nn|3nn+pca|gnb|rf+pca "
                       "(repeatable; default all when no --model is given)")
      ->check(CLI::IsMember({"henet-nn", "3nn", "3nn+pca", "gnb", "rf+pca"}));
  auto* eval_seed = eval_cmd->add_option("--seed", eval.seed, "Seed for baselines trained here");
  eval_cmd->add_option("--pca-rank", eval.pca_rank, "Components for the +pca baselines")
      ->capture_default_str();
  eval.pipe.add_to(*eval_cmd, true);
  eval_cmd->add_option("--out", eval.out, "Comparison table CSV to write")->required();
  eval_cmd->callback([&] {
    action = [&] {
      auto configs = eval.configs;
      if (configs.empty() && eval.models.empty()) {
        for (const auto& c : default_benchmark_configs()) configs.push_back(c.name);
      }
      detail::usage_check(configs.empty() || eval_seed->count() > 0,
                          "--seed is required when baselines are trained");
      detail::usage_check(eval.pca_rank >= 1, "--pca-rank must be >= 1");
      const auto cfg = eval.pipe.config();
      const auto manifest = load_manifest(eval.manifest);
      const auto dir = detail::manifest_dir(eval.manifest);
      const auto test = load_traces(select_split(manifest, "test"), dir);

      ComparisonTable table;
      for (const auto& path : eval.models) {
        table.rows.push_back(evaluate_model(load_henet_model(path), test));
      }
      if (!configs.empty()) {
        std::vector<BenchmarkConfig> chosen;
        const auto all = default_benchmark_configs(eval.pca_rank);
        for (const auto& name : configs) {
          chosen.push_back(*std::find_if(all.begin(), all.end(),
                                         [&](const BenchmarkConfig& c) { return c.name == name; }));
        }
        const auto train = load_traces(select_split(manifest, "train"), dir);
        const auto trained = benchmark_table(chosen, train, test, cfg, eval.seed);
        table.rows.insert(table.rows.end(), trained.rows.begin(), trained.rows.end());
      }
      write_file_text(eval.out, table.to_csv());
      std::size_t malicious = 0;
      for (const auto& t : test) malicious += t.label == TraceLabel::kMalicious ? 1 : 0;
      out << fmt::format("# test traces: {} ({} benign, {} malicious)\n", test.size(),
                         test.size() - malicious, malicious)
          << table.to_text();
    };
  });

  // score
  struct {
    std::string model;
    std::vector<std::string> traces;
    bool tiles = false;
  } score;
  auto* score_cmd = app.add_subcommand("score", "Print one JSON verdict line per trace");
  score_cmd->add_option("--model", score.model, "Saved model")->required();
  score_cmd->add_option("--trace", score.traces, "Raw trace file (repeatable)")->required();
  score_cmd->add_flag("--tiles", score.tiles, "Include per-tile probabilities");
  score_cmd->callback([&] {
    action = [&] {
      const auto model = load_henet_model(score.model);
      for (const auto& path : score.traces) {
        const auto verdict = henet_score_trace(model, read_file_bytes(path));
        out << verdict_json_line(path, verdict, score.tiles) << "\n";
      }
    };
  });

  // explain
  struct {
    std::string model, trace, out, heatmap, baseline = "mean";
    std::size_t tile = 1;
    ExplainOptions options;
  } expl;
  auto* explain_cmd = app.add_subcommand("explain", "Explain one tile's score with a region-grid surrogate");
  explain_cmd->add_option("--model", expl.model, "Saved model")->required();
  explain_cmd->add_option("--trace", expl.trace, "Raw trace file")->required();
  explain_cmd->add_option("--tile", expl.tile, "1-based tile index")->capture_default_str();
  explain_cmd->add_option("--grid", expl.options.grid, "Regions per tile side")->capture_default_str();
  explain_cmd->add_option("--samples", expl.options.samples, "Perturbed samples")
      ->capture_default_str();
  explain_cmd->add_option("--sigma", expl.options.sigma, "Locality kernel width")
      ->capture_default_str();
  explain_cmd->add_option("--baseline", expl.baseline, "Masked region fill: mean|zero")
      ->check(CLI::IsMember({"mean", "zero"}))
      ->capture_default_str();
  detail::add_seed(*explain_cmd, expl.options.seed, true);
  explain_cmd->add_option("--out", expl.out, "Explanation JSON to write")->required();
  explain_cmd->add_option("--heatmap", expl.heatmap, "Also write a PPM overlay of the weights");
  explain_cmd->callback([&] {
    action = [&] {
      detail::usage_check(expl.options.grid >= 1, "--grid must be >= 1");
      detail::usage_check(expl.options.samples >= expl.options.grid * expl.options.grid + 1,
                          "--samples must be at least grid^2 + 1");
      detail::usage_check(expl.options.sigma > 0.0, "--sigma must be > 0");
      expl.options.baseline = expl.baseline == "zero" ? MaskBaseline::kZero : MaskBaseline::kTileMean;
      const auto model = load_henet_model(expl.model);
      const auto tiles = trace_tiles(read_file_bytes(expl.trace), model.pipeline);
      const auto& t = detail::pick_tile(tiles, expl.tile);
      const auto ex = explain_tile(model, t, expl.options);
      auto j = to_json(ex);
      j["trace"] = expl.trace;
      j["tile"] = expl.tile;
      j["probability"] = tile_probability(model, t);
      write_file_text(expl.out, j.dump() + "\n");
      if (!expl.heatmap.empty()) write_netpbm(render_heatmap(t, ex), expl.heatmap);
      out << fmt::format(R"({{"explanation":{},"regions":{}}})", nlohmann::json(expl.out).dump(),
                         ex.weights.size())
          << "\n";
    };
  });

  // export-image
  struct {
    std::string trace, out;
    std::size_t tile = 1;
    int channels = 1;
    bool binary = false;
    detail::PipelineFlags pipe;
  } exp;
  auto* export_cmd = app.add_subcommand("export-image", "Write one tile as a PGM (1 channel) or PPM (3 channels)");
  export_cmd->add_option("--trace", exp.trace, "Raw trace file, or any file with --binary")
      ->required();
  exp.pipe.add_to(*export_cmd, false);
  export_cmd->add_option("--tile", exp.tile, "1-based tile index")->capture_default_str();
  export_cmd->add_option("--channels", exp.channels, "1 for PGM, 3 for PPM")->capture_default_str();
  export_cmd->add_flag("--binary", exp.binary, "Use the file's raw bytes as pixels");
  export_cmd->add_option("--out", exp.out, "Image file to write")->required();
  export_cmd->callback([&] {
    action = [&] {
      const auto cfg = exp.pipe.config();
      detail::usage_check(exp.channels == 1 || exp.channels == 3, "--channels must be 1 or 3");
      const auto tiles = detail::tiles_of_file(exp.trace, cfg, exp.binary);
      const auto& t = detail::pick_tile(tiles, exp.tile);
      write_netpbm(exp.channels == 3 ? replicate_channels(t) : t, exp.out);
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help("tracelens"));
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help("tracelens"));
    return kExitUsage;
  }

  try {
    action();
    return kExitOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << app.get_subcommands().front()->help("tracelens");
    return kExitUsage;
  } catch (const Error& e) {
    if (e.code() == "PreconditionViolation") {
      err << "error: " << e.what() << "\n" << app.get_subcommands().front()->help("tracelens");
      return kExitUsage;
    }
    if (e.offset()) {
      err << fmt::format("error: {} at byte {}: {}\n", e.code(), *e.offset(), e.what());
    } else {
      err << fmt::format("error: {}: {}\n", e.code(), e.what());
    }
    return kExitData;
  } catch (const std::bad_alloc&) {
    err << "error: OutOfMemory: input too large\n";
    return kExitData;
  }
}

}  // namespace tracelens::cli
