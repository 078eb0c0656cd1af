#pragma once

// Synthetic control-flow traces with ground truth.
//
// Benign traces model one application: after a PSB, runs of TNT packets
// (branch bits Bernoulli(p_taken), run length geometric with mean 12)
// alternate with short runs of TIP packets whose targets come from a small
// pool of function entries inside one 2^20-byte region. The pool depends
// only on `application_seed`, so every trace of the application shares it.
//
// Malicious traces are the same process with gadget-chain bursts spliced
// in: back-to-back TIPs to uniform random 48-bit addresses, each
// optionally followed by a 1-2 bit TNT. Bursts cover about `burst_rate` of
// the pixel stream.
//
// TIP payloads use last-IP compression (the shortest code that reproduces
// the target), so every stream decodes strictly and reconstruct_ips
// recovers the generated addresses.
//
// Randomness: std::mt19937_64 seeded with `seed` (see random.hpp).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "tracelens/error.hpp"
#include "tracelens/henet.hpp"
#include "tracelens/io.hpp"
#include "tracelens/ptcodec.hpp"
#include "tracelens/random.hpp"

namespace tracelens {

struct SynthProfile {
  TraceLabel kind = TraceLabel::kBenign;
  /// Target pixel count; generation stops at the first packet boundary at
  /// or past it.
  std::size_t length = 50'000;
  double p_taken = 0.5;
  std::size_t address_pool = 64;
  /// Fraction of pixels inside gadget bursts. Malicious only.
  double burst_rate = 0.3;
  std::size_t burst_min = 256;
  std::size_t burst_max = 2048;
  std::uint64_t seed = 0;
  std::uint64_t application_seed = 0xA11CE;
};

inline void validate(const SynthProfile& p) {
  detail::require(p.p_taken >= 0.0 && p.p_taken <= 1.0, "p_taken must lie in [0, 1]");
  detail::require(p.burst_rate >= 0.0 && p.burst_rate <= 1.0, "burst rate must lie in [0, 1]");
  detail::require(p.address_pool >= 1, "address pool must be nonempty");
  detail::require(p.burst_min >= 1 && p.burst_min <= p.burst_max, "need 1 <= burst_min <= burst_max");
}

struct ByteRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool operator==(const ByteRange&) const = default;
};

struct GroundTruth {
  TraceLabel kind = TraceLabel::kBenign;
  /// Byte ranges of the stream occupied by bursts.
  std::vector<ByteRange> burst_bytes;
  /// The same bursts as pixel ranges of the (TNT + TIP) pixel stream.
  std::vector<ByteRange> burst_pixels;
  std::size_t pixels = 0;

  std::size_t burst_pixel_count() const {
    std::size_t total = 0;
    for (const auto& r : burst_pixels) total += r.end - r.begin;
    return total;
  }
  double contamination() const {
    return pixels == 0 ? 0.0 : static_cast<double>(burst_pixel_count()) / static_cast<double>(pixels);
  }
};

struct SynthTrace {
  std::vector<std::uint8_t> bytes;
  GroundTruth truth;
};

/// Shortest IP-bytes code that turns `last` into `target`, with its payload.
inline std::pair<std::uint8_t, std::vector<std::uint8_t>> compress_ip(std::uint64_t last,
                                                                      std::uint64_t target) {
  const std::uint64_t diff = last ^ target;
  const std::uint64_t low48 = target & 0xFFFF'FFFF'FFFFULL;
  const std::uint64_t extended =
      (low48 & (std::uint64_t{1} << 47)) ? (low48 | 0xFFFF'0000'0000'0000ULL) : low48;
  std::uint8_t code = 6;
  std::size_t bytes = 8;
  if ((diff >> 16) == 0) {
    code = 1, bytes = 2;
  } else if ((diff >> 32) == 0) {
    code = 2, bytes = 4;
  } else if (extended == target) {
    code = 3, bytes = 6;
  } else if ((diff >> 48) == 0) {
    code = 4, bytes = 6;
  }
  std::vector<std::uint8_t> payload(bytes);
  for (std::size_t i = 0; i < bytes; ++i) payload[i] = static_cast<std::uint8_t>(target >> (8 * i));
  return {code, std::move(payload)};
}

/// Function-entry pool of the synthetic application.
inline std::vector<std::uint64_t> application_pool(std::uint64_t application_seed, std::size_t size) {
  Rng rng(application_seed);
  const std::uint64_t region = 0x0000'5500'0000'0000ULL | (rng.below(1U << 12) << 20);
  std::vector<std::uint64_t> pool(size);
  for (auto& a : pool) a = region | (rng.below(1U << 16) << 4);
  return pool;
}

namespace detail {

class TraceWriter {
 public:
  TraceWriter(const SynthProfile& profile, Rng& rng)
      : profile_(profile), rng_(rng), pool_(application_pool(profile.application_seed, profile.address_pool)) {}

  void emit(const Packet& p) {
    encode_packet(p, bytes_);
    switch (p.kind) {
      case PacketKind::kShortTnt: pixels_ += 1; break;
      case PacketKind::kLongTnt: pixels_ += 6; break;
      case PacketKind::kTip: pixels_ += p.payload.size(); break;
      default: break;
    }
  }

  void emit_tip(PacketKind kind, std::uint64_t target) {
    auto [code, payload] = compress_ip(last_ip_, target);
    emit(Packet::tip(kind, code, std::move(payload)));
    last_ip_ = target;
  }

  void start() {
    emit(Packet::psb());
    if (profile_.length == 0) return;
    emit(Packet::psb_end());
    // Full-width enable packet establishes the last-IP state.
    std::vector<std::uint8_t> full(8);
    for (std::size_t i = 0; i < full.size(); ++i) full[i] = static_cast<std::uint8_t>(pool_[0] >> (8 * i));
    emit(Packet::tip(PacketKind::kTipPge, 6, std::move(full)));
    last_ip_ = pool_[0];
  }

  std::vector<bool> branch_bits(std::size_t n) {
    std::vector<bool> bits(n);
    for (std::size_t i = 0; i < n; ++i) bits[i] = rng_.bernoulli(profile_.p_taken);
    return bits;
  }

  /// One TNT run followed by one TIP run.
  void benign_unit() {
    const std::size_t tnt_run = rng_.geometric(12);
    for (std::size_t i = 0; i < tnt_run; ++i) {
      if (rng_.below(16) == 0) {
        emit(Packet::long_tnt(branch_bits(rng_.between(7, kMaxLongTntBits))));
      } else {
        emit(Packet::short_tnt(branch_bits(rng_.between(1, kMaxShortTntBits))));
      }
    }
    const std::size_t tip_run = rng_.between(1, 2);
    for (std::size_t i = 0; i < tip_run; ++i) {
      // min of two draws skews toward hot functions at the front of the pool
      const auto first = rng_.below(pool_.size());
      const auto second = rng_.below(pool_.size());
      const auto pick = std::min(first, second);
      emit_tip(PacketKind::kTip, pool_[pick]);
    }
  }

  void gadget() {
    emit_tip(PacketKind::kTip, rng_.next() & 0xFFFF'FFFF'FFFFULL);
    if (rng_.bernoulli(0.5)) emit(Packet::short_tnt(branch_bits(rng_.between(1, 2))));
  }

  void benign_until(std::size_t pixel_target) {
    while (pixels_ < pixel_target) benign_unit();
  }

  void burst_until(std::size_t pixel_target, GroundTruth& truth) {
    const std::size_t bytes_before = bytes_.size();
    const std::size_t pixels_before = pixels_;
    while (pixels_ < pixel_target) gadget();
    truth.burst_bytes.push_back({bytes_before, bytes_.size()});
    truth.burst_pixels.push_back({pixels_before, pixels_});
  }

  std::size_t pixels() const { return pixels_; }
  std::vector<std::uint8_t> take_bytes() { return std::move(bytes_); }

 private:
  const SynthProfile& profile_;
  Rng& rng_;
  std::vector<std::uint64_t> pool_;
  std::vector<std::uint8_t> bytes_;
  std::size_t pixels_ = 0;
  std::uint64_t last_ip_ = 0;
};

}  // namespace detail

inline SynthTrace gen_trace(const SynthProfile& profile) {
  validate(profile);
  Rng rng(profile.seed);
  detail::TraceWriter writer(profile, rng);
  GroundTruth truth{.kind = profile.kind};
  writer.start();

  const bool malicious = profile.kind == TraceLabel::kMalicious && profile.burst_rate > 0.0;
  if (profile.length > 0 && !malicious) {
    writer.benign_until(profile.length);
  } else if (profile.length > 0) {
    // Burst lengths first, then random cut points for the benign gaps.
    const auto burst_total = static_cast<std::size_t>(
        std::llround(profile.burst_rate * static_cast<double>(profile.length)));
    std::vector<std::size_t> bursts;
    std::size_t planned = 0;
    while (planned < burst_total) {
      const std::size_t len =
          std::min<std::size_t>(rng.between(profile.burst_min, profile.burst_max), burst_total - planned);
      bursts.push_back(len);
      planned += len;
    }
    const std::size_t benign_total = profile.length - burst_total;
    std::vector<std::size_t> cuts(bursts.size());
    for (auto& c : cuts) c = rng.below(benign_total + 1);
    std::sort(cuts.begin(), cuts.end());

    std::size_t benign_done = 0;
    for (std::size_t b = 0; b < bursts.size(); ++b) {
      writer.benign_until(writer.pixels() + (cuts[b] - benign_done));
      benign_done = cuts[b];
      writer.burst_until(writer.pixels() + bursts[b], truth);
    }
    writer.benign_until(writer.pixels() + (benign_total - benign_done));
  }
  truth.pixels = writer.pixels();
  return SynthTrace{writer.take_bytes(), std::move(truth)};
}

struct GeneratedEntry {
  std::string file;
  TraceLabel label = TraceLabel::kBenign;
  std::uint64_t seed = 0;
  GroundTruth truth;
};

/// Order and seeds of a generated dataset: labels alternate benign,
/// malicious while both remain, then the remainder; trace i uses seed + i.
inline std::vector<std::pair<TraceLabel, std::uint64_t>> dataset_plan(std::size_t n_benign,
                                                                      std::size_t n_malicious,
                                                                      std::uint64_t seed) {
  std::vector<std::pair<TraceLabel, std::uint64_t>> plan;
  std::size_t b = 0, m = 0;
  while (b < n_benign || m < n_malicious) {
    const bool pick_benign = b < n_benign && (m >= n_malicious || b <= m);
    const auto i = static_cast<std::uint64_t>(plan.size());
    plan.emplace_back(pick_benign ? TraceLabel::kBenign : TraceLabel::kMalicious, seed + i);
    (pick_benign ? b : m)++;
  }
  return plan;
}

/// Writes trace_NNNNN.pt files, manifest.csv ("path,label,split") and
/// truth.csv (per-trace seed and burst contamination) into `out_dir`.
/// Returns the manifest path.
inline std::filesystem::path gen_dataset(std::size_t n_benign, std::size_t n_malicious,
                                         const SynthProfile& base, std::uint64_t seed,
                                         const std::filesystem::path& out_dir) {
  validate(base);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw Error("IoError", fmt::format("cannot create directory {}", out_dir.string()));
  }
  std::string manifest = "path,label,split\n";
  std::string truth = "path,label,seed,pixels,burst_pixels,bursts\n";
  const auto plan = dataset_plan(n_benign, n_malicious, seed);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    SynthProfile profile = base;
    profile.kind = plan[i].first;
    profile.seed = plan[i].second;
    if (profile.kind == TraceLabel::kBenign) profile.burst_rate = 0.0;
    const auto trace = gen_trace(profile);
    const std::string file = fmt::format("trace_{:05d}.pt", i);
    write_file_bytes(out_dir / file, trace.bytes);
    manifest += fmt::format("{},{},\n", file, to_string(profile.kind));
    truth += fmt::format("{},{},{},{},{},{}\n", file, to_string(profile.kind), profile.seed,
                         trace.truth.pixels, trace.truth.burst_pixel_count(),
                         trace.truth.burst_pixels.size());
  }
  const auto manifest_path = out_dir / "manifest.csv";
  write_file_text(manifest_path, manifest);
  write_file_text(out_dir / "truth.csv", truth);
  return manifest_path;
}

}  // namespace tracelens
