#pragma once

// Pixel streams and image tiles.
//
// A trace (or any binary) becomes a stream of 8-bit pixels; the stream is
// cut into consecutive m*m segments and each segment is read row-major as
// an m x m grayscale tile. Tile indices are 1-based.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "tracelens/error.hpp"
#include "tracelens/ptcodec.hpp"

namespace tracelens {

enum class PixelSource { kDynamicTrace, kStaticBinary };

struct PixelArray {
  std::vector<std::uint8_t> pixels;
  PixelSource source = PixelSource::kDynamicTrace;

  std::size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }
};

/// Values are stored channel-major: all of channel 0 row-major, then
/// channel 1, and so on.
struct ImageTile {
  int side = 0;
  int channels = 1;
  std::vector<std::uint8_t> values;
  std::size_t index = 1;

  std::size_t plane_size() const {
    return static_cast<std::size_t>(side) * static_cast<std::size_t>(side);
  }
  std::uint8_t at(int channel, int row, int col) const {
    return values[static_cast<std::size_t>(channel) * plane_size() +
                  static_cast<std::size_t>(row) * static_cast<std::size_t>(side) +
                  static_cast<std::size_t>(col)];
  }
  std::span<const std::uint8_t> plane(int channel) const {
    return std::span(values).subspan(static_cast<std::size_t>(channel) * plane_size(),
                                     plane_size());
  }

  bool operator==(const ImageTile&) const = default;
};

enum class TailPolicy { kDrop, kPadZero };

inline std::string_view to_string(TailPolicy policy) {
  return policy == TailPolicy::kDrop ? "drop" : "pad";
}

struct TileBatch {
  std::vector<ImageTile> tiles;
  TailPolicy tail = TailPolicy::kDrop;
  std::size_t source_length = 0;

  std::size_t n() const { return tiles.size(); }
};

/// Emits control-flow payloads as pixels in stream order: the whole wire
/// byte of a ShortTNT, the 6 payload bytes of a LongTNT, TIP payload bytes,
/// and, when `tip_family` is set, TIP.PGE/TIP.PGD/FUP payloads too.
inline PixelArray pixels_from_packets(std::span<const Packet> packets,
                                      bool tip_family = false) {
  PixelArray out{.source = PixelSource::kDynamicTrace};
  std::vector<std::uint8_t> scratch;
  for (const auto& p : packets) {
    switch (p.kind) {
      case PacketKind::kShortTnt:
      case PacketKind::kLongTnt:
        scratch.clear();
        encode_packet(p, scratch);
        // LongTNT wire form is 02 A3 + payload; skip the two opcode bytes.
        out.pixels.insert(out.pixels.end(),
                          scratch.begin() + (p.kind == PacketKind::kLongTnt ? 2 : 0),
                          scratch.end());
        break;
      case PacketKind::kTip:
        out.pixels.insert(out.pixels.end(), p.payload.begin(), p.payload.end());
        break;
      case PacketKind::kTipPge:
      case PacketKind::kTipPgd:
      case PacketKind::kFup:
        if (tip_family) out.pixels.insert(out.pixels.end(), p.payload.begin(), p.payload.end());
        break;
      default:
        break;
    }
  }
  return out;
}

inline PixelArray pixels_from_binary(std::span<const std::uint8_t> raw) {
  return PixelArray{.pixels = {raw.begin(), raw.end()},
                    .source = PixelSource::kStaticBinary};
}

/// Number of tiles a stream of `length` pixels yields.
inline std::size_t tile_count(std::size_t length, int m, TailPolicy tail) {
  const std::size_t area = static_cast<std::size_t>(m) * static_cast<std::size_t>(m);
  return tail == TailPolicy::kDrop ? length / area : (length + area - 1) / area;
}

inline TileBatch slice_tiles(const PixelArray& x, int m,
                             TailPolicy tail = TailPolicy::kDrop) {
  detail::require(m >= 1, "tile side m must be >= 1");
  if (x.empty()) throw Error("EmptyInput", "pixel array is empty; no tiles can be formed");
  const std::size_t area = static_cast<std::size_t>(m) * static_cast<std::size_t>(m);
  const std::size_t n = tile_count(x.size(), m, tail);
  TileBatch batch{.tail = tail, .source_length = x.size()};
  batch.tiles.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    ImageTile tile{.side = m, .channels = 1, .index = k + 1};
    tile.values.assign(area, 0);
    const std::size_t begin = k * area;
    const std::size_t end = std::min(begin + area, x.size());
    std::copy(x.pixels.begin() + static_cast<std::ptrdiff_t>(begin),
              x.pixels.begin() + static_cast<std::ptrdiff_t>(end), tile.values.begin());
    batch.tiles.push_back(std::move(tile));
  }
  return batch;
}

inline ImageTile replicate_channels(const ImageTile& t) {
  if (t.channels != 1) throw Error("AlreadyMultiChannel", "tile already has more than one channel");
  ImageTile out{.side = t.side, .channels = 3, .index = t.index};
  out.values.reserve(t.values.size() * 3);
  for (int c = 0; c < 3; ++c) out.values.insert(out.values.end(), t.values.begin(), t.values.end());
  return out;
}

/// Block-mean downscale; each output pixel is the mean of a factor x factor
/// block rounded half-up.
inline ImageTile pool_downscale(const ImageTile& t, int factor) {
  detail::require(factor >= 1, "pool factor must be >= 1");
  detail::require(t.channels == 1, "pool_downscale needs a single-channel tile");
  if (t.side % factor != 0) {
    throw Error("NonDivisibleFactor",
                fmt::format("pool factor {} does not divide tile side {}", factor, t.side));
  }
  if (factor == 1) return t;
  const int side = t.side / factor;
  const unsigned block = static_cast<unsigned>(factor * factor);
  ImageTile out{.side = side, .channels = 1, .index = t.index};
  out.values.resize(static_cast<std::size_t>(side) * static_cast<std::size_t>(side));
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      unsigned sum = 0;
      for (int dr = 0; dr < factor; ++dr)
        for (int dc = 0; dc < factor; ++dc) sum += t.at(0, r * factor + dr, c * factor + dc);
      const unsigned mean = (2 * sum + block) / (2 * block);
      out.values[static_cast<std::size_t>(r) * static_cast<std::size_t>(side) +
                 static_cast<std::size_t>(c)] =
          static_cast<std::uint8_t>(std::min(mean, 255U));
    }
  }
  return out;
}

/// Flattens channel-major, row-major and scales to [0, 1].
inline std::vector<double> normalize(const ImageTile& t) {
  std::vector<double> out(t.values.size());
  std::transform(t.values.begin(), t.values.end(), out.begin(),
                 [](std::uint8_t v) { return static_cast<double>(v) / 255.0; });
  return out;
}

// Netpbm export: P5 for one channel, P6 for three (interleaved RGB).

inline std::vector<std::uint8_t> encode_netpbm(const ImageTile& t) {
  if (t.channels != 1 && t.channels != 3) {
    throw Error("UnsupportedChannels", fmt::format("cannot export {} channels", t.channels));
  }
  const std::string header =
      fmt::format("{}\n{} {}\n255\n", t.channels == 1 ? "P5" : "P6", t.side, t.side);
  std::vector<std::uint8_t> out(header.begin(), header.end());
  if (t.channels == 1) {
    out.insert(out.end(), t.values.begin(), t.values.end());
    return out;
  }
  const std::size_t area = t.plane_size();
  out.reserve(out.size() + 3 * area);
  for (std::size_t i = 0; i < area; ++i) {
    for (int c = 0; c < 3; ++c) out.push_back(t.values[static_cast<std::size_t>(c) * area + i]);
  }
  return out;
}

inline void write_netpbm(const ImageTile& t, const std::string& path) {
  const auto bytes = encode_netpbm(t);
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error("IoError", fmt::format("cannot open {} for writing", path));
  file.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  if (!file) throw Error("IoError", fmt::format("failed writing {}", path));
}

}  // namespace tracelens
