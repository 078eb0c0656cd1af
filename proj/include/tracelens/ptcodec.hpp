#pragma once

// Decoder and encoder for the control-flow trace wire format.
//
// The format is a fixed subset modeled on Intel Processor Trace:
//
//   PAD       00
//   PSB       02 82 repeated 8 times (16 bytes)
//   PSBEND    02 23
//   ShortTNT  one byte, bit0 = 0, not 00/02; highest set bit is the stop
//             bit, branch bits sit below it down to bit 1, oldest first
//   LongTNT   02 A3 + 6 bytes little-endian; highest set bit is the stop
//             bit, branch bits below it down to bit 0, oldest first
//   TIP, TIP.PGE, TIP.PGD, FUP
//             header H with H & 0x1F in {0D, 11, 01, 1D}; H >> 5 is the
//             IP-bytes code selecting a 0/2/4/6/6/-/8/- byte payload
//
// Everything here is a pure function of its inputs.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "tracelens/error.hpp"

namespace tracelens {

enum class PacketKind : std::uint8_t {
  kShortTnt,
  kLongTnt,
  kTip,
  kTipPge,
  kTipPgd,
  kFup,
  kPsb,
  kPsbEnd,
  kPad,
};

inline constexpr std::size_t kMaxShortTntBits = 6;
inline constexpr std::size_t kMaxLongTntBits = 47;
inline constexpr std::size_t kPsbLength = 16;

inline std::string_view to_string(PacketKind kind) {
  switch (kind) {
    case PacketKind::kShortTnt: return "ShortTNT";
    case PacketKind::kLongTnt: return "LongTNT";
    case PacketKind::kTip: return "TIP";
    case PacketKind::kTipPge: return "TIP.PGE";
    case PacketKind::kTipPgd: return "TIP.PGD";
    case PacketKind::kFup: return "FUP";
    case PacketKind::kPsb: return "PSB";
    case PacketKind::kPsbEnd: return "PSBEND";
    case PacketKind::kPad: return "PAD";
  }
  return "?";
}

inline bool is_tip_family(PacketKind kind) {
  return kind == PacketKind::kTip || kind == PacketKind::kTipPge ||
         kind == PacketKind::kTipPgd || kind == PacketKind::kFup;
}

inline bool is_tnt(PacketKind kind) {
  return kind == PacketKind::kShortTnt || kind == PacketKind::kLongTnt;
}

/// Payload length for an IP-bytes code, or nullopt for the reserved
/// codes 5 and 7.
inline std::optional<std::size_t> ip_payload_length(unsigned code) {
  static constexpr std::array<int, 8> kLengths = {0, 2, 4, 6, 6, -1, 8, -1};
  if (code >= kLengths.size() || kLengths[code] < 0) return std::nullopt;
  return static_cast<std::size_t>(kLengths[code]);
}

struct Packet {
  PacketKind kind = PacketKind::kPad;
  /// TNT only. true = taken, oldest branch first.
  std::vector<bool> branches;
  /// TIP family only.
  std::uint8_t ip_bytes_code = 0;
  std::vector<std::uint8_t> payload;
  /// Position of the first byte in the source stream.
  std::size_t byte_offset = 0;

  bool operator==(const Packet&) const = default;

  static Packet pad() { return Packet{}; }
  static Packet psb() { return Packet{.kind = PacketKind::kPsb}; }
  static Packet psb_end() { return Packet{.kind = PacketKind::kPsbEnd}; }
  static Packet short_tnt(std::vector<bool> bits) {
    return Packet{.kind = PacketKind::kShortTnt, .branches = std::move(bits)};
  }
  static Packet long_tnt(std::vector<bool> bits) {
    return Packet{.kind = PacketKind::kLongTnt, .branches = std::move(bits)};
  }
  static Packet tip(PacketKind kind, std::uint8_t code,
                    std::vector<std::uint8_t> payload) {
    return Packet{.kind = kind,
                  .ip_bytes_code = code,
                  .payload = std::move(payload)};
  }
};

enum class DecodeMode { kStrict, kLenient };

struct Diagnostic {
  std::size_t byte_offset = 0;
  std::string reason;

  bool operator==(const Diagnostic&) const = default;
};

struct DecodeReport {
  std::vector<Packet> packets;
  std::vector<Diagnostic> diagnostics;
  std::size_t bytes_consumed = 0;
};

namespace detail {

inline constexpr std::uint8_t kExtendedPrefix = 0x02;
inline constexpr std::uint8_t kPsbSecond = 0x82;
inline constexpr std::uint8_t kPsbEndSecond = 0x23;
inline constexpr std::uint8_t kLongTntSecond = 0xA3;
inline constexpr std::size_t kLongTntPayload = 6;

inline std::optional<PacketKind> tip_kind_from_header(std::uint8_t header) {
  switch (header & 0x1F) {
    case 0x0D: return PacketKind::kTip;
    case 0x11: return PacketKind::kTipPge;
    case 0x01: return PacketKind::kTipPgd;
    case 0x1D: return PacketKind::kFup;
    default: return std::nullopt;
  }
}

inline std::uint8_t tip_header_low_bits(PacketKind kind) {
  switch (kind) {
    case PacketKind::kTip: return 0x0D;
    case PacketKind::kTipPge: return 0x11;
    case PacketKind::kTipPgd: return 0x01;
    default: return 0x1D;
  }
}

inline int highest_bit(std::uint64_t v) {
  int s = -1;
  while (v != 0) {
    v >>= 1;
    ++s;
  }
  return s;
}

// A decode failure at a fixed offset. Kept as a value so the lenient path
// can turn it into a diagnostic without exception overhead.
struct DecodeFailure {
  std::string code;
  std::string message;
};

using StepResult = std::pair<std::optional<Packet>, std::optional<DecodeFailure>>;

inline StepResult decode_one(std::span<const std::uint8_t> raw, std::size_t at) {
  const std::size_t remaining = raw.size() - at;
  const std::uint8_t header = raw[at];
  auto fail = [](std::string code, std::string message) -> StepResult {
    return {std::nullopt, DecodeFailure{std::move(code), std::move(message)}};
  };
  auto truncated = [&](std::string_view what) {
    return fail("TruncatedPacket",
                fmt::format("truncated {} at offset {}", what, at));
  };

  if (header == 0x00) {
    return {Packet{.kind = PacketKind::kPad, .byte_offset = at}, std::nullopt};
  }

  if (header == kExtendedPrefix) {
    if (remaining < 2) return truncated("extended packet");
    const std::uint8_t opcode = raw[at + 1];
    if (opcode == kPsbEndSecond) {
      return {Packet{.kind = PacketKind::kPsbEnd, .byte_offset = at},
              std::nullopt};
    }
    if (opcode == kPsbSecond) {
      const std::size_t available = std::min(remaining, kPsbLength);
      for (std::size_t i = 0; i < available; ++i) {
        const std::uint8_t expected = (i % 2 == 0) ? kExtendedPrefix : kPsbSecond;
        if (raw[at + i] != expected) {
          return fail("UnknownHeaderByte",
                      fmt::format("malformed PSB at offset {}", at));
        }
      }
      if (remaining < kPsbLength) return truncated("PSB");
      return {Packet{.kind = PacketKind::kPsb, .byte_offset = at}, std::nullopt};
    }
    if (opcode == kLongTntSecond) {
      if (remaining < 2 + kLongTntPayload) return truncated("LongTNT");
      std::uint64_t v = 0;
      for (std::size_t i = 0; i < kLongTntPayload; ++i) {
        v |= static_cast<std::uint64_t>(raw[at + 2 + i]) << (8 * i);
      }
      const int stop = highest_bit(v);
      if (stop <= 0) {
        return fail("ZeroPayloadTNT",
                    fmt::format("LongTNT without branch bits at offset {}", at));
      }
      Packet p{.kind = PacketKind::kLongTnt, .byte_offset = at};
      p.branches.reserve(static_cast<std::size_t>(stop));
      for (int bit = stop - 1; bit >= 0; --bit) p.branches.push_back((v >> bit) & 1U);
      return {std::move(p), std::nullopt};
    }
    return fail("UnknownHeaderByte",
                fmt::format("unknown extended opcode 0x{:02X} at offset {}",
                            opcode, at));
  }

  if ((header & 1U) == 0) {
    const int stop = highest_bit(header);
    Packet p{.kind = PacketKind::kShortTnt, .byte_offset = at};
    p.branches.reserve(static_cast<std::size_t>(stop - 1));
    for (int bit = stop - 1; bit >= 1; --bit) p.branches.push_back((header >> bit) & 1U);
    return {std::move(p), std::nullopt};
  }

  if (auto kind = tip_kind_from_header(header)) {
    const unsigned code = header >> 5;
    auto length = ip_payload_length(code);
    if (!length) {
      return fail("ReservedIpBytesCode",
                  fmt::format("reserved IP-bytes code {} at offset {}", code, at));
    }
    if (remaining < 1 + *length) return truncated(to_string(*kind));
    Packet p{.kind = *kind,
             .ip_bytes_code = static_cast<std::uint8_t>(code),
             .byte_offset = at};
    p.payload.assign(raw.begin() + static_cast<std::ptrdiff_t>(at + 1),
                     raw.begin() + static_cast<std::ptrdiff_t>(at + 1 + *length));
    return {std::move(p), std::nullopt};
  }

  return fail("UnknownHeaderByte",
              fmt::format("unknown header byte 0x{:02X} at offset {}", header, at));
}

inline std::size_t encoded_size(const Packet& p) {
  switch (p.kind) {
    case PacketKind::kPad:
    case PacketKind::kShortTnt: return 1;
    case PacketKind::kPsbEnd: return 2;
    case PacketKind::kPsb: return kPsbLength;
    case PacketKind::kLongTnt: return 2 + kLongTntPayload;
    default: return 1 + p.payload.size();
  }
}

}  // namespace detail

/// Validates a packet against the wire-format invariants; throws
/// InvalidPacket on violation.
inline void validate_packet(const Packet& p) {
  auto invalid = [&](std::string_view why) {
    throw Error("InvalidPacket", fmt::format("{}: {}", to_string(p.kind), why));
  };
  switch (p.kind) {
    case PacketKind::kShortTnt:
      if (p.branches.empty() || p.branches.size() > kMaxShortTntBits)
        invalid("branch count must be in [1,6]");
      break;
    case PacketKind::kLongTnt:
      if (p.branches.empty() || p.branches.size() > kMaxLongTntBits)
        invalid("branch count must be in [1,47]");
      break;
    case PacketKind::kTip:
    case PacketKind::kTipPge:
    case PacketKind::kTipPgd:
    case PacketKind::kFup: {
      auto length = ip_payload_length(p.ip_bytes_code);
      if (!length) invalid("reserved IP-bytes code");
      if (p.payload.size() != *length) invalid("payload length does not match IP-bytes code");
      break;
    }
    default: break;
  }
  if (!is_tnt(p.kind) && !p.branches.empty()) invalid("unexpected branch bits");
  if (!is_tip_family(p.kind) && (!p.payload.empty() || p.ip_bytes_code != 0))
    invalid("unexpected IP payload");
}

/// Appends the canonical encoding of one packet.
inline void encode_packet(const Packet& p, std::vector<std::uint8_t>& out) {
  validate_packet(p);
  switch (p.kind) {
    case PacketKind::kPad:
      out.push_back(0x00);
      break;
    case PacketKind::kPsb:
      for (std::size_t i = 0; i < kPsbLength / 2; ++i) {
        out.push_back(detail::kExtendedPrefix);
        out.push_back(detail::kPsbSecond);
      }
      break;
    case PacketKind::kPsbEnd:
      out.push_back(detail::kExtendedPrefix);
      out.push_back(detail::kPsbEndSecond);
      break;
    case PacketKind::kShortTnt: {
      const std::size_t n = p.branches.size();
      unsigned byte = 1U << (n + 1);
      for (std::size_t i = 0; i < n; ++i) {
        if (p.branches[i]) byte |= 1U << (n - i);
      }
      out.push_back(static_cast<std::uint8_t>(byte));
      break;
    }
    case PacketKind::kLongTnt: {
      const std::size_t n = p.branches.size();
      std::uint64_t v = std::uint64_t{1} << n;
      for (std::size_t i = 0; i < n; ++i) {
        if (p.branches[i]) v |= std::uint64_t{1} << (n - 1 - i);
      }
      out.push_back(detail::kExtendedPrefix);
      out.push_back(detail::kLongTntSecond);
      for (std::size_t i = 0; i < detail::kLongTntPayload; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
      }
      break;
    }
    default:
      out.push_back(static_cast<std::uint8_t>((p.ip_bytes_code << 5) |
                                              detail::tip_header_low_bits(p.kind)));
      out.insert(out.end(), p.payload.begin(), p.payload.end());
      break;
  }
}

inline std::vector<std::uint8_t> encode_stream(std::span<const Packet> packets) {
  std::vector<std::uint8_t> out;
  std::size_t total = 0;
  for (const auto& p : packets) total += detail::encoded_size(p);
  out.reserve(total);
  for (const auto& p : packets) encode_packet(p, out);
  return out;
}

/// Decodes a byte stream. Strict mode throws on the first malformed
/// packet; lenient mode records a diagnostic, skips exactly one byte and
/// continues, so it always consumes the whole input.
inline DecodeReport decode_stream(std::span<const std::uint8_t> raw,
                                  DecodeMode mode = DecodeMode::kStrict) {
  DecodeReport report;
  std::size_t at = 0;
  while (at < raw.size()) {
    auto [packet, failure] = detail::decode_one(raw, at);
    if (failure) {
      if (mode == DecodeMode::kStrict) {
        throw Error(failure->code, failure->message, at);
      }
      report.diagnostics.push_back({at, failure->code});
      ++at;
      continue;
    }
    at += detail::encoded_size(*packet);
    report.packets.push_back(std::move(*packet));
  }
  report.bytes_consumed = at;
  return report;
}

struct IpUpdate {
  std::size_t byte_offset = 0;
  std::uint64_t address = 0;

  bool operator==(const IpUpdate&) const = default;
};

/// Applies one compressed IP payload to the last-IP state.
inline std::uint64_t apply_ip_payload(std::uint64_t last_ip, unsigned code,
                                      std::span<const std::uint8_t> payload) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < payload.size(); ++i) {
    v |= static_cast<std::uint64_t>(payload[i]) << (8 * i);
  }
  switch (code) {
    case 1: return (last_ip & ~std::uint64_t{0xFFFF}) | v;
    case 2: return (last_ip & ~std::uint64_t{0xFFFFFFFF}) | v;
    case 3: {
      const std::uint64_t low = v & 0xFFFF'FFFF'FFFFULL;
      return (low & (std::uint64_t{1} << 47)) ? (low | 0xFFFF'0000'0000'0000ULL) : low;
    }
    case 4: return (last_ip & 0xFFFF'0000'0000'0000ULL) | (v & 0xFFFF'FFFF'FFFFULL);
    case 6: return v;
    default: return last_ip;
  }
}

/// Address-level reconstruction: one entry per TIP-family packet that
/// carries an IP, threading the last-IP state through the sequence.
inline std::vector<IpUpdate> reconstruct_ips(std::span<const Packet> packets,
                                             std::uint64_t initial_ip) {
  std::vector<IpUpdate> out;
  std::uint64_t last_ip = initial_ip;
  for (const auto& p : packets) {
    if (!is_tip_family(p.kind) || p.ip_bytes_code == 0) continue;
    last_ip = apply_ip_payload(last_ip, p.ip_bytes_code, p.payload);
    out.push_back({p.byte_offset, last_ip});
  }
  return out;
}

}  // namespace tracelens
