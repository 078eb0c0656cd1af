#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace tracelens {

/// Error raised by every module. `code()` is a stable identifier such as
/// "TruncatedPacket" that the CLI prints verbatim; `offset()` is the byte
/// position in the offending input when one is meaningful.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message,
        std::optional<std::size_t> offset = std::nullopt)
      : std::runtime_error(message), code_(std::move(code)), offset_(offset) {}

  const std::string& code() const noexcept { return code_; }
  std::optional<std::size_t> offset() const noexcept { return offset_; }

 private:
  std::string code_;
  std::optional<std::size_t> offset_;
};

namespace detail {

inline void require(bool condition, const char* what) {
  if (!condition) throw Error("PreconditionViolation", what);
}

}  // namespace detail
}  // namespace tracelens
