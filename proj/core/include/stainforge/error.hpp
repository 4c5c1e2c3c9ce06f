#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stainforge {

enum class ErrorCode {
  InvalidArgument,
  ImageTooSmall,
  ChannelMismatch,
  DimensionMismatch,
  UnknownLayer,
  NonFinite,
  OutOfRange,
  LoadError,
  VersionMismatch,
  CorruptFile,
  ChecksumMismatch,
  Divergence,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a code so callers (and the
/// CLI exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace stainforge
