#include "stainforge/error.hpp"

namespace stainforge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::ImageTooSmall: return "image too small";
    case ErrorCode::ChannelMismatch: return "channel mismatch";
    case ErrorCode::DimensionMismatch: return "dimension mismatch";
    case ErrorCode::UnknownLayer: return "unknown layer";
    case ErrorCode::NonFinite: return "non-finite value";
    case ErrorCode::OutOfRange: return "value out of range";
    case ErrorCode::LoadError: return "load error";
    case ErrorCode::VersionMismatch: return "version mismatch";
    case ErrorCode::CorruptFile: return "corrupt file";
    case ErrorCode::ChecksumMismatch: return "checksum mismatch";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::Io: return "i/o error";
  }
  return "unknown error";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace stainforge
