#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace stainforge {

inline constexpr std::uint32_t kArchiveVersion = 1;

/// Named tensors plus a JSON metadata string, stored in a versioned binary
/// container ending in a SHA-256 trailer over every preceding byte.
///
/// Layout (little-endian):
///   "SFAR" | u32 version | u64 meta_len | meta bytes | u32 count |
///   count x { u32 name_len | name | u8 dtype | u32 ndim | i64 dims[ndim] |
///             u64 nbytes | raw bytes } | 32-byte SHA-256
///
/// Entry order is insertion order, so the encoding is a pure function of the
/// archive contents.
class TensorArchive {
 public:
  std::string metadata = "{}";

  void add(std::string name, const torch::Tensor& tensor);
  bool contains(std::string_view name) const;
  const torch::Tensor& at(std::string_view name) const;
  const std::vector<std::pair<std::string, torch::Tensor>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, torch::Tensor>> entries_;
};

std::vector<std::uint8_t> serialize_archive(const TensorArchive& archive);
TensorArchive parse_archive(std::span<const std::uint8_t> bytes, const std::string& source);

/// Writes through a temporary file and renames, so a failed write never
/// leaves a truncated archive at `path`.
void save_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive load_archive(const std::filesystem::path& path);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string file_sha256(const std::filesystem::path& path);

/// Digest over the raw bytes of a list of tensors, for freeze checks.
std::string tensors_checksum(const std::vector<torch::Tensor>& tensors);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_atomically(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace stainforge
