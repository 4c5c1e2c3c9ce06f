#include "stainforge/archive.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include <openssl/evp.h>

#include "stainforge/error.hpp"

namespace stainforge {

static_assert(std::endian::native == std::endian::little, "archive encoding assumes little-endian");

namespace {

constexpr char kMagic[4] = {'S', 'F', 'A', 'R'};
constexpr std::size_t kDigestSize = 32;
using Digest = std::array<std::uint8_t, kDigestSize>;

Digest sha256_raw(std::span<const std::uint8_t> bytes) {
  Digest digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != kDigestSize) {
    fail(ErrorCode::Io, "sha256 computation failed");
  }
  return digest;
}

enum class DType : std::uint8_t { Float32 = 0, Float64 = 1, Int64 = 2 };

DType encode_dtype(torch::ScalarType type, const std::string& name) {
  switch (type) {
    case torch::kFloat32: return DType::Float32;
    case torch::kFloat64: return DType::Float64;
    case torch::kInt64: return DType::Int64;
    default: fail(ErrorCode::InvalidArgument, "unsupported tensor dtype for '" + name + "'");
  }
}

torch::ScalarType decode_dtype(std::uint8_t code, const std::string& source) {
  switch (static_cast<DType>(code)) {
    case DType::Float32: return torch::kFloat32;
    case DType::Float64: return torch::kFloat64;
    case DType::Int64: return torch::kInt64;
  }
  fail(ErrorCode::CorruptFile, source + ": unknown dtype code " + std::to_string(code));
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

void put_bytes(std::vector<std::uint8_t>& out, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  out.insert(out.end(), p, p + n);
}

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }

  const std::uint8_t* take(std::size_t n) {
    if (n > bytes_.size() - pos_) fail(ErrorCode::CorruptFile, source_ + ": truncated archive");
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

void TensorArchive::add(std::string name, const torch::Tensor& tensor) {
  require(!contains(name), ErrorCode::InvalidArgument, "duplicate archive entry '" + name + "'");
  entries_.emplace_back(std::move(name), tensor.detach().to(torch::kCPU).contiguous().clone());
}

bool TensorArchive::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

const torch::Tensor& TensorArchive::at(std::string_view name) const {
  for (const auto& [key, tensor] : entries_) {
    if (key == name) return tensor;
  }
  fail(ErrorCode::LoadError, "archive has no entry '" + std::string(name) + "'");
}

std::vector<std::uint8_t> serialize_archive(const TensorArchive& archive) {
  std::vector<std::uint8_t> out;
  put_bytes(out, kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kArchiveVersion);
  put<std::uint64_t>(out, archive.metadata.size());
  put_bytes(out, archive.metadata.data(), archive.metadata.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(archive.entries().size()));
  for (const auto& [name, tensor] : archive.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(encode_dtype(tensor.scalar_type(), name)));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.dim()));
    for (auto d : tensor.sizes()) put<std::int64_t>(out, d);
    const auto nbytes = static_cast<std::uint64_t>(tensor.numel() * tensor.element_size());
    put<std::uint64_t>(out, nbytes);
    put_bytes(out, tensor.data_ptr(), nbytes);
  }
  const auto digest = sha256_raw(out);
  out.insert(out.end(), digest.begin(), digest.end());
  return out;
}

TensorArchive parse_archive(std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t) + kDigestSize ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCode::CorruptFile, source + ": not a stainforge archive");
  }
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
  if (version != kArchiveVersion) {
    fail(ErrorCode::VersionMismatch, source + ": archive version " + std::to_string(version) +
                                         ", expected " + std::to_string(kArchiveVersion));
  }
  const auto body = bytes.first(bytes.size() - kDigestSize);
  const auto stored = bytes.last(kDigestSize);
  const auto computed = sha256_raw(body);
  if (!std::equal(computed.begin(), computed.end(), stored.begin())) {
    fail(ErrorCode::CorruptFile, source + ": integrity digest mismatch");
  }

  Reader in(body, source);
  in.take(sizeof(kMagic) + sizeof(std::uint32_t));
  TensorArchive archive;
  const auto meta_len = in.get<std::uint64_t>();
  const auto* meta = in.take(meta_len);
  archive.metadata.assign(reinterpret_cast<const char*>(meta), meta_len);
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>();
    const auto* name_ptr = in.take(name_len);
    std::string name(reinterpret_cast<const char*>(name_ptr), name_len);
    const auto dtype = decode_dtype(in.get<std::uint8_t>(), source);
    const auto ndim = in.get<std::uint32_t>();
    if (ndim > 8) fail(ErrorCode::CorruptFile, source + ": implausible rank for '" + name + "'");
    std::vector<std::int64_t> dims(ndim);
    std::int64_t numel = 1;
    for (auto& d : dims) {
      d = in.get<std::int64_t>();
      if (d < 0) fail(ErrorCode::CorruptFile, source + ": negative extent for '" + name + "'");
      numel *= d;
    }
    const auto nbytes = in.get<std::uint64_t>();
    auto tensor = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (nbytes != static_cast<std::uint64_t>(numel * tensor.element_size())) {
      fail(ErrorCode::CorruptFile, source + ": size mismatch for '" + name + "'");
    }
    std::memcpy(tensor.data_ptr(), in.take(nbytes), nbytes);
    archive.add(std::move(name), tensor);
  }
  if (in.remaining() != 0) fail(ErrorCode::CorruptFile, source + ": trailing bytes");
  return archive;
}

void save_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  write_file_atomically(path, serialize_archive(archive));
}

TensorArchive load_archive(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::LoadError, "no such file: " + path.string());
  const auto bytes = read_file_bytes(path);
  return parse_archive(bytes, path.string());
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  const auto digest = sha256_raw(bytes);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(2 * kDigestSize);
  for (std::size_t i = 0; i < kDigestSize; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xF]);
  }
  return hex;
}

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file_bytes(path)); }

std::string tensors_checksum(const std::vector<torch::Tensor>& tensors) {
  std::vector<std::uint8_t> buffer;
  for (const auto& t : tensors) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    put_bytes(buffer, c.data_ptr(), c.numel() * c.element_size());
  }
  return sha256_hex(buffer);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::Io, "read failed: " + path.string());
  return bytes;
}

void write_file_atomically(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      fail(ErrorCode::Io, "write failed (disk full?): " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::Io, "cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace stainforge
