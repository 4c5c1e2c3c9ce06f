#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "stainforge/backbone.hpp"
#include "stainforge/patch.hpp"

namespace stainforge::testing {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "sf") {
    auto tmpl = (std::filesystem::temp_directory_path() / (tag + "_XXXXXX")).string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline const PerceptualBackbone& test_backbone() {
  static const auto backbone = PerceptualBackbone::random(vgg19_plan(), 0);
  return backbone;
}

inline torch::Tensor random_pixels(std::int64_t h, std::int64_t w, std::uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  return torch::rand({3, h, w}, gen);
}

inline PatchTensor random_patch(std::int64_t h, std::int64_t w, std::uint64_t seed, std::string id = "p") {
  return make_patch(random_pixels(h, w, seed), std::move(id));
}

inline double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

}  // namespace stainforge::testing
