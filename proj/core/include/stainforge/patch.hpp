#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core/mat.hpp>
#include <torch/torch.h>

namespace stainforge {

struct TileCoords {
  std::int64_t row = 0;
  std::int64_t col = 0;
  bool operator==(const TileCoords&) const = default;
};

/// An RGB patch in [0,1]. Pixels are stored channel-first (3 x H x W, float32)
/// so a batch of patches stacks straight into an NCHW network input.
struct PatchTensor {
  torch::Tensor pixels;
  std::string source_id;
  TileCoords tile_coords;

  std::int64_t height() const { return pixels.size(1); }
  std::int64_t width() const { return pixels.size(2); }
};

/// Throws unless `pixels` is 3 x H x W, finite and inside [0,1].
void validate_pixels(const torch::Tensor& pixels);

PatchTensor make_patch(torch::Tensor pixels, std::string source_id = {}, TileCoords coords = {});

/// Reads an 8-bit RGB raster (PNG, TIFF, ...) as an RGB-ordered cv::Mat.
cv::Mat read_rgb_image(const std::filesystem::path& path);
void write_rgb_image(const std::filesystem::path& path, const cv::Mat& rgb);

torch::Tensor image_to_tensor(const cv::Mat& rgb);
/// Clamps to [0,1] and rounds to the nearest 8-bit level.
cv::Mat tensor_to_image(const torch::Tensor& pixels);

PatchTensor load_patch(const std::filesystem::path& path);
void save_patch_png(const std::filesystem::path& path, const torch::Tensor& pixels);

/// Stacks equally sized patches into a B x 3 x H x W tensor.
torch::Tensor stack_patches(std::span<const PatchTensor> patches);

/// Regular files with a raster extension, sorted by filename.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace stainforge
