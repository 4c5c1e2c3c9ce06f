#include "stainforge/data_pipeline.hpp"

#include "stainforge/error.hpp"

namespace stainforge {

std::vector<PatchTensor> tile_image(const cv::Mat& rgb, const TileOptions& options, const std::string& source_id) {
  if (rgb.channels() != 3) {
    fail(ErrorCode::ChannelMismatch,
         source_id + ": " + std::to_string(rgb.channels()) + " channels, expected RGB");
  }
  return tile_image(image_to_tensor(rgb), options, source_id);
}

std::vector<PatchTensor> tile_image(const torch::Tensor& image, const TileOptions& options,
                                    const std::string& source_id) {
  require(options.tile_size > 0, ErrorCode::InvalidArgument, "tile size must be positive");
  require(image.dim() == 3 && image.size(0) == 3, ErrorCode::ChannelMismatch,
          source_id + ": expected a 3-channel image");
  const auto height = image.size(1);
  const auto width = image.size(2);
  const auto size = options.tile_size;
  if (height < size || width < size) {
    fail(ErrorCode::ImageTooSmall, source_id + " is " + std::to_string(height) + "x" + std::to_string(width) +
                                       ", smaller than the " + std::to_string(size) + " pixel tile");
  }
  const auto rows = height / size;
  const auto cols = width / size;
  std::vector<PatchTensor> tiles;
  tiles.reserve(static_cast<std::size_t>(rows * cols));
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      auto pixels = image.slice(1, r * size, (r + 1) * size).slice(2, c * size, (c + 1) * size).contiguous();
      tiles.push_back(make_patch(std::move(pixels), source_id, {r, c}));
    }
  }
  return tiles;
}

std::string tile_filename(const PatchTensor& tile) {
  return tile.source_id + "_r" + std::to_string(tile.tile_coords.row) + "_c" + std::to_string(tile.tile_coords.col) +
         ".png";
}

}  // namespace stainforge
