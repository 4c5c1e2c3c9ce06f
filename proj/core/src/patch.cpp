#include "stainforge/patch.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "stainforge/error.hpp"

namespace stainforge {

void validate_pixels(const torch::Tensor& pixels) {
  require(pixels.defined() && pixels.dim() == 3, ErrorCode::DimensionMismatch, "patch must be 3 x H x W");
  require(pixels.size(0) == 3, ErrorCode::ChannelMismatch,
          "patch has " + std::to_string(pixels.size(0)) + " channels, expected 3");
  require(torch::isfinite(pixels).all().item<bool>(), ErrorCode::NonFinite, "patch has non-finite pixels");
  require(pixels.min().item<double>() >= 0.0 && pixels.max().item<double>() <= 1.0, ErrorCode::OutOfRange,
          "patch pixels must lie in [0,1]");
}

PatchTensor make_patch(torch::Tensor pixels, std::string source_id, TileCoords coords) {
  validate_pixels(pixels);
  return PatchTensor{std::move(pixels), std::move(source_id), coords};
}

cv::Mat read_rgb_image(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) fail(ErrorCode::Io, "cannot read image " + path.string());
  if (raw.depth() != CV_8U) fail(ErrorCode::InvalidArgument, path.string() + ": expected 8 bits per channel");
  if (raw.channels() != 3) {
    fail(ErrorCode::ChannelMismatch,
         path.string() + ": " + std::to_string(raw.channels()) + " channels, expected RGB");
  }
  cv::Mat rgb;
  cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

void write_rgb_image(const std::filesystem::path& path, const cv::Mat& rgb) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) fail(ErrorCode::Io, "cannot write image " + path.string());
}

torch::Tensor image_to_tensor(const cv::Mat& rgb) {
  require(rgb.type() == CV_8UC3, ErrorCode::ChannelMismatch, "expected an 8-bit 3-channel image");
  cv::Mat contiguous = rgb.isContinuous() ? rgb : rgb.clone();
  auto hwc = torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols, 3}, torch::kUInt8);
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
}

cv::Mat tensor_to_image(const torch::Tensor& pixels) {
  require(pixels.dim() == 3 && pixels.size(0) == 3, ErrorCode::ChannelMismatch, "expected a 3 x H x W tensor");
  auto hwc = pixels.detach()
                 .to(torch::kCPU, torch::kFloat32)
                 .clamp(0.0, 1.0)
                 .mul(255.0)
                 .round()
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
  cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3);
  std::memcpy(rgb.data, hwc.data_ptr<std::uint8_t>(), hwc.numel());
  return rgb;
}

PatchTensor load_patch(const std::filesystem::path& path) {
  return make_patch(image_to_tensor(read_rgb_image(path)), path.stem().string());
}

void save_patch_png(const std::filesystem::path& path, const torch::Tensor& pixels) {
  write_rgb_image(path, tensor_to_image(pixels));
}

torch::Tensor stack_patches(std::span<const PatchTensor> patches) {
  require(!patches.empty(), ErrorCode::InvalidArgument, "cannot stack an empty patch list");
  std::vector<torch::Tensor> tensors;
  tensors.reserve(patches.size());
  for (const auto& p : patches) {
    require(p.pixels.sizes() == patches.front().pixels.sizes(), ErrorCode::DimensionMismatch,
            "patches in a batch must share dimensions");
    tensors.push_back(p.pixels);
  }
  return torch::stack(tensors);
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  static constexpr std::array<std::string_view, 6> kExtensions = {".png", ".tif", ".tiff", ".jpg", ".jpeg", ".bmp"};
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::Io, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (std::find(kExtensions.begin(), kExtensions.end(), ext) != kExtensions.end()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace stainforge
