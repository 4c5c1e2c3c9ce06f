#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <opencv2/core/mat.hpp>
#include <torch/torch.h>

namespace stainforge {

/// Per-pixel dye densities of a synthetic H&E-like tissue section. The same
/// sample rendered under two stain profiles gives a pixel-aligned pair.
struct TissueSample {
  cv::Mat hematoxylin;  ///< CV_32F, nuclei and faint background
  cv::Mat eosin;        ///< CV_32F, stroma and cytoplasm, zero in lumens
  cv::Mat blood;        ///< CV_32F, red blood cells (stain independent)
};

/// Beer-Lambert rendering parameters: optical density per unit dye for R, G, B.
struct StainProfile {
  std::string name;
  std::array<double, 3> hematoxylin_od;
  std::array<double, 3> eosin_od;
  double hematoxylin_strength = 1.0;
  double eosin_strength = 1.0;
  std::array<double, 3> illuminant{1.0, 1.0, 1.0};
};

StainProfile reference_stain_profile();
/// Deterministic off-reference profiles; `variant` picks one of several labs.
StainProfile input_stain_profile(int variant);

TissueSample generate_tissue(int height, int width, std::uint64_t seed);
/// 8-bit RGB rendering.
cv::Mat render_tissue(const TissueSample& sample, const StainProfile& profile);
/// 3 x H x W float rendering in [0,1], quantized to 8-bit levels.
torch::Tensor render_tissue_tensor(const TissueSample& sample, const StainProfile& profile);

}  // namespace stainforge
