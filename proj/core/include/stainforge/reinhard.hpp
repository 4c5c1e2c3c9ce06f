#pragma once

#include <array>
#include <span>

#include <torch/torch.h>

#include "stainforge/patch.hpp"

namespace stainforge {

inline constexpr double kLabStdFloor = 1e-6;

/// Global per-channel statistics in CIE L*a*b*.
struct LabStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};
};

/// sRGB (D65) in [0,1] to L*a*b*, computed in double. Input and output are 3 x H x W.
torch::Tensor rgb_to_lab(const torch::Tensor& rgb);
/// Inverse of rgb_to_lab; the result is clamped to [0,1] and returned as float32.
torch::Tensor lab_to_rgb(const torch::Tensor& lab);

/// Population mean and standard deviation (floored at kLabStdFloor).
LabStats lab_stats(const torch::Tensor& rgb);
/// Statistics pooled over every pixel of every patch.
LabStats lab_stats(std::span<const PatchTensor> patches);

/// Per-channel affine match in L*a*b*, before conversion back to RGB.
torch::Tensor reinhard_transfer_lab(const torch::Tensor& rgb, const LabStats& target);
PatchTensor reinhard_transfer(const PatchTensor& patch, const LabStats& target);

}  // namespace stainforge
