#include "stainforge/reinhard.hpp"

#include <cmath>

#include "stainforge/error.hpp"

namespace stainforge {

namespace {

// Linear sRGB -> XYZ, D65 reference white.
const double kRgbToXyz[3][3] = {{0.4124564, 0.3575761, 0.1804375},
                                {0.2126729, 0.7151522, 0.0721750},
                                {0.0193339, 0.1191920, 0.9503041}};
const double kWhite[3] = {0.95047, 1.0, 1.08883};
constexpr double kDelta = 6.0 / 29.0;

torch::Tensor rgb_matrix() { return torch::from_blob(const_cast<double*>(&kRgbToXyz[0][0]), {3, 3}, torch::kFloat64).clone(); }

torch::Tensor apply_matrix(const torch::Tensor& m, const torch::Tensor& x) {
  // x: 3 x H x W
  return torch::einsum("ij,jhw->ihw", {m, x});
}

torch::Tensor white() { return torch::tensor({kWhite[0], kWhite[1], kWhite[2]}, torch::kFloat64).view({3, 1, 1}); }

torch::Tensor lab_f(const torch::Tensor& t) {
  return torch::where(t > kDelta * kDelta * kDelta, torch::pow(t.clamp_min(0.0), 1.0 / 3.0),
                      t / (3.0 * kDelta * kDelta) + 4.0 / 29.0);
}

torch::Tensor lab_f_inv(const torch::Tensor& t) {
  return torch::where(t > kDelta, t * t * t, 3.0 * kDelta * kDelta * (t - 4.0 / 29.0));
}

void check_image(const torch::Tensor& x, const char* what) {
  require(x.dim() == 3 && x.size(0) == 3, ErrorCode::ChannelMismatch, std::string(what) + " must be 3 x H x W");
}

LabStats stats_of(const torch::Tensor& lab) {
  LabStats s;
  auto flat = lab.reshape({3, -1});
  auto mean = flat.mean(1);
  auto var = (flat - mean.unsqueeze(1)).square().mean(1);
  for (int c = 0; c < 3; ++c) {
    s.mean[c] = mean[c].item<double>();
    s.std[c] = std::max(std::sqrt(var[c].item<double>()), kLabStdFloor);
  }
  return s;
}

}  // namespace

torch::Tensor rgb_to_lab(const torch::Tensor& rgb) {
  check_image(rgb, "rgb_to_lab input");
  auto c = rgb.to(torch::kFloat64);
  auto linear = torch::where(c <= 0.04045, c / 12.92, torch::pow((c + 0.055) / 1.055, 2.4));
  auto xyz = apply_matrix(rgb_matrix(), linear) / white();
  auto f = lab_f(xyz);
  auto fx = f[0], fy = f[1], fz = f[2];
  return torch::stack({116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)});
}

torch::Tensor lab_to_rgb(const torch::Tensor& lab) {
  check_image(lab, "lab_to_rgb input");
  auto l = lab.to(torch::kFloat64);
  auto fy = (l[0] + 16.0) / 116.0;
  auto fx = fy + l[1] / 500.0;
  auto fz = fy - l[2] / 200.0;
  auto xyz = lab_f_inv(torch::stack({fx, fy, fz})) * white();
  auto linear = apply_matrix(torch::linalg_inv(rgb_matrix()), xyz).clamp_min(0.0);
  auto srgb = torch::where(linear <= 0.0031308, 12.92 * linear, 1.055 * torch::pow(linear, 1.0 / 2.4) - 0.055);
  return srgb.clamp(0.0, 1.0).to(torch::kFloat32);
}

LabStats lab_stats(const torch::Tensor& rgb) { return stats_of(rgb_to_lab(rgb)); }

LabStats lab_stats(std::span<const PatchTensor> patches) {
  require(!patches.empty(), ErrorCode::InvalidArgument, "reference statistics need at least one patch");
  std::vector<torch::Tensor> flat;
  for (const auto& p : patches) flat.push_back(rgb_to_lab(p.pixels).reshape({3, 1, -1}));
  return stats_of(torch::cat(flat, 2));
}

torch::Tensor reinhard_transfer_lab(const torch::Tensor& rgb, const LabStats& target) {
  for (double s : target.std) require(std::isfinite(s) && s > 0.0, ErrorCode::InvalidArgument, "invalid reference std");
  auto lab = rgb_to_lab(rgb);
  const auto source = stats_of(lab);
  std::vector<torch::Tensor> channels;
  for (int c = 0; c < 3; ++c) {
    channels.push_back((lab[c] - source.mean[c]) * (target.std[c] / source.std[c]) + target.mean[c]);
  }
  return torch::stack(channels);
}

PatchTensor reinhard_transfer(const PatchTensor& patch, const LabStats& target) {
  return make_patch(lab_to_rgb(reinhard_transfer_lab(patch.pixels, target)), patch.source_id, patch.tile_coords);
}

}  // namespace stainforge
