#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "stainforge/archive.hpp"

namespace stainforge {

struct ConvGeometry {
  std::int64_t kernel;
  std::int64_t stride;
  std::int64_t padding;
};

/// Layer geometry of the PatchGAN: 4x4/2, 3x3/2, 3x3/1, then a 1x1 scoring conv.
inline constexpr std::array<ConvGeometry, 4> kDiscriminatorGeometry = {{{4, 2, 1}, {3, 2, 1}, {3, 1, 1}, {1, 1, 0}}};

/// RF recurrence: rf += (kernel - 1) * jump; jump *= stride.
std::int64_t receptive_field(std::span<const ConvGeometry> layers);
/// Inclusive input interval [first, last] seen by output cell `cell` along one axis.
std::pair<std::int64_t, std::int64_t> receptive_window(std::span<const ConvGeometry> layers, std::int64_t cell);
/// Output extent along one axis for an input extent.
std::int64_t output_extent(std::span<const ConvGeometry> layers, std::int64_t input);

struct PatchScoreGrid {
  /// B x g x g probabilities.
  torch::Tensor scores;
  std::int64_t receptive_field = 16;
};

/// Per-sample, per-channel instance-norm statistics of each normalized layer.
struct InstanceStatistics {
  std::vector<std::pair<torch::Tensor, torch::Tensor>> mean_var;
};

/// DCGAN-style PatchGAN discriminator: leaky ReLU (0.2) throughout,
/// instance norm after every hidden conv except the first, sigmoid output.
class PatchDiscriminator {
 public:
  explicit PatchDiscriminator(std::uint64_t seed);

  /// `x` is B x 3 x H x W or 3 x H x W, at least 16 x 16.
  PatchScoreGrid score(const torch::Tensor& x);

  /// Normalization statistics that `score` would compute for `x`.
  InstanceStatistics statistics(const torch::Tensor& x);
  /// Scores `x` normalizing with `frozen` instead of `x`'s own statistics,
  /// which isolates the convolutional receptive field.
  PatchScoreGrid score_with_statistics(const torch::Tensor& x, const InstanceStatistics& frozen);

  std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const;
  std::string checksum() const;
  void set_requires_grad(bool enabled);
  void to(torch::ScalarType dtype);

  void save_into(TensorArchive& archive, const std::string& prefix) const;
  void load_from(const TensorArchive& archive, const std::string& prefix);

 private:
  class Net;
  torch::Tensor run(const torch::Tensor& x, InstanceStatistics* capture, const InstanceStatistics* frozen);

  std::shared_ptr<Net> net_;
};

}  // namespace stainforge
