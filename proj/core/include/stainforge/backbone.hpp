#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "stainforge/archive.hpp"

namespace stainforge {

inline const std::string kContentLayer = "conv2_2";
inline const std::vector<std::string> kStyleLayers = {"conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"};

/// Post-ReLU activations of one layer, flattened to B x N x M
/// (N feature maps, M = height * width spatial positions).
struct LayerFeatures {
  torch::Tensor values;
  std::int64_t height = 0;
  std::int64_t width = 0;

  std::int64_t batch() const { return values.size(0); }
  std::int64_t n_maps() const { return values.size(1); }
  std::int64_t spatial_size() const { return values.size(2); }
  /// B x N x H x W view of the same data.
  torch::Tensor maps() const { return values.view({batch(), n_maps(), height, width}); }
};

using FeatureStack = std::map<std::string, LayerFeatures>;

/// Second-order feature statistics F * F^T for one layer. Values are
/// B x N x N (or N x N when built from an unbatched activation).
struct GramMatrix {
  torch::Tensor values;
  std::string layer_name;
  std::int64_t n_maps = 0;
  std::int64_t spatial_size = 0;
};

using GramStack = std::map<std::string, GramMatrix>;

/// Unnormalized Gram matrix: G_ik = sum_j F_ij F_kj. `activation` is N x M or
/// B x N x M. Throws on non-finite input.
GramMatrix gram(const torch::Tensor& activation, std::string layer_name = {});
/// Reshapes `activation` (any layout with n_maps * spatial_size elements per
/// sample) to N x M first.
GramMatrix gram(const torch::Tensor& activation, std::int64_t n_maps, std::int64_t spatial_size,
                std::string layer_name = {});
GramMatrix gram(const LayerFeatures& features, std::string layer_name = {});
GramStack gram_stack(const FeatureStack& features, const std::vector<std::string>& layers);

/// One step of a VGG-style feature plan: a named 3x3 conv + ReLU, or a 2x2 max-pool.
struct PlanStep {
  enum class Kind { Conv, Pool } kind = Kind::Conv;
  std::string name;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
};

struct BackbonePlan {
  std::string architecture;
  std::vector<PlanStep> steps;
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};
};

/// The `features` part of VGG19 (16 convolutions, 4 interior pools), with
/// the torchvision ImageNet preprocessing constants.
BackbonePlan vgg19_plan();

/// Frozen feature extractor. Parameters never require gradients; gradients
/// flow through to the input.
class PerceptualBackbone {
 public:
  /// Loads weights from an archive written by `save` or by
  /// tools/convert_vgg19.py. When `expected_sha256` is set the file digest
  /// must match it; otherwise a `<path>.sha256` sidecar is honoured if present.
  static PerceptualBackbone load(const std::filesystem::path& path,
                                 std::optional<std::string> expected_sha256 = std::nullopt);
  static PerceptualBackbone from_archive(const TensorArchive& archive, const BackbonePlan& plan);
  /// Fan-in scaled random weights, deterministic in `seed`.
  static PerceptualBackbone random(const BackbonePlan& plan, std::uint64_t seed,
                                   torch::ScalarType dtype = torch::kFloat32);

  TensorArchive to_archive() const;
  /// Saves the archive and a `<path>.sha256` sidecar recording its digest.
  void save(const std::filesystem::path& path) const;

  /// `x` is B x 3 x H x W or 3 x H x W in [0,1]. Runs only as deep as the
  /// deepest requested layer.
  FeatureStack extract(const torch::Tensor& x, const std::vector<std::string>& layers) const;

  std::vector<std::string> layer_names() const;
  const BackbonePlan& plan() const { return plan_; }
  std::vector<torch::Tensor> parameters() const;
  std::string checksum() const { return tensors_checksum(parameters()); }
  torch::ScalarType dtype() const;
  PerceptualBackbone to(torch::ScalarType dtype) const;

 private:
  struct ConvWeights {
    torch::Tensor weight;
    torch::Tensor bias;
  };

  PerceptualBackbone(BackbonePlan plan, std::map<std::string, ConvWeights> weights);

  BackbonePlan plan_;
  std::map<std::string, ConvWeights> weights_;
};

/// Sidecar path recording the digest of a weight file.
std::filesystem::path checksum_sidecar(const std::filesystem::path& weights_path);

/// Resolves the weight path: explicit value, else $STAINFORGE_WEIGHTS, else
/// weights/vgg19_features.sfar.
std::filesystem::path resolve_weights_path(const std::optional<std::filesystem::path>& explicit_path);

}  // namespace stainforge
