#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "stainforge/archive.hpp"

namespace stainforge {

enum class GeneratorArchitecture { HRNet, ResNet };

struct GeneratorConfig {
  GeneratorArchitecture architecture = GeneratorArchitecture::HRNet;
  /// HRNet: stage count; branch s joins at stage s. Ignored by ResNet.
  int n_stages = 3;
  /// HRNet: width of each resolution branch (1x, 1/2x, 1/4x, ...).
  /// ResNet: widths at 1x, 1/2x and 1/4x (exactly three entries).
  std::vector<std::int64_t> branch_channels = {32, 64, 128};
  /// Residual units per branch per stage (HRNet) or in the bottleneck (ResNet).
  int blocks_per_branch = 2;
  bool use_skip = true;
  bool final_zero_init = true;

  /// The fast-style-transfer style network used by the NST ablations: no
  /// input-to-output skip, random final layer.
  static GeneratorConfig resnet_transform();

  void validate() const;
  /// Input height and width must be multiples of this.
  std::int64_t size_divisor() const;
};

std::string to_string(GeneratorArchitecture arch);
GeneratorArchitecture parse_generator_architecture(const std::string& name);

struct GeneratorOutput {
  torch::Tensor transformed;
  torch::Tensor residual;
};

enum class ForwardMode {
  /// Batch statistics, gradients enabled, output unclamped.
  Training,
  /// Running statistics, no gradients, output clamped to [0,1].
  Inference,
};

/// Residual network body G' (maps B x 3 x H x W to B x 3 x H x W).
class GeneratorBody : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& x) = 0;
};

/// The stain transfer generator: t = p + G'(p) when `use_skip`.
class StainGenerator {
 public:
  StainGenerator(GeneratorConfig config, std::uint64_t seed);

  GeneratorOutput forward(const torch::Tensor& p, ForwardMode mode);

  const GeneratorConfig& config() const { return config_; }
  GeneratorBody& body() { return *body_; }

  /// Trainable parameters in registration order.
  std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const;
  /// Parameters followed by normalization buffers; everything a checkpoint holds.
  std::vector<std::pair<std::string, torch::Tensor>> named_state() const;
  std::string checksum() const;
  void set_requires_grad(bool enabled);
  void to(torch::ScalarType dtype);

  void save_into(TensorArchive& archive, const std::string& prefix) const;
  void load_from(const TensorArchive& archive, const std::string& prefix);

 private:
  GeneratorConfig config_;
  std::shared_ptr<GeneratorBody> body_;
};

std::string generator_config_to_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from_json(const std::string& text);

/// Standalone generator checkpoint (kind "generator").
void save_generator(const StainGenerator& generator, const std::filesystem::path& path);
/// Accepts a generator checkpoint or a full training-state checkpoint; only
/// the generator part is read.
StainGenerator load_generator(const std::filesystem::path& path);

}  // namespace stainforge
