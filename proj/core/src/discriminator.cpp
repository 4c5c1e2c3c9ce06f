#include "stainforge/discriminator.hpp"

#include "stainforge/error.hpp"

namespace stainforge {

namespace nn = torch::nn;

std::int64_t receptive_field(std::span<const ConvGeometry> layers) {
  std::int64_t rf = 1, jump = 1;
  for (const auto& l : layers) {
    rf += (l.kernel - 1) * jump;
    jump *= l.stride;
  }
  return rf;
}

std::pair<std::int64_t, std::int64_t> receptive_window(std::span<const ConvGeometry> layers, std::int64_t cell) {
  std::int64_t first = cell, last = cell;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    first = first * it->stride - it->padding;
    last = last * it->stride - it->padding + it->kernel - 1;
  }
  return {first, last};
}

std::int64_t output_extent(std::span<const ConvGeometry> layers, std::int64_t input) {
  for (const auto& l : layers) input = (input + 2 * l.padding - l.kernel) / l.stride + 1;
  return input;
}

class PatchDiscriminator::Net : public nn::Module {
 public:
  Net() {
    const auto& g = kDiscriminatorGeometry;
    auto conv = [](std::int64_t in, std::int64_t out, const ConvGeometry& geo, bool bias) {
      return nn::Conv2d(nn::Conv2dOptions(in, out, geo.kernel).stride(geo.stride).padding(geo.padding).bias(bias));
    };
    c1 = register_module("c1", conv(3, 64, g[0], true));
    c2 = register_module("c2", conv(64, 128, g[1], false));
    c3 = register_module("c3", conv(128, 128, g[2], false));
    c4 = register_module("c4", conv(128, 1, g[3], true));
  }

  nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr}, c4{nullptr};
};

namespace {

constexpr double kLeakySlope = 0.2;
constexpr double kNormEps = 1e-5;

torch::Tensor instance_norm(const torch::Tensor& x, std::size_t index, InstanceStatistics* capture,
                            const InstanceStatistics* frozen) {
  torch::Tensor mean, var;
  if (frozen != nullptr) {
    require(index < frozen->mean_var.size(), ErrorCode::InvalidArgument, "frozen statistics are incomplete");
    std::tie(mean, var) = frozen->mean_var[index];
  } else {
    mean = x.mean({2, 3}, true);
    var = (x - mean).square().mean({2, 3}, true);
  }
  if (capture != nullptr) capture->mean_var.emplace_back(mean.detach(), var.detach());
  return (x - mean) / torch::sqrt(var + kNormEps);
}

}  // namespace

PatchDiscriminator::PatchDiscriminator(std::uint64_t seed) {
  torch::manual_seed(seed);
  net_ = std::make_shared<Net>();
}

torch::Tensor PatchDiscriminator::run(const torch::Tensor& x, InstanceStatistics* capture,
                                      const InstanceStatistics* frozen) {
  require(x.dim() == 3 || x.dim() == 4, ErrorCode::DimensionMismatch, "discriminator input must be [B x] 3 x H x W");
  auto h = x.dim() == 3 ? x.unsqueeze(0) : x;
  require(h.size(1) == 3, ErrorCode::ChannelMismatch, "discriminator input must have 3 channels");
  const auto rf = receptive_field(kDiscriminatorGeometry);
  if (h.size(2) < rf || h.size(3) < rf) {
    fail(ErrorCode::ImageTooSmall, "discriminator input must be at least " + std::to_string(rf) + "x" +
                                       std::to_string(rf));
  }
  h = torch::leaky_relu(net_->c1->forward(h), kLeakySlope);
  h = torch::leaky_relu(instance_norm(net_->c2->forward(h), 0, capture, frozen), kLeakySlope);
  h = torch::leaky_relu(instance_norm(net_->c3->forward(h), 1, capture, frozen), kLeakySlope);
  return torch::sigmoid(net_->c4->forward(h)).squeeze(1);
}

PatchScoreGrid PatchDiscriminator::score(const torch::Tensor& x) {
  return {run(x, nullptr, nullptr), receptive_field(kDiscriminatorGeometry)};
}

InstanceStatistics PatchDiscriminator::statistics(const torch::Tensor& x) {
  InstanceStatistics stats;
  torch::NoGradGuard no_grad;
  run(x, &stats, nullptr);
  return stats;
}

PatchScoreGrid PatchDiscriminator::score_with_statistics(const torch::Tensor& x, const InstanceStatistics& frozen) {
  return {run(x, nullptr, &frozen), receptive_field(kDiscriminatorGeometry)};
}

std::vector<std::pair<std::string, torch::Tensor>> PatchDiscriminator::named_parameters() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : net_->named_parameters()) out.emplace_back(item.key(), item.value());
  return out;
}

std::string PatchDiscriminator::checksum() const {
  std::vector<torch::Tensor> tensors;
  for (const auto& [name, t] : named_parameters()) tensors.push_back(t);
  return tensors_checksum(tensors);
}

void PatchDiscriminator::set_requires_grad(bool enabled) {
  for (auto& p : net_->parameters()) p.set_requires_grad(enabled);
}

void PatchDiscriminator::to(torch::ScalarType dtype) { net_->to(dtype); }

void PatchDiscriminator::save_into(TensorArchive& archive, const std::string& prefix) const {
  for (const auto& [name, t] : named_parameters()) archive.add(prefix + name, t);
}

void PatchDiscriminator::load_from(const TensorArchive& archive, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  for (auto& [name, t] : named_parameters()) {
    const auto& stored = archive.at(prefix + name);
    require(stored.sizes().equals(t.sizes()), ErrorCode::LoadError, "discriminator tensor '" + name + "' mismatch");
    t.copy_(stored);
  }
}

}  // namespace stainforge
