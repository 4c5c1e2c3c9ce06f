#include "stainforge/backbone.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "json.hpp"
#include "stainforge/error.hpp"

namespace stainforge {

namespace {

using json = nlohmann::ordered_json;

std::string join(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
  return out;
}

}  // namespace

GramMatrix gram(const torch::Tensor& activation, std::string layer_name) {
  require(activation.dim() == 2 || activation.dim() == 3, ErrorCode::DimensionMismatch,
          "gram expects an N x M or B x N x M activation");
  require(torch::isfinite(activation).all().item<bool>(), ErrorCode::NonFinite,
          "non-finite activations in layer '" + layer_name + "'");
  const auto n = activation.size(-2);
  const auto m = activation.size(-1);
  auto values = torch::matmul(activation, activation.transpose(-1, -2));
  return GramMatrix{values, std::move(layer_name), n, m};
}

GramMatrix gram(const torch::Tensor& activation, std::int64_t n_maps, std::int64_t spatial_size,
                std::string layer_name) {
  require(n_maps > 0 && spatial_size > 0, ErrorCode::InvalidArgument, "gram dimensions must be positive");
  const auto per_sample = n_maps * spatial_size;
  require(activation.numel() % per_sample == 0, ErrorCode::DimensionMismatch,
          "activation size is not a multiple of N*M");
  const auto batch = activation.numel() / per_sample;
  auto reshaped = activation.dim() >= 3 && batch > 1 ? activation.reshape({batch, n_maps, spatial_size})
                                                     : activation.reshape({n_maps, spatial_size});
  return gram(reshaped, std::move(layer_name));
}

GramMatrix gram(const LayerFeatures& features, std::string layer_name) {
  return gram(features.values, std::move(layer_name));
}

GramStack gram_stack(const FeatureStack& features, const std::vector<std::string>& layers) {
  GramStack out;
  for (const auto& name : layers) {
    auto it = features.find(name);
    require(it != features.end(), ErrorCode::UnknownLayer, "feature stack lacks layer '" + name + "'");
    out.emplace(name, gram(it->second, name));
  }
  return out;
}

BackbonePlan vgg19_plan() {
  BackbonePlan plan;
  plan.architecture = "vgg19";
  const std::vector<std::pair<int, std::int64_t>> blocks = {{2, 64}, {2, 128}, {4, 256}, {4, 512}, {4, 512}};
  std::int64_t in = 3;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto [count, width] = blocks[b];
    for (int i = 0; i < count; ++i) {
      plan.steps.push_back({PlanStep::Kind::Conv,
                            "conv" + std::to_string(b + 1) + "_" + std::to_string(i + 1), in, width});
      in = width;
    }
    if (b + 1 < blocks.size()) plan.steps.push_back({PlanStep::Kind::Pool, "pool" + std::to_string(b + 1)});
  }
  return plan;
}

PerceptualBackbone::PerceptualBackbone(BackbonePlan plan, std::map<std::string, ConvWeights> weights)
    : plan_(std::move(plan)), weights_(std::move(weights)) {
  for (auto& [name, w] : weights_) {
    // NHWC layout for speed; archives and checksums see the logical values.
    w.weight = w.weight.contiguous(torch::MemoryFormat::ChannelsLast);
    w.weight.set_requires_grad(false);
    w.bias.set_requires_grad(false);
  }
}

PerceptualBackbone PerceptualBackbone::from_archive(const TensorArchive& archive, const BackbonePlan& plan) {
  std::map<std::string, ConvWeights> weights;
  for (const auto& step : plan.steps) {
    if (step.kind != PlanStep::Kind::Conv) continue;
    if (!archive.contains(step.name + ".weight") || !archive.contains(step.name + ".bias")) {
      fail(ErrorCode::LoadError, "weight archive lacks layer '" + step.name + "'");
    }
    auto w = archive.at(step.name + ".weight");
    auto b = archive.at(step.name + ".bias");
    const std::vector<std::int64_t> expected_w = {step.out_channels, step.in_channels, 3, 3};
    if (w.sizes().vec() != expected_w || b.dim() != 1 || b.size(0) != step.out_channels) {
      fail(ErrorCode::LoadError, "layer '" + step.name + "' has unexpected weight shape");
    }
    weights.emplace(step.name, ConvWeights{w.clone(), b.clone()});
  }
  return PerceptualBackbone(plan, std::move(weights));
}

PerceptualBackbone PerceptualBackbone::load(const std::filesystem::path& path,
                                            std::optional<std::string> expected_sha256) {
  const auto sidecar = checksum_sidecar(path);
  if (!expected_sha256 && std::filesystem::exists(sidecar)) {
    std::ifstream in(sidecar);
    std::string digest;
    in >> digest;
    if (!digest.empty()) expected_sha256 = digest;
  }
  if (!std::filesystem::exists(path)) {
    fail(ErrorCode::LoadError, "backbone weights not found at " + path.string() + " (expected sha256 " +
                                   expected_sha256.value_or("<unrecorded>") + ")");
  }
  const auto bytes = read_file_bytes(path);
  const auto digest = sha256_hex(bytes);
  if (expected_sha256 && digest != *expected_sha256) {
    fail(ErrorCode::ChecksumMismatch,
         path.string() + " has sha256 " + digest + ", expected " + *expected_sha256);
  }
  const auto archive = parse_archive(bytes, path.string());
  const auto meta = json::parse(archive.metadata, nullptr, false);
  if (meta.is_discarded() || meta.value("kind", "") != "backbone") {
    fail(ErrorCode::LoadError, path.string() + " is not a backbone weight archive");
  }
  if (meta.value("architecture", "") != "vgg19") {
    fail(ErrorCode::LoadError, path.string() + ": unsupported architecture '" +
                                   meta.value("architecture", "") + "'");
  }
  return from_archive(archive, vgg19_plan());
}

PerceptualBackbone PerceptualBackbone::random(const BackbonePlan& plan, std::uint64_t seed,
                                              torch::ScalarType dtype) {
  torch::manual_seed(seed);
  std::map<std::string, ConvWeights> weights;
  for (const auto& step : plan.steps) {
    if (step.kind != PlanStep::Kind::Conv) continue;
    const double fan_in = static_cast<double>(step.in_channels * 9);
    // He-normal keeps the second moment of post-ReLU activations roughly constant with depth.
    auto w = torch::randn({step.out_channels, step.in_channels, 3, 3}, torch::kFloat64) * std::sqrt(2.0 / fan_in);
    auto b = torch::randn({step.out_channels}, torch::kFloat64) * 0.01;
    weights.emplace(step.name, ConvWeights{w.to(dtype), b.to(dtype)});
  }
  return PerceptualBackbone(plan, std::move(weights));
}

TensorArchive PerceptualBackbone::to_archive() const {
  TensorArchive archive;
  json meta;
  meta["kind"] = "backbone";
  meta["architecture"] = plan_.architecture;
  meta["mean"] = plan_.mean;
  meta["std"] = plan_.stddev;
  archive.metadata = meta.dump();
  for (const auto& step : plan_.steps) {
    if (step.kind != PlanStep::Kind::Conv) continue;
    const auto& w = weights_.at(step.name);
    archive.add(step.name + ".weight", w.weight.to(torch::kFloat32));
    archive.add(step.name + ".bias", w.bias.to(torch::kFloat32));
  }
  return archive;
}

void PerceptualBackbone::save(const std::filesystem::path& path) const {
  const auto bytes = serialize_archive(to_archive());
  write_file_atomically(path, bytes);
  const auto digest = sha256_hex(bytes) + "\n";
  write_file_atomically(checksum_sidecar(path),
                        std::span(reinterpret_cast<const std::uint8_t*>(digest.data()), digest.size()));
}

FeatureStack PerceptualBackbone::extract(const torch::Tensor& x, const std::vector<std::string>& layers) const {
  const auto valid = layer_names();
  std::set<std::string> wanted;
  for (const auto& name : layers) {
    if (std::find(valid.begin(), valid.end(), name) == valid.end()) {
      fail(ErrorCode::UnknownLayer, "'" + name + "' is not a backbone layer; valid layers: " + join(valid));
    }
    wanted.insert(name);
  }
  require(x.dim() == 3 || x.dim() == 4, ErrorCode::DimensionMismatch, "backbone input must be [B x] 3 x H x W");
  auto h = x.dim() == 3 ? x.unsqueeze(0) : x;
  require(h.size(1) == 3, ErrorCode::ChannelMismatch, "backbone input must have 3 channels");

  // Validate stride compatibility for the deepest requested layer.
  std::int64_t pools = 0, required_pools = 0;
  for (const auto& step : plan_.steps) {
    if (step.kind == PlanStep::Kind::Pool) ++pools;
    if (wanted.count(step.name)) required_pools = pools;
  }
  const std::int64_t divisor = std::int64_t{1} << required_pools;
  if (h.size(2) % divisor != 0 || h.size(3) % divisor != 0) {
    fail(ErrorCode::DimensionMismatch, "input " + std::to_string(h.size(2)) + "x" + std::to_string(h.size(3)) +
                                           " must be divisible by " + std::to_string(divisor) +
                                           " for the requested layers");
  }

  const auto opts = torch::TensorOptions().dtype(h.scalar_type());
  auto mean = torch::tensor(std::vector<double>(plan_.mean.begin(), plan_.mean.end()), opts).view({1, 3, 1, 1});
  auto stddev = torch::tensor(std::vector<double>(plan_.stddev.begin(), plan_.stddev.end()), opts).view({1, 3, 1, 1});
  h = ((h - mean) / stddev).contiguous(torch::MemoryFormat::ChannelsLast);

  FeatureStack out;
  for (const auto& step : plan_.steps) {
    if (out.size() == wanted.size()) break;
    if (step.kind == PlanStep::Kind::Pool) {
      h = torch::max_pool2d(h, 2, 2);
      continue;
    }
    const auto& w = weights_.at(step.name);
    h = torch::relu(torch::conv2d(h, w.weight, w.bias, 1, 1));
    if (wanted.count(step.name)) {
      const auto b = h.size(0), n = h.size(1), height = h.size(2), width = h.size(3);
      out.emplace(step.name, LayerFeatures{h.reshape({b, n, height * width}), height, width});
    }
  }
  return out;
}

std::vector<std::string> PerceptualBackbone::layer_names() const {
  std::vector<std::string> names;
  for (const auto& step : plan_.steps) {
    if (step.kind == PlanStep::Kind::Conv) names.push_back(step.name);
  }
  return names;
}

std::vector<torch::Tensor> PerceptualBackbone::parameters() const {
  std::vector<torch::Tensor> params;
  for (const auto& step : plan_.steps) {
    if (step.kind != PlanStep::Kind::Conv) continue;
    params.push_back(weights_.at(step.name).weight);
    params.push_back(weights_.at(step.name).bias);
  }
  return params;
}

torch::ScalarType PerceptualBackbone::dtype() const { return weights_.begin()->second.weight.scalar_type(); }

PerceptualBackbone PerceptualBackbone::to(torch::ScalarType dtype) const {
  std::map<std::string, ConvWeights> converted;
  for (const auto& [name, w] : weights_) converted.emplace(name, ConvWeights{w.weight.to(dtype), w.bias.to(dtype)});
  return PerceptualBackbone(plan_, std::move(converted));
}

std::filesystem::path checksum_sidecar(const std::filesystem::path& weights_path) {
  auto p = weights_path;
  p += ".sha256";
  return p;
}

std::filesystem::path resolve_weights_path(const std::optional<std::filesystem::path>& explicit_path) {
  if (explicit_path && !explicit_path->empty()) return *explicit_path;
  if (const char* env = std::getenv("STAINFORGE_WEIGHTS"); env != nullptr && *env != '\0') return env;
  return "weights/vgg19_features.sfar";
}

}  // namespace stainforge
