#include "stainforge/generator.hpp"

#include "json_io.hpp"
#include "stainforge/error.hpp"

namespace stainforge {

namespace nn = torch::nn;

namespace {

nn::Sequential conv_bn(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride, bool relu) {
  nn::Sequential seq(nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(false)),
                     nn::BatchNorm2d(out));
  if (relu) seq->push_back(nn::ReLU());
  return seq;
}

torch::Tensor upsample_to(const torch::Tensor& x, std::int64_t height, std::int64_t width) {
  return nn::functional::interpolate(
      x, nn::functional::InterpolateFuncOptions().size(std::vector<std::int64_t>{height, width}).mode(torch::kNearest));
}

class ResidualUnitImpl : public nn::Module {
 public:
  explicit ResidualUnitImpl(std::int64_t channels)
      : first_(register_module("first", conv_bn(channels, channels, 3, 1, true))),
        second_(register_module("second", conv_bn(channels, channels, 3, 1, false))) {}

  torch::Tensor forward(const torch::Tensor& x) { return torch::relu(x + second_->forward(first_->forward(x))); }

 private:
  nn::Sequential first_;
  nn::Sequential second_;
};
TORCH_MODULE(ResidualUnit);

nn::Sequential residual_stack(std::int64_t channels, int count) {
  nn::Sequential seq;
  for (int i = 0; i < count; ++i) seq->push_back(ResidualUnit(channels));
  return seq;
}

nn::Conv2d output_layer(std::int64_t in, std::int64_t kernel, bool zero_init) {
  nn::Conv2d conv(nn::Conv2dOptions(in, 3, kernel).padding(kernel / 2).bias(true));
  if (zero_init) {
    torch::NoGradGuard no_grad;
    conv->weight.zero_();
    conv->bias.zero_();
  }
  return conv;
}

/// Multi-resolution body: a full-resolution stream kept end to end, one
/// lower-resolution branch added per stage, cross-resolution fusion after
/// every multi-branch stage, and a final fusion back to full resolution.
class HRNetBody : public GeneratorBody {
 public:
  explicit HRNetBody(const GeneratorConfig& config) : channels_(config.branch_channels) {
    const auto branches = static_cast<int>(channels_.size());
    stem_ = register_module("stem", conv_bn(3, channels_[0], 3, 1, true));
    for (int s = 0; s < config.n_stages; ++s) {
      const int active = std::min(s + 1, branches);
      if (s > 0 && s < branches) {
        transitions_->push_back(conv_bn(channels_[s - 1], channels_[s], 3, 2, true));
      }
      nn::ModuleList stage_branches;
      for (int i = 0; i < active; ++i) stage_branches->push_back(residual_stack(channels_[i], config.blocks_per_branch));
      stages_->push_back(stage_branches);

      nn::ModuleList fuse;
      if (active > 1) {
        for (int i = 0; i < active; ++i) {
          for (int j = 0; j < active; ++j) fuse->push_back(fuse_path(j, i));
        }
      }
      fusions_->push_back(fuse);
    }
    register_module("transitions", transitions_);
    register_module("stages", stages_);
    register_module("fusions", fusions_);
    for (int j = 1; j < branches; ++j) final_fuse_->push_back(conv_bn(channels_[j], channels_[0], 1, 1, false));
    register_module("final_fuse", final_fuse_);
    head_ = register_module("head", output_layer(channels_[0], 3, config.final_zero_init));
  }

  torch::Tensor forward(const torch::Tensor& x) override {
    std::vector<torch::Tensor> xs{stem_->forward(x)};
    std::size_t next_transition = 0;
    for (std::size_t s = 0; s < stages_->size(); ++s) {
      auto& stage = *stages_[s]->as<nn::ModuleList>();
      if (stage.size() > xs.size()) {
        xs.push_back(transitions_[next_transition++]->as<nn::Sequential>()->forward(xs.back()));
      }
      for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = stage[i]->as<nn::Sequential>()->forward(xs[i]);
      auto& fuse = *fusions_[s]->as<nn::ModuleList>();
      if (!fuse.is_empty()) xs = fuse_branches(fuse, xs);
    }
    auto out = xs[0];
    for (std::size_t j = 1; j < xs.size(); ++j) {
      auto projected = final_fuse_[j - 1]->as<nn::Sequential>()->forward(xs[j]);
      out = out + upsample_to(projected, xs[0].size(2), xs[0].size(3));
    }
    return head_->forward(torch::relu(out));
  }

 private:
  // Maps branch j onto branch i's resolution and width. Identity when i == j.
  nn::Sequential fuse_path(int j, int i) {
    nn::Sequential path;
    if (j > i) {
      path->extend(*conv_bn(channels_[j], channels_[i], 1, 1, false));
    } else if (j < i) {
      for (int k = j; k < i; ++k) {
        const bool last = k + 1 == i;
        path->extend(*conv_bn(channels_[j], last ? channels_[i] : channels_[j], 3, 2, !last));
      }
    }
    return path;
  }

  std::vector<torch::Tensor> fuse_branches(nn::ModuleListImpl& fuse, const std::vector<torch::Tensor>& xs) {
    const auto n = xs.size();
    std::vector<torch::Tensor> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      torch::Tensor sum;
      for (std::size_t j = 0; j < n; ++j) {
        auto path = fuse[i * n + j]->as<nn::Sequential>();
        torch::Tensor y = i == j ? xs[j] : path->forward(xs[j]);
        if (j > i) y = upsample_to(y, xs[i].size(2), xs[i].size(3));
        sum = sum.defined() ? sum + y : y;
      }
      out[i] = torch::relu(sum);
    }
    return out;
  }

  std::vector<std::int64_t> channels_;
  nn::Sequential stem_{nullptr};
  nn::ModuleList transitions_;
  nn::ModuleList stages_;
  nn::ModuleList fusions_;
  nn::ModuleList final_fuse_;
  nn::Conv2d head_{nullptr};
};

/// Downsample, residual bottleneck, nearest-neighbour upsample.
class ResNetBody : public GeneratorBody {
 public:
  explicit ResNetBody(const GeneratorConfig& config) {
    const auto& c = config.branch_channels;
    nn::Sequential down = conv_bn(3, c[0], 9, 1, true);
    down->extend(*conv_bn(c[0], c[1], 3, 2, true));
    down->extend(*conv_bn(c[1], c[2], 3, 2, true));
    down_ = register_module("down", down);
    bottleneck_ = register_module("bottleneck", residual_stack(c[2], config.blocks_per_branch));
    up1_ = register_module("up1", conv_bn(c[2], c[1], 3, 1, true));
    up2_ = register_module("up2", conv_bn(c[1], c[0], 3, 1, true));
    head_ = register_module("head", output_layer(c[0], 9, config.final_zero_init));
  }

  torch::Tensor forward(const torch::Tensor& x) override {
    auto h = bottleneck_->forward(down_->forward(x));
    h = up1_->forward(upsample_to(h, h.size(2) * 2, h.size(3) * 2));
    h = up2_->forward(upsample_to(h, h.size(2) * 2, h.size(3) * 2));
    return head_->forward(h);
  }

 private:
  nn::Sequential down_{nullptr};
  nn::Sequential bottleneck_{nullptr};
  nn::Sequential up1_{nullptr};
  nn::Sequential up2_{nullptr};
  nn::Conv2d head_{nullptr};
};

}  // namespace

GeneratorConfig GeneratorConfig::resnet_transform() {
  GeneratorConfig config;
  config.architecture = GeneratorArchitecture::ResNet;
  config.n_stages = 3;
  config.branch_channels = {32, 64, 128};
  config.blocks_per_branch = 5;
  config.use_skip = false;
  config.final_zero_init = false;
  return config;
}

void GeneratorConfig::validate() const {
  require(!branch_channels.empty(), ErrorCode::InvalidArgument, "branch_channels must not be empty");
  for (auto c : branch_channels) require(c > 0, ErrorCode::InvalidArgument, "branch channel counts must be positive");
  require(blocks_per_branch >= 0, ErrorCode::InvalidArgument, "blocks_per_branch must be non-negative");
  if (architecture == GeneratorArchitecture::ResNet) {
    require(branch_channels.size() == 3, ErrorCode::InvalidArgument,
            "the resnet generator takes exactly three channel widths");
  } else {
    require(n_stages >= static_cast<int>(branch_channels.size()), ErrorCode::InvalidArgument,
            "n_stages must be at least the number of resolution branches");
  }
}

std::int64_t GeneratorConfig::size_divisor() const {
  if (architecture == GeneratorArchitecture::ResNet) return 4;
  return std::int64_t{1} << (branch_channels.size() - 1);
}

std::string to_string(GeneratorArchitecture arch) {
  return arch == GeneratorArchitecture::HRNet ? "hrnet" : "resnet";
}

GeneratorArchitecture parse_generator_architecture(const std::string& name) {
  if (name == "hrnet") return GeneratorArchitecture::HRNet;
  if (name == "resnet") return GeneratorArchitecture::ResNet;
  fail(ErrorCode::InvalidArgument, "unknown generator architecture '" + name + "' (expected hrnet or resnet)");
}

StainGenerator::StainGenerator(GeneratorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  torch::manual_seed(seed);
  if (config_.architecture == GeneratorArchitecture::HRNet) {
    body_ = std::make_shared<HRNetBody>(config_);
  } else {
    body_ = std::make_shared<ResNetBody>(config_);
  }
  // NHWC convolutions are markedly faster on CPU; storage layout only.
  torch::NoGradGuard no_grad;
  for (auto& param : body_->parameters()) {
    if (param.dim() == 4) param.set_data(param.contiguous(torch::MemoryFormat::ChannelsLast));
  }
}

GeneratorOutput StainGenerator::forward(const torch::Tensor& p, ForwardMode mode) {
  require(p.dim() == 3 || p.dim() == 4, ErrorCode::DimensionMismatch, "generator input must be [B x] 3 x H x W");
  auto x = p.dim() == 3 ? p.unsqueeze(0) : p;
  require(x.size(1) == 3, ErrorCode::ChannelMismatch, "generator input must have 3 channels");
  const auto divisor = config_.size_divisor();
  if (x.size(2) % divisor != 0 || x.size(3) % divisor != 0) {
    fail(ErrorCode::DimensionMismatch, "generator input " + std::to_string(x.size(2)) + "x" +
                                           std::to_string(x.size(3)) + " must have height and width divisible by " +
                                           std::to_string(divisor));
  }

  GeneratorOutput out;
  if (mode == ForwardMode::Training) {
    body_->train(true);
    out.residual = body_->forward(x.contiguous(torch::MemoryFormat::ChannelsLast)).contiguous();
    out.transformed = config_.use_skip ? x + out.residual : out.residual;
  } else {
    torch::NoGradGuard no_grad;
    body_->eval();
    out.residual = body_->forward(x.contiguous(torch::MemoryFormat::ChannelsLast)).contiguous();
    out.transformed = (config_.use_skip ? x + out.residual : out.residual).clamp(0.0, 1.0);
  }
  if (p.dim() == 3) {
    out.residual = out.residual.squeeze(0);
    out.transformed = out.transformed.squeeze(0);
  }
  return out;
}

std::vector<std::pair<std::string, torch::Tensor>> StainGenerator::named_parameters() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : body_->named_parameters()) out.emplace_back(item.key(), item.value());
  return out;
}

std::vector<std::pair<std::string, torch::Tensor>> StainGenerator::named_state() const {
  auto out = named_parameters();
  for (const auto& item : body_->named_buffers()) out.emplace_back(item.key(), item.value());
  return out;
}

std::string StainGenerator::checksum() const {
  std::vector<torch::Tensor> tensors;
  for (const auto& [name, t] : named_parameters()) tensors.push_back(t);
  return tensors_checksum(tensors);
}

void StainGenerator::set_requires_grad(bool enabled) {
  for (auto& p : body_->parameters()) p.set_requires_grad(enabled);
}

void StainGenerator::to(torch::ScalarType dtype) { body_->to(dtype); }

void StainGenerator::save_into(TensorArchive& archive, const std::string& prefix) const {
  for (const auto& [name, t] : named_state()) archive.add(prefix + name, t);
}

void StainGenerator::load_from(const TensorArchive& archive, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  for (auto& [name, t] : named_state()) {
    const auto& stored = archive.at(prefix + name);
    require(stored.sizes().equals(t.sizes()) && stored.scalar_type() == t.scalar_type(), ErrorCode::LoadError,
            "generator tensor '" + name + "' does not match the configured architecture");
    t.copy_(stored);
  }
}

std::string generator_config_to_json(const GeneratorConfig& config) {
  return detail::generator_config_json(config).dump();
}

GeneratorConfig generator_config_from_json(const std::string& text) {
  auto j = detail::json::parse(text, nullptr, false);
  require(!j.is_discarded(), ErrorCode::InvalidArgument, "generator config is not valid JSON");
  return detail::generator_config_from(j);
}

void save_generator(const StainGenerator& generator, const std::filesystem::path& path) {
  TensorArchive archive;
  detail::json meta;
  meta["kind"] = "generator";
  meta["format_version"] = detail::kCheckpointFormatVersion;
  meta["generator_config"] = detail::generator_config_json(generator.config());
  archive.metadata = meta.dump();
  generator.save_into(archive, "generator/");
  save_archive(archive, path);
}

StainGenerator load_generator(const std::filesystem::path& path) {
  const auto archive = load_archive(path);
  const auto meta = detail::checkpoint_metadata(archive.metadata, path.string());
  const auto kind = meta.value("kind", "");
  require(kind == "generator" || kind == "train_state", ErrorCode::LoadError,
          path.string() + " holds no generator (kind '" + kind + "')");
  StainGenerator generator(detail::generator_config_from(meta.at("generator_config")), 0);
  generator.load_from(archive, "generator/");
  return generator;
}

namespace detail {

json generator_config_json(const GeneratorConfig& config) {
  json j;
  j["architecture"] = to_string(config.architecture);
  j["n_stages"] = config.n_stages;
  j["branch_channels"] = config.branch_channels;
  j["blocks_per_branch"] = config.blocks_per_branch;
  j["use_skip"] = config.use_skip;
  j["final_zero_init"] = config.final_zero_init;
  return j;
}

GeneratorConfig generator_config_from(const json& j) {
  require(j.is_object(), ErrorCode::InvalidArgument, "generator config must be a JSON object");
  GeneratorConfig config;
  try {
    if (j.contains("architecture")) config.architecture = parse_generator_architecture(j.at("architecture"));
    if (config.architecture == GeneratorArchitecture::ResNet) config = GeneratorConfig::resnet_transform();
    config.n_stages = j.value("n_stages", config.n_stages);
    config.branch_channels = j.value("branch_channels", config.branch_channels);
    config.blocks_per_branch = j.value("blocks_per_branch", config.blocks_per_branch);
    config.use_skip = j.value("use_skip", config.use_skip);
    config.final_zero_init = j.value("final_zero_init", config.final_zero_init);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("malformed generator config: ") + e.what());
  }
  config.validate();
  return config;
}

json checkpoint_metadata(const std::string& text, const std::string& source) {
  auto meta = json::parse(text, nullptr, false);
  if (meta.is_discarded() || !meta.is_object()) fail(ErrorCode::CorruptFile, source + ": unreadable metadata");
  const int version = meta.value("format_version", -1);
  if (version != kCheckpointFormatVersion) {
    fail(ErrorCode::VersionMismatch, source + ": checkpoint format " + std::to_string(version) + ", expected " +
                                         std::to_string(kCheckpointFormatVersion));
  }
  return meta;
}

}  // namespace detail

}  // namespace stainforge
