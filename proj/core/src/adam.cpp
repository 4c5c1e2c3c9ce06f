#include "stainforge/adam.hpp"

#include <cmath>

#include "stainforge/error.hpp"

namespace stainforge {

Adam::Adam(std::vector<std::pair<std::string, torch::Tensor>> params, AdamOptions options) : options_(options) {
  require(options.lr > 0.0, ErrorCode::InvalidArgument, "learning rate must be positive");
  for (auto& [name, p] : params) {
    slots_.push_back({name, p, torch::zeros_like(p), torch::zeros_like(p)});
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) {
    if (s.param.grad().defined()) s.param.mutable_grad() = torch::Tensor();
  }
}

void Adam::step() {
  torch::NoGradGuard no_grad;
  ++steps_;
  const double bias1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (auto& s : slots_) {
    const auto& g = s.param.grad();
    if (!g.defined()) continue;
    s.m.mul_(options_.beta1).add_(g, 1.0 - options_.beta1);
    s.v.mul_(options_.beta2).addcmul_(g, g, 1.0 - options_.beta2);
    auto denom = (s.v / bias2).sqrt_().add_(options_.eps);
    s.param.addcdiv_(s.m, denom, -options_.lr / bias1);
  }
}

void Adam::save_state(TensorArchive& archive, const std::string& prefix) const {
  archive.add(prefix + "steps", torch::tensor({steps_}, torch::kInt64));
  for (const auto& s : slots_) {
    archive.add(prefix + "m/" + s.name, s.m);
    archive.add(prefix + "v/" + s.name, s.v);
  }
}

void Adam::load_state(const TensorArchive& archive, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  steps_ = archive.at(prefix + "steps").item<std::int64_t>();
  for (auto& s : slots_) {
    const auto& m = archive.at(prefix + "m/" + s.name);
    const auto& v = archive.at(prefix + "v/" + s.name);
    require(m.sizes().equals(s.m.sizes()) && v.sizes().equals(s.v.sizes()), ErrorCode::LoadError,
            "optimizer moment shape mismatch for '" + s.name + "'");
    s.m.copy_(m);
    s.v.copy_(v);
  }
}

}  // namespace stainforge
