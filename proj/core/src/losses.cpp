#include "stainforge/losses.hpp"

#include <cmath>

#include "stainforge/error.hpp"

namespace stainforge {

namespace {

std::string shape_string(const torch::Tensor& t) {
  std::string s = "[";
  for (std::int64_t i = 0; i < t.dim(); ++i) s += (i ? "x" : "") + std::to_string(t.size(i));
  return s + "]";
}

// Sum over the trailing two dims, then mean over an optional batch dim.
torch::Tensor per_sample_mean(const torch::Tensor& squared) {
  if (squared.dim() == 3) return squared.sum({1, 2}).mean();
  return squared.sum();
}

void check_probabilities(const torch::Tensor& scores, const char* which) {
  const auto lo = scores.min().item<double>();
  const auto hi = scores.max().item<double>();
  if (!(lo >= 0.0 && hi <= 1.0)) {
    fail(ErrorCode::OutOfRange, std::string(which) +
                                    " scores outside [0,1]; the discriminator output must be post-sigmoid");
  }
}

}  // namespace

void LossWeights::validate() const {
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  require(ok(lambda_a) && ok(lambda_c) && ok(lambda_s), ErrorCode::InvalidArgument,
          "loss weights must be finite and non-negative");
  require(lambda_a > 0.0 || lambda_c > 0.0 || lambda_s > 0.0, ErrorCode::InvalidArgument,
          "at least one of lambda_a, lambda_c, lambda_s must be positive");
  for (const auto& [layer, w] : omega) {
    require(ok(w), ErrorCode::InvalidArgument, "style weight for '" + layer + "' must be finite and non-negative");
  }
}

torch::Tensor content_loss(const torch::Tensor& features_p, const torch::Tensor& features_t) {
  if (!features_p.sizes().equals(features_t.sizes())) {
    fail(ErrorCode::DimensionMismatch,
         "content features differ in shape: " + shape_string(features_p) + " vs " + shape_string(features_t));
  }
  require(features_p.dim() == 2 || features_p.dim() == 3, ErrorCode::DimensionMismatch,
          "content features must be N x M or B x N x M");
  return 0.5 * per_sample_mean((features_p - features_t).square());
}

torch::Tensor style_layer_loss(const GramMatrix& gram_r, const GramMatrix& gram_t) {
  if (gram_r.layer_name != gram_t.layer_name) {
    fail(ErrorCode::DimensionMismatch,
         "style Grams come from different layers: '" + gram_r.layer_name + "' vs '" + gram_t.layer_name + "'");
  }
  if (gram_r.n_maps != gram_t.n_maps || gram_r.spatial_size != gram_t.spatial_size) {
    fail(ErrorCode::DimensionMismatch, "style Grams for '" + gram_t.layer_name + "' differ in N or M");
  }
  auto r = gram_r.values;
  const auto& t = gram_t.values;
  if (r.dim() == 2 && t.dim() == 3) r = r.unsqueeze(0);
  if (r.dim() == 3 && t.dim() == 3 && r.size(0) == 1) r = r.expand_as(t);
  if (!r.sizes().equals(t.sizes())) {
    fail(ErrorCode::DimensionMismatch,
         "style Grams differ in shape: " + shape_string(r) + " vs " + shape_string(t));
  }
  const double norm = static_cast<double>(gram_t.n_maps) * static_cast<double>(gram_t.spatial_size);
  return per_sample_mean((r - t).square()) / norm;
}

StyleLoss style_loss(const GramStack& grams_r, const GramStack& grams_t, const std::map<std::string, double>& omega) {
  StyleLoss out;
  for (const auto& [layer, weight] : omega) {
    auto r = grams_r.find(layer);
    auto t = grams_t.find(layer);
    require(r != grams_r.end() && t != grams_t.end(), ErrorCode::UnknownLayer,
            "style layer '" + layer + "' missing from a Gram stack");
    auto term = style_layer_loss(r->second, t->second);
    out.total = out.total.defined() ? out.total + weight * term : weight * term;
    out.per_layer.emplace(layer, term);
  }
  if (!out.total.defined()) {
    auto dtype = grams_t.empty() ? torch::kFloat32 : grams_t.begin()->second.values.scalar_type();
    out.total = torch::zeros({}, torch::TensorOptions().dtype(dtype));
  }
  return out;
}

StyleLoss style_loss(const FeatureStack& feats_r, const FeatureStack& feats_t,
                     const std::map<std::string, double>& omega) {
  std::vector<std::string> layers;
  for (const auto& [layer, w] : omega) layers.push_back(layer);
  return style_loss(gram_stack(feats_r, layers), gram_stack(feats_t, layers), omega);
}

torch::Tensor discriminator_loss(const torch::Tensor& scores_r, const torch::Tensor& scores_t, double eps) {
  require(scores_r.sizes().equals(scores_t.sizes()), ErrorCode::DimensionMismatch,
          "discriminator score grids differ in shape");
  check_probabilities(scores_r, "real");
  check_probabilities(scores_t, "fake");
  auto r = scores_r.clamp(eps, 1.0 - eps);
  auto t = scores_t.clamp(eps, 1.0 - eps);
  return (torch::log(1.0 - r) + torch::log(t)).mean();
}

torch::Tensor adversarial_loss(const torch::Tensor& scores_t, double eps) {
  check_probabilities(scores_t, "fake");
  return torch::log(1.0 - scores_t.clamp(eps, 1.0 - eps)).mean();
}

LossReport total_generator_loss(double content, double style, double adversarial, const LossWeights& weights) {
  weights.validate();
  LossReport report;
  report.content = content;
  report.style = style;
  report.adversarial = adversarial;
  report.total = weights.lambda_a * adversarial + weights.lambda_c * content + weights.lambda_s * style;
  return report;
}

torch::Tensor weighted_total(const torch::Tensor& content, const torch::Tensor& style,
                             const torch::Tensor& adversarial, const LossWeights& weights) {
  return weights.lambda_a * adversarial + weights.lambda_c * content + weights.lambda_s * style;
}

}  // namespace stainforge
