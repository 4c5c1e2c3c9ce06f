#pragma once

#include <map>
#include <string>

#include <torch/torch.h>

#include "stainforge/backbone.hpp"

namespace stainforge {

inline constexpr double kLogClampEps = 1e-7;

struct LossWeights {
  double lambda_a = 0.1;
  double lambda_c = 1.0;
  double lambda_s = 10.0;
  /// Per-layer style weights; the key set selects the style layers.
  std::map<std::string, double> omega = {
      {"conv1_1", 1.0}, {"conv2_1", 1.0}, {"conv3_1", 1.0}, {"conv4_1", 1.0}, {"conv5_1", 1.0}};

  /// Throws unless every weight is finite and >= 0 and some lambda is > 0.
  void validate() const;
};

struct LossReport {
  double content = 0.0;
  double style = 0.0;
  double adversarial = 0.0;
  /// Discriminator objective of the same step; 0 when no discriminator runs.
  double disc = 0.0;
  double total = 0.0;
  std::map<std::string, double> per_layer_style;
};

// All losses accept optionally batched tensors (leading batch dimension) and
// average the per-sample value over the batch.

/// 1/2 * sum_ij (F_ij(p) - F_ij(t))^2 over an N x M (or B x N x M) activation.
torch::Tensor content_loss(const torch::Tensor& features_p, const torch::Tensor& features_t);

/// 1/(N*M) * sum_ik (G_ik(r) - G_ik(t))^2. A reference Gram without batch
/// dimension is broadcast across the batch of `t`.
torch::Tensor style_layer_loss(const GramMatrix& gram_r, const GramMatrix& gram_t);

struct StyleLoss {
  torch::Tensor total;
  std::map<std::string, torch::Tensor> per_layer;
};

/// sum_l omega_l * style_layer_loss over the layers named in `omega`.
StyleLoss style_loss(const GramStack& grams_r, const GramStack& grams_t, const std::map<std::string, double>& omega);
StyleLoss style_loss(const FeatureStack& feats_r, const FeatureStack& feats_t,
                     const std::map<std::string, double>& omega);

/// mean over cells of log(1 - D(r)) + log(D(t)), arguments clamped to
/// [eps, 1-eps]. Scores must already be probabilities.
torch::Tensor discriminator_loss(const torch::Tensor& scores_r, const torch::Tensor& scores_t,
                                 double eps = kLogClampEps);

/// mean over cells of log(1 - D(t)), clamped as above.
torch::Tensor adversarial_loss(const torch::Tensor& scores_t, double eps = kLogClampEps);

/// lambda_a * adversarial + lambda_c * content + lambda_s * style.
LossReport total_generator_loss(double content, double style, double adversarial, const LossWeights& weights);
torch::Tensor weighted_total(const torch::Tensor& content, const torch::Tensor& style,
                             const torch::Tensor& adversarial, const LossWeights& weights);

}  // namespace stainforge
