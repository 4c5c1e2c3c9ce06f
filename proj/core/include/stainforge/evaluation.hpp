#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "stainforge/backbone.hpp"
#include "stainforge/generator.hpp"
#include "stainforge/patch.hpp"

namespace stainforge {

/// Unweighted deep-feature distance: at each style layer, unit-normalize the
/// channel vector at every position, take the squared L2 difference, average
/// over positions; then average over layers.
double perceptual_distance(const PatchTensor& a, const PatchTensor& b, const PerceptualBackbone& backbone);
double perceptual_distance(const FeatureStack& a, const FeatureStack& b, const std::vector<std::string>& layers);

/// Mean over layers of the per-layer style loss between `t` and `domain`.
double style_distance(const GramStack& t, const GramStack& domain);
/// Per-layer mean of the references' Gram matrices.
GramStack mean_reference_grams(const std::vector<PatchTensor>& refs, const PerceptualBackbone& backbone);
double style_distance_to_domain(const PatchTensor& t, const std::vector<PatchTensor>& refs,
                                const PerceptualBackbone& backbone);

/// Content loss between the content-layer features of `input` and `output`.
double content_distance(const PatchTensor& input, const PatchTensor& output, const PerceptualBackbone& backbone);

struct TileMetrics {
  std::string tile;
  std::string nearest_reference;
  double perceptual_to_ref_domain = 0.0;
  double style_distance = 0.0;
  double content_distance_to_input = 0.0;
};

struct MetricSummary {
  double perceptual_to_ref_domain = 0.0;
  double style_distance = 0.0;
  double content_distance_to_input = 0.0;
};

struct EvaluationReport {
  std::vector<TileMetrics> per_tile;
  MetricSummary mean;
  /// Population standard deviation.
  MetricSummary std;
};

/// Mean and population std of each metric over `tiles`.
void summarize(EvaluationReport& report);
std::string report_to_json(const EvaluationReport& report);

/// Transforms each tile, scores it against its most content-similar
/// reference and the reference domain, writes the JSON report to `out_path`
/// and an input | transformed | nearest-reference grid next to it.
EvaluationReport evaluate_run(StainGenerator& generator, const std::vector<PatchTensor>& tiles,
                              const std::vector<PatchTensor>& refs, const PerceptualBackbone& backbone,
                              const std::filesystem::path& out_path);

std::filesystem::path comparison_grid_path(const std::filesystem::path& report_path);

}  // namespace stainforge
