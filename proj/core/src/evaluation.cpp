#include "stainforge/evaluation.hpp"

#include <cmath>

#include <opencv2/core.hpp>

#include "json.hpp"
#include "stainforge/data_pipeline.hpp"
#include "stainforge/error.hpp"
#include "stainforge/losses.hpp"

namespace stainforge {

namespace {

using json = nlohmann::ordered_json;

FeatureStack features(const torch::Tensor& pixels, const PerceptualBackbone& backbone,
                      const std::vector<std::string>& layers) {
  torch::NoGradGuard no_grad;
  return backbone.extract(pixels.to(backbone.dtype()), layers);
}

json summary_json(const MetricSummary& s) {
  return {{"perceptual_to_ref_domain", s.perceptual_to_ref_domain},
          {"style_distance", s.style_distance},
          {"content_distance_to_input", s.content_distance_to_input}};
}

}  // namespace

double perceptual_distance(const FeatureStack& a, const FeatureStack& b, const std::vector<std::string>& layers) {
  require(!layers.empty(), ErrorCode::InvalidArgument, "perceptual distance needs at least one layer");
  double total = 0.0;
  for (const auto& layer : layers) {
    const auto& fa = a.at(layer).values;
    const auto& fb = b.at(layer).values;
    require(fa.sizes().equals(fb.sizes()), ErrorCode::DimensionMismatch, "feature shapes differ at " + layer);
    auto na = fa / (fa.norm(2, 1, true) + 1e-10);
    auto nb = fb / (fb.norm(2, 1, true) + 1e-10);
    total += (na - nb).square().sum(1).mean().item<double>();
  }
  return total / static_cast<double>(layers.size());
}

double perceptual_distance(const PatchTensor& a, const PatchTensor& b, const PerceptualBackbone& backbone) {
  require(a.pixels.sizes().equals(b.pixels.sizes()), ErrorCode::DimensionMismatch,
          "perceptual distance needs equally sized patches");
  return perceptual_distance(features(a.pixels, backbone, kStyleLayers), features(b.pixels, backbone, kStyleLayers),
                             kStyleLayers);
}

double style_distance(const GramStack& t, const GramStack& domain) {
  require(!t.empty(), ErrorCode::InvalidArgument, "style distance needs at least one layer");
  double total = 0.0;
  for (const auto& [layer, g] : t) {
    auto it = domain.find(layer);
    require(it != domain.end(), ErrorCode::UnknownLayer, "reference Grams lack layer '" + layer + "'");
    total += style_layer_loss(it->second, g).item<double>();
  }
  return total / static_cast<double>(t.size());
}

GramStack mean_reference_grams(const std::vector<PatchTensor>& refs, const PerceptualBackbone& backbone) {
  require(!refs.empty(), ErrorCode::InvalidArgument, "the reference domain is empty");
  GramStack mean;
  for (const auto& r : refs) {
    for (auto& [layer, g] : gram_stack(features(r.pixels, backbone, kStyleLayers), kStyleLayers)) {
      auto values = g.values.squeeze(0).to(torch::kFloat64);
      auto it = mean.find(layer);
      if (it == mean.end()) {
        mean.emplace(layer, GramMatrix{values, layer, g.n_maps, g.spatial_size});
      } else {
        require(it->second.spatial_size == g.spatial_size, ErrorCode::DimensionMismatch,
                "reference patches must share dimensions");
        it->second.values = it->second.values + values;
      }
    }
  }
  for (auto& [layer, g] : mean) g.values = g.values / static_cast<double>(refs.size());
  return mean;
}

double style_distance_to_domain(const PatchTensor& t, const std::vector<PatchTensor>& refs,
                                const PerceptualBackbone& backbone) {
  const auto domain = mean_reference_grams(refs, backbone);
  GramStack grams;
  for (auto& [layer, g] : gram_stack(features(t.pixels, backbone, kStyleLayers), kStyleLayers)) {
    grams.emplace(layer, GramMatrix{g.values.squeeze(0).to(torch::kFloat64), layer, g.n_maps, g.spatial_size});
  }
  return style_distance(grams, domain);
}

double content_distance(const PatchTensor& input, const PatchTensor& output, const PerceptualBackbone& backbone) {
  const auto a = features(input.pixels, backbone, {kContentLayer});
  const auto b = features(output.pixels, backbone, {kContentLayer});
  return content_loss(a.at(kContentLayer).values, b.at(kContentLayer).values).item<double>();
}

void summarize(EvaluationReport& report) {
  require(!report.per_tile.empty(), ErrorCode::InvalidArgument, "no tiles to summarize");
  const double n = static_cast<double>(report.per_tile.size());
  MetricSummary mean, var;
  for (const auto& m : report.per_tile) {
    mean.perceptual_to_ref_domain += m.perceptual_to_ref_domain / n;
    mean.style_distance += m.style_distance / n;
    mean.content_distance_to_input += m.content_distance_to_input / n;
  }
  for (const auto& m : report.per_tile) {
    var.perceptual_to_ref_domain += std::pow(m.perceptual_to_ref_domain - mean.perceptual_to_ref_domain, 2) / n;
    var.style_distance += std::pow(m.style_distance - mean.style_distance, 2) / n;
    var.content_distance_to_input += std::pow(m.content_distance_to_input - mean.content_distance_to_input, 2) / n;
  }
  report.mean = mean;
  report.std = {std::sqrt(var.perceptual_to_ref_domain), std::sqrt(var.style_distance),
                std::sqrt(var.content_distance_to_input)};
}

std::string report_to_json(const EvaluationReport& report) {
  json tiles = json::array();
  for (const auto& m : report.per_tile) {
    tiles.push_back({{"tile", m.tile},
                     {"nearest_reference", m.nearest_reference},
                     {"perceptual_to_ref_domain", m.perceptual_to_ref_domain},
                     {"style_distance", m.style_distance},
                     {"content_distance_to_input", m.content_distance_to_input}});
  }
  json j;
  j["per_tile"] = std::move(tiles);
  j["aggregates"] = {{"mean", summary_json(report.mean)}, {"std", summary_json(report.std)}};
  return j.dump(2) + "\n";
}

std::filesystem::path comparison_grid_path(const std::filesystem::path& report_path) {
  return report_path.parent_path() / (report_path.stem().string() + "_grid.png");
}

EvaluationReport evaluate_run(StainGenerator& generator, const std::vector<PatchTensor>& tiles,
                              const std::vector<PatchTensor>& refs, const PerceptualBackbone& backbone,
                              const std::filesystem::path& out_path) {
  require(!tiles.empty(), ErrorCode::InvalidArgument, "no tiles to evaluate");
  require(!refs.empty(), ErrorCode::InvalidArgument, "no reference tiles");

  const auto domain = mean_reference_grams(refs, backbone);
  std::vector<torch::Tensor> ref_descriptors;
  for (const auto& r : refs) ref_descriptors.push_back(content_descriptor(r.pixels, backbone));
  auto ref_matrix = torch::stack(ref_descriptors);
  ref_matrix = ref_matrix / ref_matrix.norm(2, 1, true).clamp_min(1e-12);

  EvaluationReport report;
  std::vector<cv::Mat> rows;
  for (const auto& tile : tiles) {
    const auto out = generator.forward(tile.pixels, ForwardMode::Inference);
    const PatchTensor transformed{out.transformed, tile.source_id, tile.tile_coords};

    auto d = content_descriptor(transformed.pixels, backbone);
    d = d / d.norm().clamp_min(1e-12);
    const auto nearest = torch::matmul(ref_matrix, d).argmax().item<std::int64_t>();
    const auto& ref = refs[static_cast<std::size_t>(nearest)];
    require(ref.pixels.sizes().equals(tile.pixels.sizes()), ErrorCode::DimensionMismatch,
            "tiles and references must share dimensions");

    GramStack grams;
    for (auto& [layer, g] : gram_stack(features(transformed.pixels, backbone, kStyleLayers), kStyleLayers)) {
      grams.emplace(layer, GramMatrix{g.values.squeeze(0).to(torch::kFloat64), layer, g.n_maps, g.spatial_size});
    }

    TileMetrics m;
    m.tile = tile.source_id;
    m.nearest_reference = ref.source_id;
    m.perceptual_to_ref_domain = perceptual_distance(transformed, ref, backbone);
    m.style_distance = style_distance(grams, domain);
    m.content_distance_to_input = content_distance(tile, transformed, backbone);
    report.per_tile.push_back(m);

    cv::Mat row;
    cv::hconcat(std::vector<cv::Mat>{tensor_to_image(tile.pixels), tensor_to_image(transformed.pixels),
                                     tensor_to_image(ref.pixels)},
                row);
    rows.push_back(row);
  }
  summarize(report);

  const auto text = report_to_json(report);
  write_file_atomically(out_path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));

  int width = 0;
  for (const auto& r : rows) width = std::max(width, r.cols);
  for (auto& r : rows) {
    if (r.cols < width) cv::copyMakeBorder(r, r, 0, 0, 0, width - r.cols, cv::BORDER_CONSTANT, cv::Scalar::all(0));
  }
  cv::Mat grid;
  cv::vconcat(rows, grid);
  write_rgb_image(comparison_grid_path(out_path), grid);
  return report;
}

}  // namespace stainforge
