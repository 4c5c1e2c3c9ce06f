#include <fstream>

#include "json.hpp"
#include "stainforge/data_pipeline.hpp"
#include "stainforge/error.hpp"

namespace stainforge {

namespace {

using json = nlohmann::ordered_json;

torch::Tensor descriptors(const std::vector<PatchTensor>& patches, const PerceptualBackbone& backbone) {
  std::vector<torch::Tensor> rows;
  rows.reserve(patches.size());
  for (const auto& p : patches) rows.push_back(content_descriptor(p.pixels, backbone));
  return torch::stack(rows);
}

torch::Tensor cosine_matrix(const torch::Tensor& a, const torch::Tensor& b) {
  auto an = a / a.norm(2, 1, true).clamp_min(1e-12);
  auto bn = b / b.norm(2, 1, true).clamp_min(1e-12);
  return torch::matmul(an, bn.transpose(0, 1));
}

}  // namespace

torch::Tensor content_descriptor(const torch::Tensor& pixels, const PerceptualBackbone& backbone) {
  torch::NoGradGuard no_grad;
  const auto feats = backbone.extract(pixels.to(backbone.dtype()), {kContentLayer});
  return feats.at(kContentLayer).values.mean(2).squeeze(0).to(torch::kFloat64);
}

double content_similarity(const PatchTensor& a, const PatchTensor& b, const PerceptualBackbone& backbone) {
  require(a.pixels.sizes().equals(b.pixels.sizes()), ErrorCode::DimensionMismatch,
          "content similarity needs equally sized patches");
  const auto da = content_descriptor(a.pixels, backbone).unsqueeze(0);
  const auto db = content_descriptor(b.pixels, backbone).unsqueeze(0);
  return cosine_matrix(da, db).item<double>();
}

std::vector<std::pair<PairIndex, double>> select_pairs(const torch::Tensor& similarity, std::size_t k) {
  require(similarity.dim() == 2 && similarity.size(0) > 0 && similarity.size(1) > 0, ErrorCode::InvalidArgument,
          "pairing needs non-empty input and reference lists");
  const auto n_inputs = static_cast<std::size_t>(similarity.size(0));
  require(k >= 1 && k <= n_inputs, ErrorCode::InvalidArgument,
          "k=" + std::to_string(k) + " must lie in [1, " + std::to_string(n_inputs) + "]");
  auto sim = similarity.to(torch::kFloat64).contiguous();
  auto acc = sim.accessor<double, 2>();

  std::vector<std::pair<PairIndex, double>> best(n_inputs);
  for (std::size_t i = 0; i < n_inputs; ++i) {
    std::size_t arg = 0;
    for (std::int64_t j = 1; j < sim.size(1); ++j) {
      if (acc[i][j] > acc[i][arg]) arg = static_cast<std::size_t>(j);
    }
    best[i] = {PairIndex{i, arg}, acc[i][arg]};
  }
  std::vector<std::size_t> order(n_inputs);
  for (std::size_t i = 0; i < n_inputs; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return best[x].second > best[y].second; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  std::vector<std::pair<PairIndex, double>> out;
  out.reserve(k);
  for (auto i : order) out.push_back(best[i]);
  return out;
}

PairedDataset build_pairs(const std::vector<PatchTensor>& inputs, const std::vector<PatchTensor>& references,
                          std::size_t k, const PerceptualBackbone& backbone) {
  require(!inputs.empty() && !references.empty(), ErrorCode::InvalidArgument,
          "pairing needs non-empty input and reference lists");
  const auto& shape = inputs.front().pixels.sizes();
  for (const auto* list : {&inputs, &references}) {
    for (const auto& p : *list) {
      require(p.pixels.sizes().equals(shape), ErrorCode::DimensionMismatch, "all patches must share dimensions");
    }
  }
  const auto similarity = cosine_matrix(descriptors(inputs, backbone), descriptors(references, backbone));
  PairedDataset dataset;
  for (const auto& [index, score] : select_pairs(similarity, k)) {
    dataset.pairs.emplace_back(inputs[index.input], references[index.reference]);
    dataset.pairing_scores.push_back(score);
    dataset.indices.push_back(index);
  }
  return dataset;
}

void write_pair_manifest(const std::filesystem::path& path, const std::vector<PairManifestEntry>& entries) {
  json arr = json::array();
  for (const auto& e : entries) {
    arr.push_back({{"input_path", e.input_path.string()},
                   {"reference_path", e.reference_path.string()},
                   {"score", e.score}});
  }
  const auto text = arr.dump(2) + "\n";
  write_file_atomically(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<PairManifestEntry> read_pair_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open pair manifest " + path.string());
  auto arr = json::parse(in, nullptr, false);
  if (arr.is_discarded() || !arr.is_array()) fail(ErrorCode::InvalidArgument, path.string() + " is not a JSON array");
  const auto base = path.parent_path();
  std::vector<PairManifestEntry> entries;
  for (const auto& item : arr) {
    if (!item.is_object() || !item.contains("input_path") || !item.contains("reference_path") ||
        !item.contains("score") || !item["input_path"].is_string() || !item["reference_path"].is_string() ||
        !item["score"].is_number()) {
      fail(ErrorCode::InvalidArgument, path.string() + ": entries need input_path, reference_path and score");
    }
    auto resolve = [&](const std::string& p) {
      std::filesystem::path fp(p);
      return fp.is_relative() ? base / fp : fp;
    };
    entries.push_back({resolve(item["input_path"]), resolve(item["reference_path"]), item["score"].get<double>()});
  }
  require(!entries.empty(), ErrorCode::InvalidArgument, path.string() + " lists no pairs");
  return entries;
}

PairedDataset load_paired_dataset(const std::filesystem::path& manifest) {
  PairedDataset dataset;
  std::size_t i = 0;
  for (const auto& e : read_pair_manifest(manifest)) {
    auto input = load_patch(e.input_path);
    auto reference = load_patch(e.reference_path);
    if (!dataset.pairs.empty()) {
      require(input.pixels.sizes().equals(dataset.pairs.front().first.pixels.sizes()) &&
                  reference.pixels.sizes().equals(input.pixels.sizes()),
              ErrorCode::DimensionMismatch, "all paired patches must share dimensions");
    }
    require(reference.pixels.sizes().equals(input.pixels.sizes()), ErrorCode::DimensionMismatch,
            "paired patches must share dimensions: " + e.input_path.string());
    dataset.pairs.emplace_back(std::move(input), std::move(reference));
    dataset.pairing_scores.push_back(e.score);
    dataset.indices.push_back({i, i});
    ++i;
  }
  return dataset;
}

}  // namespace stainforge
