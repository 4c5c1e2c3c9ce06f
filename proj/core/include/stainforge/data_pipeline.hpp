#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/core/mat.hpp>
#include <torch/torch.h>

#include "stainforge/backbone.hpp"
#include "stainforge/patch.hpp"

namespace stainforge {

// ---------------------------------------------------------------------------
// Tiling

struct TileOptions {
  std::int64_t tile_size = 512;
  /// Recorded in manifests only; tiles are never resampled.
  std::string magnification_note = "10x";
};

/// Non-overlapping tiles in row-major order; border remainders are dropped.
std::vector<PatchTensor> tile_image(const cv::Mat& rgb, const TileOptions& options, const std::string& source_id);
/// Same, for a 3 x H x W image already in [0,1].
std::vector<PatchTensor> tile_image(const torch::Tensor& image, const TileOptions& options,
                                    const std::string& source_id);

/// `{source_id}_r{row}_c{col}.png`
std::string tile_filename(const PatchTensor& tile);

// ---------------------------------------------------------------------------
// Pairing

/// Spatially averaged content-layer activations, one N-vector per patch.
torch::Tensor content_descriptor(const torch::Tensor& pixels, const PerceptualBackbone& backbone);

/// Cosine similarity of the pooled content descriptors of `a` and `b`.
double content_similarity(const PatchTensor& a, const PatchTensor& b, const PerceptualBackbone& backbone);

struct PairIndex {
  std::size_t input = 0;
  std::size_t reference = 0;
};

struct PairedDataset {
  std::vector<std::pair<PatchTensor, PatchTensor>> pairs;
  std::vector<double> pairing_scores;
  /// Where each pair came from in the lists given to build_pairs.
  std::vector<PairIndex> indices;

  std::size_t size() const { return pairs.size(); }
};

/// Pairs every input with its most similar reference (ties go to the lowest
/// reference index), keeps the `k` inputs with the highest pairing score
/// (ties to the lowest input index) and returns them in input order.
PairedDataset build_pairs(const std::vector<PatchTensor>& inputs, const std::vector<PatchTensor>& references,
                          std::size_t k, const PerceptualBackbone& backbone);

/// Same selection rule over a precomputed |inputs| x |references| similarity matrix.
std::vector<std::pair<PairIndex, double>> select_pairs(const torch::Tensor& similarity, std::size_t k);

struct PairManifestEntry {
  std::filesystem::path input_path;
  std::filesystem::path reference_path;
  double score = 0.0;
};

/// JSON array of {input_path, reference_path, score}.
void write_pair_manifest(const std::filesystem::path& path, const std::vector<PairManifestEntry>& entries);
/// Relative paths are resolved against the manifest's directory.
std::vector<PairManifestEntry> read_pair_manifest(const std::filesystem::path& path);
PairedDataset load_paired_dataset(const std::filesystem::path& manifest);

// ---------------------------------------------------------------------------
// Batching

/// Seeded per-epoch shuffles over a dataset of fixed size. The final partial
/// batch of each epoch is kept.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const;
  std::vector<std::size_t> epoch_order(std::uint64_t epoch) const;
  std::vector<std::vector<std::size_t>> epoch_batches(std::uint64_t epoch) const;
  /// Batch `step` (0-based, counted across epochs).
  std::vector<std::size_t> batch_at(std::uint64_t step) const;

 private:
  std::size_t dataset_size_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

struct Batch {
  std::vector<std::size_t> indices;
  torch::Tensor inputs;
  torch::Tensor references;
};

Batch gather_batch(const PairedDataset& dataset, const std::vector<std::size_t>& indices);

/// First-epoch batches of `dataset` under `seed`.
std::vector<Batch> make_batches(const PairedDataset& dataset, std::size_t batch_size, std::uint64_t seed);

}  // namespace stainforge
