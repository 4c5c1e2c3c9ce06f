#include <random>

#include "stainforge/data_pipeline.hpp"
#include "stainforge/error.hpp"

namespace stainforge {

namespace {

// Unbiased draw in [0, bound) from the raw engine output, so the shuffle does
// not depend on the standard library's distribution implementation.
std::uint64_t bounded(std::mt19937_64& engine, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw;
  do {
    draw = engine();
  } while (draw >= limit);
  return draw % bound;
}

}  // namespace

BatchSchedule::BatchSchedule(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : dataset_size_(dataset_size), batch_size_(batch_size), seed_(seed) {
  require(batch_size >= 1, ErrorCode::InvalidArgument, "batch size must be at least 1");
  require(dataset_size >= 1, ErrorCode::InvalidArgument, "dataset must not be empty");
}

std::size_t BatchSchedule::batches_per_epoch() const { return (dataset_size_ + batch_size_ - 1) / batch_size_; }

std::vector<std::size_t> BatchSchedule::epoch_order(std::uint64_t epoch) const {
  std::vector<std::size_t> order(dataset_size_);
  for (std::size_t i = 0; i < dataset_size_; ++i) order[i] = i;
  std::mt19937_64 engine(seed_ * 0x9E3779B97F4A7C15ULL + epoch);
  for (std::size_t i = dataset_size_; i > 1; --i) {
    std::swap(order[i - 1], order[bounded(engine, i)]);
  }
  return order;
}

std::vector<std::vector<std::size_t>> BatchSchedule::epoch_batches(std::uint64_t epoch) const {
  const auto order = epoch_order(epoch);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size_) {
    const auto end = std::min(order.size(), start + batch_size_);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<std::size_t> BatchSchedule::batch_at(std::uint64_t step) const {
  const auto per_epoch = batches_per_epoch();
  return epoch_batches(step / per_epoch)[step % per_epoch];
}

Batch gather_batch(const PairedDataset& dataset, const std::vector<std::size_t>& indices) {
  require(!indices.empty(), ErrorCode::InvalidArgument, "empty batch");
  std::vector<torch::Tensor> inputs, references;
  for (auto i : indices) {
    require(i < dataset.size(), ErrorCode::OutOfRange, "batch index out of range");
    inputs.push_back(dataset.pairs[i].first.pixels);
    references.push_back(dataset.pairs[i].second.pixels);
  }
  return Batch{indices, torch::stack(inputs), torch::stack(references)};
}

std::vector<Batch> make_batches(const PairedDataset& dataset, std::size_t batch_size, std::uint64_t seed) {
  BatchSchedule schedule(dataset.size(), batch_size, seed);
  std::vector<Batch> out;
  for (const auto& indices : schedule.epoch_batches(0)) out.push_back(gather_batch(dataset, indices));
  return out;
}

}  // namespace stainforge
