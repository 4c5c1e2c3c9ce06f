#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "stainforge/adam.hpp"
#include "stainforge/backbone.hpp"
#include "stainforge/data_pipeline.hpp"
#include "stainforge/discriminator.hpp"
#include "stainforge/generator.hpp"
#include "stainforge/losses.hpp"

namespace stainforge {

/// The four training settings compared in the ablation: generator family
/// (ResNet transform net vs. HRNet with skip) crossed with the adversarial term.
enum class Ablation { NST, NST_AD, NST_HRNET, NST_AD_HRNET };

std::string to_string(Ablation ablation);
Ablation parse_ablation(const std::string& name);
bool uses_adversarial(Ablation ablation);
GeneratorArchitecture generator_architecture(Ablation ablation);

/// Growth factor over the first step's generator loss (or over 1, whichever
/// is larger) beyond which a run is declared divergent. Unnormalized Gram
/// losses on 256+ pixel tiles start far above 1e6 on their own.
inline constexpr double kDivergenceLimit = 1e6;

/// Throws ErrorCode::Divergence on any non-finite term or a runaway total.
void check_divergence(const LossReport& report, std::int64_t step, double initial_total);

struct TrainConfig {
  double gen_lr = 1e-3;
  double disc_lr = 1e-5;
  std::size_t batch_size = 4;
  std::int64_t epochs = 50;
  LossWeights weights;
  Ablation ablation = Ablation::NST_AD_HRNET;
  std::uint64_t seed = 0;
  /// 0 writes only the final checkpoint.
  std::int64_t checkpoint_every = 0;
  /// Overrides the ablation's default generator layout.
  std::optional<GeneratorConfig> generator;

  void validate() const;
  GeneratorConfig resolved_generator() const;
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);

/// Everything needed to continue a run bit-identically.
struct TrainState {
  TrainConfig config;
  std::unique_ptr<StainGenerator> generator;
  std::unique_ptr<Adam> generator_optimizer;
  /// Absent when the ablation has no adversarial term.
  std::unique_ptr<PatchDiscriminator> discriminator;
  std::unique_ptr<Adam> discriminator_optimizer;
  std::int64_t step = 0;
  std::vector<LossReport> history;
};

TrainState init_train_state(const TrainConfig& config);

/// Frozen backbone targets for a batch: content features of the inputs and
/// style Grams of the references.
struct PairTargets {
  torch::Tensor content;
  GramStack grams;
};

PairTargets compute_targets(const PerceptualBackbone& backbone, const torch::Tensor& inputs,
                            const torch::Tensor& references, const LossWeights& weights);
PairTargets select_targets(const PairTargets& all, const std::vector<std::size_t>& indices);

/// Generator-side objective for transformed images `t`; every term is a
/// differentiable tensor. `scores_t` is undefined when no discriminator runs.
struct GeneratorObjective {
  torch::Tensor content;
  torch::Tensor style;
  torch::Tensor adversarial;
  torch::Tensor total;
  std::map<std::string, torch::Tensor> per_layer_style;
};

GeneratorObjective generator_objective(const PerceptualBackbone& backbone, const torch::Tensor& t,
                                       const PairTargets& targets, const torch::Tensor& scores_t,
                                       const LossWeights& weights);

enum class StepPhase { AfterDiscriminatorUpdate, AfterGeneratorUpdate };
using StepObserver = std::function<void(StepPhase)>;

/// One alternating update: discriminator on the discriminator loss with the
/// generator frozen, then generator on the weighted total with the
/// discriminator frozen. Throws ErrorCode::Divergence on a non-finite or
/// runaway loss.
LossReport train_step(TrainState& state, const PerceptualBackbone& backbone, const Batch& batch,
                      const PairTargets& targets, const StepObserver& observer = {});
LossReport train_step(TrainState& state, const PerceptualBackbone& backbone, const Batch& batch);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

struct FitOptions {
  /// Receives checkpoints/, loss_journal.csv, config.json and generator.sfar.
  std::filesystem::path run_dir;
  /// Continue from the latest checkpoint in run_dir when one exists.
  bool resume = false;
  /// Stop (and checkpoint) once this many steps have run in total.
  std::optional<std::int64_t> stop_after_step;
  std::function<void(const LossReport&, std::int64_t step)> on_step;
};

std::int64_t total_steps(const TrainConfig& config, std::size_t dataset_size);

TrainState fit(const TrainConfig& config, const PairedDataset& dataset, const PerceptualBackbone& backbone,
               const FitOptions& options);

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, std::int64_t step);
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

inline constexpr const char* kJournalHeader = "step,content,style,adversarial,disc,total";
std::string journal_row(std::int64_t step, const LossReport& report);

}  // namespace stainforge
