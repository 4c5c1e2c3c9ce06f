#include "stainforge/trainer.hpp"

#include <cmath>
#include <fstream>
#include <regex>

#include <fmt/format.h>

#include "json_io.hpp"
#include "stainforge/error.hpp"

namespace stainforge {

using detail::json;

namespace {

constexpr const char* kGeneratorPrefix = "generator/";
constexpr const char* kDiscriminatorPrefix = "discriminator/";
constexpr const char* kGeneratorOptimizerPrefix = "optim/generator/";
constexpr const char* kDiscriminatorOptimizerPrefix = "optim/discriminator/";

std::vector<std::string> style_layers(const LossWeights& weights) {
  std::vector<std::string> layers;
  for (const auto& [layer, w] : weights.omega) layers.push_back(layer);
  return layers;
}

LossWeights effective_weights(const TrainConfig& config) {
  auto w = config.weights;
  if (!uses_adversarial(config.ablation)) w.lambda_a = 0.0;
  return w;
}

json weights_json(const LossWeights& w) {
  json omega = json::object();
  for (const auto& [layer, v] : w.omega) omega[layer] = v;
  return {{"lambda_a", w.lambda_a}, {"lambda_c", w.lambda_c}, {"lambda_s", w.lambda_s}, {"omega", omega}};
}

LossWeights weights_from(const json& j) {
  LossWeights w;
  w.lambda_a = j.value("lambda_a", w.lambda_a);
  w.lambda_c = j.value("lambda_c", w.lambda_c);
  w.lambda_s = j.value("lambda_s", w.lambda_s);
  if (j.contains("omega")) {
    w.omega.clear();
    for (const auto& [layer, v] : j.at("omega").items()) w.omega[layer] = v.get<double>();
  }
  return w;
}

json config_json(const TrainConfig& c) {
  json j;
  j["gen_lr"] = c.gen_lr;
  j["disc_lr"] = c.disc_lr;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["weights"] = weights_json(c.weights);
  j["ablation"] = to_string(c.ablation);
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  if (c.generator) j["generator"] = detail::generator_config_json(*c.generator);
  return j;
}

TrainConfig config_from(const json& j) {
  require(j.is_object(), ErrorCode::InvalidArgument, "train config must be a JSON object");
  static const std::vector<std::string> known = {"gen_lr",   "disc_lr", "batch_size", "epochs",   "weights",
                                                 "ablation", "seed",    "checkpoint_every", "generator"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      fail(ErrorCode::InvalidArgument, "unknown train config field '" + key + "'");
    }
  }
  TrainConfig c;
  try {
    c.gen_lr = j.value("gen_lr", c.gen_lr);
    c.disc_lr = j.value("disc_lr", c.disc_lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("weights")) c.weights = weights_from(j.at("weights"));
    if (j.contains("ablation")) c.ablation = parse_ablation(j.at("ablation").get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("generator")) c.generator = detail::generator_config_from(j.at("generator"));
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("malformed train config: ") + e.what());
  }
  c.validate();
  return c;
}

json report_json(const LossReport& r) {
  json per_layer = json::object();
  for (const auto& [layer, v] : r.per_layer_style) per_layer[layer] = v;
  return {{"content", r.content}, {"style", r.style},   {"adversarial", r.adversarial},
          {"disc", r.disc},       {"total", r.total},   {"per_layer_style", per_layer}};
}

LossReport report_from(const json& j) {
  LossReport r;
  r.content = j.at("content");
  r.style = j.at("style");
  r.adversarial = j.at("adversarial");
  r.disc = j.at("disc");
  r.total = j.at("total");
  for (const auto& [layer, v] : j.at("per_layer_style").items()) r.per_layer_style[layer] = v.get<double>();
  return r;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_atomically(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

std::string to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::NST: return "NST";
    case Ablation::NST_AD: return "NST_AD";
    case Ablation::NST_HRNET: return "NST_HRNET";
    case Ablation::NST_AD_HRNET: return "NST_AD_HRNET";
  }
  return "?";
}

Ablation parse_ablation(const std::string& name) {
  for (auto a : {Ablation::NST, Ablation::NST_AD, Ablation::NST_HRNET, Ablation::NST_AD_HRNET}) {
    if (to_string(a) == name) return a;
  }
  fail(ErrorCode::InvalidArgument, "unknown ablation '" + name + "' (NST, NST_AD, NST_HRNET, NST_AD_HRNET)");
}

bool uses_adversarial(Ablation ablation) {
  return ablation == Ablation::NST_AD || ablation == Ablation::NST_AD_HRNET;
}

GeneratorArchitecture generator_architecture(Ablation ablation) {
  return ablation == Ablation::NST || ablation == Ablation::NST_AD ? GeneratorArchitecture::ResNet
                                                                   : GeneratorArchitecture::HRNet;
}

void TrainConfig::validate() const {
  require(gen_lr > 0.0 && disc_lr > 0.0, ErrorCode::InvalidArgument, "learning rates must be positive");
  require(epochs >= 1, ErrorCode::InvalidArgument, "epochs must be at least 1");
  require(batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be at least 1");
  require(checkpoint_every >= 0, ErrorCode::InvalidArgument, "checkpoint_every must be non-negative");
  weights.validate();
  effective_weights(*this).validate();
  resolved_generator();
}

GeneratorConfig TrainConfig::resolved_generator() const {
  const auto arch = generator_architecture(ablation);
  if (generator) {
    require(generator->architecture == arch, ErrorCode::InvalidArgument,
            "ablation " + to_string(ablation) + " needs a " + to_string(arch) + " generator");
    generator->validate();
    return *generator;
  }
  return arch == GeneratorArchitecture::HRNet ? GeneratorConfig{} : GeneratorConfig::resnet_transform();
}

std::string train_config_to_json(const TrainConfig& config) { return config_json(config).dump(2); }

TrainConfig train_config_from_json(const std::string& text) {
  auto j = json::parse(text, nullptr, false);
  require(!j.is_discarded(), ErrorCode::InvalidArgument, "train config is not valid JSON");
  return config_from(j);
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open train config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return train_config_from_json(text);
}

TrainState init_train_state(const TrainConfig& config) {
  config.validate();
  TrainState state;
  state.config = config;
  state.generator = std::make_unique<StainGenerator>(config.resolved_generator(), config.seed);
  state.generator_optimizer =
      std::make_unique<Adam>(state.generator->named_parameters(), AdamOptions{.lr = config.gen_lr});
  if (uses_adversarial(config.ablation)) {
    state.discriminator = std::make_unique<PatchDiscriminator>(config.seed + 1);
    state.discriminator_optimizer =
        std::make_unique<Adam>(state.discriminator->named_parameters(), AdamOptions{.lr = config.disc_lr});
  }
  return state;
}

PairTargets compute_targets(const PerceptualBackbone& backbone, const torch::Tensor& inputs,
                            const torch::Tensor& references, const LossWeights& weights) {
  torch::NoGradGuard no_grad;
  PairTargets targets;
  targets.content = backbone.extract(inputs, {kContentLayer}).at(kContentLayer).values;
  const auto layers = style_layers(weights);
  targets.grams = gram_stack(backbone.extract(references, layers), layers);
  return targets;
}

PairTargets select_targets(const PairTargets& all, const std::vector<std::size_t>& indices) {
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  auto index = torch::tensor(idx, torch::kInt64);
  PairTargets out;
  out.content = all.content.index_select(0, index);
  for (const auto& [layer, g] : all.grams) {
    out.grams.emplace(layer, GramMatrix{g.values.index_select(0, index), g.layer_name, g.n_maps, g.spatial_size});
  }
  return out;
}

GeneratorObjective generator_objective(const PerceptualBackbone& backbone, const torch::Tensor& t,
                                       const PairTargets& targets, const torch::Tensor& scores_t,
                                       const LossWeights& weights) {
  auto layers = style_layers(weights);
  layers.push_back(kContentLayer);
  const auto feats = backbone.extract(t, layers);

  GeneratorObjective obj;
  obj.content = content_loss(targets.content, feats.at(kContentLayer).values);
  auto style = style_loss(targets.grams, gram_stack(feats, style_layers(weights)), weights.omega);
  obj.style = style.total;
  obj.per_layer_style = std::move(style.per_layer);
  auto w = weights;
  if (scores_t.defined()) {
    obj.adversarial = adversarial_loss(scores_t);
  } else {
    obj.adversarial = torch::zeros({}, t.options());
    w.lambda_a = 0.0;
  }
  obj.total = weighted_total(obj.content, obj.style, obj.adversarial, w);
  return obj;
}

LossReport train_step(TrainState& state, const PerceptualBackbone& backbone, const Batch& batch,
                      const PairTargets& targets, const StepObserver& observer) {
  require(batch.inputs.defined() && batch.inputs.size(0) > 0, ErrorCode::InvalidArgument, "empty batch");
  require(targets.content.size(0) == batch.inputs.size(0), ErrorCode::DimensionMismatch,
          "targets and batch differ in size");
  const auto weights = effective_weights(state.config);
  const std::int64_t step = state.step + 1;

  state.generator->set_requires_grad(true);
  const auto t = state.generator->forward(batch.inputs, ForwardMode::Training).transformed;

  double disc_value = 0.0;
  torch::Tensor scores_t;
  if (state.discriminator) {
    // Discriminator update; the detached t keeps gradients out of the generator.
    auto& disc = *state.discriminator;
    disc.set_requires_grad(true);
    auto d_loss = discriminator_loss(disc.score(batch.references).scores, disc.score(t.detach()).scores);
    state.discriminator_optimizer->zero_grad();
    d_loss.backward();
    state.discriminator_optimizer->step();
    disc_value = d_loss.item<double>();
    if (observer) observer(StepPhase::AfterDiscriminatorUpdate);

    disc.set_requires_grad(false);
    scores_t = disc.score(t).scores;
  }

  auto obj = generator_objective(backbone, t, targets, scores_t, weights);
  LossReport report;
  report.content = obj.content.item<double>();
  report.style = obj.style.item<double>();
  report.adversarial = obj.adversarial.item<double>();
  report.disc = disc_value;
  report.total = obj.total.item<double>();
  for (const auto& [layer, v] : obj.per_layer_style) report.per_layer_style[layer] = v.item<double>();
  check_divergence(report, step, state.history.empty() ? report.total : state.history.front().total);

  state.generator_optimizer->zero_grad();
  obj.total.backward();
  state.generator_optimizer->step();
  state.generator_optimizer->zero_grad();
  if (state.discriminator) state.discriminator->set_requires_grad(true);
  if (observer) observer(StepPhase::AfterGeneratorUpdate);

  state.step = step;
  state.history.push_back(report);
  return report;
}

LossReport train_step(TrainState& state, const PerceptualBackbone& backbone, const Batch& batch) {
  const auto targets = compute_targets(backbone, batch.inputs, batch.references, state.config.weights);
  return train_step(state, backbone, batch, targets);
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  TensorArchive archive;
  json meta;
  meta["kind"] = "train_state";
  meta["format_version"] = detail::kCheckpointFormatVersion;
  meta["step"] = state.step;
  meta["config"] = config_json(state.config);
  meta["generator_config"] = detail::generator_config_json(state.generator->config());
  json history = json::array();
  for (const auto& r : state.history) history.push_back(report_json(r));
  meta["history"] = std::move(history);
  archive.metadata = meta.dump();

  state.generator->save_into(archive, kGeneratorPrefix);
  state.generator_optimizer->save_state(archive, kGeneratorOptimizerPrefix);
  if (state.discriminator) {
    state.discriminator->save_into(archive, kDiscriminatorPrefix);
    state.discriminator_optimizer->save_state(archive, kDiscriminatorOptimizerPrefix);
  }
  save_archive(archive, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const auto archive = load_archive(path);
  const auto meta = detail::checkpoint_metadata(archive.metadata, path.string());
  require(meta.value("kind", "") == "train_state", ErrorCode::LoadError,
          path.string() + " is not a training checkpoint");
  TrainState state;
  try {
    state = init_train_state(config_from(meta.at("config")));
    state.step = meta.at("step").get<std::int64_t>();
    for (const auto& r : meta.at("history")) state.history.push_back(report_from(r));
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptFile, path.string() + ": malformed checkpoint metadata: " + e.what());
  }
  require(static_cast<std::int64_t>(state.history.size()) == state.step, ErrorCode::CorruptFile,
          path.string() + ": history length disagrees with step");
  state.generator->load_from(archive, kGeneratorPrefix);
  state.generator_optimizer->load_state(archive, kGeneratorOptimizerPrefix);
  if (state.discriminator) {
    state.discriminator->load_from(archive, kDiscriminatorPrefix);
    state.discriminator_optimizer->load_state(archive, kDiscriminatorOptimizerPrefix);
  }
  return state;
}

std::int64_t total_steps(const TrainConfig& config, std::size_t dataset_size) {
  const auto per_epoch = static_cast<std::int64_t>((dataset_size + config.batch_size - 1) / config.batch_size);
  return config.epochs * per_epoch;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, std::int64_t step) {
  return run_dir / "checkpoints" / fmt::format("step_{:06d}.sfar", step);
}

std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir) {
  const auto dir = run_dir / "checkpoints";
  if (!std::filesystem::is_directory(dir)) return std::nullopt;
  static const std::regex pattern(R"(step_(\d+)\.sfar)");
  std::optional<std::filesystem::path> best;
  std::int64_t best_step = -1;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern) && std::stoll(m[1]) > best_step) {
      best_step = std::stoll(m[1]);
      best = entry.path();
    }
  }
  return best;
}

void check_divergence(const LossReport& r, std::int64_t step, double initial_total) {
  for (double v : {r.content, r.style, r.adversarial, r.disc, r.total}) {
    if (!std::isfinite(v)) fail(ErrorCode::Divergence, "non-finite loss at step " + std::to_string(step));
  }
  const double limit = kDivergenceLimit * std::max(1.0, std::abs(initial_total));
  if (std::abs(r.total) > limit) {
    fail(ErrorCode::Divergence, fmt::format("generator loss {} exceeds {} at step {}", r.total, limit, step));
  }
}

std::string journal_row(std::int64_t step, const LossReport& r) {
  return fmt::format("{},{},{},{},{},{}", step, r.content, r.style, r.adversarial, r.disc, r.total);
}

TrainState fit(const TrainConfig& config, const PairedDataset& dataset, const PerceptualBackbone& backbone,
               const FitOptions& options) {
  config.validate();
  require(dataset.size() > 0, ErrorCode::InvalidArgument, "cannot train on an empty dataset");
  require(!options.run_dir.empty(), ErrorCode::InvalidArgument, "fit needs a run directory");
  std::filesystem::create_directories(options.run_dir / "checkpoints");

  TrainState state;
  const auto latest = options.resume ? latest_checkpoint(options.run_dir) : std::nullopt;
  if (latest) {
    state = load_checkpoint(*latest);
    require(train_config_to_json(state.config) == train_config_to_json(config), ErrorCode::InvalidArgument,
            "cannot resume: " + latest->string() + " was trained with a different config");
  } else {
    state = init_train_state(config);
  }
  write_text(options.run_dir / "config.json", train_config_to_json(config) + "\n");

  const auto journal_path = options.run_dir / "loss_journal.csv";
  std::ofstream journal(journal_path, std::ios::trunc);
  if (!journal) fail(ErrorCode::Io, "cannot open " + journal_path.string());
  journal << kJournalHeader << '\n';
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    journal << journal_row(static_cast<std::int64_t>(i + 1), state.history[i]) << '\n';
  }
  journal.flush();

  // Backbone targets are fixed for the whole run; compute them once.
  std::vector<torch::Tensor> content_chunks;
  std::map<std::string, std::vector<torch::Tensor>> gram_chunks;
  PairTargets all;
  for (std::size_t start = 0; start < dataset.size(); start += config.batch_size) {
    std::vector<std::size_t> idx;
    for (auto i = start; i < std::min(dataset.size(), start + config.batch_size); ++i) idx.push_back(i);
    const auto chunk = gather_batch(dataset, idx);
    auto t = compute_targets(backbone, chunk.inputs, chunk.references, config.weights);
    content_chunks.push_back(t.content);
    for (auto& [layer, g] : t.grams) {
      gram_chunks[layer].push_back(g.values);
      all.grams[layer] = GramMatrix{torch::Tensor(), layer, g.n_maps, g.spatial_size};
    }
  }
  all.content = torch::cat(content_chunks);
  for (auto& [layer, g] : all.grams) g.values = torch::cat(gram_chunks[layer]);

  const BatchSchedule schedule(dataset.size(), config.batch_size, config.seed);
  const auto steps = total_steps(config, dataset.size());
  std::int64_t last_saved = -1;
  while (state.step < steps) {
    if (options.stop_after_step && state.step >= *options.stop_after_step) break;
    const auto indices = schedule.batch_at(static_cast<std::uint64_t>(state.step));
    LossReport report;
    try {
      report = train_step(state, backbone, gather_batch(dataset, indices), select_targets(all, indices));
    } catch (...) {
      journal.flush();
      throw;
    }
    journal << journal_row(state.step, report) << '\n';
    journal.flush();
    if (!journal) fail(ErrorCode::Io, "write failed: " + journal_path.string());
    if (options.on_step) options.on_step(report, state.step);
    if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) {
      save_checkpoint(state, checkpoint_path(options.run_dir, state.step));
      last_saved = state.step;
    }
  }
  if (last_saved != state.step) save_checkpoint(state, checkpoint_path(options.run_dir, state.step));
  if (state.step >= steps) save_generator(*state.generator, options.run_dir / "generator.sfar");
  return state;
}

}  // namespace stainforge
