// stainforge: tile -> pair -> train -> infer -> evaluate, plus the Reinhard
// baseline and a few fixture helpers.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <json.hpp>

#include "stainforge/backbone.hpp"
#include "stainforge/data_pipeline.hpp"
#include "stainforge/error.hpp"
#include "stainforge/evaluation.hpp"
#include "stainforge/generator.hpp"
#include "stainforge/patch.hpp"
#include "stainforge/reinhard.hpp"
#include "stainforge/synthetic.hpp"
#include "stainforge/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace stainforge;

namespace {

// Bad invocations that CLI11 cannot see (empty input dirs, k too large).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::optional<fs::path> weights;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

PerceptualBackbone open_backbone(const Globals& g) {
  const auto path = resolve_weights_path(g.weights);
  return PerceptualBackbone::load(path);
}

std::vector<fs::path> require_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir.string());
  auto files = list_images(dir);
  if (files.empty()) throw UsageError("no input images in " + dir.string());
  return files;
}

std::vector<PatchTensor> load_all(const std::vector<fs::path>& files) {
  std::vector<PatchTensor> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_patch(f));
  return out;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::Io, "write failed: " + path.string());
}

// ---------------------------------------------------------------------------

struct TileArgs {
  fs::path input, out;
  std::int64_t size = 512;
};

int run_tile(const TileArgs& a) {
  const auto files = require_images(a.input);
  fs::create_directories(a.out);
  TileOptions opts;
  opts.tile_size = a.size;

  json tiles = json::array(), failed = json::array();
  std::size_t ok = 0;
  for (const auto& f : files) {
    try {
      const auto rgb = read_rgb_image(f);
      for (const auto& t : tile_image(rgb, opts, f.stem().string())) {
        const auto name = tile_filename(t);
        save_patch_png(a.out / name, t.pixels);
        tiles.push_back({{"file", name},
                         {"source", f.filename().string()},
                         {"row", t.tile_coords.row},
                         {"col", t.tile_coords.col}});
      }
      ++ok;
    } catch (const Error& e) {
      std::cerr << "skipping " << f.string() << ": " << e.what() << '\n';
      failed.push_back({{"path", f.string()}, {"error", e.what()}});
    }
  }
  json manifest;
  manifest["tile_size"] = a.size;
  manifest["magnification"] = opts.magnification_note;
  manifest["tiles"] = std::move(tiles);
  manifest["failed"] = std::move(failed);
  write_json(a.out / "tiles.json", manifest);
  std::cout << fmt::format("{} tiles from {}/{} images -> {}\n", manifest["tiles"].size(), ok, files.size(),
                           a.out.string());
  return ok == 0 ? 1 : 0;
}

struct PairArgs {
  fs::path inputs, refs, out;
  std::size_t k = 20;
};

int run_pair(const PairArgs& a, const Globals& g) {
  const auto input_files = require_images(a.inputs);
  const auto ref_files = require_images(a.refs);
  if (a.k == 0 || a.k > input_files.size()) {
    throw UsageError(fmt::format("--k {} is out of range: {} has {} input tiles", a.k, a.inputs.string(),
                                 input_files.size()));
  }
  const auto backbone = open_backbone(g);
  const auto dataset = build_pairs(load_all(input_files), load_all(ref_files), a.k, backbone);

  const auto base = fs::absolute(a.out).parent_path();
  std::vector<PairManifestEntry> entries;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& idx = dataset.indices[i];
    entries.push_back({fs::relative(fs::absolute(input_files[idx.input]), base),
                       fs::relative(fs::absolute(ref_files[idx.reference]), base), dataset.pairing_scores[i]});
  }
  write_pair_manifest(a.out, entries);
  std::cout << fmt::format("{} pairs -> {}\n", entries.size(), a.out.string());
  return 0;
}

struct TrainArgs {
  fs::path pairs, out;
  std::optional<fs::path> config;
  bool resume = false;
  std::optional<std::int64_t> max_steps;
  std::int64_t log_every = 10;
};

int run_train(const TrainArgs& a, const Globals& g) {
  TrainConfig config = a.config ? load_train_config(*a.config) : TrainConfig{};
  if (g.seed_given) config.seed = g.seed;
  config.validate();
  const auto dataset = load_paired_dataset(a.pairs);
  const auto backbone = open_backbone(g);

  FitOptions opts;
  opts.run_dir = a.out;
  opts.resume = a.resume;
  opts.stop_after_step = a.max_steps;
  const auto steps = total_steps(config, dataset.size());
  opts.on_step = [&](const LossReport& r, std::int64_t step) {
    if (a.log_every > 0 && (step % a.log_every == 0 || step == steps)) {
      std::cerr << fmt::format("step {}/{}  total {:.6g}  content {:.6g}  style {:.6g}  adv {:.6g}  disc {:.6g}\n",
                               step, steps, r.total, r.content, r.style, r.adversarial, r.disc);
    }
  };
  const auto state = fit(config, dataset, backbone, opts);
  std::cout << fmt::format("{} ({}): {} of {} steps -> {}\n", to_string(config.ablation),
                           state.discriminator ? "generator + discriminator" : "generator only", state.step, steps,
                           a.out.string());
  return 0;
}

struct InferArgs {
  fs::path checkpoint, input, out;
};

int run_infer(const InferArgs& a) {
  const auto files = require_images(a.input);
  auto generator = load_generator(a.checkpoint);
  fs::create_directories(a.out);
  std::size_t failures = 0;
  for (const auto& f : files) {
    try {
      const auto patch = load_patch(f);
      const auto t = generator.forward(patch.pixels, ForwardMode::Inference).transformed;
      save_patch_png(a.out / (f.stem().string() + ".png"), t);
    } catch (const Error& e) {
      std::cerr << "failed " << f.string() << ": " << e.what() << '\n';
      ++failures;
    }
  }
  std::cout << fmt::format("{}/{} tiles -> {}\n", files.size() - failures, files.size(), a.out.string());
  return failures == 0 ? 0 : 1;
}

struct EvaluateArgs {
  fs::path checkpoint, tiles, refs, out;
};

int run_evaluate(const EvaluateArgs& a, const Globals& g) {
  const auto tiles = load_all(require_images(a.tiles));
  const auto refs = load_all(require_images(a.refs));
  auto generator = load_generator(a.checkpoint);
  const auto backbone = open_backbone(g);
  const auto report = evaluate_run(generator, tiles, refs, backbone, a.out);
  std::cout << fmt::format("{} tiles: perceptual {:.6g}  style {:.6g}  content {:.6g} -> {}\n",
                           report.per_tile.size(), report.mean.perceptual_to_ref_domain,
                           report.mean.style_distance, report.mean.content_distance_to_input, a.out.string());
  return 0;
}

struct ReinhardArgs {
  fs::path input, refs, out;
};

int run_reinhard(const ReinhardArgs& a) {
  const auto files = require_images(a.input);
  const auto refs = load_all(require_images(a.refs));
  const auto target = lab_stats(std::span<const PatchTensor>(refs));
  fs::create_directories(a.out);
  for (const auto& f : files) {
    const auto out = reinhard_transfer(load_patch(f), target);
    save_patch_png(a.out / (f.stem().string() + ".png"), out.pixels);
  }
  std::cout << fmt::format("{} tiles -> {}\n", files.size(), a.out.string());
  return 0;
}

int run_make_weights(const fs::path& out, const Globals& g) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const auto backbone = PerceptualBackbone::random(vgg19_plan(), g.seed);
  backbone.save(out);
  std::cout << fmt::format("{} (seed {}) -> {}\n", backbone.checksum(), g.seed, out.string());
  return 0;
}

struct InitGeneratorArgs {
  fs::path out;
  std::string ablation = "NST_AD_HRNET";
};

int run_init_generator(const InitGeneratorArgs& a, const Globals& g) {
  TrainConfig config;
  config.ablation = parse_ablation(a.ablation);
  const StainGenerator generator(config.resolved_generator(), g.seed);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  save_generator(generator, a.out);
  std::cout << fmt::format("{} generator -> {}\n", to_string(config.ablation), a.out.string());
  return 0;
}

struct SynthArgs {
  fs::path out;
  int size = 512;
  int count = 2;
  int lab = 0;
};

// Writes <out>/input (one off-reference lab) and <out>/reference, rendered
// from different tissue so the two sets are unpaired.
int run_synth(const SynthArgs& a, const Globals& g) {
  if (a.size < 16 || a.count < 1) throw UsageError("--size must be >= 16 and --count >= 1");
  const auto input_profile = input_stain_profile(a.lab);
  const auto ref_profile = reference_stain_profile();
  fs::create_directories(a.out / "input");
  fs::create_directories(a.out / "reference");
  for (int i = 0; i < a.count; ++i) {
    const auto seed = g.seed * 1000 + static_cast<std::uint64_t>(i);
    write_rgb_image(a.out / "input" / fmt::format("{}_{:02d}.png", input_profile.name, i),
                    render_tissue(generate_tissue(a.size, a.size, 2 * seed), input_profile));
    write_rgb_image(a.out / "reference" / fmt::format("ref_{:02d}.png", i),
                    render_tissue(generate_tissue(a.size, a.size, 2 * seed + 1), ref_profile));
  }
  std::cout << fmt::format("{} input + {} reference images -> {}\n", a.count, a.count, a.out.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stainforge: neural stain transfer for H&E tiles"};
  app.require_subcommand(1);
  Globals g;
  std::string weights;
  app.add_option("--weights", weights, "backbone weight archive (default: $STAINFORGE_WEIGHTS, then "
                                        "weights/vgg19_features.sfar)");
  auto* seed_opt = app.add_option("--seed", g.seed, "RNG seed")->capture_default_str();
  app.fallthrough();

  TileArgs tile;
  auto* tile_cmd = app.add_subcommand("tile", "cut rasters into non-overlapping tiles");
  tile_cmd->add_option("--input", tile.input, "directory of rasters")->required();
  tile_cmd->add_option("--out", tile.out, "output directory")->required();
  tile_cmd->add_option("--size", tile.size, "tile edge in pixels")->capture_default_str()->check(CLI::PositiveNumber);

  PairArgs pair;
  auto* pair_cmd = app.add_subcommand("pair", "pair input tiles with content-similar reference tiles");
  pair_cmd->add_option("--inputs", pair.inputs, "input-lab tiles")->required();
  pair_cmd->add_option("--refs", pair.refs, "reference-lab tiles")->required();
  pair_cmd->add_option("--k", pair.k, "pairs to keep")->capture_default_str();
  pair_cmd->add_option("--out", pair.out, "pair manifest (JSON)")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a stain transfer generator");
  train_cmd->add_option("--pairs", train.pairs, "pair manifest")->required();
  train_cmd->add_option("--config", train.config, "train config (JSON); defaults when omitted");
  train_cmd->add_option("--out", train.out, "run directory")->required();
  train_cmd->add_flag("--resume", train.resume, "continue from the latest checkpoint in --out");
  train_cmd->add_option("--max-steps", train.max_steps, "stop (and checkpoint) after this many steps");
  train_cmd->add_option("--log-every", train.log_every, "progress line interval, 0 for none")->capture_default_str();

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "apply a trained generator to tiles");
  infer_cmd->add_option("--checkpoint", infer.checkpoint, "generator or training checkpoint")->required();
  infer_cmd->add_option("--input", infer.input, "tiles to transform")->required();
  infer_cmd->add_option("--out", infer.out, "output directory")->required();

  EvaluateArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "score a generator against a reference domain");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "generator or training checkpoint")->required();
  eval_cmd->add_option("--tiles", eval.tiles, "test tiles")->required();
  eval_cmd->add_option("--refs", eval.refs, "reference tiles")->required();
  eval_cmd->add_option("--out", eval.out, "report path (JSON); the grid PNG goes next to it")->required();

  ReinhardArgs reinhard;
  auto* reinhard_cmd = app.add_subcommand("baseline-reinhard", "Lab mean/std colour transfer");
  reinhard_cmd->add_option("--input", reinhard.input, "tiles to normalize")->required();
  reinhard_cmd->add_option("--refs", reinhard.refs, "reference tiles")->required();
  reinhard_cmd->add_option("--out", reinhard.out, "output directory")->required();

  fs::path weights_out;
  auto* weights_cmd = app.add_subcommand("make-weights", "write seeded random backbone weights");
  weights_cmd->add_option("--out", weights_out, "archive path")->required();

  InitGeneratorArgs init;
  auto* init_cmd = app.add_subcommand("init-generator", "write an untrained (identity) generator");
  init_cmd->add_option("--out", init.out, "archive path")->required();
  init_cmd->add_option("--ablation", init.ablation, "NST, NST_AD, NST_HRNET or NST_AD_HRNET")->capture_default_str();

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-fixture", "render synthetic H&E images for two labs");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--size", synth.size, "image edge")->capture_default_str();
  synth_cmd->add_option("--count", synth.count, "images per lab")->capture_default_str();
  synth_cmd->add_option("--lab", synth.lab, "input stain variant")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (!weights.empty()) g.weights = fs::path(weights);
  g.seed_given = seed_opt->count() > 0;

  try {
    if (*tile_cmd) return run_tile(tile);
    if (*pair_cmd) return run_pair(pair, g);
    if (*train_cmd) return run_train(train, g);
    if (*infer_cmd) return run_infer(infer);
    if (*eval_cmd) return run_evaluate(eval, g);
    if (*reinhard_cmd) return run_reinhard(reinhard);
    if (*weights_cmd) return run_make_weights(weights_out, g);
    if (*init_cmd) return run_init_generator(init, g);
    if (*synth_cmd) return run_synth(synth, g);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
