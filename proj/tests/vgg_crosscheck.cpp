// Compares the C++ backbone with torchvision activations dumped by
// tools/convert_vgg19.py --probe.
//   stainforge_vgg_crosscheck WEIGHTS PROBE

#include <algorithm>
#include <iostream>

#include "stainforge/archive.hpp"
#include "stainforge/backbone.hpp"

using namespace stainforge;

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: " << argv[0] << " WEIGHTS PROBE\n";
    return 2;
  }
  try {
    const auto backbone = PerceptualBackbone::load(argv[1]).to(torch::kFloat64);
    const auto probe = load_archive(argv[2]);
    const std::vector<std::string> layers = {"conv1_1", "conv2_1", "conv2_2", "conv3_1", "conv4_1", "conv5_1"};
    const auto feats = backbone.extract(probe.at("input"), layers);
    bool ok = true;
    for (const auto& name : layers) {
      const auto expected = probe.at(name);
      const auto got = feats.at(name).maps();
      if (!got.sizes().equals(expected.sizes())) {
        std::cout << name << ": shape " << got.sizes() << " vs " << expected.sizes() << '\n';
        ok = false;
        continue;
      }
      // float32 weights on both sides, double arithmetic; only summation order differs.
      const double scale = std::max(1.0, expected.abs().max().item<double>());
      const double err = (got - expected).abs().max().item<double>() / scale;
      std::cout << name << ": max rel err " << err << '\n';
      ok = ok && err < 1e-9;
    }
    std::cout << (ok ? "match" : "MISMATCH") << '\n';
    return ok ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
