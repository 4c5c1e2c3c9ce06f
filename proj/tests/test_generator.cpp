#include <doctest.h>

#include "stainforge/archive.hpp"
#include "stainforge/error.hpp"
#include "stainforge/generator.hpp"
#include "stainforge/losses.hpp"
#include "support.hpp"

using namespace stainforge;
using namespace stainforge::testing;
using doctest::Approx;

namespace {

GeneratorConfig tiny(int stages = 2) {
  GeneratorConfig c;
  c.n_stages = stages;
  c.branch_channels = stages == 2 ? std::vector<std::int64_t>{4, 8} : std::vector<std::int64_t>{4, 8, 8};
  c.blocks_per_branch = 1;
  return c;
}

torch::Tensor head_weight(StainGenerator& g) {
  for (auto& [name, p] : g.named_parameters())
    if (name.rfind("head.weight") != std::string::npos) return p;
  FAIL("no head weight");
  return {};
}

// Element i of `t` in logical (row-major) order, whatever the memory layout.
torch::Tensor element(const torch::Tensor& t, std::int64_t i) {
  auto view = t;
  std::vector<std::int64_t> idx(t.dim());
  for (auto d = t.dim() - 1; d >= 0; --d) {
    idx[d] = i % t.size(d);
    i /= t.size(d);
  }
  for (auto v : idx) view = view[v];
  return view;
}

}  // namespace

TEST_SUITE("generator") {
  TEST_CASE("default config") {
    GeneratorConfig c;
    CHECK(c.n_stages == 3);
    CHECK(c.branch_channels == std::vector<std::int64_t>{32, 64, 128});
    CHECK(c.blocks_per_branch == 2);
    CHECK(c.use_skip);
    CHECK(c.final_zero_init);
    CHECK(c.size_divisor() == 4);
  }

  TEST_CASE("invalid configs are rejected") {
    GeneratorConfig c;
    c.branch_channels = {};
    CHECK_THROWS_AS(StainGenerator(c, 0), Error);
    c.branch_channels = {8, -1};
    CHECK_THROWS_AS(StainGenerator(c, 0), Error);
    c.branch_channels = {8, 8, 8, 8};
    c.n_stages = 3;
    CHECK_THROWS_AS(StainGenerator(c, 0), Error);
  }

  TEST_CASE("identity at initialization") {
    StainGenerator g(GeneratorConfig{}, 1);
    auto p = torch::rand({2, 3, 64, 64});
    auto train = g.forward(p, ForwardMode::Training);
    CHECK(torch::equal(train.transformed, p));
    CHECK(train.residual.abs().max().item<double>() == 0.0);
    auto infer = g.forward(p[0], ForwardMode::Inference);
    CHECK(torch::equal(infer.transformed, p[0]));
  }

  TEST_CASE("resnet transform generator") {
    auto c = GeneratorConfig::resnet_transform();
    CHECK(c.architecture == GeneratorArchitecture::ResNet);
    CHECK_FALSE(c.use_skip);
    StainGenerator g(c, 0);
    auto p = torch::rand({1, 3, 32, 32});
    auto out = g.forward(p, ForwardMode::Training);
    CHECK(out.transformed.sizes() == p.sizes());
    CHECK(torch::equal(out.transformed, out.residual));
    CHECK_THROWS_AS(g.forward(torch::rand({1, 3, 30, 32}), ForwardMode::Inference), Error);
  }

  TEST_CASE("skip disabled returns the plain network output") {
    auto c = tiny();
    c.use_skip = false;
    c.final_zero_init = false;
    StainGenerator g(c, 0);
    auto out = g.forward(torch::rand({1, 3, 16, 16}), ForwardMode::Training);
    CHECK(torch::equal(out.transformed, out.residual));
  }

  TEST_CASE("same seed, same parameters") {
    StainGenerator a(tiny(3), 5), b(tiny(3), 5), c(tiny(3), 6);
    CHECK(a.checksum() == b.checksum());
    c.set_requires_grad(false);
    CHECK(a.checksum() != c.checksum());
  }

  TEST_CASE("shape preservation and divisibility") {
    StainGenerator g(tiny(3), 0);
    for (int size : {32, 64}) {
      auto out = g.forward(torch::rand({3, size, size}), ForwardMode::Inference);
      CHECK(out.transformed.size(1) == size);
      CHECK(out.transformed.size(2) == size);
    }
    try {
      g.forward(torch::rand({3, 30, 32}), ForwardMode::Inference);
      FAIL("expected DimensionMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DimensionMismatch);
      CHECK(std::string(e.what()).find("divisible by 4") != std::string::npos);
    }
    CHECK_THROWS_AS(g.forward(torch::rand({1, 32, 32}), ForwardMode::Inference), Error);
  }

  TEST_CASE("train at one size, infer at another") {
    auto c = tiny(3);
    c.final_zero_init = false;
    StainGenerator g(c, 0);
    auto train = g.forward(torch::rand({2, 3, 128, 128}), ForwardMode::Training);
    train.transformed.mean().backward();
    auto out = g.forward(torch::rand({3, 64, 64}), ForwardMode::Inference).transformed;
    CHECK(out.sizes() == torch::IntArrayRef({3, 64, 64}));
    CHECK(out.min().item<double>() >= 0.0);
    CHECK(out.max().item<double>() <= 1.0);
  }

  TEST_CASE("inference clamps, training does not") {
    auto c = tiny();
    StainGenerator g(c, 0);
    {
      torch::NoGradGuard no_grad;
      auto bias = g.named_parameters();
      for (auto& [name, p] : bias)
        if (name.find("head.bias") != std::string::npos) p.fill_(0.7);
    }
    auto p = torch::full({1, 3, 16, 16}, 0.6);
    CHECK(g.forward(p, ForwardMode::Training).transformed.max().item<double>() == Approx(1.3).epsilon(1e-6));
    CHECK(g.forward(p, ForwardMode::Inference).transformed.max().item<double>() == 1.0);
  }

  TEST_CASE("residual path gradient matches finite differences") {
    auto c = tiny();
    StainGenerator g(c, 2);
    g.to(torch::kFloat64);
    auto p = torch::rand({1, 3, 8, 8}, torch::kFloat64);
    auto target = torch::rand({1, 3, 8, 8}, torch::kFloat64);
    auto w = head_weight(g);
    auto loss_at = [&] {
      auto t = g.forward(p, ForwardMode::Training).transformed;
      return content_loss(target.flatten(1), t.flatten(1));
    };
    auto loss = loss_at();
    w.mutable_grad() = torch::Tensor();
    loss.backward();
    auto analytic = w.grad().clone();
    const double h = 1e-6;
    double worst = 0.0;
    for (std::int64_t i = 0; i < w.numel(); i += 7) {
      torch::NoGradGuard no_grad;
      auto cell = element(w, i);
      const double orig = cell.item<double>();
      cell.fill_(orig + h);
      double plus;
      {
        torch::AutoGradMode enable(true);
        plus = loss_at().item<double>();
      }
      cell.fill_(orig - h);
      double minus;
      {
        torch::AutoGradMode enable(true);
        minus = loss_at().item<double>();
      }
      cell.fill_(orig);
      const double numeric = (plus - minus) / (2 * h);
      const double a = element(analytic, i).item<double>();
      worst = std::max(worst, std::abs(a - numeric) / std::max(1e-6, std::abs(numeric)));
    }
    CHECK(worst < 1e-4);
  }

  TEST_CASE("checkpoint round-trip is byte stable") {
    TempDir dir;
    auto c = tiny(3);
    c.final_zero_init = false;
    StainGenerator g(c, 4);
    // Move the batch-norm running statistics off their defaults.
    g.forward(torch::rand({2, 3, 32, 32}), ForwardMode::Training);
    save_generator(g, dir / "a.sfar");
    auto loaded = load_generator(dir / "a.sfar");
    save_generator(loaded, dir / "b.sfar");
    CHECK(read_file_bytes(dir / "a.sfar") == read_file_bytes(dir / "b.sfar"));
    CHECK(loaded.checksum() == g.checksum());
    CHECK(loaded.config().branch_channels == c.branch_channels);
    auto x = torch::rand({3, 32, 32});
    CHECK(torch::equal(loaded.forward(x, ForwardMode::Inference).transformed,
                       g.forward(x, ForwardMode::Inference).transformed));
  }

  TEST_CASE("config json round-trip") {
    auto c = GeneratorConfig::resnet_transform();
    auto back = generator_config_from_json(generator_config_to_json(c));
    CHECK(back.architecture == c.architecture);
    CHECK(back.branch_channels == c.branch_channels);
    CHECK(back.blocks_per_branch == c.blocks_per_branch);
    CHECK(back.use_skip == c.use_skip);
    CHECK(back.final_zero_init == c.final_zero_init);
    CHECK_THROWS_AS(generator_config_from_json("{\"architecture\":\"unet\"}"), Error);
  }

  TEST_CASE("wrong checkpoint kind is refused") {
    TempDir dir;
    test_backbone().save(dir / "vgg.sfar");
    CHECK_THROWS_AS(load_generator(dir / "vgg.sfar"), Error);
  }
}
