#include <doctest.h>

#include "stainforge/reinhard.hpp"
#include "support.hpp"

using namespace stainforge;
using namespace stainforge::testing;
using doctest::Approx;

namespace {

// Independent per-pixel CIE conversion in scalar code.
std::array<double, 3> lab_oracle(double r, double g, double b) {
  auto lin = [](double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); };
  const double R = lin(r), G = lin(g), B = lin(b);
  const double X = (0.4124564 * R + 0.3575761 * G + 0.1804375 * B) / 0.95047;
  const double Y = 0.2126729 * R + 0.7151522 * G + 0.0721750 * B;
  const double Z = (0.0193339 * R + 0.1191920 * G + 0.9503041 * B) / 1.08883;
  auto f = [](double t) { return t > 216.0 / 24389.0 ? std::cbrt(t) : (24389.0 / 27.0 * t + 16.0) / 116.0; };
  return {116 * f(Y) - 16, 500 * (f(X) - f(Y)), 200 * (f(Y) - f(Z))};
}

torch::Tensor pixel(double r, double g, double b) {
  return torch::tensor({r, g, b}, torch::kFloat64).view({3, 1, 1});
}

}  // namespace

TEST_SUITE("reinhard") {
  TEST_CASE("white and black") {
    auto w = rgb_to_lab(pixel(1, 1, 1));
    CHECK(w[0].item<double>() == Approx(100.0).epsilon(1e-4));
    CHECK(std::abs(w[1].item<double>()) < 1e-2);
    CHECK(std::abs(w[2].item<double>()) < 1e-2);
    auto k = rgb_to_lab(pixel(0, 0, 0));
    CHECK(std::abs(k[0].item<double>()) < 1e-9);
    CHECK(std::abs(k[1].item<double>()) < 1e-9);
    CHECK(std::abs(k[2].item<double>()) < 1e-9);
  }

  TEST_CASE("matches scalar conversion") {
    auto px = random_pixels(5, 5, 3).to(torch::kFloat64);
    auto lab = rgb_to_lab(px);
    auto a = px.accessor<double, 3>();
    auto l = lab.accessor<double, 3>();
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) {
        auto o = lab_oracle(a[0][y][x], a[1][y][x], a[2][y][x]);
        for (int c = 0; c < 3; ++c) CHECK(l[c][y][x] == Approx(o[c]).epsilon(1e-9));
      }
  }

  TEST_CASE("round trip") {
    auto px = random_pixels(1, 1000, 4);
    auto back = lab_to_rgb(rgb_to_lab(px));
    CHECK((back.scalar_type() == torch::kFloat32));
    CHECK(max_abs_diff(back, px) < 1e-3);
  }

  TEST_CASE("statistics match the target before clamping") {
    auto src = random_pixels(32, 32, 5) * 0.5 + 0.25;
    const auto target = lab_stats(random_pixels(32, 32, 6));
    auto lab = reinhard_transfer_lab(src, target);
    auto flat = lab.reshape({3, -1});
    for (int c = 0; c < 3; ++c) {
      const double mean = flat[c].mean().item<double>();
      const double sd = std::sqrt((flat[c] - mean).square().mean().item<double>());
      CHECK(std::abs(mean - target.mean[c]) < 1e-3);
      CHECK(std::abs(sd - target.std[c]) < 1e-3);
    }
  }

  TEST_CASE("self transfer and idempotence") {
    auto p = make_patch(random_pixels(24, 24, 7));
    const auto stats = lab_stats(p.pixels);
    auto once = reinhard_transfer(p, stats);
    CHECK(max_abs_diff(once.pixels, p.pixels) < 1e-3);
    const auto target = lab_stats(random_pixels(24, 24, 8) * 0.4 + 0.3);
    auto a = reinhard_transfer(p, target);
    auto b = reinhard_transfer(a, target);
    CHECK(max_abs_diff(a.pixels, b.pixels) < 1e-3);
  }

  TEST_CASE("constant patch maps to the reference mean") {
    auto gray = make_patch(torch::full({3, 8, 8}, 0.5f));
    LabStats target;
    target.mean = {60.0, 20.0, -10.0};
    target.std = {5.0, 3.0, 2.0};
    auto lab = reinhard_transfer_lab(gray.pixels, target);
    for (int c = 0; c < 3; ++c) {
      CHECK(lab[c].max().item<double>() == Approx(target.mean[c]).epsilon(1e-9));
      CHECK(lab[c].min().item<double>() == Approx(target.mean[c]).epsilon(1e-9));
    }
    const auto s = lab_stats(gray.pixels);
    CHECK(s.std[0] == kLabStdFloor);
  }

  TEST_CASE("pooled statistics") {
    std::vector<PatchTensor> ps = {make_patch(random_pixels(4, 4, 1)), make_patch(random_pixels(4, 4, 2))};
    const auto pooled = lab_stats(std::span<const PatchTensor>(ps));
    const auto joint = lab_stats(torch::cat({ps[0].pixels, ps[1].pixels}, 2));
    for (int c = 0; c < 3; ++c) {
      CHECK(pooled.mean[c] == Approx(joint.mean[c]).epsilon(1e-12));
      CHECK(pooled.std[c] == Approx(joint.std[c]).epsilon(1e-12));
    }
  }
}
