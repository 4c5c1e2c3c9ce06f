#include <doctest.h>

#include "stainforge/discriminator.hpp"
#include "stainforge/error.hpp"
#include "support.hpp"

using namespace stainforge;
using namespace stainforge::testing;

TEST_SUITE("discriminator") {
  TEST_CASE("receptive field recurrence") {
    std::span<const ConvGeometry> g(kDiscriminatorGeometry);
    CHECK(receptive_field(g.subspan(0, 1)) == 4);
    CHECK(receptive_field(g.subspan(0, 2)) == 8);
    CHECK(receptive_field(g.subspan(0, 3)) == 16);
    CHECK(receptive_field(g) == 16);
    auto [first, last] = receptive_window(g, 10);
    CHECK(first == 33);
    CHECK(last == 48);
    CHECK(last - first + 1 == 16);
  }

  TEST_CASE("grid shape") {
    CHECK(output_extent(kDiscriminatorGeometry, 512) == 128);
    CHECK(output_extent(kDiscriminatorGeometry, 256) == 64);
    PatchDiscriminator d(0);
    torch::NoGradGuard no_grad;
    auto s = d.score(torch::rand({2, 3, 64, 64}));
    CHECK(s.scores.sizes() == torch::IntArrayRef({2, 16, 16}));
    CHECK(s.receptive_field == 16);
    CHECK(s.scores.min().item<double>() >= 0.0);
    CHECK(s.scores.max().item<double>() <= 1.0);
  }

  TEST_CASE("too small input") {
    PatchDiscriminator d(0);
    try {
      d.score(torch::rand({3, 15, 32}));
      FAIL("expected ImageTooSmall");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ImageTooSmall);
    }
  }

  TEST_CASE("same seed, same parameters") {
    CHECK(PatchDiscriminator(3).checksum() == PatchDiscriminator(3).checksum());
    CHECK(PatchDiscriminator(3).checksum() != PatchDiscriminator(4).checksum());
  }

  TEST_CASE("constant input gives equal interior cells") {
    PatchDiscriminator d(1);
    torch::NoGradGuard no_grad;
    auto s = d.score(torch::full({3, 64, 64}, 0.3)).scores[0];
    auto interior = s.slice(0, 3, 13).slice(1, 3, 13);
    CHECK(max_abs_diff(interior, interior.flatten()[0].expand_as(interior)) < 1e-5);
  }

  TEST_CASE("batch members are scored independently") {
    PatchDiscriminator d(2);
    torch::NoGradGuard no_grad;
    auto x = torch::rand({3, 3, 32, 32});
    auto batched = d.score(x).scores;
    for (int i = 0; i < 3; ++i) CHECK(max_abs_diff(batched[i], d.score(x[i]).scores[0]) < 1e-6);
  }

  TEST_CASE("frozen statistics reproduce the live score") {
    PatchDiscriminator d(3);
    torch::NoGradGuard no_grad;
    auto x = torch::rand({1, 3, 48, 48});
    auto stats = d.statistics(x);
    CHECK(stats.mean_var.size() == 2);
    CHECK(max_abs_diff(d.score(x).scores, d.score_with_statistics(x, stats).scores) < 1e-6);
  }

  TEST_CASE("parameters round-trip through an archive") {
    PatchDiscriminator a(5), b(6);
    TensorArchive archive;
    a.save_into(archive, "d/");
    b.load_from(archive, "d/");
    CHECK(a.checksum() == b.checksum());
  }
}
