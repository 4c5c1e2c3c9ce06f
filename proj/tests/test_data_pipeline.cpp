#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <opencv2/core.hpp>

#include "json.hpp"
#include "stainforge/data_pipeline.hpp"
#include "stainforge/error.hpp"
#include "support.hpp"

using namespace stainforge;
using namespace stainforge::testing;
using doctest::Approx;

namespace {

cv::Mat random_image(int h, int w, unsigned seed) {
  cv::Mat m(h, w, CV_8UC3);
  cv::RNG rng(seed);
  rng.fill(m, cv::RNG::UNIFORM, 0, 256);
  return m;
}

// Cosine over raw position-summed activations, accumulated with plain loops.
double brute_cosine(const PatchTensor& a, const PatchTensor& b) {
  torch::NoGradGuard no_grad;
  auto fa = test_backbone().extract(a.pixels, {kContentLayer}).at(kContentLayer).values[0].to(torch::kFloat64);
  auto fb = test_backbone().extract(b.pixels, {kContentLayer}).at(kContentLayer).values[0].to(torch::kFloat64);
  auto xa = fa.accessor<double, 2>();
  auto xb = fb.accessor<double, 2>();
  std::vector<double> sa(fa.size(0), 0.0), sb(fb.size(0), 0.0);
  for (std::int64_t i = 0; i < fa.size(0); ++i)
    for (std::int64_t j = 0; j < fa.size(1); ++j) {
      sa[i] += xa[i][j];
      sb[i] += xb[i][j];
    }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    dot += sa[i] * sb[i];
    na += sa[i] * sa[i];
    nb += sb[i] * sb[i];
  }
  return dot / std::sqrt(na * nb);
}

std::vector<PatchTensor> patches(int n, std::uint64_t seed, int size = 32) {
  std::vector<PatchTensor> out;
  for (int i = 0; i < n; ++i) {
    // Vary brightness too, so descriptors are well separated.
    auto px = random_pixels(size, size, seed + i) * (0.3 + 0.7 * i / std::max(1, n - 1));
    out.push_back(make_patch(px, "p" + std::to_string(seed + i)));
  }
  return out;
}

PairedDataset toy_dataset(std::size_t n) {
  PairedDataset d;
  for (std::size_t i = 0; i < n; ++i) {
    d.pairs.emplace_back(make_patch(torch::full({3, 4, 4}, 0.01f * i)), make_patch(torch::full({3, 4, 4}, 0.5f)));
    d.pairing_scores.push_back(1.0);
    d.indices.push_back({i, 0});
  }
  return d;
}

}  // namespace

TEST_SUITE("data_pipeline") {
  TEST_CASE("tile grid counts and coordinates") {
    TileOptions opts;
    auto tiles = tile_image(random_image(1024, 1536, 1), opts, "slide");
    REQUIRE(tiles.size() == 6);
    CHECK(tiles.front().tile_coords == TileCoords{0, 0});
    CHECK(tiles[2].tile_coords == TileCoords{0, 2});
    CHECK(tiles.back().tile_coords == TileCoords{1, 2});
    for (const auto& t : tiles) {
      CHECK(t.height() == 512);
      CHECK(t.source_id == "slide");
    }
    CHECK(tile_filename(tiles[4]) == "slide_r1_c1.png");
    CHECK(tile_image(random_image(1000, 1000, 2), opts, "s").size() == 1);
  }

  TEST_CASE("single tile equals the scaled input") {
    auto img = random_image(512, 512, 3);
    auto tiles = tile_image(img, TileOptions{}, "s");
    REQUIRE(tiles.size() == 1);
    CHECK(max_abs_diff(tiles[0].pixels, image_to_tensor(img)) == 0.0);
  }

  TEST_CASE("tiling is lossless over the covered area") {
    TileOptions opts;
    opts.tile_size = 64;
    auto img = random_image(200, 150, 4);
    auto tiles = tile_image(img, opts, "s");
    REQUIRE(tiles.size() == 6);  // 3 rows x 2 cols
    cv::Mat rebuilt(192, 128, CV_8UC3);
    for (const auto& t : tiles) {
      tensor_to_image(t.pixels).copyTo(rebuilt(cv::Rect(int(t.tile_coords.col * 64), int(t.tile_coords.row * 64), 64, 64)));
    }
    cv::Mat crop = img(cv::Rect(0, 0, 128, 192));
    CHECK(cv::norm(rebuilt, crop, cv::NORM_INF) == 0.0);
  }

  TEST_CASE("tiling errors") {
    TileOptions opts;
    try {
      tile_image(random_image(100, 600, 5), opts, "s");
      FAIL("expected ImageTooSmall");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ImageTooSmall);
      CHECK(std::string(e.what()).find("too small") != std::string::npos);
    }
    cv::Mat gray(600, 600, CV_8UC1, cv::Scalar(3));
    try {
      tile_image(gray, opts, "s");
      FAIL("expected ChannelMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ChannelMismatch);
    }
    opts.tile_size = 0;
    CHECK_THROWS_AS(tile_image(random_image(10, 10, 1), opts, "s"), Error);
  }

  TEST_CASE("content similarity basics") {
    auto ps = patches(2, 10);
    CHECK(content_similarity(ps[0], ps[0], test_backbone()) == Approx(1.0).epsilon(1e-6));
    CHECK(content_similarity(ps[0], ps[1], test_backbone()) ==
          Approx(content_similarity(ps[1], ps[0], test_backbone())).epsilon(1e-12));
    CHECK_THROWS_AS(content_similarity(ps[0], random_patch(16, 16, 1), test_backbone()), Error);
  }

  TEST_CASE("similarity ranking matches brute-force cosine") {
    auto ps = patches(11, 20);
    std::vector<double> fast, brute;
    for (int i = 1; i <= 10; ++i) {
      fast.push_back(content_similarity(ps[0], ps[i], test_backbone()));
      brute.push_back(brute_cosine(ps[0], ps[i]));
    }
    std::vector<int> of(10), ob(10);
    std::iota(of.begin(), of.end(), 0);
    std::iota(ob.begin(), ob.end(), 0);
    std::sort(of.begin(), of.end(), [&](int a, int b) { return fast[a] > fast[b]; });
    std::sort(ob.begin(), ob.end(), [&](int a, int b) { return brute[a] > brute[b]; });
    CHECK(of == ob);
    for (int i = 0; i < 10; ++i) CHECK(fast[i] == Approx(brute[i]).epsilon(1e-9));
  }

  TEST_CASE("self pairing") {
    auto ps = patches(4, 30);
    auto d = build_pairs(ps, ps, 4, test_backbone());
    REQUIRE(d.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(d.indices[i].input == i);
      CHECK(d.indices[i].reference == i);
      CHECK(d.pairing_scores[i] == Approx(1.0).epsilon(1e-6));
    }
  }

  TEST_CASE("exact copy wins") {
    auto input = patches(1, 40);
    std::vector<PatchTensor> refs = {input[0], random_patch(32, 32, 99)};
    auto d = build_pairs(input, refs, 1, test_backbone());
    CHECK(d.indices[0].reference == 0);
  }

  TEST_CASE("pairing equals exhaustive argmax") {
    auto inputs = patches(5, 50);
    auto refs = patches(5, 60);
    auto d = build_pairs(inputs, refs, 5, test_backbone());
    for (std::size_t i = 0; i < 5; ++i) {
      std::size_t best = 0;
      double best_sim = -2;
      for (std::size_t j = 0; j < 5; ++j) {
        const double s = content_similarity(inputs[i], refs[j], test_backbone());
        if (s > best_sim) best_sim = s, best = j;
      }
      CHECK(d.indices[i].input == i);
      CHECK(d.indices[i].reference == best);
      CHECK(d.pairing_scores[i] == Approx(best_sim).epsilon(1e-9));
    }
  }

  TEST_CASE("pairing is stable under reference shuffles") {
    auto inputs = patches(4, 70);
    auto refs = patches(6, 80);
    auto base = build_pairs(inputs, refs, 3, test_backbone());
    std::vector<std::size_t> perm = {5, 2, 0, 4, 1, 3};
    std::vector<PatchTensor> shuffled;
    for (auto i : perm) shuffled.push_back(refs[i]);
    auto again = build_pairs(inputs, shuffled, 3, test_backbone());
    REQUIRE(again.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(again.pairs[i].second.source_id == base.pairs[i].second.source_id);
      CHECK(again.indices[i].input == base.indices[i].input);
    }
  }

  TEST_CASE("select_pairs tie breaks and top-k order") {
    auto sim = torch::tensor({0.2, 0.9, 0.9,   //
                              0.5, 0.1, 0.0,   //
                              0.95, 0.3, 0.2,  //
                              0.5, 0.5, 0.1},
                             torch::kFloat64)
                   .view({4, 3});
    auto picked = select_pairs(sim, 3);
    REQUIRE(picked.size() == 3);
    // Scores 0.9, 0.5, 0.95, 0.5: keep inputs 0, 1, 2 (input 1 beats 3 on the tie), in input order.
    CHECK(picked[0].first.input == 0);
    CHECK(picked[0].first.reference == 1);
    CHECK(picked[1].first.input == 1);
    CHECK(picked[2].first.input == 2);
    CHECK(select_pairs(sim, 4)[3].first.reference == 0);
    CHECK_THROWS_AS(select_pairs(sim, 5), Error);
    CHECK_THROWS_AS(select_pairs(sim, 0), Error);
  }

  TEST_CASE("build_pairs preconditions") {
    auto ps = patches(2, 90);
    CHECK_THROWS_AS(build_pairs({}, ps, 1, test_backbone()), Error);
    CHECK_THROWS_AS(build_pairs(ps, {}, 1, test_backbone()), Error);
    CHECK_THROWS_AS(build_pairs(ps, ps, 3, test_backbone()), Error);
  }

  TEST_CASE("batch schedule arithmetic") {
    CHECK(BatchSchedule(20, 4, 0).batches_per_epoch() == 5);
    auto b = BatchSchedule(5, 4, 0).epoch_batches(0);
    REQUIRE(b.size() == 2);
    CHECK(b[0].size() == 4);
    CHECK(b[1].size() == 1);
    CHECK_THROWS_AS(BatchSchedule(5, 0, 0), Error);
  }

  TEST_CASE("batch schedule determinism and coverage") {
    BatchSchedule a(23, 4, 17), b(23, 4, 17), c(23, 4, 18);
    for (std::uint64_t e = 0; e < 5; ++e) {
      CHECK(a.epoch_order(e) == b.epoch_order(e));
      auto order = a.epoch_order(e);
      CHECK(std::set<std::size_t>(order.begin(), order.end()).size() == 23);
    }
    CHECK(a.epoch_order(0) != a.epoch_order(1));
    CHECK(a.epoch_order(0) != c.epoch_order(0));
    CHECK(a.batch_at(7) == a.epoch_batches(1)[1]);
  }

  TEST_CASE("make_batches gathers the scheduled pairs") {
    auto d = toy_dataset(5);
    auto batches = make_batches(d, 4, 3);
    auto again = make_batches(d, 4, 3);
    REQUIRE(batches.size() == 2);
    CHECK(batches[0].inputs.size(0) == 4);
    CHECK(batches[1].inputs.size(0) == 1);
    for (std::size_t i = 0; i < batches.size(); ++i) {
      CHECK(batches[i].indices == again[i].indices);
      for (std::size_t k = 0; k < batches[i].indices.size(); ++k) {
        CHECK(torch::equal(batches[i].inputs[k], d.pairs[batches[i].indices[k]].first.pixels));
      }
    }
  }

  TEST_CASE("pair manifest round-trip with relative paths") {
    TempDir dir;
    std::filesystem::create_directories(dir / "in");
    auto a = random_patch(16, 16, 1), b = random_patch(16, 16, 2);
    save_patch_png(dir / "in" / "a.png", a.pixels);
    save_patch_png(dir / "in" / "b.png", b.pixels);
    write_pair_manifest(dir / "pairs.json", {{"in/a.png", "in/b.png", 0.75}});

    std::ifstream in(dir / "pairs.json");
    auto j = nlohmann::json::parse(in);
    REQUIRE(j.is_array());
    CHECK(j[0].at("input_path") == "in/a.png");
    CHECK(j[0].at("reference_path") == "in/b.png");
    CHECK(j[0].at("score") == 0.75);

    auto entries = read_pair_manifest(dir / "pairs.json");
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].input_path == dir / "in" / "a.png");
    auto d = load_paired_dataset(dir / "pairs.json");
    REQUIRE(d.size() == 1);
    CHECK(d.pairing_scores[0] == 0.75);
    CHECK(max_abs_diff(d.pairs[0].first.pixels, a.pixels) < 0.5 / 255 + 1e-6);
  }

  TEST_CASE("png round-trip and image listing") {
    TempDir dir;
    auto px = random_pixels(8, 8, 5);
    save_patch_png(dir / "b.png", px);
    save_patch_png(dir / "a.png", px);
    { std::ofstream(dir / "notes.txt") << "x"; }
    auto files = list_images(dir.path());
    REQUIRE(files.size() == 2);
    CHECK(files[0].filename() == "a.png");
    auto back = load_patch(dir / "a.png");
    CHECK(back.source_id == "a");
    CHECK(max_abs_diff(back.pixels, px) <= 0.5 / 255 + 1e-6);
    CHECK_THROWS_AS(load_patch(dir / "missing.png"), Error);
  }

  TEST_CASE("patch validation") {
    CHECK_THROWS_AS(make_patch(torch::full({3, 4, 4}, 1.5)), Error);
    CHECK_THROWS_AS(make_patch(torch::zeros({4, 4, 3})), Error);
    auto nan = torch::zeros({3, 2, 2});
    nan[0][0][0] = std::nan("");
    CHECK_THROWS_AS(make_patch(nan), Error);
  }
}
