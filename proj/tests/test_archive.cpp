#include <doctest.h>

#include "stainforge/archive.hpp"
#include "stainforge/error.hpp"
#include "support.hpp"

using namespace stainforge;
using namespace stainforge::testing;

TEST_SUITE("archive") {
  TEST_CASE("round-trip preserves names, dtypes and bytes") {
    TensorArchive a;
    a.metadata = R"({"kind":"test"})";
    a.add("w", torch::rand({2, 3}));
    a.add("d", torch::rand({4}, torch::kFloat64));
    a.add("i", torch::tensor({int64_t{7}, int64_t{-1}}));
    a.add("s", torch::tensor(3.5));
    const auto bytes = serialize_archive(a);
    const auto b = parse_archive(bytes, "mem");
    CHECK(b.metadata == a.metadata);
    REQUIRE(b.entries().size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(b.entries()[i].first == a.entries()[i].first);
      CHECK(torch::equal(b.entries()[i].second, a.entries()[i].second));
    }
    CHECK(serialize_archive(b) == bytes);
  }

  TEST_CASE("stored tensors are detached copies") {
    TensorArchive a;
    auto t = torch::zeros({3});
    a.add("t", t);
    t.fill_(1);
    CHECK(a.at("t").sum().item<double>() == 0.0);
    CHECK_THROWS_AS(a.add("t", t), Error);
    CHECK_THROWS_AS(a.at("missing"), Error);
  }

  TEST_CASE("non-contiguous tensors are stored in logical order") {
    TensorArchive a;
    auto t = torch::arange(6, torch::kFloat32).view({2, 3}).t();
    a.add("t", t);
    auto b = parse_archive(serialize_archive(a), "mem");
    CHECK(torch::equal(b.at("t"), t));
  }

  TEST_CASE("corruption is detected") {
    TensorArchive a;
    a.add("w", torch::rand({16}));
    auto bytes = serialize_archive(a);

    auto flipped = bytes;
    flipped[flipped.size() - 40] ^= 1;
    CHECK_THROWS_AS(parse_archive(flipped, "mem"), Error);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 5);
    CHECK_THROWS_AS(parse_archive(truncated, "mem"), Error);

    auto magic = bytes;
    magic[0] = 'X';
    try {
      parse_archive(magic, "mem");
      FAIL("expected CorruptFile");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::CorruptFile);
    }
  }

  TEST_CASE("version mismatch is reported") {
    TensorArchive a;
    auto bytes = serialize_archive(a);
    bytes[4] = 9;  // version follows the 4-byte magic
    try {
      parse_archive(bytes, "mem");
      FAIL("expected VersionMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::VersionMismatch);
    }
  }

  TEST_CASE("file round-trip and sha256") {
    TempDir dir;
    TensorArchive a;
    a.add("x", torch::rand({5, 5}));
    save_archive(a, dir / "a.sfar");
    CHECK_FALSE(std::filesystem::exists(dir / "a.sfar.partial"));
    auto b = load_archive(dir / "a.sfar");
    CHECK(torch::equal(b.at("x"), a.at("x")));
    CHECK(file_sha256(dir / "a.sfar") == sha256_hex(serialize_archive(a)));
    CHECK_THROWS_AS(load_archive(dir / "nope.sfar"), Error);
  }

  TEST_CASE("sha256 known answer") {
    const std::string abc = "abc";
    CHECK(sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size())) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }
}
