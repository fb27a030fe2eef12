// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "faceguard/dataio/dataset.hpp"
#include "faceguard/dataio/pairs.hpp"
#include "support/toy_data.hpp"

using namespace faceguard;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "faceguard_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RawImage solid_image(std::size_t hw, std::uint8_t value) {
  RawImage raw;
  raw.height = raw.width = hw;
  raw.pixels.assign(raw.size(), value);
  return raw;
}

}  // namespace

TEST_CASE("normalize maps the pixel range onto [-1, 1]") {
  RawImage raw = solid_image(4, 128);
  raw.pixels[0] = 0;
  raw.pixels[3] = 255;
  FaceImage img = normalize_image(raw);
  CHECK(img.values[0] == -1.0f);                  // pixel 0
  CHECK(img.values[1] == 0.9921875f);             // pixel 255, (255-128)/128
  CHECK(img.values[2] == 0.0f);                   // pixel 128
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    CHECK(img.values[i] >= -1.0f);
    CHECK(img.values[i] <= 1.0f);
  }
}

TEST_CASE("denormalize maps back to pixels with clamping") {
  Tensor<float> v({3, 1, 1});
  v[0] = 0.0f;
  v[1] = -1.0f;
  v[2] = 1.0f;  // 256 clamps to 255
  RawImage raw = denormalize_image(v);
  CHECK(raw.pixels[0] == 128);
  CHECK(raw.pixels[1] == 0);
  CHECK(raw.pixels[2] == 255);
}

TEST_CASE("normalize/denormalize round-trip is the identity for every pixel value") {
  RawImage raw;
  raw.height = 16;
  raw.width = 16;
  raw.pixels.resize(raw.size());
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
    raw.pixels[i] = static_cast<std::uint8_t>(i % 256);
  }
  FaceImage img = normalize_image(raw);
  RawImage back = denormalize_image(img);
  REQUIRE(back.pixels == raw.pixels);
  FaceImage again = normalize_image(back);
  REQUIRE(again.values.vec() == img.values.vec());
}

TEST_CASE("normalize rejects wrong channel count") {
  RawImage raw;
  raw.height = 4;
  raw.width = 4;
  raw.pixels.assign(4 * 4 * 2, 0);  // two channels worth of bytes
  CHECK_THROWS_AS(normalize_image(raw), ShapeError);
}

TEST_CASE("load_dataset loads, sorts, and normalizes") {
  const fs::path dir = scratch_dir("load_basic");
  write_raw_image(dir / "b.png", solid_image(8, 10));
  write_raw_image(dir / "a.png", solid_image(8, 200));
  write_raw_image(dir / "c.png", solid_image(8, 90));
  std::ofstream(dir / "manifest.tsv") << "b.png\ts1\n"
                                      << "a.png\ts1\n"
                                      << "c.png\ts2\n";
  Dataset ds = load_dataset(dir, dir / "manifest.tsv", 8);
  REQUIRE(ds.images.size() == 3);
  REQUIRE(ds.subjects.size() == 2);
  CHECK(ds.images[0].image_id == "a.png");  // sorted by image_id
  CHECK(ds.images[1].image_id == "b.png");
  CHECK(ds.images[2].image_id == "c.png");
  for (const auto& img : ds.images) {
    CHECK(max_abs(img.values) <= 1.0f);
  }
}

TEST_CASE("load_dataset resizes to the configured size") {
  const fs::path dir = scratch_dir("load_resize");
  write_raw_image(dir / "a.png", solid_image(16, 100));
  std::ofstream(dir / "manifest.tsv") << "a.png\ts1\n";
  Dataset ds = load_dataset(dir, dir / "manifest.tsv", 8);
  CHECK(ds.images[0].height() == 8);
  CHECK(ds.images[0].width() == 8);
}

TEST_CASE("load_dataset error paths") {
  const fs::path dir = scratch_dir("load_errors");
  std::ofstream(dir / "empty.tsv") << "";
  CHECK_THROWS_AS(load_dataset(dir, dir / "empty.tsv", 8), ValidationError);

  std::ofstream(dir / "missing.tsv") << "ghost.png\ts1\n";
  try {
    load_dataset(dir, dir / "missing.tsv", 8);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("ghost.png") != std::string::npos);
  }

  write_raw_image(dir / "a.png", solid_image(8, 1));
  std::ofstream(dir / "dup.tsv") << "a.png\ts1\na.png\ts2\n";
  CHECK_THROWS_AS(load_dataset(dir, dir / "dup.tsv", 8), ValidationError);

  std::ofstream(dir / "bad.png") << "not an image";
  std::ofstream(dir / "badimg.tsv") << "bad.png\ts1\n";
  CHECK_THROWS_AS(load_dataset(dir, dir / "badimg.tsv", 8), FormatError);
}

TEST_CASE("dataset cache round-trips through ADVDEF_CACHE") {
  const fs::path dir = scratch_dir("cache");
  const fs::path cache = dir / "cache";
  write_raw_image(dir / "a.png", solid_image(8, 33));
  write_raw_image(dir / "b.png", solid_image(8, 66));
  std::ofstream(dir / "manifest.tsv") << "a.png\ts1\nb.png\ts2\n";
  setenv("ADVDEF_CACHE", cache.c_str(), 1);
  Dataset first = load_dataset(dir, dir / "manifest.tsv", 8);
  REQUIRE(fs::exists(cache));
  std::size_t blobs = 0;
  for (auto& entry : fs::directory_iterator(cache)) {
    (void)entry;
    ++blobs;
  }
  CHECK(blobs == 1);
  Dataset second = load_dataset(dir, dir / "manifest.tsv", 8);
  unsetenv("ADVDEF_CACHE");
  REQUIRE(second.images.size() == first.images.size());
  for (std::size_t i = 0; i < first.images.size(); ++i) {
    CHECK(second.images[i].image_id == first.images[i].image_id);
    CHECK(second.images[i].values.vec() == first.images[i].values.vec());
  }
}

TEST_CASE("make_pairs counts match the brute-force enumeration") {
  const fs::path dir = scratch_dir("pairs");
  toy::ToyOptions opt;
  opt.subjects = 3;
  opt.images_per_subject = 4;
  opt.hw = 16;
  const fs::path manifest = toy::write_toy_dataset(dir, opt);
  Dataset ds = load_dataset(dir, manifest, 16);

  PairSet pairs = make_pairs(ds, 2, /*seed=*/9);
  // n(n-1)/2 per subject via brute force
  std::size_t expected = 0;
  for (const auto& [subject, indices] : ds.subjects) {
    for (std::size_t i = 0; i < indices.size(); ++i) {
      for (std::size_t j = i + 1; j < indices.size(); ++j) ++expected;
    }
  }
  CHECK(expected == 3 * (4 * 3 / 2));
  CHECK(pairs.genuine.size() == expected);
  for (const auto& [a, b] : pairs.genuine) {
    CHECK(a != b);
    CHECK(ds.images[a].subject_id == ds.images[b].subject_id);
  }
  for (const auto& [a, b] : pairs.impostor) {
    CHECK(a != b);
    CHECK(ds.images[a].subject_id != ds.images[b].subject_id);
  }

  PairSet again = make_pairs(ds, 2, /*seed=*/9);
  CHECK(again.impostor == pairs.impostor);  // deterministic under a fixed seed
  PairSet other = make_pairs(ds, 2, /*seed=*/10);
  CHECK(other.genuine == pairs.genuine);
}

TEST_CASE("single genuine pair for a two-image subject") {
  const fs::path dir = scratch_dir("pairs_two");
  write_raw_image(dir / "a.png", solid_image(8, 10));
  write_raw_image(dir / "b.png", solid_image(8, 20));
  write_raw_image(dir / "c.png", solid_image(8, 30));
  std::ofstream(dir / "manifest.tsv") << "a.png\ts1\nb.png\ts1\nc.png\ts2\n";
  Dataset ds = load_dataset(dir, dir / "manifest.tsv", 8);
  PairSet pairs = make_pairs(ds, 2);
  CHECK(pairs.genuine.size() == 1);
}

TEST_CASE("make_pairs validates its inputs") {
  const fs::path dir = scratch_dir("pairs_bad");
  write_raw_image(dir / "a.png", solid_image(8, 10));
  write_raw_image(dir / "b.png", solid_image(8, 20));
  std::ofstream(dir / "manifest.tsv") << "a.png\ts1\nb.png\ts2\n";
  Dataset ds = load_dataset(dir, dir / "manifest.tsv", 8);
  CHECK_THROWS_AS(make_pairs(ds, 1), ValidationError);   // precondition
  CHECK_THROWS_AS(make_pairs(ds, 2), ValidationError);   // no subject survives
  CHECK_THROWS_AS(make_pairs(ds, 10), ValidationError);  // no subject survives
}
