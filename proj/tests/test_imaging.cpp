#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "oracles.hpp"
#include "sr3/dataset.hpp"
#include "sr3/errors.hpp"
#include "sr3/imaging.hpp"

using namespace sr3;
namespace fs = std::filesystem;

namespace {

const fs::path kData = SR3_TEST_DATA;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("sr3_test_imaging_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// The pixel formula used by tests/data/make_fixtures.py.
std::array<int, 3> fixture_rgb(int x, int y) {
  return {(37 * x + 11 * y) % 256, (5 * x * y + 3) % 256, ((255 - 17 * x - 29 * y) % 256 + 256) % 256};
}

Image solid(int w, int h, float r, float g, float b) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = r;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = b;
    }
  return img;
}

void paint(Image& img, int x0, int y0, int w, int h, float r, float g, float b) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) {
      img.at(x, y, 0) = r;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = b;
    }
}

// Textured background that never reads as green.
Image tissue(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = float(0.6 + 0.3 * rng.uniform());
      img.at(x, y, 1) = float(0.3 + 0.2 * rng.uniform());
      img.at(x, y, 2) = float(0.3 + 0.2 * rng.uniform());
    }
  return img;
}

double max_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, double(std::abs(a.pixels[i] - b.pixels[i])));
  return m;
}

}  // namespace

TEST_CASE("image I/O: lossless round trip and single pixel") {
  const fs::path dir = scratch("io");
  Rng rng(1);
  Image img(13, 7);
  for (auto& v : img.pixels) v = from_u8(static_cast<std::uint8_t>(rng.uniform_int(0, 255)));
  save_image(img, dir / "a.png");
  CHECK(load_image(dir / "a.png") == img);

  Image px(1, 1);
  px.pixels = {from_u8(10), from_u8(20), from_u8(30)};
  save_image(px, dir / "px.png");
  const Image back = load_image(dir / "px.png");
  REQUIRE(back.width == 1);
  REQUIRE(back.height == 1);
  CHECK(to_u8(back.at(0, 0, 0)) == 10);
  CHECK(to_u8(back.at(0, 0, 1)) == 20);
  CHECK(to_u8(back.at(0, 0, 2)) == 30);
  for (int v = 0; v < 256; ++v) CHECK(to_u8(from_u8(static_cast<std::uint8_t>(v))) == v);
}

TEST_CASE("image I/O: fixtures written by an independent encoder") {
  for (const char* name : {"fixture_rgb.png", "fixture_palette.png"}) {
    INFO(std::string(name));
    const Image img = load_image(kData / name);
    REQUIRE(img.width == 7);
    REQUIRE(img.height == 5);
    long checksum = 0, expected = 0;
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 7; ++x) {
        const auto ref = fixture_rgb(x, y);
        for (int c = 0; c < 3; ++c) {
          CHECK(to_u8(img.at(x, y, c)) == ref[c]);
          checksum += to_u8(img.at(x, y, c)) * (1 + x + 7 * y);
          expected += ref[c] * (1 + x + 7 * y);
        }
      }
    CHECK(checksum == expected);
  }

  // 16-bit grey samples 4000x + 9000y, read as sRGB-coded values.
  const Image gray = load_image(kData / "fixture_gray16.png");
  REQUIRE(gray.width == 4);
  REQUIRE(gray.height == 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) CHECK(std::abs(gray.at(x, y, c) - (4000.0 * x + 9000.0 * y) / 65535.0) <= 0.5 / 255.0 + 1e-6);

  const Image jpg = load_image(kData / "fixture_flat.jpg");
  CHECK(jpg.width == 16);
  CHECK(jpg.height == 8);
  CHECK(std::abs(jpg.at(5, 3, 0) - 200 / 255.0) < 3 / 255.0);
  CHECK(std::abs(jpg.at(5, 3, 1) - 120 / 255.0) < 3 / 255.0);
  CHECK(std::abs(jpg.at(5, 3, 2) - 40 / 255.0) < 3 / 255.0);
}

TEST_CASE("image I/O: unreadable and truncated files name the path") {
  const fs::path dir = scratch("bad");
  try {
    load_image(dir / "missing.png");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("missing.png") != std::string::npos);
  }
  std::ifstream src(kData / "fixture_rgb.png", std::ios::binary);
  std::string bytes{std::istreambuf_iterator<char>(src), {}};
  std::ofstream(dir / "cut.png", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_image(dir / "cut.png"), IoError);
  std::ofstream(dir / "text.png", std::ios::binary) << "not an image";
  CHECK_THROWS_AS(load_image(dir / "text.png"), IoError);
}

TEST_CASE("green block detection: rectangle, quadrant rule, colour rule") {
  CHECK_FALSE(detect_green_block(solid(200, 160, 1.0f, 0.0f, 0.0f)).has_value());

  Image img = tissue(320, 240, 2);
  paint(img, 10, 170, 80, 60, 0.0f, 1.0f, 0.0f);
  const auto block = detect_green_block(img);
  REQUIRE(block.has_value());
  CHECK(std::abs(block->box.x0 - 10) <= 1);
  CHECK(std::abs(block->box.y0 - 170) <= 1);
  CHECK(std::abs(block->box.x1 - 89) <= 1);
  CHECK(std::abs(block->box.y1 - 229) <= 1);
  CHECK(block->area == 80 * 60);

  Image top_right = tissue(320, 240, 2);
  paint(top_right, 230, 10, 80, 60, 0.0f, 1.0f, 0.0f);
  CHECK_FALSE(detect_green_block(top_right).has_value());

  Image tiny = tissue(320, 240, 2);
  paint(tiny, 10, 220, 10, 10, 0.0f, 1.0f, 0.0f);  // 0.13% of the image
  CHECK_FALSE(detect_green_block(tiny).has_value());

  const Hsv g = rgb_to_hsv(0.0, 1.0, 0.0);
  CHECK(g.h == doctest::Approx(120.0));
  CHECK(g.s == doctest::Approx(1.0));
  CHECK(g.v == doctest::Approx(1.0));
}

TEST_CASE("clean_image: identity, crop, rejection, idempotence") {
  const Image clean = tissue(200, 160, 3);
  const auto same = clean_image(clean);
  CHECK(same.action == CleanAction::Kept);
  CHECK(same.image == clean);

  // Block spanning 20% of the width and 15% of the height at the bottom left.
  Image dirty = tissue(200, 160, 3);
  paint(dirty, 0, 136, 40, 24, 0.1f, 0.9f, 0.1f);
  const auto cleaned = clean_image(dirty);
  REQUIRE(cleaned.action == CleanAction::Cropped);
  REQUIRE(cleaned.crop.has_value());
  const Box keep = *cleaned.crop;
  const bool disjoint = keep.x1 < 0 || keep.x0 > 39 || keep.y1 < 136 || keep.y0 > 159;
  CHECK(disjoint);
  CHECK(double(keep.area()) / (200.0 * 160.0) > 0.6);
  CHECK(cleaned.image.width == keep.width());
  CHECK(cleaned.image.height == keep.height());
  CHECK_FALSE(detect_green_block(cleaned.image).has_value());
  const auto twice = clean_image(cleaned.image);
  CHECK(twice.action == CleanAction::Kept);
  CHECK(twice.image == cleaned.image);

  Image half = tissue(200, 160, 3);
  paint(half, 0, 40, 142, 120, 0.1f, 0.9f, 0.1f);  // about half of the image
  const auto rejected = clean_image(half);
  CHECK(rejected.action == CleanAction::RejectedArea);
  CHECK(rejected.image.empty());
}

TEST_CASE("bicubic_resize: constant, ramp, identity, direct oracle") {
  const Image flat = solid(9, 7, 0.25f, 0.5f, 0.75f);
  for (auto [w, h] : {std::pair{20, 3}, std::pair{4, 4}, std::pair{1, 1}, std::pair{37, 29}}) {
    const Image out = bicubic_resize(flat, w, h);
    REQUIRE(out.width == w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        CHECK(std::abs(out.at(x, y, 0) - 0.25) < 1e-6);
        CHECK(std::abs(out.at(x, y, 2) - 0.75) < 1e-6);
      }
  }

  Image ramp(16, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) ramp.at(x, y, c) = float(0.1 + 0.05 * x);
  const Image up = bicubic_resize(ramp, 32, 8);
  // Output x samples source position (x + 0.5)/2 - 0.5; borders see clamping.
  for (int x = 4; x < 28; ++x) {
    const double src = (x + 0.5) / 2.0 - 0.5;
    CHECK(std::abs(up.at(x, 3, 1) - (0.1 + 0.05 * src)) < 1e-6);
  }

  Rng rng(4);
  const Image noise = oracle::random_image(12, 9, rng);
  CHECK(max_diff(bicubic_resize(noise, 12, 9), noise) < 1e-6);

  const Image small = oracle::random_image(16, 16, rng);
  CHECK(max_diff(bicubic_resize(small, 64, 64), oracle::bicubic_direct(small, 64, 64)) < 1e-6);
  const Image big = oracle::random_image(40, 24, rng);
  CHECK(max_diff(bicubic_resize(big, 10, 6), oracle::bicubic_direct(big, 10, 6)) < 1e-6);
  CHECK(max_diff(bicubic_resize(big, 17, 31), oracle::bicubic_direct(big, 17, 31)) < 1e-6);

  CHECK(oracle::keys_cubic(0.3) == doctest::Approx(cubic_kernel(0.3)).epsilon(1e-15));
  CHECK(oracle::keys_cubic(1.7) == doctest::Approx(cubic_kernel(1.7)).epsilon(1e-15));
}

TEST_CASE("make_pair: sizes, scale one, composition, alignment") {
  Rng rng(5);
  const Image wide = oracle::random_image(90, 70, rng);
  const ImagePair same = make_pair(wide, 32, 1);
  CHECK(max_diff(same.lr_up, same.hr) < 1e-6);

  const Image photo = synth_toy_image(600, rng);
  const ImagePair p = make_pair(photo, 512, 8);
  CHECK(p.lr.width == 64);
  CHECK(p.lr.height == 64);
  CHECK(p.hr.width == 512);
  CHECK(p.lr_up.width == 512);
  CHECK(p.lr == bicubic_resize(p.hr, 64, 64));
  CHECK(p.lr_up == bicubic_resize(bicubic_resize(p.hr, 64, 64), 512, 512));
  CHECK(p.hr == bicubic_resize(center_crop_square(photo), 512, 512));

  const Image square = center_crop_square(wide);
  CHECK(square.width == 70);
  CHECK(square.height == 70);
  CHECK(square.at(0, 0, 1) == wide.at(10, 0, 1));
}

TEST_CASE("augment: involution, shared flips, reproducible") {
  Rng rng(6);
  const ImagePair p = make_pair(oracle::random_image(32, 32, rng), 16, 4);
  CHECK(flip_horizontal(flip_horizontal(p.hr)) == p.hr);
  CHECK(flip_vertical(flip_vertical(p.hr)) == p.hr);
  CHECK(flip_horizontal(p.hr).at(0, 3, 2) == p.hr.at(15, 3, 2));
  CHECK(flip_vertical(p.hr).at(2, 0, 0) == p.hr.at(2, 15, 0));

  Rng a(7), b(7), replay(7);
  int seen[4] = {0, 0, 0, 0};
  for (int i = 0; i < 400; ++i) {
    const ImagePair x = augment(p, a);
    const ImagePair y = augment(p, b);
    CHECK(x.hr == y.hr);
    const bool h = replay.bernoulli(0.5);
    const bool v = replay.bernoulli(0.5);
    auto undo = [&](Image img) {
      if (v) img = flip_vertical(img);
      if (h) img = flip_horizontal(img);
      return img;
    };
    CHECK(undo(x.hr) == p.hr);
    CHECK(undo(x.lr) == p.lr);
    CHECK(undo(x.lr_up) == p.lr_up);
    ++seen[2 * h + v];
  }
  for (int k = 0; k < 4; ++k) CHECK(seen[k] > 60);
}

TEST_CASE("toy dataset: determinism, range, brightness") {
  Rng r1(8), r2(8);
  const auto a = synth_toy_dataset(6, 32, 4, r1);
  const auto b = synth_toy_dataset(6, 32, 4, r2);
  REQUIRE(a.size() == 6);
  CHECK(a.scale_factor == 4);
  CHECK(a.hr_size == 32);
  CHECK(a.items[0].id == "toy-00000");
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.items[i].pair.hr == b.items[i].pair.hr);
    CHECK(a.items[i].pair.lr.width == 8);
  }

  Rng rng(9);
  double total = 0.0;
  bool in_range = true;
  for (int i = 0; i < 1000; ++i) {
    const Image img = synth_toy_image(32, rng);
    double s = 0.0;
    for (float v : img.pixels) {
      in_range = in_range && v >= 0.0f && v <= 1.0f;
      s += v;
    }
    total += s / img.pixels.size();
  }
  CHECK(in_range);
  const double mean = total / 1000.0;
  MESSAGE("toy mean brightness " << mean);
  CHECK(mean >= 0.4);
  CHECK(mean <= 0.6);
}

TEST_CASE("preprocess_corpus: kept, cropped, rejected, deterministic manifest") {
  const fs::path raw = scratch("raw"), out1 = scratch("out1"), out2 = scratch("out2");
  fs::create_directories(raw / "polyps");
  fs::create_directories(raw / "ulcer");
  for (int i = 0; i < 6; ++i) save_image(tissue(96, 80, 10 + i), raw / "polyps" / ("p" + std::to_string(i) + ".png"));
  Image dirty = tissue(96, 80, 20);
  paint(dirty, 0, 66, 19, 14, 0.0f, 1.0f, 0.0f);
  save_image(dirty, raw / "ulcer" / "dirty.png");
  Image swamped = tissue(96, 80, 21);
  paint(swamped, 0, 20, 70, 60, 0.0f, 1.0f, 0.0f);
  save_image(swamped, raw / "ulcer" / "swamped.png");
  save_image(tissue(20, 20, 22), raw / "ulcer" / "small.png");

  PreprocessOptions opt;
  opt.hr_size = 32;
  opt.scale = 4;
  opt.val_fraction = 0.25;
  opt.seed = 3;
  const auto rows = preprocess_corpus(raw, out1, opt);
  std::map<std::string, std::string> action;
  for (const auto& r : rows) action[r.id] = r.action;
  CHECK(rows.size() == 9);
  CHECK(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.action == "kept"; }) == 6);
  CHECK(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.action == "cropped"; }) == 1);
  CHECK(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.action == "rejected-area"; }) == 1);
  CHECK(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.action == "rejected-small"; }) == 1);

  const auto train = list_images(out1 / "train");
  const auto val = list_images(out1 / "val");
  CHECK(train.size() + val.size() == 7);
  CHECK(val.size() == 2);
  for (const auto& f : train) {
    const Image img = load_image(f);
    CHECK(img.width == 32);
    CHECK_FALSE(detect_green_block(img).has_value());
  }
  CHECK(fs::exists(out1 / "manifest.tsv"));
  CHECK(fs::exists(out1 / "preprocess_report.tsv"));

  preprocess_corpus(raw, out2, opt);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string{std::istreambuf_iterator<char>(in), {}};
  };
  CHECK(slurp(out1 / "manifest.tsv") == slurp(out2 / "manifest.tsv"));
  CHECK(slurp(out1 / "preprocess_report.tsv") == slurp(out2 / "preprocess_report.tsv"));

  const auto loaded = load_corpus(out1, Split::Train, 32, 4);
  CHECK(loaded.size() == train.size());
  CHECK(loaded.items[0].pair.lr.width == 8);
  CHECK_FALSE(loaded.items[0].label.empty());

  const fs::path empty = scratch("empty");
  CHECK_THROWS_AS(preprocess_corpus(empty, scratch("out3"), opt), IoError);
}
