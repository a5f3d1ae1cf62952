#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "sr3/errors.hpp"
#include "sr3/imaging.hpp"
#include "sr3/metrics.hpp"

using namespace sr3;
namespace fs = std::filesystem;

namespace {

Image constant(int w, int h, float v) {
  Image img(w, h);
  std::fill(img.pixels.begin(), img.pixels.end(), v);
  return img;
}

Image noisy(const Image& img, double sigma, Rng& rng) {
  Image out = img;
  for (auto& v : out.pixels) v = float(v + sigma * rng.gaussian());
  return out;
}

std::vector<ImageTriplet> synthetic_triplets(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ImageTriplet> out;
  for (int i = 0; i < n; ++i) {
    const ImagePair p = make_pair(synth_toy_image(24, rng), 24, 4);
    Image sr = noisy(p.hr, 0.02 + 0.01 * i, rng);
    for (auto& v : sr.pixels) v = std::clamp(v, 0.0f, 1.0f);
    out.push_back({"t" + std::to_string(i), p.lr, sr, p.hr});
  }
  return out;
}

double luma_mean(const Image& img) {
  double s = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      s += 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
  return s / (img.width * img.height);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("psnr: sentinel, formula collapse, direct oracle, errors") {
  Rng rng(1);
  const Image a = oracle::random_image(8, 6, rng);
  CHECK(psnr(a, a) == kPsnrInfinity);
  CHECK(format_metric(psnr(a, a)) == "inf");
  CHECK(psnr(constant(4, 4, 0.0f), constant(4, 4, 255.0f), 255.0) == doctest::Approx(0.0).epsilon(1e-12));
  const double expect = 10.0 * std::log10(255.0 * 255.0 / (128.0 * 128.0));
  CHECK(std::abs(psnr(constant(4, 4, 0.0f), constant(4, 4, 128.0f), 255.0) - expect) < 1e-12);
  CHECK(std::abs(expect - 5.987) < 1e-3);
  const Image b = oracle::random_image(8, 6, rng);
  CHECK(std::abs(psnr(a, b) - oracle::psnr(a, b)) < 1e-12);
  CHECK_THROWS_AS(psnr(a, oracle::random_image(6, 8, rng)), ShapeError);
}

TEST_CASE("psnr decreases as noise grows") {
  Rng rng(2);
  const Image clean = synth_toy_image(32, rng);
  double prev = kPsnrInfinity;
  for (double sigma : {0.01, 0.05, 0.1}) {
    const double p = psnr(clean, noisy(clean, sigma, rng));
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("ssim: self, symmetry, constant closed form, windowed oracle") {
  Rng rng(3);
  const Image a = oracle::random_image(20, 17, rng);
  const Image b = oracle::random_image(20, 17, rng);
  CHECK(ssim(a, a) == 1.0);
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-12);
  CHECK(std::abs(ssim(a, b) - oracle::ssim(a, b)) < 1e-9);
  const Image smooth = synth_toy_image(24, rng);
  const Image blurred = bicubic_resize(bicubic_resize(smooth, 6, 6), 24, 24);
  CHECK(std::abs(ssim(smooth, blurred) - oracle::ssim(smooth, blurred)) < 1e-9);

  const double c1 = 0.01 * 0.01;
  const double closed = (2 * 0.2 * 0.4 + c1) / (0.2 * 0.2 + 0.4 * 0.4 + c1);
  CHECK(std::abs(ssim(constant(16, 16, 0.2f), constant(16, 16, 0.4f)) - closed) < 1e-7);
  // Exact float representations of the constants for the 1e-10 closed form.
  const double lo = double(0.2f), hi = double(0.4f);
  CHECK(std::abs(ssim(constant(16, 16, 0.2f), constant(16, 16, 0.4f)) -
                 (2 * lo * hi + c1) / (lo * lo + hi * hi + c1)) < 1e-10);

  for (int trial = 0; trial < 20; ++trial) {
    const Image x = oracle::random_image(12, 12, rng);
    const Image y = trial % 2 ? noisy(x, 0.3, rng) : oracle::random_image(12, 12, rng);
    const double s = ssim(x, y);
    CHECK(s >= -1.0);
    CHECK(s < 1.0 - 1e-9);
  }
  Image inverted = a;
  for (auto& v : inverted.pixels) v = 1.0f - v;
  CHECK(ssim(a, inverted) < 0.0);

  CHECK_THROWS_AS(ssim(constant(8, 8, 0.5f), constant(8, 8, 0.5f)), ShapeError);
  CHECK_THROWS_AS(ssim(a, oracle::random_image(20, 18, rng)), ShapeError);
}

TEST_CASE("brightness_contrast: constant, two-point, recomputation") {
  const auto grey = brightness_contrast(constant(5, 5, 0.5f));
  CHECK(grey.mean == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::abs(grey.stddev) < 1e-12);

  Image split(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) split.at(x, y, c) = x < 2 ? 0.0f : 1.0f;
  const auto bw = brightness_contrast(split);
  CHECK(std::abs(bw.mean - 0.5) < 1e-12);
  CHECK(std::abs(bw.stddev - 0.5) < 1e-12);

  Rng rng(4);
  const Image r = oracle::random_image(9, 11, rng);
  const double m = luma_mean(r);
  double var = 0.0;
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) {
      const double l = 0.299 * r.at(x, y, 0) + 0.587 * r.at(x, y, 1) + 0.114 * r.at(x, y, 2);
      var += (l - m) * (l - m);
    }
  const auto got = brightness_contrast(r);
  CHECK(std::abs(got.mean - m) < 1e-12);
  CHECK(std::abs(got.stddev - std::sqrt(var / (r.width * r.height))) < 1e-12);
}

TEST_CASE("eda_report: identical SR, single triplet, row oracles, permutation") {
  auto same = synthetic_triplets(3, 5);
  for (auto& t : same) t.sr = t.hr;
  const auto perfect = eda_report(same, {});
  CHECK(perfect.mean_ssim == 1.0);
  for (const auto& r : perfect.rows) CHECK(r.psnr_db == kPsnrInfinity);

  const auto one = eda_report(synthetic_triplets(1, 6), {});
  CHECK(one.mean_psnr == one.rows[0].psnr_db);
  CHECK(one.median_psnr == one.rows[0].psnr_db);
  CHECK(one.mean_ssim == one.rows[0].ssim);

  const auto ten = synthetic_triplets(10, 7);
  const fs::path dir = fs::temp_directory_path() / "sr3_test_metrics_eda";
  fs::remove_all(dir);
  const auto report = eda_report(ten, dir);
  REQUIRE(report.rows.size() == 10);
  double mean_p = 0.0, mean_s = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(report.rows[i].id == ten[i].id);
    CHECK(std::abs(report.rows[i].psnr_db - oracle::psnr(ten[i].sr, ten[i].hr)) < 1e-9);
    CHECK(std::abs(report.rows[i].ssim - oracle::ssim(ten[i].sr, ten[i].hr)) < 1e-9);
    mean_p += report.rows[i].psnr_db / 10;
    mean_s += report.rows[i].ssim / 10;
  }
  CHECK(std::abs(report.mean_psnr - mean_p) < 1e-9);
  CHECK(std::abs(report.mean_ssim - mean_s) < 1e-9);
  long total = 0;
  for (long c : report.brightness.count_hr) total += c;
  CHECK(total == 10);
  CHECK(report.brightness.count_sr.size() == std::size_t(kHistogramBins));
  for (const char* f : {"report.tsv", "summary.tsv", "hist_brightness.tsv", "hist_contrast.tsv",
                        "hist_brightness.png", "hist_contrast.png"}) {
    INFO(std::string(f));
    CHECK(fs::exists(dir / f));
  }
  const Image plot = load_image(dir / "hist_brightness.png");
  CHECK(plot.width > 100);

  auto shuffled = ten;
  std::reverse(shuffled.begin(), shuffled.end());
  std::swap(shuffled[2], shuffled[7]);
  const fs::path dir2 = fs::temp_directory_path() / "sr3_test_metrics_eda2";
  fs::remove_all(dir2);
  const auto permuted = eda_report(shuffled, dir2);
  CHECK(std::abs(permuted.mean_psnr - report.mean_psnr) < 1e-9);
  CHECK(permuted.median_psnr == report.median_psnr);
  CHECK(std::abs(permuted.mean_ssim - report.mean_ssim) < 1e-9);
  CHECK(permuted.median_ssim == report.median_ssim);
  CHECK(permuted.brightness.count_sr == report.brightness.count_sr);
  CHECK(permuted.contrast.count_hr == report.contrast.count_hr);
  CHECK(slurp(dir / "hist_contrast.tsv") == slurp(dir2 / "hist_contrast.tsv"));

  CHECK_THROWS(eda_report({}, {}));
}
