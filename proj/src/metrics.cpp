#include "sr3/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "sr3/errors.hpp"

namespace sr3 {

namespace {

void require_same_dims(const Image& a, const Image& b, const char* op) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeError(std::string(op) + ": dimension mismatch " + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                     std::to_string(b.height));
  }
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double centre = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - centre;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= total;
  return w;
}

// Valid-mode separable filtering of a single-channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int w, int h,
                                 const std::vector<double>& kernel) {
  const int k = static_cast<int>(kernel.size());
  const int ow = w - k + 1, oh = h - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += kernel[i] * plane[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += kernel[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Summation over the sorted values keeps aggregates independent of row order.
double mean_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

}  // namespace

double psnr(const Image& a, const Image& b, double max_val) {
  require_same_dims(a, b, "psnr");
  if (!(max_val > 0.0)) throw ShapeError("psnr: max_val must be positive");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    sq += d * d;
  }
  const double mse = sq / static_cast<double>(a.pixels.size());
  if (mse == 0.0) return kPsnrInfinity;
  return 10.0 * std::log10(max_val * max_val / mse);
}

double ssim(const Image& a, const Image& b, const SsimOptions& options) {
  require_same_dims(a, b, "ssim");
  if (options.window < 1 || a.width < options.window || a.height < options.window) {
    throw ShapeError("ssim: image " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                     " is smaller than the " + std::to_string(options.window) + "-pixel window");
  }
  const double c1 = (options.k1 * options.max_val) * (options.k1 * options.max_val);
  const double c2 = (options.k2 * options.max_val) * (options.k2 * options.max_val);
  const auto kernel = gaussian_window(options.window, options.sigma);
  const int w = a.width, h = a.height;
  const std::size_t count = static_cast<std::size_t>(w) * h;

  double channel_total = 0.0;
  for (int c = 0; c < Image::kChannels; ++c) {
    std::vector<double> x(count), y(count), xx(count), yy(count), xy(count);
    for (std::size_t i = 0; i < count; ++i) {
      x[i] = a.pixels[i * Image::kChannels + c];
      y[i] = b.pixels[i * Image::kChannels + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mu_x = filter_valid(x, w, h, kernel);
    const auto mu_y = filter_valid(y, w, h, kernel);
    const auto e_xx = filter_valid(xx, w, h, kernel);
    const auto e_yy = filter_valid(yy, w, h, kernel);
    const auto e_xy = filter_valid(xy, w, h, kernel);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
      const double mx = mu_x[i], my = mu_y[i];
      const double var_x = e_xx[i] - mx * mx;
      const double var_y = e_yy[i] - my * my;
      const double cov = e_xy[i] - mx * my;
      total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
               ((mx * mx + my * my + c1) * (var_x + var_y + c2));
    }
    channel_total += total / static_cast<double>(mu_x.size());
  }
  return channel_total / Image::kChannels;
}

BrightnessContrast brightness_contrast(const Image& img) {
  const std::size_t count = static_cast<std::size_t>(img.width) * img.height;
  std::vector<double> gray(count);
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const float* px = img.pixels.data() + i * Image::kChannels;
    gray[i] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    total += gray[i];
  }
  const double mean = total / static_cast<double>(count);
  double sq = 0.0;
  for (double g : gray) sq += (g - mean) * (g - mean);
  return {mean, std::sqrt(sq / static_cast<double>(count))};
}

std::string format_metric(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return buf;
}

MetricReport summarize(std::vector<MetricRow> rows) {
  if (rows.empty()) throw ShapeError("summarize: no rows");
  MetricReport report;
  std::vector<double> psnrs, ssims;
  for (const auto& r : rows) {
    psnrs.push_back(r.psnr_db);
    ssims.push_back(r.ssim);
  }
  report.rows = std::move(rows);
  report.mean_psnr = mean_of(psnrs);
  report.median_psnr = median_of(psnrs);
  report.mean_ssim = mean_of(ssims);
  report.median_ssim = median_of(ssims);
  return report;
}

namespace {

std::size_t bin_of(double v, const Histogram& h) {
  const double pos = (v - h.low) / (h.high - h.low) * static_cast<double>(h.count_sr.size());
  const auto last = static_cast<double>(h.count_sr.size() - 1);
  return static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, last));
}

void write_histogram(const Histogram& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "bin_low\tbin_high\tcount_sr\tcount_hr\n";
  char buf[128];
  for (std::size_t i = 0; i < h.count_sr.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f\t%.6f\t%ld\t%ld\n", h.bin_low(i), h.bin_high(i),
                  h.count_sr[i], h.count_hr[i]);
    out << buf;
  }
}

}  // namespace

void write_report_tsv(const MetricReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "report.tsv", std::ios::binary);
    if (!out) throw IoError("cannot write " + (out_dir / "report.tsv").string());
    out << "id\tpsnr_db\tssim\n";
    for (const auto& r : report.rows) {
      out << r.id << '\t' << format_metric(r.psnr_db) << '\t' << format_metric(r.ssim) << '\n';
    }
  }
  std::ofstream out(out_dir / "summary.tsv", std::ios::binary);
  if (!out) throw IoError("cannot write " + (out_dir / "summary.tsv").string());
  out << "statistic\tvalue\n"
      << "count\t" << report.rows.size() << '\n'
      << "mean_psnr_db\t" << format_metric(report.mean_psnr) << '\n'
      << "median_psnr_db\t" << format_metric(report.median_psnr) << '\n'
      << "mean_ssim\t" << format_metric(report.mean_ssim) << '\n'
      << "median_ssim\t" << format_metric(report.median_ssim) << '\n';
}

MetricReport eda_report(const std::vector<ImageTriplet>& triplets,
                        const std::filesystem::path& out_dir) {
  if (triplets.empty()) throw ShapeError("eda_report: no triplets");
  std::vector<MetricRow> rows;
  rows.reserve(triplets.size());
  for (const auto& t : triplets) rows.push_back({t.id, psnr(t.sr, t.hr), ssim(t.sr, t.hr)});
  MetricReport report = summarize(std::move(rows));

  report.brightness = {0.0, 1.0, std::vector<long>(kHistogramBins), std::vector<long>(kHistogramBins)};
  report.contrast = {0.0, 0.5, std::vector<long>(kHistogramBins), std::vector<long>(kHistogramBins)};
  for (const auto& t : triplets) {
    const auto sr = brightness_contrast(t.sr);
    const auto hr = brightness_contrast(t.hr);
    ++report.brightness.count_sr[bin_of(sr.mean, report.brightness)];
    ++report.brightness.count_hr[bin_of(hr.mean, report.brightness)];
    ++report.contrast.count_sr[bin_of(sr.stddev, report.contrast)];
    ++report.contrast.count_hr[bin_of(hr.stddev, report.contrast)];
  }

  if (!out_dir.empty()) {
    write_report_tsv(report, out_dir);
    write_histogram(report.brightness, out_dir / "hist_brightness.tsv");
    write_histogram(report.contrast, out_dir / "hist_contrast.tsv");
    save_image(render_histogram(report.brightness, "BRIGHTNESS"), out_dir / "hist_brightness.png");
    save_image(render_histogram(report.contrast, "CONTRAST"), out_dir / "hist_contrast.png");
  }
  return report;
}

}  // namespace sr3
