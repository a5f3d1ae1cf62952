#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "sr3/image.hpp"

namespace sr3 {

/// PSNR of identical images; printed as "inf".
inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

/// 10 log10(max_val^2 / MSE) over every pixel and channel.
double psnr(const Image& a, const Image& b, double max_val = 1.0);

struct SsimOptions {
  double k1 = 0.01;
  double k2 = 0.03;
  int window = 11;
  double sigma = 1.5;
  double max_val = 1.0;
};

/// Mean SSIM with Gaussian-weighted local statistics over all window
/// positions fully inside the image, averaged over channels.
double ssim(const Image& a, const Image& b, const SsimOptions& options = {});

struct BrightnessContrast {
  double mean;
  double stddev;  // population
};
/// Statistics of the luma image 0.299 R + 0.587 G + 0.114 B.
BrightnessContrast brightness_contrast(const Image& img);

/// Formats a metric value, printing infinities as "inf".
std::string format_metric(double value);

struct ImageTriplet {
  std::string id;
  Image lr;
  Image sr;
  Image hr;
};

struct MetricRow {
  std::string id;
  double psnr_db;
  double ssim;
};

struct Histogram {
  double low = 0.0, high = 1.0;
  std::vector<long> count_sr;
  std::vector<long> count_hr;
  double bin_low(std::size_t i) const { return low + (high - low) * i / count_sr.size(); }
  double bin_high(std::size_t i) const { return low + (high - low) * (i + 1) / count_sr.size(); }
};

inline constexpr int kHistogramBins = 64;

struct MetricReport {
  std::vector<MetricRow> rows;
  double mean_psnr = 0.0, median_psnr = 0.0;
  double mean_ssim = 0.0, median_ssim = 0.0;
  Histogram brightness;  // 64 bins over [0, 1]
  Histogram contrast;    // 64 bins over [0, 0.5]
};

/// Per-row metrics and aggregates only (no histograms, no files).
MetricReport summarize(std::vector<MetricRow> rows);

/// SR-vs-HR metrics for every triplet, brightness/contrast histograms of the
/// SR and HR populations. When out_dir is non-empty, writes report.tsv,
/// summary.tsv, hist_brightness.tsv, hist_contrast.tsv and a PNG plot of each
/// histogram.
MetricReport eda_report(const std::vector<ImageTriplet>& triplets,
                        const std::filesystem::path& out_dir);

void write_report_tsv(const MetricReport& report, const std::filesystem::path& out_dir);

/// Grouped bar chart of a two-population histogram.
Image render_histogram(const Histogram& hist, const std::string& title);

}  // namespace sr3
