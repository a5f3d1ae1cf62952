#include <algorithm>
#include <array>
#include <cstdio>
#include <map>

#include "sr3/metrics.hpp"

namespace sr3 {

namespace {

// 5x7 bitmap glyphs, one byte per row, bit 4 is the leftmost column.
using Glyph = std::array<std::uint8_t, 7>;

const std::map<char, Glyph>& font() {
  static const std::map<char, Glyph> glyphs = {
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
      {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
      {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
      {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
      {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
      {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
      {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
      {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
      {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
  };
  return glyphs;
}

struct Rgb {
  float r, g, b;
};

void fill_rect(Image& img, int x0, int y0, int x1, int y1, Rgb colour) {
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, img.width - 1);
  y1 = std::min(y1, img.height - 1);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      img.at(x, y, 0) = colour.r;
      img.at(x, y, 1) = colour.g;
      img.at(x, y, 2) = colour.b;
    }
  }
}

void draw_text(Image& img, int x, int y, const std::string& text, int scale, Rgb colour) {
  const auto& glyphs = font();
  for (char ch : text) {
    const auto it = glyphs.find(ch);
    if (it != glyphs.end()) {
      for (int row = 0; row < 7; ++row) {
        for (int col = 0; col < 5; ++col) {
          if (it->second[row] & (0x10 >> col)) {
            fill_rect(img, x + col * scale, y + row * scale, x + (col + 1) * scale - 1,
                      y + (row + 1) * scale - 1, colour);
          }
        }
      }
    }
    x += 6 * scale;
  }
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

Image render_histogram(const Histogram& hist, const std::string& title) {
  constexpr int kWidth = 720, kHeight = 420;
  constexpr int kLeft = 60, kRight = 20, kTop = 50, kBottom = 50;
  constexpr Rgb kInk{0.1f, 0.1f, 0.1f}, kSr{0.2f, 0.4f, 0.8f}, kHr{0.9f, 0.5f, 0.1f};
  Image img(kWidth, kHeight, 1.0f);

  const std::size_t bins = hist.count_sr.size();
  long peak = 1;
  for (std::size_t i = 0; i < bins; ++i) peak = std::max({peak, hist.count_sr[i], hist.count_hr[i]});

  const int plot_w = kWidth - kLeft - kRight;
  const int plot_h = kHeight - kTop - kBottom;
  const int base_y = kTop + plot_h;
  const double bin_w = static_cast<double>(plot_w) / static_cast<double>(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    const int x0 = kLeft + static_cast<int>(i * bin_w);
    const int mid = kLeft + static_cast<int>((i + 0.5) * bin_w);
    const int x1 = kLeft + static_cast<int>((i + 1) * bin_w) - 1;
    const int h_sr = static_cast<int>(static_cast<double>(hist.count_sr[i]) / peak * plot_h);
    const int h_hr = static_cast<int>(static_cast<double>(hist.count_hr[i]) / peak * plot_h);
    if (h_sr > 0) fill_rect(img, x0, base_y - h_sr, mid - 1, base_y - 1, kSr);
    if (h_hr > 0) fill_rect(img, mid, base_y - h_hr, x1, base_y - 1, kHr);
  }

  fill_rect(img, kLeft - 2, kTop, kLeft - 1, base_y + 1, kInk);             // y axis
  fill_rect(img, kLeft - 2, base_y, kLeft + plot_w, base_y + 1, kInk);      // x axis
  for (int tick = 0; tick <= 4; ++tick) {
    const int x = kLeft + tick * plot_w / 4;
    fill_rect(img, x, base_y + 2, x, base_y + 6, kInk);
    draw_text(img, x - 12, base_y + 12, fixed(hist.low + (hist.high - hist.low) * tick / 4.0, 2), 1, kInk);
  }
  draw_text(img, 8, kTop - 4, std::to_string(peak), 1, kInk);
  draw_text(img, 8, base_y - 7, "0", 1, kInk);
  draw_text(img, kLeft, 16, title, 2, kInk);

  fill_rect(img, kWidth - 170, 18, kWidth - 158, 30, kSr);
  draw_text(img, kWidth - 150, 20, "SR", 1, kInk);
  fill_rect(img, kWidth - 100, 18, kWidth - 88, 30, kHr);
  draw_text(img, kWidth - 80, 20, "HR", 1, kInk);
  draw_text(img, 8, kTop - 20, "COUNT", 1, kInk);
  return img;
}

}  // namespace sr3
