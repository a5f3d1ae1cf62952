#include "sr3/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>

#include "sr3/errors.hpp"

namespace sr3 {

Hsv rgb_to_hsv(double r, double g, double b) {
  const double hi = std::max({r, g, b});
  const double lo = std::min({r, g, b});
  const double delta = hi - lo;
  Hsv out{0.0, hi > 0.0 ? delta / hi : 0.0, hi};
  if (delta <= 0.0) return out;
  double h;
  if (hi == r) {
    h = 60.0 * std::fmod((g - b) / delta, 6.0);
  } else if (hi == g) {
    h = 60.0 * ((b - r) / delta + 2.0);
  } else {
    h = 60.0 * ((r - g) / delta + 4.0);
  }
  if (h < 0.0) h += 360.0;
  out.h = h;
  return out;
}

std::optional<GreenBlock> detect_green_block(const Image& img, const GreenThresholds& th) {
  const int w = img.width, h = img.height;
  const auto count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<std::uint8_t> mask(count, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto hsv = rgb_to_hsv(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
      if (hsv.h >= th.hue_min && hsv.h <= th.hue_max && hsv.s >= th.sat_min &&
          hsv.v >= th.val_min) {
        mask[static_cast<std::size_t>(y) * w + x] = 1;
      }
    }
  }

  std::vector<int> label(count, -1);
  long best_area = 0;
  Box best_box;
  double best_cx = 0.0, best_cy = 0.0;
  std::queue<std::size_t> frontier;
  int next_label = 0;
  for (std::size_t start = 0; start < count; ++start) {
    if (!mask[start] || label[start] >= 0) continue;
    const int id = next_label++;
    label[start] = id;
    frontier.push(start);
    long area = 0;
    double sx = 0.0, sy = 0.0;
    Box box{w, h, -1, -1};
    while (!frontier.empty()) {
      const std::size_t idx = frontier.front();
      frontier.pop();
      const int x = static_cast<int>(idx % w), y = static_cast<int>(idx / w);
      ++area;
      sx += x;
      sy += y;
      box = {std::min(box.x0, x), std::min(box.y0, y), std::max(box.x1, x), std::max(box.y1, y)};
      const std::pair<int, int> steps[] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
      for (auto [dx, dy] : steps) {
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
        if (mask[nidx] && label[nidx] < 0) {
          label[nidx] = id;
          frontier.push(nidx);
        }
      }
    }
    if (area > best_area) {
      best_area = area;
      best_box = box;
      best_cx = sx / area;
      best_cy = sy / area;
    }
  }

  if (best_area == 0) return std::nullopt;
  if (static_cast<double>(best_area) < th.min_area_fraction * static_cast<double>(count)) {
    return std::nullopt;
  }
  // Pixel centres: bottom-left means left of the vertical midline, below the horizontal one.
  const bool left = best_cx + 0.5 < w / 2.0;
  const bool bottom = best_cy + 0.5 >= h / 2.0;
  if (!left || !bottom) return std::nullopt;
  return GreenBlock{best_box, best_area, std::move(mask)};
}

std::string to_string(CleanAction action) {
  switch (action) {
    case CleanAction::Kept:
      return "kept";
    case CleanAction::Cropped:
      return "cropped";
    case CleanAction::RejectedArea:
      return "rejected-area";
  }
  return "unknown";
}

CleanResult clean_image(const Image& img, const GreenThresholds& th, double min_keep_fraction) {
  const auto block = detect_green_block(img, th);
  if (!block) return {CleanAction::Kept, img, std::nullopt};
  const Box& b = block->box;
  const int w = img.width, h = img.height;
  // Full-width or full-height strips on each side of the block.
  std::vector<Box> candidates;
  if (b.y0 > 0) candidates.push_back({0, 0, w - 1, b.y0 - 1});
  if (b.x1 < w - 1) candidates.push_back({b.x1 + 1, 0, w - 1, h - 1});
  if (b.y1 < h - 1) candidates.push_back({0, b.y1 + 1, w - 1, h - 1});
  if (b.x0 > 0) candidates.push_back({0, 0, b.x0 - 1, h - 1});
  if (candidates.empty()) return {CleanAction::RejectedArea, {}, std::nullopt};
  const Box best = *std::max_element(candidates.begin(), candidates.end(),
                                      [](const Box& a, const Box& c) { return a.area() < c.area(); });
  const double kept = static_cast<double>(best.area()) / (static_cast<double>(w) * h);
  if (kept < min_keep_fraction) return {CleanAction::RejectedArea, {}, best};
  return {CleanAction::Cropped, crop(img, best.x0, best.y0, best.width(), best.height()), best};
}

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  const double ax = std::abs(x);
  if (ax <= 1.0) return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
  if (ax < 2.0) return ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a;
  return 0.0;
}

namespace {

struct Taps {
  std::vector<int> start;      // first source index per output sample
  std::vector<int> count;      // taps per output sample
  std::vector<int> index;      // clamped source indices, flattened
  std::vector<double> weight;  // normalised weights, flattened
  std::vector<std::size_t> offset;
};

Taps make_taps(int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  const double stretch = std::max(scale, 1.0);
  const double radius = 2.0 * stretch;
  Taps taps;
  for (int i = 0; i < out_size; ++i) {
    const double centre = (i + 0.5) * scale - 0.5;
    const int first = static_cast<int>(std::ceil(centre - radius));
    const int last = static_cast<int>(std::floor(centre + radius));
    taps.offset.push_back(taps.index.size());
    double total = 0.0;
    const std::size_t begin = taps.weight.size();
    for (int j = first; j <= last; ++j) {
      const double wgt = cubic_kernel((j - centre) / stretch);
      if (wgt == 0.0) continue;
      taps.index.push_back(std::clamp(j, 0, in_size - 1));
      taps.weight.push_back(wgt);
      total += wgt;
    }
    for (std::size_t k = begin; k < taps.weight.size(); ++k) taps.weight[k] /= total;
    taps.count.push_back(static_cast<int>(taps.weight.size() - begin));
  }
  taps.offset.push_back(taps.index.size());
  return taps;
}

}  // namespace

Image bicubic_resize(const Image& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw ShapeError("bicubic_resize: output dimensions must be >= 1");
  const Taps horiz = make_taps(img.width, out_w);
  const Taps vert = make_taps(img.height, out_h);
  constexpr int C = Image::kChannels;

  std::vector<double> rows(static_cast<std::size_t>(img.height) * out_w * C, 0.0);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < out_w; ++x) {
      for (std::size_t k = horiz.offset[x]; k < horiz.offset[x + 1]; ++k) {
        const double wgt = horiz.weight[k];
        for (int c = 0; c < C; ++c) {
          rows[(static_cast<std::size_t>(y) * out_w + x) * C + c] +=
              wgt * img.at(horiz.index[k], y, c);
        }
      }
    }
  }
  Image out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t k = vert.offset[y]; k < vert.offset[y + 1]; ++k) {
          acc += vert.weight[k] * rows[(static_cast<std::size_t>(vert.index[k]) * out_w + x) * C + c];
        }
        out.at(x, y, c) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Image center_crop_square(const Image& img) {
  const int side = std::min(img.width, img.height);
  return crop(img, (img.width - side) / 2, (img.height - side) / 2, side, side);
}

ImagePair make_pair(const Image& img, int hr_size, int scale) {
  if (hr_size < 1 || scale < 1 || hr_size % scale != 0) {
    throw ShapeError("make_pair: hr_size " + std::to_string(hr_size) +
                     " must be a positive multiple of scale " + std::to_string(scale));
  }
  if (img.width < hr_size || img.height < hr_size) {
    throw ShapeError("make_pair: image " + std::to_string(img.width) + "x" +
                     std::to_string(img.height) + " smaller than hr_size " + std::to_string(hr_size));
  }
  ImagePair pair;
  pair.hr = bicubic_resize(center_crop_square(img), hr_size, hr_size);
  pair.lr = bicubic_resize(pair.hr, hr_size / scale, hr_size / scale);
  pair.lr_up = bicubic_resize(pair.lr, hr_size, hr_size);
  return pair;
}

ImagePair augment(const ImagePair& pair, Rng& rng) {
  ImagePair out = pair;
  if (rng.bernoulli(0.5)) {
    out.lr = flip_horizontal(out.lr);
    out.hr = flip_horizontal(out.hr);
    out.lr_up = flip_horizontal(out.lr_up);
  }
  if (rng.bernoulli(0.5)) {
    out.lr = flip_vertical(out.lr);
    out.hr = flip_vertical(out.hr);
    out.lr_up = flip_vertical(out.lr_up);
  }
  return out;
}

Image synth_toy_image(int size, Rng& rng) {
  const auto uni = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  constexpr double pi = std::numbers::pi;

  const double base[3] = {0.62 + uni(-0.08, 0.08), 0.45 + uni(-0.06, 0.06), 0.40 + uni(-0.06, 0.06)};

  struct Wave {
    double amp, kx, ky, phase, gain[3];
  };
  std::vector<Wave> waves(static_cast<std::size_t>(rng.uniform_int(3, 6)));
  for (auto& wv : waves) {
    wv.amp = uni(0.03, 0.09);
    const double freq = uni(0.5, 3.0) * 2.0 * pi;
    const double angle = uni(0.0, pi);
    wv.kx = freq * std::cos(angle);
    wv.ky = freq * std::sin(angle);
    wv.phase = uni(0.0, 2.0 * pi);
    wv.gain[0] = 1.0;
    wv.gain[1] = uni(0.6, 1.0);
    wv.gain[2] = uni(0.5, 0.9);
  }

  struct Blob {
    double cx, cy, rx, ry, cos_t, sin_t, soft, delta[3];
  };
  std::vector<Blob> blobs(static_cast<std::size_t>(rng.uniform_int(1, 3)));
  for (auto& bl : blobs) {
    bl.cx = uni(0.15, 0.85);
    bl.cy = uni(0.15, 0.85);
    bl.rx = uni(0.08, 0.25);
    bl.ry = uni(0.08, 0.25);
    const double theta = uni(0.0, pi);
    bl.cos_t = std::cos(theta);
    bl.sin_t = std::sin(theta);
    bl.soft = uni(0.03, 0.08);
    const double magnitude = uni(0.08, 0.18) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    if (rng.bernoulli(0.5)) {
      // Reddish lesion: shifts red against green/blue.
      bl.delta[0] = magnitude;
      bl.delta[1] = -0.5 * magnitude;
      bl.delta[2] = -0.5 * magnitude;
    } else {
      bl.delta[0] = bl.delta[1] = bl.delta[2] = magnitude;
    }
  }

  Image img(size, size);
  for (int y = 0; y < size; ++y) {
    const double v = (y + 0.5) / size;
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size;
      double px[3] = {base[0], base[1], base[2]};
      for (const auto& wv : waves) {
        const double s = wv.amp * std::sin(wv.kx * u + wv.ky * v + wv.phase);
        for (int c = 0; c < 3; ++c) px[c] += s * wv.gain[c];
      }
      for (const auto& bl : blobs) {
        const double du = u - bl.cx, dv = v - bl.cy;
        const double a = (du * bl.cos_t + dv * bl.sin_t) / bl.rx;
        const double b = (-du * bl.sin_t + dv * bl.cos_t) / bl.ry;
        const double dist = std::sqrt(a * a + b * b);
        // Smooth step from 1 inside to 0 outside, width set by softness.
        const double inside = 1.0 / (1.0 + std::exp((dist - 1.0) / bl.soft * std::min(bl.rx, bl.ry)));
        for (int c = 0; c < 3; ++c) px[c] += inside * bl.delta[c];
      }
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>(std::clamp(px[c], 0.0, 1.0));
    }
  }
  return img;
}

}  // namespace sr3
