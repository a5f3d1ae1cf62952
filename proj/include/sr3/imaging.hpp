#pragma once

#include <optional>
#include <string>

#include "sr3/image.hpp"
#include "sr3/rng.hpp"

namespace sr3 {

/// Inclusive pixel rectangle.
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  long area() const { return static_cast<long>(width()) * height(); }
  bool operator==(const Box&) const = default;
};

struct Hsv {
  double h;  // degrees [0, 360)
  double s;  // [0, 1]
  double v;  // [0, 1]
};
Hsv rgb_to_hsv(double r, double g, double b);

struct GreenThresholds {
  double hue_min = 90.0;
  double hue_max = 150.0;
  double sat_min = 0.4;
  double val_min = 0.2;
  /// Smallest component area, as a fraction of the image, that counts as a block.
  double min_area_fraction = 0.005;
};

struct GreenBlock {
  Box box;
  long area = 0;  // pixels in the component
  std::vector<std::uint8_t> mask;  // width*height, 1 where the pixel is green
};

/// Largest 4-connected component of green pixels, reported only when it is
/// large enough and its centroid lies in the bottom-left quadrant.
std::optional<GreenBlock> detect_green_block(const Image& img, const GreenThresholds& th = {});

enum class CleanAction { Kept, Cropped, RejectedArea };
std::string to_string(CleanAction action);

struct CleanResult {
  CleanAction action = CleanAction::Kept;
  Image image;              // empty when rejected
  std::optional<Box> crop;  // region retained when cropped
};

/// Crops away a detected annotation block: keeps the largest full-width or
/// full-height rectangle disjoint from the block's bounding box, and rejects
/// the image when that keeps less than `min_keep_fraction` of the area.
CleanResult clean_image(const Image& img, const GreenThresholds& th = {},
                        double min_keep_fraction = 0.6);

/// Catmull-Rom (a = -0.5) cubic kernel.
double cubic_kernel(double x);

/// Separable cubic resampling with half-pixel centres and edge clamping.
/// When shrinking, the kernel is stretched by the scale ratio (anti-aliased).
Image bicubic_resize(const Image& img, int out_w, int out_h);

/// Central square of side min(width, height).
Image center_crop_square(const Image& img);

struct ImagePair {
  Image lr;     // hr_size/scale square
  Image hr;     // hr_size square
  Image lr_up;  // lr resized back to hr_size
};

/// Centre-crop to square, resize to hr_size, then down by `scale` and back up.
ImagePair make_pair(const Image& img, int hr_size, int scale);

/// Independently flips the whole pair horizontally and vertically, each with
/// probability 1/2 (two draws from rng, horizontal first).
ImagePair augment(const ImagePair& pair, Rng& rng);

/// Smooth synthetic "mucosa" image: 3-6 oriented sinusoids over a warm base
/// colour plus 1-3 soft-edged elliptical blobs. Values clamped to [0, 1].
Image synth_toy_image(int size, Rng& rng);

}  // namespace sr3
