#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace sr3 {

/// Three-channel image in working form: interleaved RGB floats in [0, 1],
/// row-major from the top-left corner.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, float fill = 0.0f);

  static constexpr int kChannels = 3;

  bool empty() const { return pixels.empty(); }
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
            static_cast<std::size_t>(x)) * kChannels + static_cast<std::size_t>(c);
  }
  float& at(int x, int y, int c) { return pixels[index(x, y, c)]; }
  float at(int x, int y, int c) const { return pixels[index(x, y, c)]; }

  bool operator==(const Image& other) const = default;
};

/// 8-bit storage value to working form and back (rounding to nearest).
float from_u8(std::uint8_t v);
std::uint8_t to_u8(float v);

/// Decodes PNG (8 or 16 bit, any colour type) or JPEG, chosen by content
/// signature. Throws IoError naming the path on failure.
Image load_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG. Values are clamped to [0, 1] and rounded.
void save_image(const Image& img, const std::filesystem::path& path);

/// Horizontal (left-right) and vertical (top-bottom) mirror images.
Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);

Image crop(const Image& img, int x0, int y0, int w, int h);

}  // namespace sr3
