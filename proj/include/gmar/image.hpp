#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gmar/linalg.hpp"

namespace gmar {

/// RGB image, row-major with channels interleaved, values in [0, 1].
class Image {
 public:
  static constexpr std::size_t kChannels = 3;

  Image() = default;
  Image(std::size_t width, std::size_t height, double fill = 0.0)
      : width_(width), height_(height), pixels_(width * height * kChannels, fill) {}
  Image(std::size_t width, std::size_t height, std::vector<double> pixels);

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::span<const double> pixels() const noexcept { return pixels_; }
  std::span<double> pixels() noexcept { return pixels_; }

  double& at(std::size_t x, std::size_t y, std::size_t c) { return pixels_[(y * width_ + x) * kChannels + c]; }
  double at(std::size_t x, std::size_t y, std::size_t c) const {
    return pixels_[(y * width_ + x) * kChannels + c];
  }

  bool operator==(const Image&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> pixels_;
};

// PPM P6 with maxval 255. Decoding divides by 255; encoding clamps to [0, 1]
// and rounds to the nearest 8-bit level.
Image decode_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const Image& image);
Image load_image_ppm(const std::filesystem::path& path);
void save_image_ppm(const Image& image, const std::filesystem::path& path);

/// Bilinear resampling with half-pixel centers: output pixel i samples the input
/// at (i + 0.5) * in / out - 0.5, clamped to the valid range.
Image resize_bilinear(const Image& image, std::size_t width, std::size_t height);
inline Image resize_bilinear(const Image& image, std::size_t size) { return resize_bilinear(image, size, size); }

/// Single-channel version of the same resampling rule.
Grid resize_bilinear(const Grid& grid, std::size_t rows, std::size_t cols);

/// Separable Gaussian blur with clamp-to-edge borders, kernel radius ceil(3 sigma).
Image gaussian_blur(const Image& image, double sigma);

/// Multiplies every channel of pixel (x, y) by mask(y, x). Mask must match the image size.
Image apply_mask(const Image& image, const Grid& mask);

Image horizontal_flip(const Image& image);

}  // namespace gmar
