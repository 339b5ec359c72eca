#include "gmar/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "gmar/error.hpp"

namespace gmar {

Image::Image(std::size_t width, std::size_t height, std::vector<double> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (pixels_.size() != width * height * kChannels) {
    throw DimensionError("image " + std::to_string(width) + "x" + std::to_string(height) + " needs " +
                         std::to_string(width * height * kChannels) + " values, got " +
                         std::to_string(pixels_.size()));
  }
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::size_t read_uint(const char* what) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size()) throw FormatError(FormatErrorKind::kTruncated, pos_, std::string("missing ") + what);
    if (!std::isdigit(bytes_[pos_])) {
      throw FormatError(FormatErrorKind::kBadMagic, pos_, std::string("expected digits for ") + what);
    }
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > (1u << 24)) throw FormatError(FormatErrorKind::kUnsupported, pos_, std::string(what) + " too large");
      ++pos_;
    }
    return value;
  }

  void expect_single_space() {
    if (pos_ >= bytes_.size()) throw FormatError(FormatErrorKind::kTruncated, pos_, "header ends before pixel data");
    if (!std::isspace(bytes_[pos_])) throw FormatError(FormatErrorKind::kBadMagic, pos_, "expected whitespace after maxval");
    ++pos_;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

double sample_clamped(double coord, std::size_t extent, std::size_t& i0, std::size_t& i1) {
  const double hi = static_cast<double>(extent - 1);
  const double c = std::clamp(coord, 0.0, hi);
  i0 = static_cast<std::size_t>(std::floor(c));
  i1 = std::min(i0 + 1, extent - 1);
  return c - static_cast<double>(i0);
}

struct Tap {
  std::size_t i0;
  std::size_t i1;
  double t;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    Tap& tap = taps[i];
    tap.t = sample_clamped((static_cast<double>(i) + 0.5) * scale - 0.5, in, tap.i0, tap.i1);
  }
  return taps;
}

}  // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw FormatError(FormatErrorKind::kBadMagic, 0, "not a binary PPM (P6)");
  }
  HeaderReader reader(bytes.subspan(2));
  const std::size_t width = reader.read_uint("width");
  const std::size_t height = reader.read_uint("height");
  const std::size_t maxval = reader.read_uint("maxval");
  if (maxval != 255) {
    throw FormatError(FormatErrorKind::kUnsupported, 2 + reader.offset(),
                      "maxval " + std::to_string(maxval) + " (only 255 is supported)");
  }
  if (width == 0 || height == 0) throw FormatError(FormatErrorKind::kUnsupported, 2 + reader.offset(), "empty image");
  reader.expect_single_space();
  const std::size_t start = 2 + reader.offset();
  const std::size_t needed = width * height * Image::kChannels;
  if (bytes.size() - start < needed) {
    throw FormatError(FormatErrorKind::kTruncated, bytes.size(),
                      "pixel data holds " + std::to_string(bytes.size() - start) + " of " + std::to_string(needed) +
                          " bytes");
  }
  std::vector<double> pixels(needed);
  for (std::size_t i = 0; i < needed; ++i) pixels[i] = static_cast<double>(bytes[start + i]) / 255.0;
  return Image(width, height, std::move(pixels));
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.pixels().size());
  for (double v : image.pixels()) out.push_back(quantize(v));
  return out;
}

Image load_image_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::kIo, 0, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ppm(bytes);
}

void save_image_ppm(const Image& image, const std::filesystem::path& path) {
  const auto bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParameterError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ParameterError("write failed for " + path.string());
}

Image resize_bilinear(const Image& image, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw ParameterError("resize target must be at least 1x1");
  if (width == image.width() && height == image.height()) return image;
  const auto xs = bilinear_taps(image.width(), width);
  const auto ys = bilinear_taps(image.height(), height);
  Image out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    const Tap& ty = ys[y];
    for (std::size_t x = 0; x < width; ++x) {
      const Tap& tx = xs[x];
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        const double top = (1.0 - tx.t) * image.at(tx.i0, ty.i0, c) + tx.t * image.at(tx.i1, ty.i0, c);
        const double bottom = (1.0 - tx.t) * image.at(tx.i0, ty.i1, c) + tx.t * image.at(tx.i1, ty.i1, c);
        out.at(x, y, c) = (1.0 - ty.t) * top + ty.t * bottom;
      }
    }
  }
  return out;
}

Grid resize_bilinear(const Grid& grid, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw ParameterError("resize target must be at least 1x1");
  if (grid.size() == 0) throw DimensionError("cannot resize an empty grid");
  const auto xs = bilinear_taps(static_cast<std::size_t>(grid.cols()), cols);
  const auto ys = bilinear_taps(static_cast<std::size_t>(grid.rows()), rows);
  Grid out(rows, cols);
  for (std::size_t y = 0; y < rows; ++y) {
    const Tap& ty = ys[y];
    for (std::size_t x = 0; x < cols; ++x) {
      const Tap& tx = xs[x];
      const auto g = [&](std::size_t r, std::size_t c) {
        return grid(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      };
      const double top = (1.0 - tx.t) * g(ty.i0, tx.i0) + tx.t * g(ty.i0, tx.i1);
      const double bottom = (1.0 - tx.t) * g(ty.i1, tx.i0) + tx.t * g(ty.i1, tx.i1);
      out(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) = (1.0 - ty.t) * top + ty.t * bottom;
    }
  }
  return out;
}

Image gaussian_blur(const Image& image, double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("blur sigma must be positive");
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (double& w : kernel) w /= total;

  const auto w = static_cast<std::ptrdiff_t>(image.width());
  const auto h = static_cast<std::ptrdiff_t>(image.height());
  const auto clampi = [](std::ptrdiff_t v, std::ptrdiff_t hi) { return std::clamp<std::ptrdiff_t>(v, 0, hi - 1); };

  Image horizontal(image.width(), image.height());
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 image.at(static_cast<std::size_t>(clampi(x + k, w)), static_cast<std::size_t>(y), c);
        }
        horizontal.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c) = acc;
      }

  Image out(image.width(), image.height());
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 horizontal.at(static_cast<std::size_t>(x), static_cast<std::size_t>(clampi(y + k, h)), c);
        }
        out.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c) = acc;
      }
  return out;
}

Image apply_mask(const Image& image, const Grid& mask) {
  if (static_cast<std::size_t>(mask.rows()) != image.height() ||
      static_cast<std::size_t>(mask.cols()) != image.width()) {
    throw DimensionError("mask " + std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()) +
                         " does not match image " + std::to_string(image.height()) + "x" +
                         std::to_string(image.width()));
  }
  Image out = image;
  for (std::size_t y = 0; y < image.height(); ++y)
    for (std::size_t x = 0; x < image.width(); ++x)
      for (std::size_t c = 0; c < Image::kChannels; ++c)
        out.at(x, y, c) *= mask(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x));
  return out;
}

Image horizontal_flip(const Image& image) {
  Image out(image.width(), image.height());
  for (std::size_t y = 0; y < image.height(); ++y)
    for (std::size_t x = 0; x < image.width(); ++x)
      for (std::size_t c = 0; c < Image::kChannels; ++c) out.at(image.width() - 1 - x, y, c) = image.at(x, y, c);
  return out;
}

}  // namespace gmar
