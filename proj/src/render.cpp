#include "gmar/render.hpp"

#include <algorithm>

#include "gmar/error.hpp"

namespace gmar {

Rgb heat_color(double v) {
  const double t = std::clamp(v, 0.0, 1.0);
  return {t, 0.0, 1.0 - t};
}

Rgb diverging_color(double v) {
  const double t = std::clamp(v, -1.0, 1.0);
  if (t < 0.0) return {1.0 + t, 1.0 + t, 1.0};
  return {1.0, 1.0 - t, 1.0 - t};
}

Image render_heatmap(const Grid& map, const Image& base, RenderMode mode) {
  const Grid up = resize_bilinear(map, base.height(), base.width());
  if (static_cast<std::size_t>(up.rows()) != base.height() || static_cast<std::size_t>(up.cols()) != base.width()) {
    throw DimensionError("upsampled map does not match the base image");
  }
  Image out(base.width(), base.height());
  for (std::size_t y = 0; y < base.height(); ++y) {
    for (std::size_t x = 0; x < base.width(); ++x) {
      const double v = up(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x));
      const Rgb color = mode == RenderMode::kDiverging ? diverging_color(v) : heat_color(v);
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        const double value = mode == RenderMode::kOverlay ? 0.5 * base.at(x, y, c) + 0.5 * color[c] : color[c];
        out.at(x, y, c) = std::clamp(value, 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace gmar
