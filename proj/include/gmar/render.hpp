#pragma once

#include <array>

#include "gmar/image.hpp"
#include "gmar/linalg.hpp"

namespace gmar {

enum class RenderMode {
  kOverlay,    // 0.5 * base + 0.5 * heat colormap
  kRaw,        // heat colormap only
  kDiverging,  // signed map, blue (-1) -> white (0) -> red (+1)
};

using Rgb = std::array<double, 3>;

/// Linear blue (0) to red (1) ramp; input clamped to [0, 1].
Rgb heat_color(double v);
/// Blue (-1) through white (0) to red (+1); input clamped to [-1, 1].
Rgb diverging_color(double v);

/// Upsamples `map` bilinearly to the base image size and colorizes it. Raw and
/// diverging modes only use `base` for its size.
Image render_heatmap(const Grid& map, const Image& base, RenderMode mode);

}  // namespace gmar
