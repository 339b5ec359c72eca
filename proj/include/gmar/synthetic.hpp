#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "gmar/image.hpp"

namespace gmar {

/// Quadrant-blob classification task. Class k puts a bright disk (channel values
/// in [0.8, 1], radius 3 to 5 px) somewhere inside quadrant k over uniform
/// [0, 0.2] noise. Quadrants are numbered row-major: 0 top-left, 1 top-right,
/// 2 bottom-left, 3 bottom-right.
struct SyntheticDatasetSpec {
  std::size_t num_classes = 4;
  std::size_t samples_per_class = 200;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;
};

struct LabeledImage {
  Image image;
  std::size_t label = 0;
};

using Dataset = std::vector<LabeledImage>;

/// Labels cycle 0, 1, 2, 3, ... so every prefix is as balanced as possible.
Dataset generate_synthetic(const SyntheticDatasetSpec& spec);

/// `count` items from the default spec with the given seed. Item i is the same
/// image for every count > i.
Dataset generate_synthetic(std::uint64_t seed, std::size_t count, std::size_t image_size = 32);

/// Parses "synthetic:SEED:N".
struct DatasetRef {
  std::uint64_t seed = 0;
  std::size_t count = 0;
};
DatasetRef parse_dataset_ref(std::string_view text);

/// Index of the quadrant containing (x, y) in a square image of side `size`.
std::size_t quadrant_of(std::size_t x, std::size_t y, std::size_t size);

}  // namespace gmar
