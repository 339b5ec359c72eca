#include "gmar/synthetic.hpp"

#include <charconv>

#include "gmar/error.hpp"
#include "gmar/random.hpp"

namespace gmar {

namespace {

LabeledImage make_item(Rng& rng, std::size_t label, std::size_t size) {
  Image image(size, size);
  for (double& v : image.pixels()) v = rng.uniform(0.0, 0.2);

  const std::size_t half = size / 2;
  const auto radius = static_cast<std::ptrdiff_t>(3 + rng.below(3));
  const auto span = static_cast<std::uint64_t>(static_cast<std::ptrdiff_t>(half) - 2 * radius);
  const auto cx = static_cast<std::ptrdiff_t>((label % 2) * half) + radius + static_cast<std::ptrdiff_t>(rng.below(span));
  const auto cy = static_cast<std::ptrdiff_t>((label / 2) * half) + radius + static_cast<std::ptrdiff_t>(rng.below(span));

  for (std::ptrdiff_t y = cy - radius; y <= cy + radius; ++y) {
    for (std::ptrdiff_t x = cx - radius; x <= cx + radius; ++x) {
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) > radius * radius) continue;
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        image.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c) = rng.uniform(0.8, 1.0);
      }
    }
  }
  return {std::move(image), label};
}

}  // namespace

Dataset generate_synthetic(const SyntheticDatasetSpec& spec) {
  if (spec.num_classes != 4) throw ParameterError("the quadrant task has exactly 4 classes");
  // The widest disk (radius 5) needs an 11-px quadrant.
  if (spec.image_size < 22 || spec.image_size % 2 != 0) {
    throw ParameterError("synthetic image size must be even and at least 22");
  }
  Rng rng(spec.seed);
  Dataset out;
  const std::size_t total = spec.num_classes * spec.samples_per_class;
  out.reserve(total);
  for (std::size_t i = 0; i < total; ++i) out.push_back(make_item(rng, i % spec.num_classes, spec.image_size));
  return out;
}

Dataset generate_synthetic(std::uint64_t seed, std::size_t count, std::size_t image_size) {
  SyntheticDatasetSpec spec;
  spec.seed = seed;
  spec.image_size = image_size;
  spec.samples_per_class = (count + spec.num_classes - 1) / spec.num_classes;
  Dataset all = generate_synthetic(spec);
  all.resize(count);
  return all;
}

DatasetRef parse_dataset_ref(std::string_view text) {
  constexpr std::string_view kPrefix = "synthetic:";
  if (text.substr(0, kPrefix.size()) != kPrefix) {
    throw ParameterError("dataset must look like synthetic:SEED:N, got '" + std::string(text) + "'");
  }
  text.remove_prefix(kPrefix.size());
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw ParameterError("dataset must look like synthetic:SEED:N");
  DatasetRef ref;
  const auto seed_text = text.substr(0, colon);
  const auto count_text = text.substr(colon + 1);
  const auto r1 = std::from_chars(seed_text.data(), seed_text.data() + seed_text.size(), ref.seed);
  const auto r2 = std::from_chars(count_text.data(), count_text.data() + count_text.size(), ref.count);
  if (r1.ec != std::errc() || r1.ptr != seed_text.data() + seed_text.size() || r2.ec != std::errc() ||
      r2.ptr != count_text.data() + count_text.size() || ref.count == 0) {
    throw ParameterError("dataset must look like synthetic:SEED:N with N >= 1");
  }
  return ref;
}

std::size_t quadrant_of(std::size_t x, std::size_t y, std::size_t size) {
  return (y >= size / 2 ? 2 : 0) + (x >= size / 2 ? 1 : 0);
}

}  // namespace gmar
