#pragma once

// WeightFileV1, little-endian throughout:
//
//   "GMARW001"                                  8 bytes
//   image_size patch_size embed_dim num_layers  7 x u32
//   num_heads mlp_dim num_classes
//   entry count                                 u32
//   per entry:
//     name length, name bytes (UTF-8)           u32 + bytes
//     rank, dims                                u32 + rank x u32
//     values, row-major                         numel x f32
//
// Parameters are computed in f64 and stored as f32.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gmar/vit.hpp"

namespace gmar {

inline constexpr char kWeightMagic[8] = {'G', 'M', 'A', 'R', 'W', '0', '0', '1'};

std::vector<std::uint8_t> encode_weights(const ViTModel& model);
/// Throws FormatError: kBadMagic, kTruncated, kInvalidConfig or kShapeMismatch.
ViTModel decode_weights(std::span<const std::uint8_t> bytes);

void save_weights(const ViTModel& model, const std::filesystem::path& path);
ViTModel load_weights(const std::filesystem::path& path);

/// Parameters rounded through f32, i.e. what a save/load round trip yields.
ModelParams quantize_f32(const ModelParams& params);

}  // namespace gmar
