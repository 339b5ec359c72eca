#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gmar/image.hpp"
#include "gmar/tensor.hpp"

namespace gmar {

struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 4;
  std::size_t num_heads = 4;
  std::size_t mlp_dim = 128;
  std::size_t num_classes = 4;

  /// ViT-L/16 input geometry, kept for shape checks only.
  static ViTConfig reference_geometry();

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;

  std::size_t grid_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid_side() * grid_side(); }
  /// Patch tokens plus the classification token.
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t patch_values() const { return patch_size * patch_size * Image::kChannels; }

  bool operator==(const ViTConfig&) const = default;
};

/// Named parameter tensors, ordered by name.
using ModelParams = std::map<std::string, Tensor>;

/// Expected name and shape of every parameter for `config`.
std::map<std::string, Shape> param_shapes(const ViTConfig& config);

/// Truncated-normal (std 0.02) weights and embeddings, zero biases, unit
/// layernorm scales. Deterministic in `seed`.
ModelParams init_params(const ViTConfig& config, std::uint64_t seed);

/// Throws ConfigError when names or shapes disagree with `config`.
void check_params(const ViTConfig& config, const ModelParams& params);

struct ViTModel {
  ViTConfig config;
  ModelParams params;
};

/// Patch p = row * P + col, in raster order. Each row of the result holds the
/// patch's pixels in raster order with the three channels interleaved:
/// value index (dy * patch_size + dx) * 3 + c.
Tensor patchify(const Image& image, const ViTConfig& config);

struct ForwardTrace {
  ViTConfig config;
  Tensor logits;                   // [num_classes]
  std::vector<Tensor> attentions;  // per layer, [H, N, N] post-softmax
  std::optional<std::vector<Tensor>> attention_grads;
  std::size_t predicted_class = 0;
  std::optional<std::size_t> target_class;
  /// Present when the trace came from a taped forward pass.
  std::shared_ptr<Tape> tape;
};

/// Forward pass that records attention probabilities on a fresh tape.
ForwardTrace forward(const ViTModel& model, const Image& image);

/// Fills attention_grads with d logits[class_index] / d
/// tensor. Gradients are taken with respect to the post-softmax attention
/// probabilities.
void backprop_target(ForwardTrace& trace, std::size_t class_index);

/// Called once per layer with the layer index and its [H, N, N] attention
/// values; may modify them before they are applied to the values.
using AttentionEdit = std::function<void(std::size_t layer, std::vector<double>& attention)>;

/// Untaped logits, optionally editing attention probabilities in flight.
Tensor forward_logits(const ViTModel& model, const Image& image, const AttentionEdit& edit = {});

/// Logits from already-patchified input with possibly taped parameters. This is
/// the training path: attention is not captured.
Tensor forward_logits(const ViTConfig& config, const ModelParams& params, const Tensor& patches);

struct Prediction {
  std::size_t label = 0;
  std::vector<double> probabilities;
};

Prediction predict(const ViTModel& model, const Image& image);

/// Lowest index among the maxima.
std::size_t argmax(std::span<const double> values);
std::vector<double> softmax(std::span<const double> logits);

}  // namespace gmar
