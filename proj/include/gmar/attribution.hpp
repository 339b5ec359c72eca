#pragma once

// Attention rollout, gradient-weighted multi-head rollout (GMAR) and the
// baselines they are compared against.
//
// Both rollouts accumulate left to right, R <- R * F_l starting from R = I,
// so the CLS row of the result is read as the saliency over patches.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gmar/error.hpp"
#include "gmar/linalg.hpp"
#include "gmar/tensor.hpp"
#include "gmar/vit.hpp"

namespace gmar {

enum class NormKind { kL1, kL2 };
enum class WeightScope { kPerLayer, kGlobal };

struct RolloutConfig {
  /// Strength of the identity added after each weighted layer.
  double alpha = 1.0;
  NormKind norm = NormKind::kL1;
  WeightScope scope = WeightScope::kPerLayer;
  bool row_normalize = true;

  void validate() const;
};

/// Per-head importance, nonnegative and summing to 1 within each vector.
/// Per-layer scope holds one vector per layer; global scope holds one vector
/// shared by every layer.
struct HeadWeights {
  WeightScope scope = WeightScope::kPerLayer;
  std::vector<std::vector<double>> weights;
  /// Set when some scope had all-zero gradients and fell back to 1/H.
  bool degenerate = false;

  const std::vector<double>& for_layer(std::size_t layer) const {
    return scope == WeightScope::kGlobal ? weights.at(0) : weights.at(layer);
  }
};

struct SaliencyMap {
  Grid grid;  // P x P, min-max normalized to [0, 1]
  std::string source_method;
  /// The raw map was constant, so every cell was set to 0.5.
  bool constant_input = false;
};

struct RolloutResult {
  Grid rollout;  // N x N
  SaliencyMap saliency;
};

namespace rollout {

/// Divides each row by its sum. Rows summing to zero are left untouched.
template <typename Derived>
void normalize_rows(Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Scalar total = m.row(r).sum();
    if (total != Scalar(0)) m.row(r) /= total;
  }
}

/// Cumulative product of (A_l + I) over the per-layer head-averaged attention.
template <typename Scalar>
RowMatrix<Scalar> accumulate_with_identity(std::span<const RowMatrix<Scalar>> layers, bool row_normalize) {
  if (layers.empty()) throw StateError("rollout needs at least one attention layer");
  const Eigen::Index n = layers.front().rows();
  RowMatrix<Scalar> result = RowMatrix<Scalar>::Identity(n, n);
  for (const auto& layer : layers) {
    RowMatrix<Scalar> factor = layer + RowMatrix<Scalar>::Identity(n, n);
    if (row_normalize) normalize_rows(factor);
    result = (result * factor).eval();
  }
  return result;
}

/// R <- R * A_weighted + alpha * I per layer, starting from R = I.
template <typename Scalar>
RowMatrix<Scalar> accumulate_weighted(std::span<const RowMatrix<Scalar>> weighted_layers, Scalar alpha,
                                      bool row_normalize) {
  if (weighted_layers.empty()) throw StateError("rollout needs at least one attention layer");
  const Eigen::Index n = weighted_layers.front().rows();
  RowMatrix<Scalar> result = RowMatrix<Scalar>::Identity(n, n);
  for (const auto& layer : weighted_layers) {
    result = (result * layer).eval();
    result.diagonal().array() += alpha;
    if (row_normalize) normalize_rows(result);
  }
  return result;
}

/// Sum over heads of weights[h] * attention[h] for an [H, N, N] row-major block.
template <typename Scalar>
RowMatrix<Scalar> combine_heads(std::span<const Scalar> attention, std::size_t heads, std::size_t tokens,
                                std::span<const Scalar> weights) {
  if (attention.size() != heads * tokens * tokens || weights.size() != heads) {
    throw DimensionError("combine_heads: attention/weight sizes disagree");
  }
  const auto n = static_cast<Eigen::Index>(tokens);
  RowMatrix<Scalar> out = RowMatrix<Scalar>::Zero(n, n);
  for (std::size_t h = 0; h < heads; ++h) {
    out += weights[h] * Eigen::Map<const RowMatrix<Scalar>>(attention.data() + h * tokens * tokens, n, n);
  }
  return out;
}

/// L1 (sum of |g|) or L2 (sqrt of sum of g^2) magnitude of a block of gradients.
template <typename Scalar>
Scalar gradient_magnitude(std::span<const Scalar> grads, NormKind norm) {
  const auto v = Eigen::Map<const Vector<Scalar>>(grads.data(), static_cast<Eigen::Index>(grads.size()));
  return norm == NormKind::kL1 ? v.cwiseAbs().sum() : v.norm();
}

}  // namespace rollout

/// Gradient-based head importance. Each layer's [H, N, N] gradient is split by
/// head; a head's raw score is the L1 or L2 norm over its entries (over all
/// layers at once in global scope), then scores are divided by their sum.
/// All-zero gradients in a scope give uniform weights 1/H. Non-finite
/// gradients throw ParameterError.
HeadWeights head_weights(std::span<const Tensor> attention_grads, NormKind norm, WeightScope scope);

/// Plain attention rollout over head-averaged attention. Ignores alpha and
/// gradients.
RolloutResult attention_rollout(const ForwardTrace& trace, const RolloutConfig& config);

/// Gradient-weighted rollout. Needs trace.attention_grads (see backprop_target).
RolloutResult gmar_rollout(const ForwardTrace& trace, const RolloutConfig& config);
/// Same recursion with externally supplied head weights.
RolloutResult gmar_rollout(const ForwardTrace& trace, const RolloutConfig& config, const HeadWeights& weights);

/// Min-max normalization to [0, 1]; constant input maps to all 0.5.
SaliencyMap normalize_saliency(const Grid& raw, std::string source_method);

/// Row 0 of the rollout without its CLS column, reshaped to P x P in patch order.
SaliencyMap cls_row_to_grid(const Grid& rollout, std::string source_method);

/// Grad-CAM over patch tokens: channel weights are token-averaged gradients,
/// the map is ReLU(sum_c weight_c * activation(token, c)). Inputs are
/// [N - 1, channels].
SaliencyMap gradcam_vit(const Tensor& token_grads, const Tensor& token_activations);
/// Grad-CAM on the final encoder block with heads as channels: the activation
/// of patch token t in head h is the CLS row attention A[h, 0, t], paired with
/// its gradient.
SaliencyMap gradcam_vit(const ForwardTrace& trace);

SaliencyMap random_saliency(std::size_t grid_side, std::uint64_t seed);

/// a - b, values in [-1, 1].
Grid difference_map(const SaliencyMap& a, const SaliencyMap& b);

enum class Method { kRollout, kGmarL1, kGmarL2, kGradCam, kRandom };

/// Accepts "rollout", "gmar-l1", "gmar_l1", "gmar-l2", "gmar_l2", "gradcam", "random".
Method parse_method(std::string_view name);
std::string_view method_name(Method method);

struct Explanation {
  Method method = Method::kRollout;
  SaliencyMap saliency;
  std::optional<Grid> rollout;
  std::optional<HeadWeights> head_weights;
  std::size_t predicted_class = 0;
  std::vector<double> probabilities;
};

/// Forward, backprop (when the method needs gradients) and saliency for one image.
/// `config.norm` is overridden by the GMAR method's norm.
Explanation explain(const ViTModel& model, const Image& image, Method method, const RolloutConfig& config,
                    std::uint64_t seed = 0);

}  // namespace gmar
