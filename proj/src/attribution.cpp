#include "gmar/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "gmar/random.hpp"

namespace gmar {

namespace {

struct AttentionLayout {
  std::size_t heads;
  std::size_t tokens;
};

AttentionLayout layout_of(const Tensor& t) {
  if (t.rank() != 3 || t.dim(1) != t.dim(2)) {
    throw DimensionError("attention tensors must be [H, N, N], got " + shape_to_string(t.shape()));
  }
  return {t.dim(0), t.dim(1)};
}

AttentionLayout check_layers(std::span<const Tensor> layers) {
  if (layers.empty()) throw StateError("trace holds no attention layers");
  const AttentionLayout first = layout_of(layers.front());
  for (const Tensor& t : layers) {
    if (t.shape() != layers.front().shape()) {
      throw DimensionError("attention layers disagree: " + shape_to_string(t.shape()) + " vs " +
                           shape_to_string(layers.front().shape()));
    }
  }
  return first;
}

std::vector<double> normalized_or_uniform(const std::vector<double>& raw, bool& degenerate) {
  double total = 0.0;
  for (double v : raw) total += v;
  std::vector<double> w(raw.size());
  if (!(total > 0.0)) {
    degenerate = true;
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(raw.size()));
    return w;
  }
  for (std::size_t i = 0; i < raw.size(); ++i) w[i] = raw[i] / total;
  return w;
}

}  // namespace

void RolloutConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ParameterError("alpha must be a finite value >= 0");
}

HeadWeights head_weights(std::span<const Tensor> attention_grads, NormKind norm, WeightScope scope) {
  const AttentionLayout lay = check_layers(attention_grads);
  const std::size_t block = lay.tokens * lay.tokens;
  HeadWeights out;
  out.scope = scope;

  // Weights are invariant to a positive rescaling of the scope, so each scope is
  // divided by its largest magnitude first. This keeps squares and sums finite.
  const auto max_abs = [](std::span<const Tensor> layers) {
    double m = 0.0;
    for (const Tensor& g : layers)
      for (double v : g.data()) {
        if (!std::isfinite(v)) throw ParameterError("attention gradients must be finite");
        m = std::max(m, std::abs(v));
      }
    return m;
  };
  const auto scaled_head = [&](const Tensor& g, std::size_t h, double scale) {
    std::vector<double> part(g.data().begin() + static_cast<std::ptrdiff_t>(h * block),
                             g.data().begin() + static_cast<std::ptrdiff_t>((h + 1) * block));
    for (double& v : part) v /= scale;
    return part;
  };

  if (scope == WeightScope::kPerLayer) {
    for (const Tensor& g : attention_grads) {
      const double scale = max_abs(std::span(&g, 1));
      std::vector<double> raw(lay.heads, 0.0);
      if (scale > 0.0) {
        for (std::size_t h = 0; h < lay.heads; ++h) {
          raw[h] = rollout::gradient_magnitude<double>(scaled_head(g, h, scale), norm);
        }
      }
      out.weights.push_back(normalized_or_uniform(raw, out.degenerate));
    }
    return out;
  }

  // Global scope: one score per head index over the entries of every layer.
  const double scale = max_abs(attention_grads);
  std::vector<double> raw(lay.heads, 0.0);
  if (scale > 0.0) {
    for (std::size_t h = 0; h < lay.heads; ++h) {
      for (const Tensor& g : attention_grads) {
        const double n = rollout::gradient_magnitude<double>(scaled_head(g, h, scale), norm);
        raw[h] += norm == NormKind::kL1 ? n : n * n;
      }
      if (norm == NormKind::kL2) raw[h] = std::sqrt(raw[h]);
    }
  }
  out.weights.push_back(normalized_or_uniform(raw, out.degenerate));
  return out;
}

RolloutResult attention_rollout(const ForwardTrace& trace, const RolloutConfig& config) {
  const AttentionLayout lay = check_layers(trace.attentions);
  const std::vector<double> uniform(lay.heads, 1.0 / static_cast<double>(lay.heads));
  std::vector<Grid> means;
  means.reserve(trace.attentions.size());
  for (const Tensor& a : trace.attentions) {
    means.push_back(rollout::combine_heads<double>(a.data(), lay.heads, lay.tokens, uniform));
  }
  RolloutResult out;
  out.rollout = rollout::accumulate_with_identity<double>(means, config.row_normalize);
  out.saliency = cls_row_to_grid(out.rollout, "rollout");
  return out;
}

RolloutResult gmar_rollout(const ForwardTrace& trace, const RolloutConfig& config) {
  if (!trace.attention_grads) {
    throw StateError("gmar_rollout needs attention gradients; call backprop_target first");
  }
  return gmar_rollout(trace, config, head_weights(*trace.attention_grads, config.norm, config.scope));
}

RolloutResult gmar_rollout(const ForwardTrace& trace, const RolloutConfig& config, const HeadWeights& weights) {
  config.validate();
  const AttentionLayout lay = check_layers(trace.attentions);
  std::vector<Grid> weighted;
  weighted.reserve(trace.attentions.size());
  for (std::size_t l = 0; l < trace.attentions.size(); ++l) {
    weighted.push_back(
        rollout::combine_heads<double>(trace.attentions[l].data(), lay.heads, lay.tokens, weights.for_layer(l)));
  }
  RolloutResult out;
  out.rollout = rollout::accumulate_weighted<double>(weighted, config.alpha, config.row_normalize);
  out.saliency = cls_row_to_grid(out.rollout, config.norm == NormKind::kL1 ? "gmar-l1" : "gmar-l2");
  return out;
}

SaliencyMap normalize_saliency(const Grid& raw, std::string source_method) {
  SaliencyMap map;
  map.source_method = std::move(source_method);
  const double lo = raw.minCoeff();
  const double hi = raw.maxCoeff();
  if (!(hi > lo)) {
    map.grid = Grid::Constant(raw.rows(), raw.cols(), 0.5);
    map.constant_input = true;
    return map;
  }
  map.grid = (raw.array() - lo) / (hi - lo);
  return map;
}

SaliencyMap cls_row_to_grid(const Grid& rollout, std::string source_method) {
  const auto n = static_cast<std::size_t>(rollout.rows());
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n > 0 ? n - 1 : 0))));
  if (rollout.rows() != rollout.cols() || n < 2 || side * side + 1 != n) {
    throw DimensionError("rollout of size " + std::to_string(rollout.rows()) + "x" + std::to_string(rollout.cols()) +
                         " is not (P^2 + 1) square");
  }
  const auto p = static_cast<Eigen::Index>(side);
  Grid raw(p, p);
  for (Eigen::Index i = 0; i < p * p; ++i) raw(i / p, i % p) = rollout(0, i + 1);
  return normalize_saliency(raw, std::move(source_method));
}

SaliencyMap gradcam_vit(const Tensor& token_grads, const Tensor& token_activations) {
  if (token_grads.rank() != 2 || token_grads.shape() != token_activations.shape()) {
    throw DimensionError("gradcam needs matching [tokens, channels] gradients and activations, got " +
                         shape_to_string(token_grads.shape()) + " and " + shape_to_string(token_activations.shape()));
  }
  const auto tokens = static_cast<Eigen::Index>(token_grads.dim(0));
  const auto channels = static_cast<Eigen::Index>(token_grads.dim(1));
  const auto side = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(tokens))));
  if (side * side != tokens) throw DimensionError("gradcam token count is not a square grid");

  const Eigen::Map<const Grid> grads(token_grads.data().data(), tokens, channels);
  const Eigen::Map<const Grid> acts(token_activations.data().data(), tokens, channels);
  const Vector<double> channel_weights = grads.colwise().mean().transpose();
  const Vector<double> cam = (acts * channel_weights).cwiseMax(0.0);
  const Grid raw = Eigen::Map<const Grid>(cam.data(), side, side);
  return normalize_saliency(raw, "gradcam");
}

SaliencyMap gradcam_vit(const ForwardTrace& trace) {
  if (!trace.attention_grads) throw StateError("gradcam needs attention gradients; call backprop_target first");
  const Tensor& attn = trace.attentions.back();
  const Tensor& grad = trace.attention_grads->back();
  const AttentionLayout lay = layout_of(attn);
  const std::size_t patches = lay.tokens - 1;
  std::vector<double> acts(patches * lay.heads);
  std::vector<double> grads(patches * lay.heads);
  for (std::size_t h = 0; h < lay.heads; ++h) {
    for (std::size_t t = 0; t < patches; ++t) {
      acts[t * lay.heads + h] = attn[h * lay.tokens * lay.tokens + t + 1];
      grads[t * lay.heads + h] = grad[h * lay.tokens * lay.tokens + t + 1];
    }
  }
  return gradcam_vit(Tensor({patches, lay.heads}, std::move(grads)), Tensor({patches, lay.heads}, std::move(acts)));
}

SaliencyMap random_saliency(std::size_t grid_side, std::uint64_t seed) {
  if (grid_side == 0) throw ParameterError("grid side must be positive");
  Rng rng(seed);
  const auto p = static_cast<Eigen::Index>(grid_side);
  Grid raw(p, p);
  for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = rng.uniform();
  return normalize_saliency(raw, "random");
}

Grid difference_map(const SaliencyMap& a, const SaliencyMap& b) {
  if (a.grid.rows() != b.grid.rows() || a.grid.cols() != b.grid.cols()) {
    throw DimensionError("difference_map: grids are " + std::to_string(a.grid.rows()) + "x" +
                         std::to_string(a.grid.cols()) + " and " + std::to_string(b.grid.rows()) + "x" +
                         std::to_string(b.grid.cols()));
  }
  return a.grid - b.grid;
}

Method parse_method(std::string_view name) {
  if (name == "rollout") return Method::kRollout;
  if (name == "gmar-l1" || name == "gmar_l1") return Method::kGmarL1;
  if (name == "gmar-l2" || name == "gmar_l2") return Method::kGmarL2;
  if (name == "gradcam") return Method::kGradCam;
  if (name == "random") return Method::kRandom;
  throw ParameterError("unknown method '" + std::string(name) + "'");
}

std::string_view method_name(Method method) {
  switch (method) {
    case Method::kRollout:
      return "rollout";
    case Method::kGmarL1:
      return "gmar-l1";
    case Method::kGmarL2:
      return "gmar-l2";
    case Method::kGradCam:
      return "gradcam";
    case Method::kRandom:
      return "random";
  }
  return "unknown";
}

Explanation explain(const ViTModel& model, const Image& image, Method method, const RolloutConfig& config,
                    std::uint64_t seed) {
  config.validate();
  Explanation out;
  out.method = method;
  if (method == Method::kRandom) {
    const Prediction p = predict(model, image);
    out.predicted_class = p.label;
    out.probabilities = p.probabilities;
    out.saliency = random_saliency(model.config.grid_side(), seed);
    return out;
  }

  ForwardTrace trace = forward(model, image);
  out.predicted_class = trace.predicted_class;
  out.probabilities = softmax(trace.logits.data());

  switch (method) {
    case Method::kRollout: {
      RolloutResult r = attention_rollout(trace, config);
      out.rollout = std::move(r.rollout);
      out.saliency = std::move(r.saliency);
      break;
    }
    case Method::kGmarL1:
    case Method::kGmarL2: {
      backprop_target(trace, trace.predicted_class);
      RolloutConfig cfg = config;
      cfg.norm = method == Method::kGmarL1 ? NormKind::kL1 : NormKind::kL2;
      HeadWeights w = head_weights(*trace.attention_grads, cfg.norm, cfg.scope);
      RolloutResult r = gmar_rollout(trace, cfg, w);
      out.rollout = std::move(r.rollout);
      out.saliency = std::move(r.saliency);
      out.head_weights = std::move(w);
      break;
    }
    case Method::kGradCam:
      backprop_target(trace, trace.predicted_class);
      out.saliency = gradcam_vit(trace);
      break;
    case Method::kRandom:
      break;
  }
  return out;
}

}  // namespace gmar
