#include "gmar/vit.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gmar/error.hpp"
#include "gmar/random.hpp"

namespace gmar {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-6;

std::string block(std::size_t l, const char* suffix) { return "blocks." + std::to_string(l) + "." + suffix; }

const Tensor& param(const ModelParams& params, const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) throw ConfigError("missing parameter " + name);
  return it->second;
}

Tensor linear(const Tensor& x, const ModelParams& p, const std::string& prefix) {
  return add_bias(matmul(x, param(p, prefix + ".weight")), param(p, prefix + ".bias"));
}

// [N, D] -> [H, N, D/H]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  static constexpr std::size_t kAxes[] = {1, 0, 2};
  return permute(reshape(x, {n, heads, d / heads}), kAxes);
}

// [H, N, dh] -> [N, H * dh]
Tensor merge_heads(const Tensor& x) {
  static constexpr std::size_t kAxes[] = {1, 0, 2};
  const std::size_t h = x.dim(0);
  const std::size_t n = x.dim(1);
  const std::size_t dh = x.dim(2);
  return reshape(permute(x, kAxes), {n, h * dh});
}

struct Capture {
  std::shared_ptr<Tape> tape;
  const AttentionEdit* edit = nullptr;
  std::vector<Tensor> attentions;
};

Tensor run(const ViTConfig& cfg, const ModelParams& p, const Tensor& patches, Capture* capture) {
  Tensor x = linear(patches, p, "patch_embed");
  const Tensor parts[] = {param(p, "cls_token"), x};
  x = add(concat(parts, 0), param(p, "pos_embed"));

  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const Tensor h = layernorm(x, param(p, block(l, "norm1.gamma")), param(p, block(l, "norm1.beta")), kLayerNormEps);
    const Tensor q = split_heads(linear(h, p, block(l, "attn.q")), cfg.num_heads);
    const Tensor k = split_heads(linear(h, p, block(l, "attn.k")), cfg.num_heads);
    const Tensor v = split_heads(linear(h, p, block(l, "attn.v")), cfg.num_heads);
    Tensor attn = softmax_lastdim(mul_scalar(matmul(q, transpose_last2(k)), scale));
    if (capture) {
      if (capture->edit && *capture->edit) {
        std::vector<double> values = attn.to_vector();
        (*capture->edit)(l, values);
        attn = Tensor(attn.shape(), std::move(values));
      }
      if (capture->tape) attn = capture->tape->watch(attn);
      capture->attentions.push_back(attn);
    }
    x = add(x, linear(merge_heads(matmul(attn, v)), p, block(l, "attn.out")));

    const Tensor h2 = layernorm(x, param(p, block(l, "norm2.gamma")), param(p, block(l, "norm2.beta")), kLayerNormEps);
    x = add(x, linear(gelu(linear(h2, p, block(l, "mlp.fc1"))), p, block(l, "mlp.fc2")));
  }

  const Tensor cls = layernorm(slice(x, 0, 0, 1), param(p, "norm.gamma"), param(p, "norm.beta"), kLayerNormEps);
  return reshape(linear(cls, p, "head"), {cfg.num_classes});
}

}  // namespace

ViTConfig ViTConfig::reference_geometry() {
  ViTConfig cfg;
  cfg.image_size = 224;
  cfg.patch_size = 16;
  return cfg;
}

void ViTConfig::validate() const {
  const auto fail = [](const std::string& what) { throw ConfigError("invalid ViT config: " + what); };
  if (image_size == 0 || patch_size == 0 || embed_dim == 0 || num_layers == 0 || num_heads == 0 || mlp_dim == 0 ||
      num_classes == 0) {
    fail("all sizes must be positive");
  }
  if (image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (embed_dim % num_heads != 0) {
    fail("embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " + std::to_string(num_heads));
  }
}

std::map<std::string, Shape> param_shapes(const ViTConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim;
  std::map<std::string, Shape> shapes{
      {"cls_token", {1, d}},
      {"pos_embed", {cfg.num_tokens(), d}},
      {"patch_embed.weight", {cfg.patch_values(), d}},
      {"patch_embed.bias", {d}},
      {"norm.gamma", {d}},
      {"norm.beta", {d}},
      {"head.weight", {d, cfg.num_classes}},
      {"head.bias", {cfg.num_classes}},
  };
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    for (const char* ln : {"norm1", "norm2"}) {
      shapes[block(l, ln) + std::string(".gamma")] = {d};
      shapes[block(l, ln) + std::string(".beta")] = {d};
    }
    for (const char* proj : {"attn.q", "attn.k", "attn.v", "attn.out"}) {
      shapes[block(l, proj) + std::string(".weight")] = {d, d};
      shapes[block(l, proj) + std::string(".bias")] = {d};
    }
    shapes[block(l, "mlp.fc1.weight")] = {d, cfg.mlp_dim};
    shapes[block(l, "mlp.fc1.bias")] = {cfg.mlp_dim};
    shapes[block(l, "mlp.fc2.weight")] = {cfg.mlp_dim, d};
    shapes[block(l, "mlp.fc2.bias")] = {d};
  }
  return shapes;
}

ModelParams init_params(const ViTConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams params;
  for (const auto& [name, shape] : param_shapes(config)) {
    const auto ends_with = [&](std::string_view s) { return name.ends_with(s); };
    if (ends_with(".bias") || ends_with(".beta")) {
      params.emplace(name, Tensor::zeros(shape));
    } else if (ends_with(".gamma")) {
      params.emplace(name, Tensor::full(shape, 1.0));
    } else {
      std::vector<double> values(numel(shape));
      for (double& v : values) v = rng.truncated_normal(kInitStd);
      params.emplace(name, Tensor(shape, std::move(values)));
    }
  }
  return params;
}

void check_params(const ViTConfig& config, const ModelParams& params) {
  const auto expected = param_shapes(config);
  for (const auto& [name, shape] : expected) {
    const auto it = params.find(name);
    if (it == params.end()) throw ConfigError("missing parameter " + name);
    if (it->second.shape() != shape) {
      throw ConfigError("parameter " + name + " has shape " + shape_to_string(it->second.shape()) + ", expected " +
                        shape_to_string(shape));
    }
  }
  for (const auto& [name, _] : params) {
    if (!expected.contains(name)) throw ConfigError("unexpected parameter " + name);
  }
}

Tensor patchify(const Image& image, const ViTConfig& config) {
  if (image.width() != config.image_size || image.height() != config.image_size) {
    throw DimensionError("image is " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                         ", model expects " + std::to_string(config.image_size) + "x" +
                         std::to_string(config.image_size));
  }
  const std::size_t ps = config.patch_size;
  const std::size_t side = config.grid_side();
  const std::size_t width = config.patch_values();
  std::vector<double> out(config.num_patches() * width);
  for (std::size_t py = 0; py < side; ++py)
    for (std::size_t px = 0; px < side; ++px) {
      double* dst = out.data() + (py * side + px) * width;
      for (std::size_t dy = 0; dy < ps; ++dy)
        for (std::size_t dx = 0; dx < ps; ++dx)
          for (std::size_t c = 0; c < Image::kChannels; ++c)
            *dst++ = image.at(px * ps + dx, py * ps + dy, c);
    }
  return Tensor({config.num_patches(), width}, std::move(out));
}

ForwardTrace forward(const ViTModel& model, const Image& image) {
  Capture capture;
  capture.tape = Tape::create();
  ForwardTrace trace;
  trace.config = model.config;
  trace.logits = run(model.config, model.params, patchify(image, model.config), &capture);
  trace.attentions = std::move(capture.attentions);
  trace.predicted_class = argmax(trace.logits.data());
  trace.tape = capture.tape;
  return trace;
}

void backprop_target(ForwardTrace& trace, std::size_t class_index) {
  if (!trace.tape || !trace.logits.is_taped()) {
    throw StateError("backprop_target needs a trace produced by a taped forward pass");
  }
  const std::size_t layers = trace.config.num_layers;
  if (trace.attentions.size() != layers) {
    throw StateError("trace does not hold its captured tensors");
  }
  if (class_index >= trace.config.num_classes) {
    throw ParameterError("class index " + std::to_string(class_index) + " out of range for " +
                         std::to_string(trace.config.num_classes) + " classes");
  }
  const Tensor target = reshape(slice(trace.logits, 0, class_index, class_index + 1), {});
  const Gradients grads = trace.tape->backward(target);

  std::vector<Tensor> attention_grads;
  attention_grads.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) attention_grads.push_back(grads.of(trace.attentions[l]));
  trace.attention_grads = std::move(attention_grads);
  trace.target_class = class_index;
}

Tensor forward_logits(const ViTModel& model, const Image& image, const AttentionEdit& edit) {
  const Tensor patches = patchify(image, model.config);
  if (!edit) return run(model.config, model.params, patches, nullptr);
  Capture capture;
  capture.edit = &edit;
  return run(model.config, model.params, patches, &capture);
}

Tensor forward_logits(const ViTConfig& config, const ModelParams& params, const Tensor& patches) {
  return run(config, params, patches, nullptr);
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw DimensionError("argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax of an empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += out[i] = std::exp(logits[i] - mx);
  for (double& v : out) v /= total;
  return out;
}

Prediction predict(const ViTModel& model, const Image& image) {
  const Tensor logits = forward_logits(model, image);
  Prediction p;
  p.probabilities = softmax(logits.data());
  p.label = argmax(p.probabilities);
  return p;
}

}  // namespace gmar
