#include <doctest.h>

#include <cmath>

#include "gmar/error.hpp"
#include "gmar/random.hpp"
#include "gmar/vit.hpp"
#include "oracles.hpp"

using namespace gmar;

namespace {

ViTConfig small_config() {
  ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.mlp_dim = 12;
  c.num_classes = 3;
  return c;
}

}  // namespace

TEST_CASE("token counts for the toy and reference geometry") {
  CHECK(ViTConfig{}.num_tokens() == 17);
  CHECK(ViTConfig{}.patch_values() == 192);
  CHECK(ViTConfig::reference_geometry().num_tokens() == 197);
  CHECK(ViTConfig::reference_geometry().grid_side() == 14);
}

TEST_CASE("invalid configs are rejected") {
  ViTConfig c;
  c.patch_size = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ViTConfig{};
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ViTConfig{};
  c.num_layers = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(ViTConfig{}.validate());
}

TEST_CASE("parameter shapes and initialization") {
  const ViTConfig c;
  const auto shapes = param_shapes(c);
  CHECK(shapes.size() == 8 + 16 * c.num_layers);
  CHECK(shapes.at("pos_embed") == Shape{17, 64});
  CHECK(shapes.at("blocks.3.mlp.fc1.weight") == Shape{64, 128});
  const ModelParams p = init_params(c, 5);
  CHECK_NOTHROW(check_params(c, p));
  CHECK(p.at("blocks.0.norm1.gamma")[0] == 1.0);
  CHECK(p.at("head.bias")[2] == 0.0);
  double max_abs = 0.0;
  for (double v : p.at("patch_embed.weight").data()) max_abs = std::max(max_abs, std::abs(v));
  CHECK(max_abs <= 0.04);
  CHECK(max_abs > 0.0);

  ModelParams broken = p;
  broken.erase("head.bias");
  CHECK_THROWS_AS(check_params(c, broken), ConfigError);
  broken = p;
  broken["extra"] = Tensor::scalar(1.0);
  CHECK_THROWS_AS(check_params(c, broken), ConfigError);
}

TEST_CASE("init_params is deterministic in the seed") {
  const ViTConfig c;
  const ModelParams a = init_params(c, 11);
  const ModelParams b = init_params(c, 11);
  const ModelParams d = init_params(c, 12);
  for (const auto& [name, t] : a) CHECK(t.to_vector() == b.at(name).to_vector());
  CHECK(a.at("cls_token").to_vector() != d.at("cls_token").to_vector());
}

TEST_CASE("patchify uses raster patch order and interleaved channels") {
  ViTConfig c = small_config();
  Image img(8, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch) img.at(x, y, ch) = static_cast<double>(100 * y + 10 * x + ch);
  const Tensor p = patchify(img, c);
  REQUIRE(p.shape() == Shape{4, 48});
  // Patch 1 is the top-right block; its first value is pixel (4, 0), channel 0.
  CHECK(p.at({1, 0}) == 40.0);
  // Patch 2, dy = 1, dx = 2, channel 1 -> pixel (2, 5).
  CHECK(p.at({2, (1 * 4 + 2) * 3 + 1}) == 521.0);
  CHECK_THROWS_AS(patchify(Image(4, 4), c), DimensionError);
}

TEST_CASE("forward pass matches a straight-line oracle") {
  Rng rng(99);
  for (int trial = 0; trial < 3; ++trial) {
    const ViTConfig c = small_config();
    const ViTModel model{c, oracle::random_params(c, 100 + trial)};
    const Image img = oracle::random_image(rng, c.image_size);
    const ForwardTrace trace = forward(model, img);
    const auto ref = oracle::vit_forward(c, model.params, img);
    REQUIRE(trace.logits.shape() == Shape{c.num_classes});
    for (std::size_t k = 0; k < c.num_classes; ++k) {
      CHECK(trace.logits[k] == doctest::Approx(ref.logits[k]).epsilon(1e-10));
    }
    REQUIRE(trace.attentions.size() == c.num_layers);
    for (std::size_t l = 0; l < c.num_layers; ++l) {
      CHECK(trace.attentions[l].shape() == Shape{c.num_heads, c.num_tokens(), c.num_tokens()});
      for (std::size_t i = 0; i < ref.attentions[l].size(); ++i) {
        CHECK(trace.attentions[l][i] == doctest::Approx(ref.attentions[l][i]).epsilon(1e-10));
      }
    }
    const Tensor untaped = forward_logits(model, img);
    CHECK(untaped.to_vector() == trace.logits.to_vector());
    CHECK(!untaped.is_taped());
  }
}

TEST_CASE("attention rows are distributions") {
  Rng rng(1);
  const ViTConfig c;
  const ViTModel model{c, init_params(c, 1)};
  const ForwardTrace trace = forward(model, oracle::random_image(rng, 32));
  for (const Tensor& a : trace.attentions) {
    for (std::size_t r = 0; r < c.num_heads * c.num_tokens(); ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < c.num_tokens(); ++j) s += a[r * c.num_tokens() + j];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention gradients match finite differences of edited attention") {
  Rng rng(4);
  const ViTConfig c = small_config();
  const ViTModel model{c, oracle::random_params(c, 8)};
  const Image img = oracle::random_image(rng, c.image_size);
  ForwardTrace trace = forward(model, img);
  const std::size_t target = trace.predicted_class;
  backprop_target(trace, target);
  REQUIRE(trace.attention_grads);
  REQUIRE(trace.target_class == target);
  constexpr double kEps = 1e-5;
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const Tensor& g = (*trace.attention_grads)[l];
    for (int s = 0; s < 10; ++s) {
      const std::size_t idx = rng.below(g.size());
      const auto bump = [&](double delta) {
        return forward_logits(model, img, [&](std::size_t layer, std::vector<double>& a) {
                 if (layer == l) a[idx] += delta;
               })[target];
      };
      const double fd = (bump(kEps) - bump(-kEps)) / (2 * kEps);
      CHECK(relative_error(g[idx], fd) < 1e-5);
    }
  }
}

TEST_CASE("backprop_target errors") {
  const ViTConfig c = small_config();
  const ViTModel model{c, init_params(c, 2)};
  ForwardTrace trace = forward(model, Image(8, 8, 0.3));
  CHECK_THROWS_AS(backprop_target(trace, 3), ParameterError);
  ForwardTrace untaped;
  untaped.config = c;
  CHECK_THROWS_AS(backprop_target(untaped, 0), StateError);
}

TEST_CASE("predict, argmax and softmax") {
  const double v[] = {0.1, 3.0, 3.0, -1.0};
  CHECK(argmax(v) == 1);
  const auto p = softmax(v);
  double s = 0.0;
  for (double e : p) s += e;
  CHECK(s == doctest::Approx(1.0));
  const ViTConfig c;
  const ViTModel model{c, init_params(c, 3)};
  const Prediction pr = predict(model, Image(32, 32, 0.5));
  CHECK(pr.probabilities.size() == 4);
  CHECK(pr.label == argmax(pr.probabilities));
}
