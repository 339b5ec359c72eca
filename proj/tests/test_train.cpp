#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "gmar/error.hpp"
#include "gmar/random.hpp"
#include "gmar/synthetic.hpp"
#include "gmar/train.hpp"
#include "oracles.hpp"

using namespace gmar;

namespace {

ViTConfig mini_config() {
  ViTConfig c;
  c.image_size = 24;
  c.patch_size = 8;
  c.embed_dim = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.mlp_dim = 8;
  c.num_classes = 4;
  return c;
}

}  // namespace

TEST_CASE("cross entropy values") {
  CHECK(cross_entropy(Tensor({4}, {0.3, 0.3, 0.3, 0.3}), 2).item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(cross_entropy(Tensor({3}, {800, 0, 0}), 0).item() == doctest::Approx(0.0));
  CHECK(cross_entropy(Tensor({3}, {1, 2, 3}), 0).item() ==
        doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)))));
  CHECK_THROWS_AS(cross_entropy(Tensor({3}, {1, 2, 3}), 3), ParameterError);
}

TEST_CASE("cross entropy gradient matches finite differences") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor logits({5}, oracle::random_values(rng, 5, 2.0));
    const std::size_t label = rng.below(5);
    CHECK(grad_check([label](const Tensor& x) { return cross_entropy(x, label); }, logits, 1e-5) < 1e-6);
  }
}

TEST_CASE("adam: first step and zero-gradient fixed point") {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  ModelParams p{{"w", Tensor({2}, {0.5, -0.5})}};
  AdamState state;
  adam_step(p, {{"w", Tensor({2}, {1.0, -3.0})}}, state, cfg, 1);
  CHECK(p.at("w")[0] - 0.5 == doctest::Approx(-0.01 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(p.at("w")[1] + 0.5 == doctest::Approx(0.01 * 3.0 / (3.0 + 1e-8)).epsilon(1e-12));

  ModelParams q{{"w", Tensor({2}, {0.25, 4.0})}};
  AdamState s2;
  s2.first_moment["w"] = {0.0, 0.0};
  s2.second_moment["w"] = {0.2, 0.4};
  adam_step(q, {{"w", Tensor::zeros({2})}}, s2, cfg, 3);
  CHECK(q.at("w").to_vector() == std::vector<double>{0.25, 4.0});
  CHECK(s2.second_moment["w"][0] == doctest::Approx(0.2 * 0.999));

  CHECK_THROWS_AS(adam_step(q, {{"w", Tensor::zeros({3})}}, s2, cfg, 4), ContractError);
  CHECK_THROWS_AS(adam_step(q, {}, s2, cfg, 4), ContractError);
  CHECK_THROWS_AS(adam_step(q, {{"w", Tensor::zeros({2})}}, s2, cfg, 0), ContractError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = TrainConfig{};
  cfg.beta2 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
}

TEST_CASE("short training runs are deterministic and start near ln C") {
  const ViTConfig mc = mini_config();
  const Dataset data = generate_synthetic(5, 24, 24);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-3;
  cfg.seed = 9;
  for (bool augment : {false, true}) {
    cfg.augment = augment;
    const TrainResult a = train(mc, cfg, data);
    const TrainResult b = train(mc, cfg, data);
    CHECK(std::abs(a.initial_loss - std::log(4.0)) < 0.1);
    REQUIRE(a.history.size() == 2);
    CHECK(a.history[1].loss == b.history[1].loss);
    for (const auto& [name, t] : a.params) CHECK(t.to_vector() == b.params.at(name).to_vector());
  }
  cfg.augment = false;
  const TrainResult plain = train(mc, cfg, data);
  cfg.augment = true;
  CHECK(plain.history[1].loss != train(mc, cfg, data).history[1].loss);
  CHECK_THROWS_AS(train(mc, cfg, {}), ParameterError);
}

TEST_CASE("augmentation keeps size and value range") {
  Rng rng(1);
  const Image img = oracle::random_image(rng, 8);
  for (int i = 0; i < 20; ++i) {
    const Image out = augment_image(img, rng);
    CHECK(out.width() == 8);
    for (double v : out.pixels()) CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("accuracy and history json") {
  const ViTConfig mc = mini_config();
  const Dataset data = generate_synthetic(1, 8, 24);
  const double acc = accuracy({mc, init_params(mc, 1)}, data);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  const auto doc = nlohmann::json::parse(history_to_json({{1, 0.5, 0.75}}));
  CHECK(doc[0]["epoch"] == 1);
  CHECK(doc[0]["accuracy"] == 0.75);
}
