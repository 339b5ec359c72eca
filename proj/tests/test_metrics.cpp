#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "gmar/error.hpp"
#include "gmar/metrics.hpp"
#include "gmar/random.hpp"
#include "oracles.hpp"

using namespace gmar;

namespace {

ViTModel tiny_model(std::uint64_t seed) {
  ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.mlp_dim = 8;
  c.num_classes = 3;
  return {c, oracle::random_params(c, seed)};
}

SaliencyMap raw_map(const Grid& g) {
  SaliencyMap m;
  m.grid = g;
  return m;
}

double probability(const ViTModel& model, const Image& img, std::size_t c) {
  return softmax(forward_logits(model, img).data())[c];
}

}  // namespace

TEST_CASE("trapezoid AUC") {
  const std::vector<CurvePoint> pts = {{0, 0.1}, {0.25, 0.2}, {0.5, 0.6}, {0.75, 0.8}, {1.0, 0.8}};
  CHECK(std::abs(trapezoid_auc(pts) - 0.5125) < 1e-12);
  const std::vector<CurvePoint> flat = {{0, 0.3}, {0.5, 0.3}, {1.0, 0.3}};
  CHECK(trapezoid_auc(flat) == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("average drop and increase") {
  const Confidence a{0.8, 0.6};
  CHECK(average_drop(std::span(&a, 1)) == doctest::Approx(25.0).epsilon(1e-15));
  const std::vector<Confidence> batch = {{0.8, 0.6}, {0.5, 0.9}, {0.4, 0.4}};
  CHECK(average_drop(batch) == doctest::Approx(25.0 / 3.0));
  CHECK(average_increase(batch) == doctest::Approx(100.0 / 3.0));
  const std::vector<Confidence> up = {{0.1, 0.2}, {0.3, 0.9}};
  CHECK(average_increase(up) == 100.0);
  CHECK(average_drop(up) == 0.0);
  CHECK_THROWS_AS(average_drop({}), ParameterError);
  CHECK_THROWS_AS(average_increase({}), ParameterError);
}

TEST_CASE("patch order sorts by saliency with index tie-break") {
  Grid g(2, 2);
  g << 0.5, 1.0, 0.5, 0.0;
  CHECK(patch_order(raw_map(g)) == std::vector<std::size_t>{1, 0, 2, 3});
}

TEST_CASE("steps validation") {
  PerturbationConfig p;
  CHECK(p.resolved_steps(16) == 16);
  p.steps = 4;
  CHECK(p.resolved_steps(16) == 4);
  p.steps = 17;
  CHECK_THROWS_AS(p.resolved_steps(16), ParameterError);
}

TEST_CASE("explanation confidence uses soft masking") {
  const ViTModel model = tiny_model(1);
  Rng rng(1);
  const Image img = oracle::random_image(rng, 8);
  const std::size_t c = predict(model, img).label;
  CHECK(explanation_confidence(model, img, raw_map(Grid::Ones(2, 2)), c) == probability(model, img, c));
  CHECK(explanation_confidence(model, img, raw_map(Grid::Zero(2, 2)), c) == probability(model, Image(8, 8, 0.0), c));
  Image half = img;
  for (double& v : half.pixels()) v *= 0.5;
  CHECK(explanation_confidence(model, img, raw_map(Grid::Constant(2, 2, 0.5)), c) == probability(model, half, c));
}

TEST_CASE("insertion and deletion curve endpoints") {
  const ViTModel model = tiny_model(2);
  Rng rng(2);
  const Image img = oracle::random_image(rng, 8);
  const std::size_t c = predict(model, img).label;
  const double yc = probability(model, img, c);
  const SaliencyMap map = random_saliency(2, 4);
  const PerturbationConfig cfg;

  const Curve ins = insertion_curve(model, img, map, cfg, c);
  REQUIRE(ins.points.size() == 5);
  CHECK(ins.points.back().probability == yc);
  CHECK(ins.points.front().probability == probability(model, insertion_baseline(img, model.config, cfg.insertion), c));

  const Curve del = deletion_curve(model, img, map, cfg, c);
  CHECK(del.points.front().probability == yc);
  CHECK(del.points.back().probability == probability(model, Image(8, 8, 0.0), c));
  for (std::size_t i = 0; i < 5; ++i) CHECK(del.points[i].fraction == 0.25 * static_cast<double>(i));

  for (const Curve* cv : {&ins, &del}) {
    double lo = 1.0, hi = 0.0;
    for (const CurvePoint& p : cv->points) lo = std::min(lo, p.probability), hi = std::max(hi, p.probability);
    CHECK(cv->auc >= lo - 1e-15);
    CHECK(cv->auc <= hi + 1e-15);
  }

  PerturbationConfig two;
  two.steps = 2;
  const Curve coarse = deletion_curve(model, img, map, two, c);
  REQUIRE(coarse.points.size() == 3);
  CHECK(coarse.points[1].fraction == 0.5);
  CHECK(coarse.points[1].probability == del.points[2].probability);
}

TEST_CASE("gray baselines") {
  const ViTConfig c;
  const Image img(32, 32, 0.9);
  CHECK(insertion_baseline(img, c, InsertionBaseline::kGray) == Image(32, 32, 0.5));
  CHECK(deletion_baseline(img, DeletionBaseline::kGray) == Image(32, 32, 0.5));
  CHECK(insertion_baseline(img, c, InsertionBaseline::kBlur) == gaussian_blur(img, 4.0));
}

TEST_CASE("property: curves are invariant to strictly increasing map transforms") {
  const ViTModel model = tiny_model(5);
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Image img = oracle::random_image(rng, 8);
    const std::size_t c = predict(model, img).label;
    Grid g(2, 2);
    for (Eigen::Index i = 0; i < 4; ++i) g.data()[i] = std::floor(rng.uniform() * 3.0) / 2.0;  // includes ties
    const double k = rng.uniform(0.5, 4.0);
    const Grid t = g.unaryExpr([k](double v) { return std::exp(k * v) - 7.0; });
    const PerturbationConfig cfg;
    const Curve a = insertion_curve(model, img, raw_map(g), cfg, c);
    const Curve b = insertion_curve(model, img, raw_map(t), cfg, c);
    const Curve d1 = deletion_curve(model, img, raw_map(g), cfg, c);
    const Curve d2 = deletion_curve(model, img, raw_map(t), cfg, c);
    for (std::size_t i = 0; i < a.points.size(); ++i) {
      CHECK(a.points[i].probability == b.points[i].probability);
      CHECK(d1.points[i].probability == d2.points[i].probability);
    }
  }
}

TEST_CASE("evaluate_method report") {
  const ViTModel model = tiny_model(6);
  Rng rng(6);
  Dataset data;
  for (int i = 0; i < 6; ++i) data.push_back({oracle::random_image(rng, 8), 0});
  const MetricReport r = evaluate_method(model, data, Method::kGmarL2, RolloutConfig{}, PerturbationConfig{}, 0);
  CHECK(r.images.size() == 6);
  CHECK(r.avg_drop >= 0.0);
  CHECK(r.avg_drop <= 100.0);
  CHECK(r.insertion_auc >= 0.0);
  CHECK(r.deletion_auc <= 1.0);
  for (const ImageResult& ir : r.images) {
    if (ir.confidence.explained > ir.confidence.full) {
      const Confidence only[] = {ir.confidence};
      CHECK(average_drop(only) == 0.0);
    }
  }
  const std::string json = report_to_json(r);
  CHECK(json == report_to_json(evaluate_method(model, data, Method::kGmarL2, RolloutConfig{}, PerturbationConfig{}, 0)));

  const auto doc = nlohmann::json::parse(json);
  for (const char* key : {"method", "config", "num_images", "avg_drop", "avg_increase", "insertion_auc", "deletion_auc",
                          "images"}) {
    CHECK(doc.contains(key));
  }
  CHECK(doc["method"] == "gmar-l2");
  CHECK(doc["config"]["scope"] == "per-layer");
  CHECK(doc["images"][0]["insertion"].size() == 5);
  CHECK_THROWS_AS(evaluate_method(model, {}, Method::kRollout, RolloutConfig{}, PerturbationConfig{}), ParameterError);
  PerturbationConfig bad;
  bad.steps = 5;
  CHECK_THROWS_AS(evaluate_method(model, data, Method::kRollout, RolloutConfig{}, bad), ParameterError);
}
