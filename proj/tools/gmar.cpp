// gmar: train a toy ViT, explain images, score saliency methods.
//
// Exit codes: 0 success, 2 usage or parameter error, 3 data or format error.

#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "gmar/attribution.hpp"
#include "gmar/error.hpp"
#include "gmar/metrics.hpp"
#include "gmar/render.hpp"
#include "gmar/synthetic.hpp"
#include "gmar/train.hpp"
#include "gmar/weights.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitFormat = 3;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw gmar::ParameterError("cannot write " + path.string());
  out << text;
  if (!out) throw gmar::ParameterError("write failed for " + path.string());
}

// Fails early instead of after a long run.
void check_writable(const fs::path& path) {
  std::ofstream probe(path, std::ios::binary | std::ios::app);
  if (!probe) throw gmar::ParameterError("cannot write " + path.string());
}

fs::path with_suffix(const std::string& prefix, const std::string& suffix) { return fs::path(prefix + suffix); }

gmar::WeightScope parse_scope(const std::string& s) {
  if (s == "per-layer") return gmar::WeightScope::kPerLayer;
  if (s == "global") return gmar::WeightScope::kGlobal;
  throw gmar::ParameterError("unknown scope '" + s + "'");
}

gmar::Image load_input(const gmar::ViTModel& model, const std::string& path) {
  gmar::Image image = gmar::load_image_ppm(path);
  const std::size_t n = model.config.image_size;
  if (image.width() != n || image.height() != n) {
    throw gmar::DimensionError("image is " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                               ", model expects " + std::to_string(n) + "x" + std::to_string(n));
  }
  return image;
}

json grid_json(const gmar::Grid& g) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < g.cols(); ++c) row.push_back(g(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json explanation_json(const gmar::Explanation& e) {
  json doc = {
      {"method", std::string(gmar::method_name(e.method))},
      {"predicted_class", e.predicted_class},
      {"probabilities", e.probabilities},
      {"saliency", grid_json(e.saliency.grid)},
      {"constant_saliency", e.saliency.constant_input},
  };
  if (e.head_weights) {
    doc["head_weights"] = e.head_weights->weights;
    doc["head_weight_scope"] = gmar::to_string(e.head_weights->scope);
    doc["head_weights_degenerate"] = e.head_weights->degenerate;
  } else {
    doc["head_weights"] = nullptr;
  }
  return doc;
}

struct TrainArgs {
  std::string out = "weights.gmarw";
  std::uint64_t seed = 0;
  std::size_t epochs = gmar::TrainConfig{}.epochs;
  std::size_t samples = 800;
};

int run_train(const TrainArgs& a) {
  gmar::TrainConfig cfg;
  cfg.seed = a.seed;
  cfg.epochs = a.epochs;
  cfg.validate();
  if (a.samples == 0) throw gmar::ParameterError("--samples must be positive");
  const fs::path history_path = with_suffix(a.out, ".history.json");
  check_writable(a.out);
  check_writable(history_path);

  const gmar::ViTConfig model_config;
  const gmar::Dataset data = gmar::generate_synthetic(a.seed, a.samples, model_config.image_size);
  const gmar::TrainResult result = gmar::train(model_config, cfg, data, [](const gmar::EpochStats& s) {
    std::cerr << "epoch " << s.epoch << " loss " << s.loss << " acc " << s.accuracy << "\n";
  });
  gmar::save_weights({model_config, result.params}, a.out);
  write_text(history_path, gmar::history_to_json(result.history));
  return kExitOk;
}

struct ExplainArgs {
  std::string weights;
  std::string image;
  std::string method = "gmar-l1";
  double alpha = 1.0;
  std::string scope = "per-layer";
  std::string out;
  std::uint64_t seed = 0;
};

int run_explain(const ExplainArgs& a) {
  const gmar::Method method = gmar::parse_method(a.method);
  gmar::RolloutConfig rc;
  rc.alpha = a.alpha;
  rc.scope = parse_scope(a.scope);
  rc.validate();
  const gmar::ViTModel model = gmar::load_weights(a.weights);
  const gmar::Image image = load_input(model, a.image);

  const gmar::Explanation e = gmar::explain(model, image, method, rc, a.seed);
  gmar::save_image_ppm(gmar::render_heatmap(e.saliency.grid, image, gmar::RenderMode::kRaw),
                       with_suffix(a.out, ".map.ppm"));
  gmar::save_image_ppm(gmar::render_heatmap(e.saliency.grid, image, gmar::RenderMode::kOverlay),
                       with_suffix(a.out, ".overlay.ppm"));
  json doc = explanation_json(e);
  doc["alpha"] = rc.alpha;
  doc["scope"] = gmar::to_string(rc.scope);
  doc["seed"] = a.seed;
  write_text(with_suffix(a.out, ".json"), doc.dump(2) + "\n");
  return kExitOk;
}

struct EvaluateArgs {
  std::string weights;
  std::string dataset;
  std::string method;
  std::size_t steps = 0;
  double alpha = 1.0;
  std::string scope = "per-layer";
  std::string insertion = "blur";
  std::string deletion = "zero";
  std::string out;
  std::uint64_t seed = 0;
};

int run_evaluate(const EvaluateArgs& a) {
  const gmar::Method method = gmar::parse_method(a.method);
  gmar::RolloutConfig rc;
  rc.alpha = a.alpha;
  rc.scope = parse_scope(a.scope);
  rc.validate();
  gmar::PerturbationConfig pc;
  pc.steps = a.steps;
  pc.insertion = a.insertion == "gray" ? gmar::InsertionBaseline::kGray : gmar::InsertionBaseline::kBlur;
  pc.deletion = a.deletion == "gray" ? gmar::DeletionBaseline::kGray : gmar::DeletionBaseline::kZero;
  const gmar::DatasetRef ref = gmar::parse_dataset_ref(a.dataset);
  const gmar::ViTModel model = gmar::load_weights(a.weights);
  const gmar::Dataset data = gmar::generate_synthetic(ref.seed, ref.count, model.config.image_size);

  const gmar::MetricReport report = gmar::evaluate_method(model, data, method, rc, pc, a.seed);
  write_text(a.out, gmar::report_to_json(report));
  std::ostringstream row;
  row.setf(std::ios::fixed);
  row.precision(4);
  row << gmar::method_name(method) << " avg_drop=" << report.avg_drop << " avg_increase=" << report.avg_increase
      << " insertion=" << report.insertion_auc << " deletion=" << report.deletion_auc;
  std::cout << row.str() << "\n";
  return kExitOk;
}

struct CompareArgs {
  std::string weights;
  std::string image;
  std::vector<std::string> methods;
  double alpha = 1.0;
  std::string scope = "per-layer";
  std::string out;
  std::uint64_t seed = 0;
};

int run_compare(const CompareArgs& a) {
  if (a.methods.size() != 2) {
    throw gmar::ParameterError("--methods takes exactly two methods, got " + std::to_string(a.methods.size()));
  }
  const gmar::Method first = gmar::parse_method(a.methods[0]);
  const gmar::Method second = gmar::parse_method(a.methods[1]);
  gmar::RolloutConfig rc;
  rc.alpha = a.alpha;
  rc.scope = parse_scope(a.scope);
  rc.validate();
  const gmar::ViTModel model = gmar::load_weights(a.weights);
  const gmar::Image image = load_input(model, a.image);

  const gmar::Explanation ea = gmar::explain(model, image, first, rc, a.seed);
  const gmar::Explanation eb = gmar::explain(model, image, second, rc, a.seed);
  const gmar::Grid diff = gmar::difference_map(ea.saliency, eb.saliency);

  json maps = json::array();
  for (const gmar::Explanation* e : {&ea, &eb}) {
    const std::string tag = "." + std::string(gmar::method_name(e->method));
    const std::string slot = e == &ea ? ".a" : ".b";
    gmar::save_image_ppm(gmar::render_heatmap(e->saliency.grid, image, gmar::RenderMode::kRaw),
                         with_suffix(a.out, slot + tag + ".map.ppm"));
    gmar::save_image_ppm(gmar::render_heatmap(e->saliency.grid, image, gmar::RenderMode::kOverlay),
                         with_suffix(a.out, slot + tag + ".overlay.ppm"));
    maps.push_back(explanation_json(*e));
  }
  gmar::save_image_ppm(gmar::render_heatmap(diff, image, gmar::RenderMode::kDiverging),
                       with_suffix(a.out, ".diff.ppm"));
  const json doc = {
      {"methods", {gmar::method_name(first), gmar::method_name(second)}},
      {"alpha", rc.alpha},
      {"scope", gmar::to_string(rc.scope)},
      {"seed", a.seed},
      {"explanations", std::move(maps)},
      {"difference", grid_json(diff)},
      {"max_abs_difference", diff.cwiseAbs().maxCoeff()},
  };
  write_text(with_suffix(a.out, ".json"), doc.dump(2) + "\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-weighted attention rollout for a toy Vision Transformer"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train-toy", "Train the toy ViT on the synthetic quadrant task");
  train_cmd->add_option("--out", train.out, "Weight file to write; history goes to <out>.history.json")
      ->capture_default_str();
  train_cmd->add_option("--seed", train.seed, "Seed for data, initialization and shuffling")->capture_default_str();
  train_cmd->add_option("--epochs", train.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--samples", train.samples, "Training images in total")->capture_default_str();

  ExplainArgs explain;
  auto* explain_cmd = app.add_subcommand("explain", "Saliency map for one image");
  explain_cmd->add_option("--weights", explain.weights, "Weight file")->required();
  explain_cmd->add_option("--image", explain.image, "Input PPM (P6)")->required();
  explain_cmd->add_option("--method", explain.method, "rollout|gmar-l1|gmar-l2|gradcam|random")
      ->capture_default_str();
  explain_cmd->add_option("--alpha", explain.alpha, "Identity weight in the GMAR recursion")->capture_default_str();
  explain_cmd->add_option("--scope", explain.scope, "Head-weight scope: per-layer|global")->capture_default_str();
  explain_cmd->add_option("--out", explain.out, "Output prefix")->required();
  explain_cmd->add_option("--seed", explain.seed, "Seed for the random baseline")->capture_default_str();

  EvaluateArgs evaluate;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Faithfulness metrics over a synthetic dataset");
  evaluate_cmd->add_option("--weights", evaluate.weights, "Weight file")->required();
  evaluate_cmd->add_option("--dataset", evaluate.dataset, "synthetic:SEED:N")->required();
  evaluate_cmd->add_option("--method", evaluate.method, "rollout|gmar-l1|gmar-l2|gradcam|random")->required();
  evaluate_cmd->add_option("--steps", evaluate.steps, "Perturbation steps, 0 = one per patch")->capture_default_str();
  evaluate_cmd->add_option("--alpha", evaluate.alpha, "Identity weight in the GMAR recursion")->capture_default_str();
  evaluate_cmd->add_option("--scope", evaluate.scope, "Head-weight scope: per-layer|global")->capture_default_str();
  evaluate_cmd->add_option("--insertion-baseline", evaluate.insertion, "blur|gray")
      ->check(CLI::IsMember({"blur", "gray"}))
      ->capture_default_str();
  evaluate_cmd->add_option("--deletion-baseline", evaluate.deletion, "zero|gray")
      ->check(CLI::IsMember({"zero", "gray"}))
      ->capture_default_str();
  evaluate_cmd->add_option("--out", evaluate.out, "Report JSON path")->required();
  evaluate_cmd->add_option("--seed", evaluate.seed, "Seed for the random baseline")->capture_default_str();

  CompareArgs compare;
  auto* compare_cmd = app.add_subcommand("compare", "Two saliency maps and their difference for one image");
  compare_cmd->add_option("--weights", compare.weights, "Weight file")->required();
  compare_cmd->add_option("--image", compare.image, "Input PPM (P6)")->required();
  compare_cmd->add_option("--methods", compare.methods, "Two methods, comma separated")
      ->required()
      ->delimiter(',');
  compare_cmd->add_option("--alpha", compare.alpha, "Identity weight in the GMAR recursion")->capture_default_str();
  compare_cmd->add_option("--scope", compare.scope, "Head-weight scope: per-layer|global")->capture_default_str();
  compare_cmd->add_option("--out", compare.out, "Output prefix")->required();
  compare_cmd->add_option("--seed", compare.seed, "Seed for the random baseline")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train_cmd) return run_train(train);
    if (*explain_cmd) return run_explain(explain);
    if (*evaluate_cmd) return run_evaluate(evaluate);
    if (*compare_cmd) return run_compare(compare);
  } catch (const gmar::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const gmar::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
