#include "gmar/metrics.hpp"

#include <algorithm>
#include <json.hpp>
#include <numeric>

#include "gmar/error.hpp"

namespace gmar {

namespace {

// Copies patch `p` of `src` into `dst`.
void copy_patch(const Image& src, Image& dst, std::size_t patch, const ViTConfig& cfg) {
  const std::size_t side = cfg.grid_side();
  const std::size_t ps = cfg.patch_size;
  const std::size_t x0 = (patch % side) * ps;
  const std::size_t y0 = (patch / side) * ps;
  for (std::size_t y = y0; y < y0 + ps; ++y)
    for (std::size_t x = x0; x < x0 + ps; ++x)
      for (std::size_t c = 0; c < Image::kChannels; ++c) dst.at(x, y, c) = src.at(x, y, c);
}

double target_probability(const ViTModel& model, const Image& image, std::size_t target_class) {
  return softmax(forward_logits(model, image).data()).at(target_class);
}

// Shared driver: start from `start`, paint patches of `paint` in saliency order.
Curve perturbation_curve(const ViTModel& model, const Image& start, const Image& paint, const SaliencyMap& map,
                         const PerturbationConfig& config, std::size_t target_class) {
  const ViTConfig& cfg = model.config;
  const std::size_t patches = cfg.num_patches();
  if (static_cast<std::size_t>(map.grid.size()) != patches) {
    throw DimensionError("saliency grid has " + std::to_string(map.grid.size()) + " cells, model has " +
                         std::to_string(patches) + " patches");
  }
  const std::size_t steps = config.resolved_steps(patches);
  const auto order = patch_order(map);

  Curve curve;
  Image current = start;
  std::size_t painted = 0;
  curve.points.push_back({0.0, target_probability(model, current, target_class)});
  for (std::size_t s = 1; s <= steps; ++s) {
    const std::size_t upto = s * patches / steps;
    for (; painted < upto; ++painted) copy_patch(paint, current, order[painted], cfg);
    curve.points.push_back({static_cast<double>(painted) / static_cast<double>(patches),
                            target_probability(model, current, target_class)});
  }
  curve.auc = trapezoid_auc(curve.points);
  return curve;
}

}  // namespace

std::size_t PerturbationConfig::resolved_steps(std::size_t patches) const {
  if (steps == 0) return patches;
  if (steps > patches) {
    throw ParameterError("steps " + std::to_string(steps) + " exceeds the " + std::to_string(patches) + " patches");
  }
  return steps;
}

double trapezoid_auc(std::span<const CurvePoint> points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += 0.5 * (points[i].fraction - points[i - 1].fraction) * (points[i].probability + points[i - 1].probability);
  }
  return area;
}

std::vector<std::size_t> patch_order(const SaliencyMap& map) {
  const std::size_t n = static_cast<std::size_t>(map.grid.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const double* v = map.grid.data();
  std::stable_sort(order.begin(), order.end(), [v](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  return order;
}

double explanation_confidence(const ViTModel& model, const Image& image, const SaliencyMap& map,
                              std::size_t target_class) {
  const Grid mask = resize_bilinear(map.grid, image.height(), image.width());
  return target_probability(model, apply_mask(image, mask), target_class);
}

Image insertion_baseline(const Image& image, const ViTConfig& config, InsertionBaseline kind) {
  if (kind == InsertionBaseline::kGray) return Image(image.width(), image.height(), 0.5);
  return gaussian_blur(image, static_cast<double>(config.patch_size) / 2.0);
}

Image deletion_baseline(const Image& image, DeletionBaseline kind) {
  return Image(image.width(), image.height(), kind == DeletionBaseline::kGray ? 0.5 : 0.0);
}

Curve insertion_curve(const ViTModel& model, const Image& image, const SaliencyMap& map,
                      const PerturbationConfig& config, std::size_t target_class) {
  return perturbation_curve(model, insertion_baseline(image, model.config, config.insertion), image, map, config,
                            target_class);
}

Curve deletion_curve(const ViTModel& model, const Image& image, const SaliencyMap& map,
                     const PerturbationConfig& config, std::size_t target_class) {
  return perturbation_curve(model, image, deletion_baseline(image, config.deletion), map, config, target_class);
}

double average_drop(std::span<const Confidence> batch) {
  if (batch.empty()) throw ParameterError("average_drop of an empty batch");
  double total = 0.0;
  for (const Confidence& c : batch) total += std::max(0.0, c.full - c.explained) / c.full * 100.0;
  return total / static_cast<double>(batch.size());
}

double average_increase(std::span<const Confidence> batch) {
  if (batch.empty()) throw ParameterError("average_increase of an empty batch");
  std::size_t count = 0;
  for (const Confidence& c : batch) count += c.full < c.explained ? 1 : 0;
  return static_cast<double>(count) * 100.0 / static_cast<double>(batch.size());
}

MetricReport evaluate_method(const ViTModel& model, const Dataset& dataset, Method method,
                             const RolloutConfig& rollout, const PerturbationConfig& perturbation,
                             std::uint64_t seed) {
  if (dataset.empty()) throw ParameterError("evaluate_method needs a non-empty dataset");
  perturbation.resolved_steps(model.config.num_patches());

  MetricReport report;
  report.method = method;
  report.rollout = rollout;
  report.perturbation = perturbation;
  report.seed = seed;

  std::vector<Confidence> confidences;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Image& image = dataset[i].image;
    const Explanation e = explain(model, image, method, rollout, seed + i);
    ImageResult r;
    r.index = i;
    r.target_class = e.predicted_class;
    r.confidence.full = e.probabilities.at(e.predicted_class);
    r.confidence.explained = explanation_confidence(model, image, e.saliency, r.target_class);
    r.insertion = insertion_curve(model, image, e.saliency, perturbation, r.target_class);
    r.deletion = deletion_curve(model, image, e.saliency, perturbation, r.target_class);
    confidences.push_back(r.confidence);
    report.insertion_auc += r.insertion.auc;
    report.deletion_auc += r.deletion.auc;
    report.images.push_back(std::move(r));
  }
  report.insertion_auc /= static_cast<double>(dataset.size());
  report.deletion_auc /= static_cast<double>(dataset.size());
  report.avg_drop = average_drop(confidences);
  report.avg_increase = average_increase(confidences);
  return report;
}

const char* to_string(InsertionBaseline kind) { return kind == InsertionBaseline::kBlur ? "blur" : "gray"; }
const char* to_string(DeletionBaseline kind) { return kind == DeletionBaseline::kZero ? "zero" : "gray"; }
const char* to_string(WeightScope scope) { return scope == WeightScope::kPerLayer ? "per-layer" : "global"; }

std::string report_to_json(const MetricReport& report) {
  using nlohmann::json;
  const auto curve_json = [](const Curve& c) {
    json arr = json::array();
    for (const CurvePoint& p : c.points) arr.push_back({p.fraction, p.probability});
    return arr;
  };
  json images = json::array();
  for (const ImageResult& r : report.images) {
    images.push_back({
        {"index", r.index},
        {"target_class", r.target_class},
        {"full_confidence", r.confidence.full},
        {"explanation_confidence", r.confidence.explained},
        {"insertion_auc", r.insertion.auc},
        {"deletion_auc", r.deletion.auc},
        {"insertion", curve_json(r.insertion)},
        {"deletion", curve_json(r.deletion)},
    });
  }
  json doc = {
      {"method", std::string(method_name(report.method))},
      {"config",
       {
           {"alpha", report.rollout.alpha},
           {"scope", to_string(report.rollout.scope)},
           {"row_normalize", report.rollout.row_normalize},
           {"steps", report.perturbation.steps},
           {"insertion_baseline", to_string(report.perturbation.insertion)},
           {"deletion_baseline", to_string(report.perturbation.deletion)},
           {"seed", report.seed},
       }},
      {"num_images", report.images.size()},
      {"avg_drop", report.avg_drop},
      {"avg_increase", report.avg_increase},
      {"insertion_auc", report.insertion_auc},
      {"deletion_auc", report.deletion_auc},
      {"images", std::move(images)},
  };
  return doc.dump(2) + "\n";
}

}  // namespace gmar
