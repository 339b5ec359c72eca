#pragma once

// Saliency faithfulness metrics: Average Drop, Average Increase, and the
// insertion / deletion area-under-curve scores. Perturbation happens at patch
// granularity; the target class is the model's prediction on the clean image.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gmar/attribution.hpp"
#include "gmar/image.hpp"
#include "gmar/synthetic.hpp"
#include "gmar/vit.hpp"

namespace gmar {

enum class InsertionBaseline { kBlur, kGray };
enum class DeletionBaseline { kZero, kGray };

struct PerturbationConfig {
  /// Number of reveal/remove steps; 0 means one patch per step.
  std::size_t steps = 0;
  InsertionBaseline insertion = InsertionBaseline::kBlur;
  DeletionBaseline deletion = DeletionBaseline::kZero;

  /// Steps actually used for a grid with `patches` cells. Throws ParameterError
  /// when the requested count exceeds the patch count.
  std::size_t resolved_steps(std::size_t patches) const;
};

struct CurvePoint {
  double fraction = 0.0;
  double probability = 0.0;
};

struct Curve {
  std::vector<CurvePoint> points;
  double auc = 0.0;
};

/// Trapezoidal area over the points' fractions.
double trapezoid_auc(std::span<const CurvePoint> points);

/// Patch indices by descending saliency, ties broken by ascending index.
std::vector<std::size_t> patch_order(const SaliencyMap& map);

/// Target-class probability on image * upsampled(map).
double explanation_confidence(const ViTModel& model, const Image& image, const SaliencyMap& map,
                              std::size_t target_class);

/// Starts from the insertion baseline and reveals original patches, most
/// salient first. The final point is the unmodified image.
Curve insertion_curve(const ViTModel& model, const Image& image, const SaliencyMap& map,
                      const PerturbationConfig& config, std::size_t target_class);

/// Starts from the original image and replaces patches with the deletion
/// baseline, most salient first.
Curve deletion_curve(const ViTModel& model, const Image& image, const SaliencyMap& map,
                     const PerturbationConfig& config, std::size_t target_class);

/// Image that insertion starts from / deletion ends at.
Image insertion_baseline(const Image& image, const ViTConfig& config, InsertionBaseline kind);
Image deletion_baseline(const Image& image, DeletionBaseline kind);

struct Confidence {
  double full = 0.0;       // y_c on the clean image
  double explained = 0.0;  // o_c on the masked image
};

/// Mean over images of max(0, y_c - o_c) / y_c * 100.
double average_drop(std::span<const Confidence> batch);
/// Percentage of images with o_c > y_c.
double average_increase(std::span<const Confidence> batch);

struct ImageResult {
  std::size_t index = 0;
  std::size_t target_class = 0;
  Confidence confidence;
  Curve insertion;
  Curve deletion;
};

struct MetricReport {
  Method method = Method::kRollout;
  RolloutConfig rollout;
  PerturbationConfig perturbation;
  std::uint64_t seed = 0;
  double avg_drop = 0.0;
  double avg_increase = 0.0;
  double insertion_auc = 0.0;
  double deletion_auc = 0.0;
  std::vector<ImageResult> images;
};

/// Explains every image with `method` and aggregates the four scores. The
/// random method uses seed + image index per image.
MetricReport evaluate_method(const ViTModel& model, const Dataset& dataset, Method method,
                             const RolloutConfig& rollout, const PerturbationConfig& perturbation,
                             std::uint64_t seed = 0);

/// Report as a JSON document: method, config echo, the four scores and the
/// per-image curves as [fraction, probability] pairs.
std::string report_to_json(const MetricReport& report);

const char* to_string(InsertionBaseline kind);
const char* to_string(DeletionBaseline kind);
const char* to_string(WeightScope scope);

}  // namespace gmar
