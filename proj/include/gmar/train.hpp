#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gmar/random.hpp"
#include "gmar/synthetic.hpp"
#include "gmar/vit.hpp"

namespace gmar {

/// Adam recipe from the ViT-L fine-tuning setup; only the epoch count is
/// scaled down for the toy task.
struct TrainConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::uint64_t seed = 42;
  /// Random horizontal flip plus random crop from a 2-px zero-padded image.
  bool augment = false;

  void validate() const;
};

/// Full-scale schedule, for reference only.
inline constexpr std::size_t kReferenceEpochs = 100;

/// -log softmax(logits)[label] as a rank-0 tensor.
Tensor cross_entropy(const Tensor& logits, std::size_t label);

using ParamGrads = std::map<std::string, Tensor>;

struct AdamState {
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

/// One bias-corrected Adam update. `step_index` counts from 1.
void adam_step(ModelParams& params, const ParamGrads& grads, AdamState& state, const TrainConfig& config,
               std::size_t step_index);

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;      // mean training loss over the epoch
  double accuracy = 0.0;  // running training accuracy over the epoch
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> history;
  /// Mean loss of the first mini-batch before any update.
  double initial_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Seeded mini-batch training. Initialization, shuffling and augmentation all
/// draw from one generator seeded with config.seed.
TrainResult train(const ViTConfig& model_config, const TrainConfig& config, const Dataset& dataset,
                  const EpochCallback& on_epoch = {});

Image augment_image(const Image& image, Rng& rng);

/// Fraction of items whose predicted class equals the label.
double accuracy(const ViTModel& model, const Dataset& dataset);

/// JSON array of {epoch, loss, accuracy}.
std::string history_to_json(const std::vector<EpochStats>& history);

}  // namespace gmar
