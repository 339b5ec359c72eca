#include "gmar/train.hpp"

#include <cmath>
#include <json.hpp>
#include <numeric>

#include "gmar/error.hpp"

namespace gmar {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ParameterError("beta1 and beta2 must lie in (0, 1)");
  }
  if (!(epsilon > 0.0)) throw ParameterError("epsilon must be positive");
  if (batch_size == 0) throw ParameterError("batch_size must be positive");
  if (epochs == 0) throw ParameterError("epochs must be positive");
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  if (logits.rank() != 1) throw DimensionError("cross_entropy expects a logit vector, got " + shape_to_string(logits.shape()));
  if (label >= logits.size()) {
    throw ParameterError("label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) +
                         " classes");
  }
  return mul_scalar(reshape(slice(log_softmax_lastdim(logits), 0, label, label + 1), {}), -1.0);
}

void adam_step(ModelParams& params, const ParamGrads& grads, AdamState& state, const TrainConfig& config,
               std::size_t step_index) {
  if (step_index == 0) throw ContractError("adam step_index counts from 1");
  const double t = static_cast<double>(step_index);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [name, param] : params) {
    const auto g_it = grads.find(name);
    if (g_it == grads.end()) throw ContractError("no gradient for parameter " + name);
    const Tensor& grad = g_it->second;
    if (grad.shape() != param.shape()) {
      throw ContractError("gradient for " + name + " is " + shape_to_string(grad.shape()) + ", parameter is " +
                          shape_to_string(param.shape()));
    }
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.empty()) m.assign(param.size(), 0.0);
    if (v.empty()) v.assign(param.size(), 0.0);

    std::vector<double> updated = param.to_vector();
    for (std::size_t i = 0; i < updated.size(); ++i) {
      const double g = grad[i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      updated[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
    param = Tensor(param.shape(), std::move(updated));
  }
}

Image augment_image(const Image& image, Rng& rng) {
  constexpr std::size_t kPad = 2;
  Image src = rng.below(2) == 1 ? horizontal_flip(image) : image;
  const std::size_t ox = static_cast<std::size_t>(rng.below(2 * kPad + 1));
  const std::size_t oy = static_cast<std::size_t>(rng.below(2 * kPad + 1));
  Image out(image.width(), image.height());
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      // Position in the padded image is (x + ox, y + oy); padding is zero.
      const std::size_t px = x + ox;
      const std::size_t py = y + oy;
      if (px < kPad || py < kPad || px - kPad >= image.width() || py - kPad >= image.height()) continue;
      for (std::size_t c = 0; c < Image::kChannels; ++c) out.at(x, y, c) = src.at(px - kPad, py - kPad, c);
    }
  }
  return out;
}

TrainResult train(const ViTConfig& model_config, const TrainConfig& config, const Dataset& dataset,
                  const EpochCallback& on_epoch) {
  config.validate();
  model_config.validate();
  if (dataset.empty()) throw ParameterError("cannot train on an empty dataset");

  Rng rng(config.seed);
  TrainResult result;
  result.params = init_params(model_config, rng.next_u64());
  AdamState adam;
  std::size_t step = 0;
  bool first_batch = true;

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_total = 0.0;
    std::size_t correct = 0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(start + config.batch_size, order.size());
      std::map<std::string, std::vector<double>> grad_sums;
      for (const auto& [name, p] : result.params) grad_sums[name].assign(p.size(), 0.0);
      double batch_loss = 0.0;

      // Per-sample tapes, reduced in batch order.
      for (std::size_t i = start; i < end; ++i) {
        const LabeledImage& item = dataset[order[i]];
        const Image image = config.augment ? augment_image(item.image, rng) : item.image;
        auto tape = Tape::create();
        ModelParams taped;
        for (const auto& [name, p] : result.params) taped.emplace(name, tape->watch(p));
        const Tensor logits = forward_logits(model_config, taped, patchify(image, model_config));
        const Tensor loss = cross_entropy(logits, item.label);
        const Gradients grads = tape->backward(loss);
        for (const auto& [name, p] : taped) {
          const Tensor g = grads.of(p);
          auto& sum = grad_sums[name];
          for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += g[j];
        }
        batch_loss += loss.item();
        correct += argmax(logits.data()) == item.label ? 1 : 0;
      }

      const double n = static_cast<double>(end - start);
      if (first_batch) {
        result.initial_loss = batch_loss / n;
        first_batch = false;
      }
      loss_total += batch_loss;

      ParamGrads mean_grads;
      for (auto& [name, sum] : grad_sums) {
        for (double& v : sum) v /= n;
        mean_grads.emplace(name, Tensor(result.params.at(name).shape(), std::move(sum)));
      }
      adam_step(result.params, mean_grads, adam, config, ++step);
    }

    EpochStats stats{epoch, loss_total / static_cast<double>(dataset.size()),
                     static_cast<double>(correct) / static_cast<double>(dataset.size())};
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

double accuracy(const ViTModel& model, const Dataset& dataset) {
  if (dataset.empty()) throw ParameterError("accuracy of an empty dataset");
  std::size_t correct = 0;
  for (const LabeledImage& item : dataset) correct += predict(model, item.image).label == item.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

std::string history_to_json(const std::vector<EpochStats>& history) {
  nlohmann::json arr = nlohmann::json::array();
  for (const EpochStats& e : history) arr.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}});
  return arr.dump(2) + "\n";
}

}  // namespace gmar
