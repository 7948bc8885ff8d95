#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "apd/io.hpp"
#include "apd/losses.hpp"
#include "apd/model.hpp"

namespace apd {

struct TrainConfig {
  int steps = 1500;
  double lr = 0.01;
  double lr_final_fraction = 0.01;  // cosine decay to lr * this
  int warmup_steps = 50;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 10.0;  // global L2 norm; <= 0 disables
  LossWeights loss_weights;

  void validate() const;
  double lr_at(int step) const;
};

TrainConfig train_config_from(const KeyValueConfig& kv, TrainConfig base = {});

struct StepLoss {
  int step = 0;
  double total = 0.0;
  double cls = 0.0;
  double box = 0.0;
  double dfl = 0.0;
  double lr = 0.0;
};

// Adaptive-moment optimizer with decoupled weight decay. Moment buffers
// mirror the parameter registry.
class AdamW {
 public:
  AdamW(const ParamRegistry& registry, const TrainConfig& cfg);
  // Applies one update using the gradients held by the parameters.
  void step(ParamRegistry& registry, double lr);
  int steps_taken() const { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int t_ = 0;
};

struct TrainResult {
  std::vector<StepLoss> curve;  // one entry per step plus a final evaluation
};

// Full-batch training on the whole dataset. Throws kNonFinite naming the
// offending loss term.
TrainResult train_toy(Model& model, const Dataset& data, const TrainConfig& cfg,
                      const std::function<void(const StepLoss&)>& on_step = {});

// Loss of the model on the dataset (training-mode batchnorm, no update).
StepLoss evaluate_loss(Model& model, const Dataset& data, const LossWeights& w);

// Sets running statistics to the dataset's batch statistics.
void recalibrate_batchnorm(Model& model, const Tensor4& images);

// Inference-mode detections for every image (image_id = batch index).
std::vector<Detection> predict(Model& model, const Tensor4& images);

}  // namespace apd
