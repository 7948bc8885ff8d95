#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "apd/activations.hpp"
#include "apd/autograd.hpp"

namespace apd {

// Named learnable tensors plus the batchnorm running statistics that travel
// with them. Every learnable tensor is registered exactly once.
class ParamRegistry {
 public:
  Var add(const std::string& name, Tensor4 init);
  std::shared_ptr<BatchNormStats> add_stats(const std::string& name,
                                            BatchNormStats stats);

  const std::vector<std::pair<std::string, Var>>& params() const {
    return params_;
  }
  const std::vector<std::pair<std::string, std::shared_ptr<BatchNormStats>>>&
  stats() const {
    return stats_;
  }
  Var find(const std::string& name) const;
  // Total number of scalar parameters.
  std::size_t scalar_count() const;

  void zero_grad();
  void set_training(bool training);

 private:
  std::vector<std::pair<std::string, Var>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<BatchNormStats>>> stats_;
};

struct BuildContext {
  ParamRegistry* registry = nullptr;
  std::mt19937_64* rng = nullptr;
  double bn_eps = 0.01;
  double bn_momentum = 0.1;

  // He-style fan-in normal initialization.
  Tensor4 he_normal(Shape shape, int fan_in) const;
};

class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(BuildContext& ctx, const std::string& name, ConvSpec spec);

  Var forward(Tape* tape, const Var& x) const;
  const ConvSpec& spec() const { return spec_; }
  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }

 private:
  ConvSpec spec_;
  Var weight_;
  Var bias_;
};

class BatchNorm2dLayer {
 public:
  BatchNorm2dLayer() = default;
  BatchNorm2dLayer(BuildContext& ctx, const std::string& name, int channels);

  Var forward(Tape* tape, const Var& x) const;
  const Var& gamma() const { return gamma_; }
  const Var& beta() const { return beta_; }
  BatchNormStats& stats() const { return *stats_; }

 private:
  Var gamma_;
  Var beta_;
  std::shared_ptr<BatchNormStats> stats_;
};

}  // namespace apd
