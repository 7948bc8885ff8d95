#include "apd/layers.hpp"

#include <cmath>

namespace apd {

Var ParamRegistry::add(const std::string& name, Tensor4 init) {
  if (find(name)) {
    throw Error(ErrorCode::kInvalidArgument, "duplicate parameter '" + name + "'");
  }
  Var v = make_var(std::move(init), true);
  params_.emplace_back(name, v);
  return v;
}

std::shared_ptr<BatchNormStats> ParamRegistry::add_stats(const std::string& name,
                                                         BatchNormStats stats) {
  auto p = std::make_shared<BatchNormStats>(std::move(stats));
  stats_.emplace_back(name, p);
  return p;
}

Var ParamRegistry::find(const std::string& name) const {
  for (const auto& [n, v] : params_) {
    if (n == name) return v;
  }
  return nullptr;
}

std::size_t ParamRegistry::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [n, v] : params_) total += v->value.size();
  return total;
}

void ParamRegistry::zero_grad() {
  for (auto& [n, v] : params_) v->value.zero_grad();
}

void ParamRegistry::set_training(bool training) {
  for (auto& [n, s] : stats_) s->training = training;
}

Tensor4 BuildContext::he_normal(Shape shape, int fan_in) const {
  Tensor4 t(shape);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (double& v : t.data()) v = dist(*rng);
  return t;
}

Conv2dLayer::Conv2dLayer(BuildContext& ctx, const std::string& name,
                         ConvSpec spec)
    : spec_(spec) {
  spec_.validate();
  const int fan_in = spec.c_in / spec.g * spec.k * spec.k;
  weight_ = ctx.registry->add(name + ".weight",
                              ctx.he_normal(spec.weight_shape(), fan_in));
  if (spec.has_bias) {
    bias_ = ctx.registry->add(name + ".bias", Tensor4({spec.c_out, 1, 1, 1}));
  }
}

Var Conv2dLayer::forward(Tape* tape, const Var& x) const {
  return ag::conv2d(tape, x, spec_, weight_, bias_);
}

BatchNorm2dLayer::BatchNorm2dLayer(BuildContext& ctx, const std::string& name,
                                   int channels) {
  gamma_ = ctx.registry->add(name + ".gamma", Tensor4({1, channels, 1, 1}, 1.0));
  beta_ = ctx.registry->add(name + ".beta", Tensor4({1, channels, 1, 1}, 0.0));
  stats_ = ctx.registry->add_stats(
      name, BatchNormStats::fresh(channels, ctx.bn_eps, ctx.bn_momentum));
}

Var BatchNorm2dLayer::forward(Tape* tape, const Var& x) const {
  return ag::batchnorm2d(tape, x, gamma_, beta_, *stats_);
}

}  // namespace apd
