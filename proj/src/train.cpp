#include "apd/train.hpp"

#include <cmath>
#include <numbers>

namespace apd {

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) {
    throw Error(ErrorCode::kInvalidArgument, "train config: " + m);
  };
  if (steps < 0) bad("steps must be >= 0");
  if (!(lr >= 0.0)) bad("lr must be >= 0");
  if (lr_final_fraction < 0.0 || lr_final_fraction > 1.0) {
    bad("lr_final_fraction outside [0,1]");
  }
  if (warmup_steps < 0) bad("warmup_steps must be >= 0");
  if (weight_decay < 0.0) bad("weight_decay must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    bad("betas must lie in [0,1)");
  }
  if (!(adam_eps > 0.0)) bad("adam_eps must be > 0");
  loss_weights.validate();
}

double TrainConfig::lr_at(int step) const {
  if (step < warmup_steps) return lr * (step + 1) / static_cast<double>(warmup_steps);
  const int span = std::max(1, steps - warmup_steps);
  const double t = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
  const double floor = lr * lr_final_fraction;
  return floor + 0.5 * (lr - floor) * (1.0 + std::cos(std::numbers::pi * t));
}

TrainConfig train_config_from(const KeyValueConfig& kv, TrainConfig c) {
  c.steps = kv.get_int("steps", c.steps);
  c.lr = kv.get_double("lr", c.lr);
  c.lr_final_fraction = kv.get_double("lr_final_fraction", c.lr_final_fraction);
  c.warmup_steps = kv.get_int("warmup_steps", c.warmup_steps);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
  c.grad_clip = kv.get_double("grad_clip", c.grad_clip);
  c.loss_weights.cls = kv.get_double("loss_cls", c.loss_weights.cls);
  c.loss_weights.box = kv.get_double("loss_box", c.loss_weights.box);
  c.loss_weights.dfl = kv.get_double("loss_dfl", c.loss_weights.dfl);
  c.validate();
  return c;
}

AdamW::AdamW(const ParamRegistry& registry, const TrainConfig& cfg) : cfg_(cfg) {
  for (const auto& [name, var] : registry.params()) {
    m_.emplace_back(var->value.size(), 0.0);
    v_.emplace_back(var->value.size(), 0.0);
  }
}

void AdamW::step(ParamRegistry& registry, double lr) {
  const auto& params = registry.params();
  if (params.size() != m_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "adamw: registry changed size");
  }
  double scale = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& [name, var] : params) {
      for (double g : std::as_const(var->value).grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor4& w = params[p].second->value;
    const auto g = std::as_const(w).grad();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i] * scale;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      w[i] -= lr * (mh / (std::sqrt(vh) + cfg_.adam_eps) + cfg_.weight_decay * w[i]);
    }
  }
}

namespace {

void check_finite(const LossResult& r, int step) {
  const std::pair<const char*, double> terms[] = {
      {"cls", r.cls}, {"box", r.box}, {"dfl", r.dfl}, {"total", r.total}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kNonFinite, "training step " + std::to_string(step) +
                                             ": non-finite " + name + " loss");
    }
  }
}

StepLoss to_step(const LossResult& r, int step, double lr) {
  return {step, r.total, r.cls, r.box, r.dfl, lr};
}

}  // namespace

StepLoss evaluate_loss(Model& model, const Dataset& data, const LossWeights& w) {
  model.set_training(true);
  const RawPredictions p = model.forward(data.images);
  const LossResult r = total_loss(p, data.gts, w, false);
  return to_step(r, 0, 0.0);
}

TrainResult train_toy(Model& model, const Dataset& data, const TrainConfig& cfg,
                      const std::function<void(const StepLoss&)>& on_step) {
  cfg.validate();
  const Shape s = data.images.shape();
  if (s.h % 32 != 0 || s.w % 32 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "train: image dims must be divisible by 32");
  }
  if (static_cast<int>(data.gts.size()) != s.n) {
    throw Error(ErrorCode::kShapeMismatch, "train: annotation count != image count");
  }
  model.set_training(true);
  AdamW opt(model.registry(), cfg);
  TrainResult out;
  const Var input = make_var(data.images);
  for (int step = 0; step < cfg.steps; ++step) {
    model.registry().zero_grad();
    Tape tape;
    const RawPredictions p = model.forward(&tape, input);
    const LossResult r = total_loss(p, data.gts, cfg.loss_weights, true);
    check_finite(r, step);
    const double lr = cfg.lr_at(step);
    out.curve.push_back(to_step(r, step, lr));
    if (on_step) on_step(out.curve.back());
    for (std::size_t l = 0; l < p.levels.size(); ++l) {
      auto gc = p.levels[l].cls->value.grad();
      auto gb = p.levels[l].box->value.grad();
      for (std::size_t i = 0; i < gc.size(); ++i) gc[i] += r.grad_cls[l][i];
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += r.grad_box[l][i];
    }
    tape.replay();
    opt.step(model.registry(), lr);
  }
  StepLoss final_loss = evaluate_loss(model, data, cfg.loss_weights);
  final_loss.step = cfg.steps;
  if (!std::isfinite(final_loss.total)) {
    throw Error(ErrorCode::kNonFinite, "training: non-finite final loss");
  }
  out.curve.push_back(final_loss);
  if (on_step) on_step(final_loss);
  return out;
}

void recalibrate_batchnorm(Model& model, const Tensor4& images) {
  auto& stats = model.registry().stats();
  std::vector<double> saved;
  for (const auto& [name, st] : stats) {
    saved.push_back(st->momentum);
    st->momentum = 1.0;
  }
  model.set_training(true);
  (void)model.forward(images);
  for (std::size_t i = 0; i < stats.size(); ++i) stats[i].second->momentum = saved[i];
}

std::vector<Detection> predict(Model& model, const Tensor4& images) {
  model.set_training(false);
  const RawPredictions p = model.forward(images);
  return decode(p, model.config());
}

}  // namespace apd
