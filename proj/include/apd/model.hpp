#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "apd/detection.hpp"
#include "apd/ghost.hpp"
#include "apd/igd.hpp"
#include "apd/losses.hpp"
#include "apd/simam.hpp"

namespace apd {

struct ModelConfig {
  int num_classes = 2;
  double width = 1.0;  // base channels = round(16 * width)
  double depth = 1.0;  // bottlenecks per C3 stage = max(1, round(depth))
  int reg_max = 8;
  std::array<int, 3> strides{8, 16, 32};
  ActivationKind activation = ActivationKind::kMish;
  bool use_simsppf = true;
  bool use_simam = true;
  bool use_igd = true;
  bool use_c3ghost = true;
  double simam_lambda = 1e-4;
  int igd_c_g = 0;     // IGD fused width; 0 -> P4 channels
  int igd_passes = 2;  // 1 = top-down only
  double conf_threshold = 0.1;
  double nms_iou = 0.5;
  double bn_eps = 0.01;
  double bn_momentum = 0.1;

  void validate() const;
  int base_channels() const;
  int repeats() const;
  std::array<int, 3> level_channels() const;
  int head_channels() const;
  int igd_width() const;
};

// The five rows of the ablation table: 1 = baseline, then +SimSPPF,
// +SimAM, +IGD, +Mish (full model).
ModelConfig ablation_config(int row, const ModelConfig& base = {});

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  // Image dims must be divisible by 32.
  RawPredictions forward(Tape* tape, const Var& image) const;
  RawPredictions forward(const Tensor4& image) const;

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& registry() { return registry_; }
  const ParamRegistry& registry() const { return registry_; }
  std::size_t parameter_count() const { return registry_.scalar_count(); }
  void set_training(bool training) { registry_.set_training(training); }

  struct BlockCost {
    std::string name;
    Cost cost;
  };
  // Per-block parameter and FLOP accounting for an h x w input.
  std::vector<BlockCost> block_costs(int h, int w) const;

 private:
  struct Downsample {
    SimConv plain;
    GhostConv ghost;
  };
  struct Head {
    SimConv cls_stem, box_stem;
    GhostConv cls_ghost, box_ghost;
    Conv2dLayer cls_out, box_out;
  };
  Var downsample(Tape* tape, const Downsample& d, const Var& x) const;
  Var head_branch(Tape* tape, const SimConv& s, const GhostConv& g,
                  const Conv2dLayer& out, const Var& x) const;

  ModelConfig cfg_;
  ParamRegistry registry_;
  std::mt19937_64 rng_;
  SimConv stem1_, stem2_;
  std::array<Downsample, 3> down_;
  std::array<C3Block, 3> c3_;
  SimSppf sppf_;
  PlainSppf plain_sppf_;
  IgdNeck neck_;
  std::array<Head, 3> heads_;
};

// Expectation decode, confidence threshold and class-wise greedy NMS.
// Boxes are normalized and clipped to [0,1]. image_id = batch index +
// image_id_offset.
std::vector<Detection> decode(const RawPredictions& preds, const ModelConfig& cfg,
                              int image_id_offset = 0);
// Greedy NMS over one class: keeps boxes in descending confidence order
// (ties: input order), dropping any with IoU > iou_t against a kept box.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_t);

// Weights file "W1": header line, then per tensor a little-endian uint32 name
// length, the name bytes and a T4 record. Batchnorm running statistics are
// stored as <name>.running_mean / <name>.running_var.
void save_weights(std::ostream& os, const Model& model);
void load_weights(std::istream& is, Model& model);
void save_weights(const std::string& path, const Model& model);
void load_weights(const std::string& path, Model& model);

}  // namespace apd
