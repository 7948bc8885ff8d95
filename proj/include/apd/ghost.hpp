#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "apd/simsppf.hpp"

namespace apd {

struct GhostSpec {
  int c_in = 0;
  int c_out = 0;
  int ratio = 2;
  int primary_k = 1;
  int cheap_k = 3;
  int stride = 1;
  ActivationKind activation = ActivationKind::kMish;
  bool activate = true;

  int intrinsic() const { return c_out / ratio; }
  void validate() const;
};

// Primary conv makes c_out/ratio intrinsic maps; a depthwise conv over them
// makes the remaining (ratio-1)*c_out/ratio ghost maps. Output is
// concat(intrinsic, ghosts). Each stage is conv -> batchnorm -> activation.
class GhostConv {
 public:
  GhostConv() = default;
  GhostConv(BuildContext& ctx, const std::string& name, const GhostSpec& spec);

  Var forward(Tape* tape, const Var& x) const;

  const GhostSpec& spec() const { return spec_; }
  const SimConv& primary() const { return primary_; }
  const SimConv& cheap() const { return cheap_; }

 private:
  GhostSpec spec_;
  SimConv primary_;
  SimConv cheap_;
};

struct C3GhostSpec {
  int c_in = 0;
  int c_out = 0;
  int n = 1;
  double expansion = 0.5;
  ActivationKind activation = ActivationKind::kMish;

  int hidden() const;
};

// CSP block. Branch A: 1x1 conv then n bottlenecks; branch B: 1x1 conv;
// concat(A, B) then a 1x1 fuse conv. `ghost` selects ghost bottlenecks
// (ghost_conv expand -> linear ghost_conv project) over the standard
// (1x1 -> 3x3) bottleneck.
class C3Block {
 public:
  C3Block() = default;
  C3Block(BuildContext& ctx, const std::string& name, const C3GhostSpec& spec,
          bool ghost);

  Var forward(Tape* tape, const Var& x) const;
  // Output of branch A (1x1 projection plus bottlenecks), for inspection.
  Var branch_a(Tape* tape, const Var& x) const;

  const C3GhostSpec& spec() const { return spec_; }
  bool ghost() const { return ghost_; }

 private:
  struct Bottleneck {
    GhostConv g1, g2;
    SimConv c1, c2;
  };
  Var bottleneck(Tape* tape, const Bottleneck& b, const Var& x) const;

  C3GhostSpec spec_;
  bool ghost_ = true;
  SimConv cv1_;
  SimConv cv2_;
  SimConv cv3_;
  std::vector<Bottleneck> blocks_;
};

// Exact parameter and FLOP counts (FLOPs = 2 * multiply-accumulates).
struct Cost {
  std::int64_t weights = 0;    // conv weights and biases
  std::int64_t batchnorm = 0;  // 2 per normalized channel
  std::int64_t flops = 0;
  int out_h = 0;
  int out_w = 0;

  std::int64_t params() const { return weights + batchnorm; }
  Cost& operator+=(const Cost& o);
};

Cost count_params_flops(const ConvSpec& spec, int h, int w);
// Conv followed by batchnorm.
Cost count_sim_conv(const ConvSpec& spec, int h, int w);
Cost count_params_flops(const GhostSpec& spec, int h, int w);
Cost count_params_flops(const C3GhostSpec& spec, int h, int w, bool ghost);

}  // namespace apd
