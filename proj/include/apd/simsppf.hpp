#pragma once

#include <string>

#include "apd/layers.hpp"

namespace apd {

// Conv (no bias, same padding k/2) -> BatchNorm -> activation.
class SimConv {
 public:
  SimConv() = default;
  SimConv(BuildContext& ctx, const std::string& name, int c_in, int c_out,
          int k, int s, ActivationKind act = ActivationKind::kMish, int g = 1,
          bool activate = true);

  Var forward(Tape* tape, const Var& x) const;

  const Conv2dLayer& conv() const { return conv_; }
  const BatchNorm2dLayer& bn() const { return bn_; }
  ActivationKind activation() const { return act_; }

 private:
  Conv2dLayer conv_;
  BatchNorm2dLayer bn_;
  ActivationKind act_ = ActivationKind::kMish;
  bool activate_ = true;
};

struct SimSppfSpec {
  int c1 = 0;
  int c_mid = 0;  // 0 -> c1 / 2
  int c_out = 0;  // 0 -> c1
  int pool_k = 5;
  int pool_s = 1;
  int pool_p = 2;

  SimSppfSpec resolved() const;
};

// x1 = cv1(x); y1..y3 = cascaded maxpools; out = cv2(concat(x1, y1, y2, y3)).
// cv2 is a 3x3 SimConv. All convs use Mish.
class SimSppf {
 public:
  SimSppf() = default;
  SimSppf(BuildContext& ctx, const std::string& name, const SimSppfSpec& spec);

  Var forward(Tape* tape, const Var& x) const;

  struct Trace {
    Var x1, y1, y2, y3, concat, out;
  };
  Trace forward_traced(Tape* tape, const Var& x) const;

  const SimSppfSpec& spec() const { return spec_; }

 private:
  SimSppfSpec spec_;
  SimConv cv1_;
  SimConv cv2_;
};

// Conventional fast pyramid pooling baseline: 1x1 convs on both ends, using
// the caller's activation.
class PlainSppf {
 public:
  PlainSppf() = default;
  PlainSppf(BuildContext& ctx, const std::string& name, const SimSppfSpec& spec,
            ActivationKind act);

  Var forward(Tape* tape, const Var& x) const;

 private:
  SimSppfSpec spec_;
  SimConv cv1_;
  SimConv cv2_;
};

}  // namespace apd
