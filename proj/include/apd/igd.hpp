#pragma once

#include <array>
#include <string>

#include "apd/simsppf.hpp"

namespace apd {

// Three pyramid levels at strides 8/16/32.
struct PyramidFeatures {
  Var p3;
  Var p4;
  Var p5;

  std::array<Var, 3> levels() const { return {p3, p4, p5}; }
  // Throws unless p4 and p5 halve the spatial dims of the previous level.
  void validate() const;
};

// Fused global tensor -> one pyramid level, through a gated residual:
//   proj = resize(conv1x1(fused)), gate = sigmoid(conv1x1(proj) + b),
//   out = level + gate * proj.
class Injector {
 public:
  Injector() = default;
  Injector(BuildContext& ctx, const std::string& name, int c_fused, int c_level);

  Var forward(Tape* tape, const Var& level, const Var& fused) const;

  const Conv2dLayer& projection() const { return proj_; }
  const Conv2dLayer& gate() const { return gate_; }

 private:
  Conv2dLayer proj_;
  Conv2dLayer gate_;
};

// Per-level 1x1 align convs to width c_g, nearest resize to p4, concat, and a
// SimConv fuse back to c_g channels.
class Gatherer {
 public:
  Gatherer() = default;
  Gatherer(BuildContext& ctx, const std::string& name,
           std::array<int, 3> channels, int c_g, ActivationKind act);

  Var forward(Tape* tape, const PyramidFeatures& f) const;

 private:
  std::array<SimConv, 3> align_;
  SimConv fuse_;
};

struct IgdSpec {
  std::array<int, 3> channels{};  // c3, c4, c5
  int c_g = 0;                    // 0 -> c4
  int passes = 2;                 // 1 = top-down only
  ActivationKind activation = ActivationKind::kMish;
};

// Pass 1 (top-down) injects the gathered tensor into p3 and p4; pass 2
// (bottom-up) re-gathers the updated levels and injects into p4 and p5.
class IgdNeck {
 public:
  IgdNeck() = default;
  IgdNeck(BuildContext& ctx, const std::string& name, const IgdSpec& spec);

  PyramidFeatures forward(Tape* tape, const PyramidFeatures& f) const;

  const IgdSpec& spec() const { return spec_; }
  const Gatherer& gatherer(int pass) const { return gather_[pass]; }
  const Injector& injector(int pass, int slot) const { return inject_[pass][slot]; }

 private:
  IgdSpec spec_;
  std::array<Gatherer, 2> gather_;
  std::array<std::array<Injector, 2>, 2> inject_;
};

}  // namespace apd
