#include "apd/igd.hpp"

namespace apd {

void PyramidFeatures::validate() const {
  const Shape s3 = p3->value.shape();
  const Shape s4 = p4->value.shape();
  const Shape s5 = p5->value.shape();
  if (s3.n != s4.n || s4.n != s5.n) {
    throw Error(ErrorCode::kShapeMismatch, "pyramid: batch sizes differ");
  }
  auto halves = [](const Shape& a, const Shape& b) {
    return (a.h + 1) / 2 == b.h && (a.w + 1) / 2 == b.w;
  };
  if (!halves(s3, s4) || !halves(s4, s5)) {
    throw Error(ErrorCode::kShapeMismatch,
                "pyramid: spatial dims must halve p3->p4->p5, got " +
                    to_string(s3) + " " + to_string(s4) + " " + to_string(s5));
  }
}

Injector::Injector(BuildContext& ctx, const std::string& name, int c_fused,
                   int c_level)
    : proj_(ctx, name + ".proj", ConvSpec{c_fused, c_level, 1, 1, 0, 1, false}),
      gate_(ctx, name + ".gate", ConvSpec{c_level, c_level, 1, 1, 0, 1, true}) {}

Var Injector::forward(Tape* tape, const Var& level, const Var& fused) const {
  Var proj = proj_.forward(tape, fused);
  if (proj->value.c() != level->value.c()) {
    throw Error(ErrorCode::kShapeMismatch,
                "inject: projection has " + std::to_string(proj->value.c()) +
                    " channels, level has " + std::to_string(level->value.c()));
  }
  proj = ag::resize_nearest(tape, proj, level->value.h(), level->value.w());
  Var gate = ag::sigmoid(tape, gate_.forward(tape, proj));
  return ag::add(tape, level, ag::mul(tape, gate, proj));
}

Gatherer::Gatherer(BuildContext& ctx, const std::string& name,
                   std::array<int, 3> channels, int c_g, ActivationKind act) {
  for (int i = 0; i < 3; ++i) {
    align_[i] = SimConv(ctx, name + ".align" + std::to_string(i + 3),
                        channels[i], c_g, 1, 1, act);
  }
  fuse_ = SimConv(ctx, name + ".fuse", 3 * c_g, c_g, 1, 1, act);
}

Var Gatherer::forward(Tape* tape, const PyramidFeatures& f) const {
  f.validate();
  const int th = f.p4->value.h();
  const int tw = f.p4->value.w();
  std::vector<Var> aligned;
  const auto levels = f.levels();
  for (int i = 0; i < 3; ++i) {
    aligned.push_back(
        ag::resize_nearest(tape, align_[i].forward(tape, levels[i]), th, tw));
  }
  return fuse_.forward(tape, ag::concat_channels(tape, aligned));
}

IgdNeck::IgdNeck(BuildContext& ctx, const std::string& name,
                 const IgdSpec& spec)
    : spec_(spec) {
  if (spec_.c_g == 0) spec_.c_g = spec_.channels[1];
  if (spec_.passes < 1 || spec_.passes > 2) {
    throw Error(ErrorCode::kInvalidArgument, "igd: passes must be 1 or 2");
  }
  const auto& c = spec_.channels;
  // Pass 0 feeds p3/p4, pass 1 feeds p4/p5.
  const std::array<std::array<int, 2>, 2> targets{{{c[0], c[1]}, {c[1], c[2]}}};
  for (int p = 0; p < spec_.passes; ++p) {
    const std::string pn = name + ".pass" + std::to_string(p);
    gather_[p] = Gatherer(ctx, pn + ".gather", c, spec_.c_g, spec_.activation);
    for (int s = 0; s < 2; ++s) {
      inject_[p][s] = Injector(ctx, pn + ".inject" + std::to_string(s),
                               spec_.c_g, targets[p][s]);
    }
  }
}

PyramidFeatures IgdNeck::forward(Tape* tape, const PyramidFeatures& f) const {
  f.validate();
  PyramidFeatures out = f;
  Var fused = gather_[0].forward(tape, out);
  out.p3 = inject_[0][0].forward(tape, out.p3, fused);
  out.p4 = inject_[0][1].forward(tape, out.p4, fused);
  if (spec_.passes > 1) {
    fused = gather_[1].forward(tape, out);
    out.p4 = inject_[1][0].forward(tape, out.p4, fused);
    out.p5 = inject_[1][1].forward(tape, out.p5, fused);
  }
  return out;
}

}  // namespace apd
