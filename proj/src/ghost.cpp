#include "apd/ghost.hpp"

#include <cmath>

namespace apd {

void GhostSpec::validate() const {
  if (c_in < 1 || c_out < 1) {
    throw Error(ErrorCode::kInvalidArgument, "ghost_conv: channels must be >= 1");
  }
  if (ratio < 2 || c_out % ratio != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "ghost_conv: c_out=" + std::to_string(c_out) +
                    " is not divisible by ratio=" + std::to_string(ratio) +
                    " (ratio must be >= 2)");
  }
  if (cheap_k < 1 || cheap_k % 2 == 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "ghost_conv: cheap_k must be odd, got " + std::to_string(cheap_k));
  }
  if (primary_k < 1 || stride < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "ghost_conv: primary_k and stride must be >= 1");
  }
}

namespace {

const GhostSpec& validated(const GhostSpec& s) {
  s.validate();
  return s;
}

}  // namespace

GhostConv::GhostConv(BuildContext& ctx, const std::string& name,
                     const GhostSpec& spec)
    : spec_(validated(spec)),
      primary_(ctx, name + ".primary", spec.c_in, spec.intrinsic(),
               spec.primary_k, spec.stride, spec.activation, 1, spec.activate),
      cheap_(ctx, name + ".cheap", spec.intrinsic(),
             (spec.ratio - 1) * spec.intrinsic(), spec.cheap_k, 1,
             spec.activation, spec.intrinsic(), spec.activate) {}

Var GhostConv::forward(Tape* tape, const Var& x) const {
  if (x->value.c() != spec_.c_in) {
    throw Error(ErrorCode::kShapeMismatch,
                "ghost_conv: input dimension c is " +
                    std::to_string(x->value.c()) + ", expected " +
                    std::to_string(spec_.c_in));
  }
  Var intrinsic = primary_.forward(tape, x);
  Var ghosts = cheap_.forward(tape, intrinsic);
  return ag::concat_channels(tape, {intrinsic, ghosts});
}

int C3GhostSpec::hidden() const {
  const int h = static_cast<int>(std::lround(c_out * expansion));
  if (h < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "c3ghost: hidden channels round(c_out*expansion) < 1");
  }
  return h;
}

C3Block::C3Block(BuildContext& ctx, const std::string& name,
                 const C3GhostSpec& spec, bool ghost)
    : spec_(spec), ghost_(ghost) {
  if (spec.c_in < 1 || spec.c_out < 1 || spec.n < 0) {
    throw Error(ErrorCode::kInvalidArgument, "c3 block: invalid spec");
  }
  const int h = spec.hidden();
  const auto act = spec.activation;
  cv1_ = SimConv(ctx, name + ".cv1", spec.c_in, h, 1, 1, act);
  cv2_ = SimConv(ctx, name + ".cv2", spec.c_in, h, 1, 1, act);
  cv3_ = SimConv(ctx, name + ".cv3", 2 * h, spec.c_out, 1, 1, act);
  for (int i = 0; i < spec.n; ++i) {
    const std::string bn = name + ".m" + std::to_string(i);
    Bottleneck b;
    if (ghost) {
      if (h % 2 != 0) {
        throw Error(ErrorCode::kInvalidArgument,
                    "c3ghost: hidden channels must be even for ratio 2");
      }
      b.g1 = GhostConv(ctx, bn + ".ghost1", GhostSpec{h, h, 2, 1, 3, 1, act, true});
      b.g2 = GhostConv(ctx, bn + ".ghost2", GhostSpec{h, h, 2, 1, 3, 1, act, false});
    } else {
      b.c1 = SimConv(ctx, bn + ".cv1", h, h, 1, 1, act);
      b.c2 = SimConv(ctx, bn + ".cv2", h, h, 3, 1, act);
    }
    blocks_.push_back(std::move(b));
  }
}

Var C3Block::bottleneck(Tape* tape, const Bottleneck& b, const Var& x) const {
  Var y = ghost_ ? b.g2.forward(tape, b.g1.forward(tape, x))
                 : b.c2.forward(tape, b.c1.forward(tape, x));
  // Hidden width is preserved, so the residual always applies.
  return ag::add(tape, x, y);
}

Var C3Block::branch_a(Tape* tape, const Var& x) const {
  Var a = cv1_.forward(tape, x);
  for (const auto& b : blocks_) a = bottleneck(tape, b, a);
  return a;
}

Var C3Block::forward(Tape* tape, const Var& x) const {
  if (x->value.c() != spec_.c_in) {
    throw Error(ErrorCode::kShapeMismatch,
                "c3 block: input dimension c is " + std::to_string(x->value.c()) +
                    ", expected " + std::to_string(spec_.c_in));
  }
  Var a = branch_a(tape, x);
  Var b = cv2_.forward(tape, x);
  return cv3_.forward(tape, ag::concat_channels(tape, {a, b}));
}

Cost& Cost::operator+=(const Cost& o) {
  weights += o.weights;
  batchnorm += o.batchnorm;
  flops += o.flops;
  out_h = o.out_h;
  out_w = o.out_w;
  return *this;
}

Cost count_params_flops(const ConvSpec& spec, int h, int w) {
  spec.validate();
  Cost c;
  const std::int64_t per_out =
      static_cast<std::int64_t>(spec.c_in / spec.g) * spec.k * spec.k;
  c.weights = spec.c_out * per_out + (spec.has_bias ? spec.c_out : 0);
  c.out_h = pooled_extent(h, spec.k, spec.s, spec.p, "count h");
  c.out_w = pooled_extent(w, spec.k, spec.s, spec.p, "count w");
  c.flops = 2 * spec.c_out * per_out * c.out_h * c.out_w;
  return c;
}

Cost count_sim_conv(const ConvSpec& spec, int h, int w) {
  Cost c = count_params_flops(spec, h, w);
  c.batchnorm = 2 * spec.c_out;
  return c;
}

Cost count_params_flops(const GhostSpec& spec, int h, int w) {
  spec.validate();
  const int m = spec.intrinsic();
  Cost c = count_sim_conv(
      ConvSpec{spec.c_in, m, spec.primary_k, spec.stride, spec.primary_k / 2, 1},
      h, w);
  c += count_sim_conv(ConvSpec{m, (spec.ratio - 1) * m, spec.cheap_k, 1,
                               spec.cheap_k / 2, m},
                      c.out_h, c.out_w);
  return c;
}

Cost count_params_flops(const C3GhostSpec& spec, int h, int w, bool ghost) {
  const int hid = spec.hidden();
  Cost c;
  c += count_sim_conv(ConvSpec{spec.c_in, hid, 1, 1, 0, 1}, h, w);
  c += count_sim_conv(ConvSpec{spec.c_in, hid, 1, 1, 0, 1}, h, w);
  for (int i = 0; i < spec.n; ++i) {
    if (ghost) {
      c += count_params_flops(GhostSpec{hid, hid, 2, 1, 3, 1}, h, w);
      c += count_params_flops(GhostSpec{hid, hid, 2, 1, 3, 1}, h, w);
    } else {
      c += count_sim_conv(ConvSpec{hid, hid, 1, 1, 0, 1}, h, w);
      c += count_sim_conv(ConvSpec{hid, hid, 3, 1, 1, 1}, h, w);
    }
  }
  c += count_sim_conv(ConvSpec{2 * hid, spec.c_out, 1, 1, 0, 1}, h, w);
  return c;
}

}  // namespace apd
