#include "apd/simsppf.hpp"

namespace apd {

SimConv::SimConv(BuildContext& ctx, const std::string& name, int c_in,
                 int c_out, int k, int s, ActivationKind act, int g,
                 bool activate)
    : conv_(ctx, name + ".conv",
            ConvSpec{c_in, c_out, k, s, k / 2, g, /*has_bias=*/false}),
      bn_(ctx, name + ".bn", c_out),
      act_(act),
      activate_(activate) {}

Var SimConv::forward(Tape* tape, const Var& x) const {
  if (x->value.c() != conv_.spec().c_in) {
    throw Error(ErrorCode::kShapeMismatch,
                "sim_conv: input dimension c is " + std::to_string(x->value.c()) +
                    ", expected " + std::to_string(conv_.spec().c_in));
  }
  Var y = bn_.forward(tape, conv_.forward(tape, x));
  return activate_ ? ag::activate(tape, y, act_) : y;
}

SimSppfSpec SimSppfSpec::resolved() const {
  SimSppfSpec s = *this;
  if (s.c_mid == 0) s.c_mid = c1 / 2;
  if (s.c_out == 0) s.c_out = c1;
  if (s.c1 < 1 || s.c_mid < 1 || s.c_out < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "simsppf: channel counts must be >= 1 (c1=" + std::to_string(c1) +
                    ")");
  }
  return s;
}

SimSppf::SimSppf(BuildContext& ctx, const std::string& name,
                 const SimSppfSpec& spec)
    : spec_(spec.resolved()),
      cv1_(ctx, name + ".cv1", spec_.c1, spec_.c_mid, 1, 1),
      cv2_(ctx, name + ".cv2", 4 * spec_.c_mid, spec_.c_out, 3, 1) {}

SimSppf::Trace SimSppf::forward_traced(Tape* tape, const Var& x) const {
  if (x->value.c() != spec_.c1) {
    throw Error(ErrorCode::kShapeMismatch,
                "simsppf: input dimension c is " + std::to_string(x->value.c()) +
                    ", expected c1=" + std::to_string(spec_.c1));
  }
  Trace t;
  t.x1 = cv1_.forward(tape, x);
  t.y1 = ag::maxpool2d(tape, t.x1, spec_.pool_k, spec_.pool_s, spec_.pool_p);
  t.y2 = ag::maxpool2d(tape, t.y1, spec_.pool_k, spec_.pool_s, spec_.pool_p);
  t.y3 = ag::maxpool2d(tape, t.y2, spec_.pool_k, spec_.pool_s, spec_.pool_p);
  t.concat = ag::concat_channels(tape, {t.x1, t.y1, t.y2, t.y3});
  t.out = cv2_.forward(tape, t.concat);
  return t;
}

Var SimSppf::forward(Tape* tape, const Var& x) const {
  return forward_traced(tape, x).out;
}

PlainSppf::PlainSppf(BuildContext& ctx, const std::string& name,
                     const SimSppfSpec& spec, ActivationKind act)
    : spec_(spec.resolved()),
      cv1_(ctx, name + ".cv1", spec_.c1, spec_.c_mid, 1, 1, act),
      cv2_(ctx, name + ".cv2", 4 * spec_.c_mid, spec_.c_out, 1, 1, act) {}

Var PlainSppf::forward(Tape* tape, const Var& x) const {
  if (x->value.c() != spec_.c1) {
    throw Error(ErrorCode::kShapeMismatch,
                "sppf: input dimension c is " + std::to_string(x->value.c()) +
                    ", expected c1=" + std::to_string(spec_.c1));
  }
  Var x1 = cv1_.forward(tape, x);
  Var y1 = ag::maxpool2d(tape, x1, spec_.pool_k, spec_.pool_s, spec_.pool_p);
  Var y2 = ag::maxpool2d(tape, y1, spec_.pool_k, spec_.pool_s, spec_.pool_p);
  Var y3 = ag::maxpool2d(tape, y2, spec_.pool_k, spec_.pool_s, spec_.pool_p);
  return cv2_.forward(tape, ag::concat_channels(tape, {x1, y1, y2, y3}));
}

}  // namespace apd
