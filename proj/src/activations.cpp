#include "apd/activations.hpp"

#include <cmath>
#include <utility>

namespace apd {

std::string to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kMish: return "mish";
    case ActivationKind::kSilu: return "silu";
    case ActivationKind::kRelu: return "relu";
  }
  return "mish";
}

ActivationKind parse_activation(std::string_view tag) {
  if (tag == "mish") return ActivationKind::kMish;
  if (tag == "silu") return ActivationKind::kSilu;
  if (tag == "relu") return ActivationKind::kRelu;
  throw Error(ErrorCode::kParse,
              "unknown activation '" + std::string(tag) + "' (mish|silu|relu)");
}

double mish(double x) { return x * std::tanh(softplus(x)); }

double mish_derivative(double x) {
  const double t = std::tanh(softplus(x));
  return t + x * (1.0 - t * t) * sigmoid(x);
}

double silu(double x) { return x * sigmoid(x); }

double silu_derivative(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

double relu_derivative(double x) { return x > 0.0 ? 1.0 : 0.0; }

namespace {

template <class F>
Tensor4 apply(const Tensor4& x, F f) {
  Tensor4 y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}

template <class D>
Tensor4 apply_backward(const Tensor4& x, const Tensor4& upstream, D d) {
  require_same_shape(x.shape(), upstream.shape(), "activation backward");
  Tensor4 g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = upstream[i] * d(x[i]);
  return g;
}

using PointFn = double (*)(double);

PointFn forward_fn(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kSilu: return &silu;
    case ActivationKind::kRelu: return &relu;
    case ActivationKind::kMish: break;
  }
  return &mish;
}

PointFn derivative_fn(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kSilu: return &silu_derivative;
    case ActivationKind::kRelu: return &relu_derivative;
    case ActivationKind::kMish: break;
  }
  return &mish_derivative;
}

}  // namespace

Tensor4 mish(const Tensor4& x) { return apply(x, [](double v) { return mish(v); }); }
Tensor4 mish_backward(const Tensor4& x, const Tensor4& upstream) {
  return apply_backward(x, upstream, [](double v) { return mish_derivative(v); });
}
Tensor4 silu(const Tensor4& x) { return apply(x, [](double v) { return silu(v); }); }
Tensor4 silu_backward(const Tensor4& x, const Tensor4& upstream) {
  return apply_backward(x, upstream, [](double v) { return silu_derivative(v); });
}
Tensor4 relu(const Tensor4& x) { return apply(x, [](double v) { return relu(v); }); }
Tensor4 relu_backward(const Tensor4& x, const Tensor4& upstream) {
  return apply_backward(x, upstream, [](double v) { return relu_derivative(v); });
}

Tensor4 activate(const Tensor4& x, ActivationKind kind) {
  return apply(x, forward_fn(kind));
}

namespace ag {

Var activate(Tape* tape, const Var& x, ActivationKind kind) {
  const bool rec = should_record(tape, {&x});
  Var out = make_var(apd::activate(x->value, kind), rec);
  if (rec) {
    const PointFn deriv = derivative_fn(kind);
    tape->record(to_string(kind), [x, out, deriv] {
      const auto g = std::as_const(out->value).grad();
      if (g.empty() || !x->requires_grad) return;
      auto dx = x->value.grad();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * deriv(x->value[i]);
    });
  }
  return out;
}

}  // namespace ag
}  // namespace apd
