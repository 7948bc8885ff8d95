#include "apd/autograd.hpp"

#include <cmath>
#include <utility>

namespace apd {

Var make_var(Tensor4 value, bool requires_grad) {
  auto v = std::make_shared<Variable>();
  v->value = std::move(value);
  v->requires_grad = requires_grad;
  return v;
}

void Tape::record(std::string op, std::function<void()> backward) {
  names_.push_back(std::move(op));
  entries_.push_back(std::move(backward));
}

void Tape::backward(const Var& output, const Tensor4& seed) {
  if (entries_.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "backward: tape is empty");
  }
  require_same_shape(seed.shape(), output->value.shape(), "backward seed");
  auto g = output->value.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  replay();
}

void Tape::backward(const Var& output) {
  backward(output, Tensor4(output->value.shape(), 1.0));
}

void Tape::replay() {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

void Tape::clear() {
  names_.clear();
  entries_.clear();
}

bool should_record(const Tape* tape, std::initializer_list<const Var*> inputs) {
  if (tape == nullptr) return false;
  for (const Var* v : inputs) {
    if (*v && (*v)->requires_grad) return true;
  }
  return false;
}

namespace ag {

namespace {

Var output_of(Tensor4 value, bool record) { return make_var(std::move(value), record); }

// Output grad if anything downstream produced one.
bool has_upstream(const Var& out) {
  return std::as_const(out->value).grad().size() != 0;
}

std::span<double> grad_or_empty(const Var& v) {
  if (!v || !v->requires_grad) return {};
  return v->value.grad();
}

Tensor4 upstream(const Var& out) {
  const auto g = std::as_const(out->value).grad();
  return Tensor4(out->value.shape(), std::vector<double>(g.begin(), g.end()));
}

template <class Deriv>
Var unary(Tape* tape, const char* name, const Var& x, Tensor4 y, Deriv deriv) {
  const bool rec = should_record(tape, {&x});
  Var out = output_of(std::move(y), rec);
  if (rec) {
    tape->record(name, [x, out, deriv] {
      if (!has_upstream(out) || !x->requires_grad) return;
      auto g = out->value.grad();
      auto dx = x->value.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        dx[i] += g[i] * deriv(x->value[i], out->value[i]);
      }
    });
  }
  return out;
}

}  // namespace

Var conv2d(Tape* tape, const Var& x, const ConvSpec& spec, const Var& weight,
           const Var& bias) {
  std::span<const double> b;
  if (bias) b = bias->value.data();
  const bool rec = should_record(tape, {&x, &weight, &bias});
  Var out = output_of(apd::conv2d(x->value, spec, weight->value, b), rec);
  if (rec) {
    tape->record("conv2d", [x, spec, weight, bias, out] {
      if (!has_upstream(out)) return;
      apd::conv2d_backward(x->value, spec, weight->value, upstream(out),
                           grad_or_empty(x), grad_or_empty(weight),
                           grad_or_empty(bias));
    });
  }
  return out;
}

Var maxpool2d(Tape* tape, const Var& x, int k, int s, int p) {
  const bool rec = should_record(tape, {&x});
  Var out = output_of(apd::maxpool2d(x->value, k, s, p), rec);
  if (rec) {
    tape->record("maxpool2d", [x, k, s, p, out] {
      if (!has_upstream(out) || !x->requires_grad) return;
      apd::maxpool2d_backward(x->value, k, s, p, upstream(out), x->value.grad());
    });
  }
  return out;
}

Var batchnorm2d(Tape* tape, const Var& x, const Var& gamma, const Var& beta,
                BatchNormStats& stats) {
  const bool rec = should_record(tape, {&x, &gamma, &beta});
  auto cache = std::make_shared<BatchNormCache>();
  Var out = output_of(apd::batchnorm2d(x->value, gamma->value.data(),
                                       beta->value.data(), stats, cache.get()),
                      rec);
  if (rec) {
    tape->record("batchnorm2d", [x, gamma, beta, cache, out] {
      if (!has_upstream(out)) return;
      apd::batchnorm2d_backward(x->value, gamma->value.data(), *cache,
                                upstream(out), grad_or_empty(x),
                                grad_or_empty(gamma), grad_or_empty(beta));
    });
  }
  return out;
}

Var concat_channels(Tape* tape, const std::vector<Var>& parts) {
  std::vector<const Tensor4*> ptrs;
  bool rec = false;
  for (const auto& p : parts) {
    ptrs.push_back(&p->value);
    rec = rec || should_record(tape, {&p});
  }
  Var out = output_of(apd::concat_channels(std::span<const Tensor4* const>(ptrs)), rec);
  if (rec) {
    tape->record("concat_channels", [parts, out] {
      if (!has_upstream(out)) return;
      const Tensor4 g = upstream(out);
      int c0 = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) {
          apd::concat_channels_backward_part(g, c0, p->value.shape(),
                                             p->value.grad());
        }
        c0 += p->value.c();
      }
    });
  }
  return out;
}

Var resize_nearest(Tape* tape, const Var& x, int target_h, int target_w) {
  if (x->value.h() == target_h && x->value.w() == target_w) return x;
  const bool rec = should_record(tape, {&x});
  Var out = output_of(apd::resize_nearest(x->value, target_h, target_w), rec);
  if (rec) {
    tape->record("resize_nearest", [x, out] {
      if (!has_upstream(out) || !x->requires_grad) return;
      apd::resize_nearest_backward(x->value.shape(), upstream(out),
                                   x->value.grad());
    });
  }
  return out;
}

Var add(Tape* tape, const Var& a, const Var& b) {
  const bool rec = should_record(tape, {&a, &b});
  Var out = output_of(apd::add(a->value, b->value), rec);
  if (rec) {
    tape->record("add", [a, b, out] {
      if (!has_upstream(out)) return;
      auto g = out->value.grad();
      for (const Var* v : {&a, &b}) {
        if (!(*v)->requires_grad) continue;
        auto d = (*v)->value.grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
    });
  }
  return out;
}

Var mul(Tape* tape, const Var& a, const Var& b) {
  const bool rec = should_record(tape, {&a, &b});
  Var out = output_of(apd::mul(a->value, b->value), rec);
  if (rec) {
    tape->record("mul", [a, b, out] {
      if (!has_upstream(out)) return;
      auto g = out->value.grad();
      if (a->requires_grad) {
        auto d = a->value.grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * b->value[i];
      }
      if (b->requires_grad) {
        auto d = b->value.grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * a->value[i];
      }
    });
  }
  return out;
}

Var scalar_mul(Tape* tape, const Var& a, double s) {
  return unary(tape, "scalar_mul", a, apd::scalar_mul(a->value, s),
               [s](double, double) { return s; });
}

Var sigmoid(Tape* tape, const Var& x) {
  return unary(tape, "sigmoid", x, apd::sigmoid(x->value),
               [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Tape* tape, const Var& x) {
  return unary(tape, "tanh", x, apd::tanh(x->value),
               [](double, double y) { return 1.0 - y * y; });
}

Var softplus(Tape* tape, const Var& x) {
  return unary(tape, "softplus", x, apd::softplus(x->value),
               [](double v, double) { return apd::sigmoid(v); });
}

Var exp(Tape* tape, const Var& x) {
  return unary(tape, "exp", x, apd::exp(x->value),
               [](double, double y) { return y; });
}

Var log(Tape* tape, const Var& x) {
  return unary(tape, "log", x, apd::log(x->value),
               [](double v, double) { return 1.0 / v; });
}

Var sum(Tape* tape, const Var& x) {
  double acc = 0.0;
  for (double v : x->value.data()) acc += v;
  const bool rec = should_record(tape, {&x});
  Var out = output_of(Tensor4({1, 1, 1, 1}, acc), rec);
  if (rec) {
    tape->record("sum", [x, out] {
      if (!has_upstream(out) || !x->requires_grad) return;
      const double g = out->value.grad()[0];
      for (double& d : x->value.grad()) d += g;
    });
  }
  return out;
}

}  // namespace ag
}  // namespace apd
