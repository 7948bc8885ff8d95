#pragma once

#include <string>
#include <string_view>

#include "apd/autograd.hpp"

namespace apd {

enum class ActivationKind { kMish, kSilu, kRelu };

std::string to_string(ActivationKind kind);
ActivationKind parse_activation(std::string_view tag);

// mish(x) = x * tanh(softplus(x))
double mish(double x);
double mish_derivative(double x);
double silu(double x);
double silu_derivative(double x);
double relu(double x);
// Subgradient 0 at the kink.
double relu_derivative(double x);

Tensor4 mish(const Tensor4& x);
Tensor4 mish_backward(const Tensor4& x, const Tensor4& upstream);
Tensor4 silu(const Tensor4& x);
Tensor4 silu_backward(const Tensor4& x, const Tensor4& upstream);
Tensor4 relu(const Tensor4& x);
Tensor4 relu_backward(const Tensor4& x, const Tensor4& upstream);

Tensor4 activate(const Tensor4& x, ActivationKind kind);

namespace ag {
Var activate(Tape* tape, const Var& x, ActivationKind kind);
}  // namespace ag

}  // namespace apd
