#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "apd/autograd.hpp"

namespace apd {

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  // Tensors larger than this are checked on a random coordinate sample.
  std::size_t full_check_limit = 256;
  std::size_t sample_size = 48;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool pass = false;
};

// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

// Builds the graph with `f`, reduces its output with a fixed random projection
// and compares the tape gradient w.r.t. `x` against central differences.
using TensorMap = std::function<Var(Tape*, const Var&)>;
GradCheckReport grad_check(const TensorMap& f, const Tensor4& x,
                           const GradCheckOptions& opts = {});

// Same comparison for a scalar function with a hand-written gradient.
using ScalarFn = std::function<double(std::span<const double>)>;
using GradientFn = std::function<std::vector<double>(std::span<const double>)>;
GradCheckReport grad_check_scalar(const ScalarFn& f, const GradientFn& grad,
                                  std::span<const double> x,
                                  const GradCheckOptions& opts = {});

}  // namespace apd
