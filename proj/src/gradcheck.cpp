#include "apd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace apd {

namespace {

std::vector<std::size_t> coordinates(std::size_t n, const GradCheckOptions& opts) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n <= opts.full_check_limit) return idx;
  std::mt19937_64 rng(opts.seed ^ 0x9E3779B97F4A7C15ULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::max<std::size_t>(opts.sample_size, 32));
  std::sort(idx.begin(), idx.end());
  return idx;
}

void require_finite(double v, std::size_t coord, const char* what) {
  if (!std::isfinite(v)) {
    throw Error(ErrorCode::kNonFinite, std::string("grad_check: non-finite ") +
                                           what + " at coordinate " +
                                           std::to_string(coord));
  }
}

GradCheckReport compare(std::span<const double> analytic,
                        const std::vector<std::size_t>& coords,
                        const std::function<double(std::size_t)>& numeric,
                        double tol) {
  GradCheckReport r;
  for (std::size_t i : coords) {
    require_finite(analytic[i], i, "analytic gradient");
    const double fd = numeric(i);
    const double e = relative_error(analytic[i], fd);
    if (e > r.max_rel_error) {
      r.max_rel_error = e;
      r.worst_index = i;
    }
    ++r.checked;
  }
  r.pass = r.max_rel_error <= tol;
  return r;
}

}  // namespace

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

GradCheckReport grad_check(const TensorMap& f, const Tensor4& x,
                           const GradCheckOptions& opts) {
  if (!(opts.h > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "grad_check: step h must be > 0");
  }
  Var input = make_var(x, true);
  Tape tape;
  Var out = f(&tape, input);
  Tensor4 projection(out->value.shape());
  std::mt19937_64 rng(opts.seed + 17);
  std::uniform_real_distribution<double> uni(0.5, 1.5);
  std::bernoulli_distribution sign(0.5);
  for (double& v : projection.data()) v = sign(rng) ? uni(rng) : -uni(rng);

  auto objective = [&](const Tensor4& at) {
    Var probe = make_var(at, false);
    Var y = f(nullptr, probe);
    double acc = 0.0;
    for (std::size_t i = 0; i < y->value.size(); ++i) {
      acc += projection[i] * y->value[i];
    }
    return acc;
  };

  if (tape.empty()) {
    // f did not touch the input through any recorded op (e.g. identity).
    input->value.zero_grad();
    auto g = input->value.grad();
    if (out == input) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = projection[i];
    }
  } else {
    tape.backward(out, projection);
  }
  std::vector<double> analytic(input->value.grad().begin(),
                               input->value.grad().end());
  const auto coords = coordinates(x.size(), opts);
  Tensor4 probe = x;
  return compare(analytic, coords,
                 [&](std::size_t i) {
                   const double orig = probe[i];
                   probe[i] = orig + opts.h;
                   const double up = objective(probe);
                   probe[i] = orig - opts.h;
                   const double down = objective(probe);
                   probe[i] = orig;
                   require_finite(up, i, "objective");
                   require_finite(down, i, "objective");
                   return (up - down) / (2.0 * opts.h);
                 },
                 opts.tol);
}

GradCheckReport grad_check_scalar(const ScalarFn& f, const GradientFn& grad,
                                  std::span<const double> x,
                                  const GradCheckOptions& opts) {
  if (!(opts.h > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "grad_check: step h must be > 0");
  }
  const std::vector<double> analytic = grad(x);
  if (analytic.size() != x.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "grad_check: gradient length differs from input length");
  }
  std::vector<double> probe(x.begin(), x.end());
  return compare(analytic, coordinates(x.size(), opts),
                 [&](std::size_t i) {
                   const double orig = probe[i];
                   probe[i] = orig + opts.h;
                   const double up = f(probe);
                   probe[i] = orig - opts.h;
                   const double down = f(probe);
                   probe[i] = orig;
                   require_finite(up, i, "objective");
                   require_finite(down, i, "objective");
                   return (up - down) / (2.0 * opts.h);
                 },
                 opts.tol);
}

}  // namespace apd
