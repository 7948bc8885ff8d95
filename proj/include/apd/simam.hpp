#pragma once

#include <span>

#include "apd/autograd.hpp"

namespace apd {

struct SimamConfig {
  double lambda = 1e-4;
};

// Spatial statistics of one (sample, channel) plane: mean and the M-1 divisor
// variance over all M = h*w neurons.
struct EnergyStats {
  double mu_hat = 0.0;
  double sigma2_hat = 0.0;
  int m = 0;
};

EnergyStats energy_stats(std::span<const double> plane);

// Minimal per-neuron energy 4(s2 + l) / ((t - mu)^2 + 2 s2 + 2 l).
double simam_energy_min(double t, double mu, double sigma2, double lambda);

struct EnergyMinimum {
  double e_min = 0.0;
  double w_t = 0.0;
  double b_t = 0.0;
};

// Minimizes the per-neuron linear-separability energy
//   (1/(M-1)) sum_i (-1 - (w x_i + b))^2 + (1 - (w t + b))^2 + lambda w^2
// directly over (w, b), without using the closed form above.
EnergyMinimum energy_numeric_oracle(double t, std::span<const double> neighbors,
                                    double lambda);

// x * sigmoid(1/e*) with 1/e* = (x - mu)^2 / (4 (s2 + lambda)) + 0.5.
Tensor4 simam_forward(const Tensor4& x, const SimamConfig& cfg = {});
// Attention weights only (same shape as x).
Tensor4 simam_weights(const Tensor4& x, const SimamConfig& cfg = {});
// Gradient w.r.t. x with the plane statistics differentiated through.
Tensor4 simam_backward(const Tensor4& x, const Tensor4& upstream,
                       const SimamConfig& cfg = {});

namespace ag {
Var simam(Tape* tape, const Var& x, const SimamConfig& cfg = {});
}  // namespace ag

}  // namespace apd
