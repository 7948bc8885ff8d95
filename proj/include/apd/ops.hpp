#pragma once

// Forward/backward kernels over Tensor4. Every forward kernel is pure with
// respect to its inputs; backward kernels accumulate (+=) into the spans they
// are handed, so a caller can route several consumers into one gradient.

#include <span>
#include <vector>

#include "apd/tensor.hpp"

namespace apd {

struct ConvSpec {
  int c_in = 1;
  int c_out = 1;
  int k = 1;
  int s = 1;
  int p = 0;
  int g = 1;
  bool has_bias = false;

  Shape weight_shape() const { return {c_out, c_in / g, k, k}; }
  void validate() const;
};

// floor((d + 2p - k) / s) + 1, throwing when the result is not positive.
int pooled_extent(int d, int k, int s, int p, const char* what);

Tensor4 conv2d(const Tensor4& x, const ConvSpec& spec, const Tensor4& weight,
               std::span<const double> bias = {});

// Any of dx/dw/db may be empty to skip that gradient.
void conv2d_backward(const Tensor4& x, const ConvSpec& spec,
                     const Tensor4& weight, const Tensor4& dy,
                     std::span<double> dx, std::span<double> dw,
                     std::span<double> db);

Tensor4 maxpool2d(const Tensor4& x, int k, int s, int p);
void maxpool2d_backward(const Tensor4& x, int k, int s, int p,
                        const Tensor4& dy, std::span<double> dx);

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 0.01;
  double momentum = 0.1;
  bool training = true;

  static BatchNormStats fresh(int channels, double eps = 0.01,
                              double momentum = 0.1);
};

struct BatchNormState {
  std::vector<double> gamma;
  std::vector<double> beta;
  BatchNormStats stats;

  static BatchNormState identity(int channels, double eps = 0.01,
                                 double momentum = 0.1);
};

// Per-channel normalization constants actually used by a forward pass.
struct BatchNormCache {
  std::vector<double> mean;
  std::vector<double> inv_std;
  bool batch_stats = true;
};

Tensor4 batchnorm2d(const Tensor4& x, std::span<const double> gamma,
                    std::span<const double> beta, BatchNormStats& stats,
                    BatchNormCache* cache = nullptr);
Tensor4 batchnorm2d(const Tensor4& x, BatchNormState& state,
                    BatchNormCache* cache = nullptr);
void batchnorm2d_backward(const Tensor4& x, std::span<const double> gamma,
                          const BatchNormCache& cache, const Tensor4& dy,
                          std::span<double> dx, std::span<double> dgamma,
                          std::span<double> dbeta);

Tensor4 concat_channels(std::span<const Tensor4* const> parts);
Tensor4 concat_channels(const std::vector<Tensor4>& parts);
// Adds channel slice [c0, c0 + part channels) of dy into dpart.
void concat_channels_backward_part(const Tensor4& dy, int c0,
                                   const Shape& part, std::span<double> dpart);

Tensor4 resize_nearest(const Tensor4& x, int target_h, int target_w);
void resize_nearest_backward(const Shape& src, const Tensor4& dy,
                             std::span<double> dx);

Tensor4 add(const Tensor4& a, const Tensor4& b);
Tensor4 mul(const Tensor4& a, const Tensor4& b);
Tensor4 scalar_mul(const Tensor4& a, double s);
Tensor4 sigmoid(const Tensor4& x);
Tensor4 tanh(const Tensor4& x);
Tensor4 softplus(const Tensor4& x);
Tensor4 exp(const Tensor4& x);
Tensor4 log(const Tensor4& x);

double sigmoid(double x);
// log(1 + e^x) without overflow for large |x|.
double softplus(double x);

}  // namespace apd
