#include "apd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace apd {

namespace {

// Unrolls one image/group into a (cin_g * k * k) x (ho * wo) matrix.
void im2col(const double* x, int c, int h, int w, int k, int s, int p, int ho,
            int wo, double* col) {
  const int plane = ho * wo;
  for (int ci = 0; ci < c; ++ci) {
    const double* xc = x + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) *
                                plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s - p + ky;
          double* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s - p + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int c, int h, int w, int k, int s, int p,
                int ho, int wo, double* dx) {
  const int plane = ho * wo;
  for (int ci = 0; ci < c; ++ci) {
    double* xc = dx + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row =
            col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = xc + static_cast<std::size_t>(iy) * w;
          const double* src = row + oy * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s - p + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvSpec& spec) {
  return spec.k == 1 && spec.s == 1 && spec.p == 0;
}

void check_conv_inputs(const Tensor4& x, const ConvSpec& spec,
                       const Tensor4& weight, std::size_t bias_len) {
  spec.validate();
  if (x.c() != spec.c_in) {
    throw Error(ErrorCode::kShapeMismatch,
                "conv2d: input dimension c is " + std::to_string(x.c()) +
                    ", expected c_in=" + std::to_string(spec.c_in));
  }
  require_same_shape(weight.shape(), spec.weight_shape(), "conv2d weight");
  if (bias_len != 0 && bias_len != static_cast<std::size_t>(spec.c_out)) {
    throw Error(ErrorCode::kShapeMismatch,
                "conv2d: bias length " + std::to_string(bias_len) +
                    " differs from c_out=" + std::to_string(spec.c_out));
  }
}

}  // namespace

void ConvSpec::validate() const {
  if (c_in < 1 || c_out < 1 || g < 1 || c_in % g != 0 || c_out % g != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "conv spec: c_in=" + std::to_string(c_in) +
                    " and c_out=" + std::to_string(c_out) +
                    " must be positive multiples of g=" + std::to_string(g));
  }
  if (k < 1 || s < 1 || p < 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "conv spec: require k>=1, s>=1, p>=0 (k=" + std::to_string(k) +
                    ", s=" + std::to_string(s) + ", p=" + std::to_string(p) +
                    ")");
  }
}

int pooled_extent(int d, int k, int s, int p, const char* what) {
  const int num = d + 2 * p - k;
  const int out = num < 0 ? 0 : num / s + 1;
  if (out < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string(what) + ": non-positive output extent for d=" +
                    std::to_string(d) + ", k=" + std::to_string(k) +
                    ", s=" + std::to_string(s) + ", p=" + std::to_string(p));
  }
  return out;
}

Tensor4 conv2d(const Tensor4& x, const ConvSpec& spec, const Tensor4& weight,
               std::span<const double> bias) {
  check_conv_inputs(x, spec, weight, bias.size());
  const int ho = pooled_extent(x.h(), spec.k, spec.s, spec.p, "conv2d h");
  const int wo = pooled_extent(x.w(), spec.k, spec.s, spec.p, "conv2d w");
  const int cin_g = spec.c_in / spec.g;
  const int cout_g = spec.c_out / spec.g;
  const int kk = cin_g * spec.k * spec.k;
  const int plane = ho * wo;
  Tensor4 y({x.n(), spec.c_out, ho, wo});
  std::vector<double> col;
  const bool pointwise = is_pointwise(spec);
  if (!pointwise) col.resize(static_cast<std::size_t>(kk) * plane);
  const double* wdata = weight.data().data();
  for (int n = 0; n < x.n(); ++n) {
    for (int grp = 0; grp < spec.g; ++grp) {
      const double* xin = &x[x.index(n, grp * cin_g, 0, 0)];
      const double* cols = xin;
      if (!pointwise) {
        im2col(xin, cin_g, x.h(), x.w(), spec.k, spec.s, spec.p, ho, wo,
               col.data());
        cols = col.data();
      }
      for (int oc = 0; oc < cout_g; ++oc) {
        const int co = grp * cout_g + oc;
        double* out = &y[y.index(n, co, 0, 0)];
        const double b0 = bias.empty() ? 0.0 : bias[co];
        std::fill(out, out + plane, b0);
        const double* wrow = wdata + static_cast<std::size_t>(co) * kk;
        for (int r = 0; r < kk; ++r) {
          const double wv = wrow[r];
          const double* crow = cols + static_cast<std::size_t>(r) * plane;
          for (int q = 0; q < plane; ++q) out[q] += wv * crow[q];
        }
      }
    }
  }
  return y;
}

void conv2d_backward(const Tensor4& x, const ConvSpec& spec,
                     const Tensor4& weight, const Tensor4& dy,
                     std::span<double> dx, std::span<double> dw,
                     std::span<double> db) {
  check_conv_inputs(x, spec, weight, 0);
  const int ho = pooled_extent(x.h(), spec.k, spec.s, spec.p, "conv2d h");
  const int wo = pooled_extent(x.w(), spec.k, spec.s, spec.p, "conv2d w");
  require_same_shape(dy.shape(), {x.n(), spec.c_out, ho, wo}, "conv2d dy");
  const int cin_g = spec.c_in / spec.g;
  const int cout_g = spec.c_out / spec.g;
  const int kk = cin_g * spec.k * spec.k;
  const int plane = ho * wo;
  const bool pointwise = is_pointwise(spec);
  std::vector<double> col;
  std::vector<double> dcol(static_cast<std::size_t>(kk) * plane);
  if (!pointwise) col.resize(static_cast<std::size_t>(kk) * plane);
  const double* wdata = weight.data().data();
  for (int n = 0; n < x.n(); ++n) {
    for (int grp = 0; grp < spec.g; ++grp) {
      const double* xin = &x[x.index(n, grp * cin_g, 0, 0)];
      const double* cols = xin;
      if (!pointwise && !dw.empty()) {
        im2col(xin, cin_g, x.h(), x.w(), spec.k, spec.s, spec.p, ho, wo,
               col.data());
        cols = col.data();
      }
      if (!dx.empty()) std::fill(dcol.begin(), dcol.end(), 0.0);
      for (int oc = 0; oc < cout_g; ++oc) {
        const int co = grp * cout_g + oc;
        const double* g = &dy[dy.index(n, co, 0, 0)];
        if (!db.empty()) {
          double acc = 0.0;
          for (int q = 0; q < plane; ++q) acc += g[q];
          db[co] += acc;
        }
        const double* wrow = wdata + static_cast<std::size_t>(co) * kk;
        for (int r = 0; r < kk; ++r) {
          if (!dw.empty()) {
            const double* crow = cols + static_cast<std::size_t>(r) * plane;
            double acc = 0.0;
            for (int q = 0; q < plane; ++q) acc += g[q] * crow[q];
            dw[static_cast<std::size_t>(co) * kk + r] += acc;
          }
          if (!dx.empty()) {
            const double wv = wrow[r];
            double* drow = dcol.data() + static_cast<std::size_t>(r) * plane;
            for (int q = 0; q < plane; ++q) drow[q] += wv * g[q];
          }
        }
      }
      if (!dx.empty()) {
        double* dxin = dx.data() + x.index(n, grp * cin_g, 0, 0);
        if (pointwise) {
          for (std::size_t i = 0; i < dcol.size(); ++i) dxin[i] += dcol[i];
        } else {
          col2im_add(dcol.data(), cin_g, x.h(), x.w(), spec.k, spec.s, spec.p,
                     ho, wo, dxin);
        }
      }
    }
  }
}

Tensor4 maxpool2d(const Tensor4& x, int k, int s, int p) {
  if (k < 1 || s < 1 || p < 0) {
    throw Error(ErrorCode::kInvalidArgument, "maxpool2d: require k>=1, s>=1, p>=0");
  }
  const int ho = pooled_extent(x.h(), k, s, p, "maxpool2d h");
  const int wo = pooled_extent(x.w(), k, s, p, "maxpool2d w");
  Tensor4 y({x.n(), x.c(), ho, wo});
  const double ninf = -std::numeric_limits<double>::infinity();
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* xc = &x[x.index(n, c, 0, 0)];
      double* yc = &y[y.index(n, c, 0, 0)];
      for (int oy = 0; oy < ho; ++oy) {
        const int y0 = std::max(oy * s - p, 0);
        const int y1 = std::min(oy * s - p + k, x.h());
        for (int ox = 0; ox < wo; ++ox) {
          const int x0 = std::max(ox * s - p, 0);
          const int x1 = std::min(ox * s - p + k, x.w());
          double best = ninf;
          for (int iy = y0; iy < y1; ++iy) {
            for (int ix = x0; ix < x1; ++ix) {
              best = std::max(best, xc[iy * x.w() + ix]);
            }
          }
          yc[oy * wo + ox] = best;
        }
      }
    }
  }
  return y;
}

void maxpool2d_backward(const Tensor4& x, int k, int s, int p,
                        const Tensor4& dy, std::span<double> dx) {
  const int ho = pooled_extent(x.h(), k, s, p, "maxpool2d h");
  const int wo = pooled_extent(x.w(), k, s, p, "maxpool2d w");
  require_same_shape(dy.shape(), {x.n(), x.c(), ho, wo}, "maxpool2d dy");
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const std::size_t base = x.index(n, c, 0, 0);
      const double* xc = &x[base];
      const double* gc = &dy[dy.index(n, c, 0, 0)];
      for (int oy = 0; oy < ho; ++oy) {
        const int y0 = std::max(oy * s - p, 0);
        const int y1 = std::min(oy * s - p + k, x.h());
        for (int ox = 0; ox < wo; ++ox) {
          const int x0 = std::max(ox * s - p, 0);
          const int x1 = std::min(ox * s - p + k, x.w());
          // First maximum in scan order receives the gradient.
          int arg = y0 * x.w() + x0;
          for (int iy = y0; iy < y1; ++iy) {
            for (int ix = x0; ix < x1; ++ix) {
              if (xc[iy * x.w() + ix] > xc[arg]) arg = iy * x.w() + ix;
            }
          }
          dx[base + arg] += gc[oy * wo + ox];
        }
      }
    }
  }
}

BatchNormStats BatchNormStats::fresh(int channels, double eps, double momentum) {
  BatchNormStats st;
  st.running_mean.assign(channels, 0.0);
  st.running_var.assign(channels, 1.0);
  st.eps = eps;
  st.momentum = momentum;
  return st;
}

BatchNormState BatchNormState::identity(int channels, double eps,
                                        double momentum) {
  return {std::vector<double>(channels, 1.0), std::vector<double>(channels, 0.0),
          BatchNormStats::fresh(channels, eps, momentum)};
}

Tensor4 batchnorm2d(const Tensor4& x, std::span<const double> gamma,
                    std::span<const double> beta, BatchNormStats& stats,
                    BatchNormCache* cache) {
  const auto channels = static_cast<std::size_t>(x.c());
  if (gamma.size() != channels || beta.size() != channels ||
      stats.running_mean.size() != channels ||
      stats.running_var.size() != channels) {
    throw Error(ErrorCode::kShapeMismatch,
                "batchnorm2d: dimension c is " + std::to_string(x.c()) +
                    " but state has " + std::to_string(gamma.size()) +
                    " channels");
  }
  if (!(stats.eps > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "batchnorm2d: eps must be > 0");
  }
  const int plane = x.h() * x.w();
  const double count = static_cast<double>(x.n()) * plane;
  BatchNormCache local;
  BatchNormCache& cc = cache ? *cache : local;
  cc.mean.assign(channels, 0.0);
  cc.inv_std.assign(channels, 0.0);
  cc.batch_stats = stats.training;
  Tensor4 y(x.shape());
  for (int c = 0; c < x.c(); ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (stats.training) {
      for (int n = 0; n < x.n(); ++n) {
        const double* xc = &x[x.index(n, c, 0, 0)];
        for (int q = 0; q < plane; ++q) mean += xc[q];
      }
      mean /= count;
      for (int n = 0; n < x.n(); ++n) {
        const double* xc = &x[x.index(n, c, 0, 0)];
        for (int q = 0; q < plane; ++q) {
          const double d = xc[q] - mean;
          var += d * d;
        }
      }
      const double unbiased = count > 1 ? var / (count - 1) : var;
      var /= count;
      const double m = stats.momentum;
      stats.running_mean[c] = (1.0 - m) * stats.running_mean[c] + m * mean;
      stats.running_var[c] = (1.0 - m) * stats.running_var[c] + m * unbiased;
    } else {
      mean = stats.running_mean[c];
      var = stats.running_var[c];
    }
    const double inv_std = 1.0 / std::sqrt(var + stats.eps);
    cc.mean[c] = mean;
    cc.inv_std[c] = inv_std;
    const double scale = gamma[c] * inv_std;
    for (int n = 0; n < x.n(); ++n) {
      const double* xc = &x[x.index(n, c, 0, 0)];
      double* yc = &y[y.index(n, c, 0, 0)];
      for (int q = 0; q < plane; ++q) yc[q] = (xc[q] - mean) * scale + beta[c];
    }
  }
  return y;
}

Tensor4 batchnorm2d(const Tensor4& x, BatchNormState& state,
                    BatchNormCache* cache) {
  return batchnorm2d(x, state.gamma, state.beta, state.stats, cache);
}

void batchnorm2d_backward(const Tensor4& x, std::span<const double> gamma,
                          const BatchNormCache& cache, const Tensor4& dy,
                          std::span<double> dx, std::span<double> dgamma,
                          std::span<double> dbeta) {
  require_same_shape(dy.shape(), x.shape(), "batchnorm2d dy");
  const int plane = x.h() * x.w();
  const double count = static_cast<double>(x.n()) * plane;
  for (int c = 0; c < x.c(); ++c) {
    const double mean = cache.mean[c];
    const double inv_std = cache.inv_std[c];
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const double* xc = &x[x.index(n, c, 0, 0)];
      const double* gc = &dy[dy.index(n, c, 0, 0)];
      for (int q = 0; q < plane; ++q) {
        sum_g += gc[q];
        sum_gx += gc[q] * (xc[q] - mean) * inv_std;
      }
    }
    if (!dgamma.empty()) dgamma[c] += sum_gx;
    if (!dbeta.empty()) dbeta[c] += sum_g;
    if (dx.empty()) continue;
    const double scale = gamma[c] * inv_std;
    for (int n = 0; n < x.n(); ++n) {
      const std::size_t base = x.index(n, c, 0, 0);
      const double* xc = &x[base];
      const double* gc = &dy[base];
      for (int q = 0; q < plane; ++q) {
        if (cache.batch_stats) {
          const double xhat = (xc[q] - mean) * inv_std;
          dx[base + q] +=
              scale * (gc[q] - sum_g / count - xhat * sum_gx / count);
        } else {
          dx[base + q] += scale * gc[q];
        }
      }
    }
  }
}

Tensor4 concat_channels(std::span<const Tensor4* const> parts) {
  if (parts.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "concat_channels: no parts");
  }
  const Shape first = parts[0]->shape();
  int channels = 0;
  for (const Tensor4* t : parts) {
    const Shape s = t->shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw Error(ErrorCode::kShapeMismatch,
                  "concat_channels: part " + to_string(s) +
                      " disagrees with " + to_string(first) + " on n/h/w");
    }
    channels += s.c;
  }
  Tensor4 y({first.n, channels, first.h, first.w});
  const std::size_t plane = static_cast<std::size_t>(first.h) * first.w;
  for (int n = 0; n < first.n; ++n) {
    int c0 = 0;
    for (const Tensor4* t : parts) {
      const std::size_t len = plane * t->c();
      std::copy_n(&(*t)[t->index(n, 0, 0, 0)], len, &y[y.index(n, c0, 0, 0)]);
      c0 += t->c();
    }
  }
  return y;
}

Tensor4 concat_channels(const std::vector<Tensor4>& parts) {
  std::vector<const Tensor4*> ptrs;
  ptrs.reserve(parts.size());
  for (const auto& t : parts) ptrs.push_back(&t);
  return concat_channels(std::span<const Tensor4* const>(ptrs));
}

void concat_channels_backward_part(const Tensor4& dy, int c0,
                                   const Shape& part, std::span<double> dpart) {
  const std::size_t len = static_cast<std::size_t>(part.c) * part.h * part.w;
  for (int n = 0; n < part.n; ++n) {
    const double* src = &dy[dy.index(n, c0, 0, 0)];
    double* dst = dpart.data() + static_cast<std::size_t>(n) * len;
    for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
  }
}

Tensor4 resize_nearest(const Tensor4& x, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "resize_nearest: targets must be >= 1");
  }
  Tensor4 y({x.n(), x.c(), target_h, target_w});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* xc = &x[x.index(n, c, 0, 0)];
      double* yc = &y[y.index(n, c, 0, 0)];
      for (int oy = 0; oy < target_h; ++oy) {
        const int iy = static_cast<int>(static_cast<long long>(oy) * x.h() / target_h);
        for (int ox = 0; ox < target_w; ++ox) {
          const int ix =
              static_cast<int>(static_cast<long long>(ox) * x.w() / target_w);
          yc[oy * target_w + ox] = xc[iy * x.w() + ix];
        }
      }
    }
  }
  return y;
}

void resize_nearest_backward(const Shape& src, const Tensor4& dy,
                             std::span<double> dx) {
  const int th = dy.h();
  const int tw = dy.w();
  for (int n = 0; n < src.n; ++n) {
    for (int c = 0; c < src.c; ++c) {
      const double* gc = &dy[dy.index(n, c, 0, 0)];
      double* dc = dx.data() +
                   ((static_cast<std::size_t>(n) * src.c + c) * src.h) * src.w;
      for (int oy = 0; oy < th; ++oy) {
        const int iy = static_cast<int>(static_cast<long long>(oy) * src.h / th);
        for (int ox = 0; ox < tw; ++ox) {
          const int ix = static_cast<int>(static_cast<long long>(ox) * src.w / tw);
          dc[iy * src.w + ix] += gc[oy * tw + ox];
        }
      }
    }
  }
}

namespace {

template <class F>
Tensor4 map_unary(const Tensor4& x, F f) {
  Tensor4 y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}

}  // namespace

Tensor4 add(const Tensor4& a, const Tensor4& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor4 y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

Tensor4 mul(const Tensor4& a, const Tensor4& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor4 y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
  return y;
}

Tensor4 scalar_mul(const Tensor4& a, double s) {
  return map_unary(a, [s](double v) { return v * s; });
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 20.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

Tensor4 sigmoid(const Tensor4& x) {
  return map_unary(x, [](double v) { return sigmoid(v); });
}

Tensor4 tanh(const Tensor4& x) {
  return map_unary(x, [](double v) { return std::tanh(v); });
}

Tensor4 softplus(const Tensor4& x) {
  return map_unary(x, [](double v) { return softplus(v); });
}

Tensor4 exp(const Tensor4& x) {
  return map_unary(x, [](double v) { return std::exp(v); });
}

Tensor4 log(const Tensor4& x) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0)) {
      throw Error(ErrorCode::kDomain,
                  "log: non-positive value " + std::to_string(x[i]) +
                      " at index " + std::to_string(i));
    }
  }
  return map_unary(x, [](double v) { return std::log(v); });
}

}  // namespace apd
