#include "apd/simam.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace apd {

namespace {

void check_input(const Tensor4& x, const SimamConfig& cfg) {
  if (x.size() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "simam: empty input");
  }
  if (x.h() * x.w() < 2) {
    throw Error(ErrorCode::kInvalidArgument,
                "simam: spatial size " + std::to_string(x.h()) + "x" +
                    std::to_string(x.w()) + " leaves the variance undefined");
  }
  if (!(cfg.lambda > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "simam: lambda must be > 0");
  }
}

}  // namespace

EnergyStats energy_stats(std::span<const double> plane) {
  EnergyStats st;
  st.m = static_cast<int>(plane.size());
  if (st.m < 2) {
    throw Error(ErrorCode::kInvalidArgument,
                "simam: variance needs at least 2 neurons, got " + std::to_string(st.m));
  }
  double sum = 0.0;
  for (double v : plane) sum += v;
  st.mu_hat = sum / st.m;
  double ss = 0.0;
  for (double v : plane) ss += (v - st.mu_hat) * (v - st.mu_hat);
  st.sigma2_hat = ss / (st.m - 1);
  return st;
}

double simam_energy_min(double t, double mu, double sigma2, double lambda) {
  const double d = t - mu;
  return 4.0 * (sigma2 + lambda) / (d * d + 2.0 * sigma2 + 2.0 * lambda);
}

EnergyMinimum energy_numeric_oracle(double t, std::span<const double> neighbors,
                                    double lambda) {
  if (neighbors.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "energy oracle: no neighbors");
  }
  if (lambda < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "energy oracle: lambda < 0");
  }
  const double m = static_cast<double>(neighbors.size());
  double m1 = 0.0;
  double m2 = 0.0;
  for (double x : neighbors) {
    m1 += x;
    m2 += x * x;
  }
  m1 /= m;
  m2 /= m;
  auto energy = [&](double w, double b) {
    double acc = 0.0;
    for (double x : neighbors) {
      const double r = -1.0 - (w * x + b);
      acc += r * r;
    }
    const double r = 1.0 - (w * t + b);
    return acc / m + r * r + lambda * w * w;
  };
  // Stationarity of the quadratic objective: H [w b]^T = rhs.
  const double a11 = m2 + t * t + lambda;
  const double a12 = m1 + t;
  const double a22 = 2.0;
  const double r1 = t - m1;
  const double r2 = 0.0;
  const double det = a11 * a22 - a12 * a12;
  if (!(det > 1e-300)) {
    throw Error(ErrorCode::kInfeasible,
                "energy oracle: singular objective (lambda=0 with identical "
                "neighbors)");
  }
  double w = (r1 * a22 - a12 * r2) / det;
  double b = (a11 * r2 - a12 * r1) / det;
  // Newton polish on the exact objective; one step suffices for a quadratic,
  // the loop guards against rounding.
  for (int it = 0; it < 3; ++it) {
    const double gw = 2.0 * (a11 * w + a12 * b - r1);
    const double gb = 2.0 * (a12 * w + a22 * b - r2);
    const double dw = (gw * a22 - a12 * gb) / (2.0 * det);
    const double db = (a11 * gb - a12 * gw) / (2.0 * det);
    w -= dw;
    b -= db;
  }
  const double e = energy(w, b);
  if (!std::isfinite(e)) {
    throw Error(ErrorCode::kNonFinite, "energy oracle: minimization diverged");
  }
  return {e, w, b};
}

Tensor4 simam_weights(const Tensor4& x, const SimamConfig& cfg) {
  check_input(x, cfg);
  Tensor4 wts(x.shape());
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const std::size_t base = x.index(n, c, 0, 0);
      const EnergyStats st = energy_stats(x.data().subspan(base, plane));
      const double denom = 4.0 * (st.sigma2_hat + cfg.lambda);
      for (std::size_t q = 0; q < plane; ++q) {
        const double d = x[base + q] - st.mu_hat;
        wts[base + q] = sigmoid(d * d / denom + 0.5);
      }
    }
  }
  return wts;
}

Tensor4 simam_forward(const Tensor4& x, const SimamConfig& cfg) {
  Tensor4 y = simam_weights(x, cfg);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= x[i];
  return y;
}

Tensor4 simam_backward(const Tensor4& x, const Tensor4& upstream,
                       const SimamConfig& cfg) {
  check_input(x, cfg);
  require_same_shape(x.shape(), upstream.shape(), "simam backward");
  Tensor4 dx(x.shape());
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  std::vector<double> dz(plane);
  std::vector<double> dd(plane);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const std::size_t base = x.index(n, c, 0, 0);
      const EnergyStats st = energy_stats(x.data().subspan(base, plane));
      const double denom = 4.0 * (st.sigma2_hat + cfg.lambda);
      // z = d^2 / denom + 0.5, y = x * sigmoid(z), d = x - mu,
      // denom = 4 (sum d^2 / (M-1) + lambda).
      double coupling = 0.0;
      for (std::size_t q = 0; q < plane; ++q) {
        const double xv = x[base + q];
        const double d = xv - st.mu_hat;
        const double s = sigmoid(d * d / denom + 0.5);
        const double g = upstream[base + q];
        dx[base + q] = g * s;
        dz[q] = g * xv * s * (1.0 - s);
        coupling += dz[q] * d * d;
      }
      const double k = 8.0 * coupling / (denom * denom * (st.m - 1));
      double mean_dd = 0.0;
      for (std::size_t q = 0; q < plane; ++q) {
        const double d = x[base + q] - st.mu_hat;
        dd[q] = dz[q] * 2.0 * d / denom - k * d;
        mean_dd += dd[q];
      }
      mean_dd /= static_cast<double>(plane);
      for (std::size_t q = 0; q < plane; ++q) dx[base + q] += dd[q] - mean_dd;
    }
  }
  return dx;
}

namespace ag {

Var simam(Tape* tape, const Var& x, const SimamConfig& cfg) {
  const bool rec = should_record(tape, {&x});
  Var out = make_var(simam_forward(x->value, cfg), rec);
  if (rec) {
    tape->record("simam", [x, out, cfg] {
      const auto g = std::as_const(out->value).grad();
      if (g.empty() || !x->requires_grad) return;
      const Tensor4 up(out->value.shape(), std::vector<double>(g.begin(), g.end()));
      const Tensor4 d = simam_backward(x->value, up, cfg);
      auto dx = x->value.grad();
      for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i];
    });
  }
  return out;
}

}  // namespace ag
}  // namespace apd
