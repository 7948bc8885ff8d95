#include "apd/droi.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace apd {

std::string to_string(SteeringRegime r) {
  switch (r) {
    case SteeringRegime::kStraight: return "straight";
    case SteeringRegime::kModerate: return "moderate";
    case SteeringRegime::kSharp: return "sharp";
  }
  return "unknown";
}

void DroiConfig::validate() const {
  auto bad = [](const std::string& m) {
    throw Error(ErrorCode::kInvalidArgument, "droi config: " + m);
  };
  if (!(w0 > 0.0)) bad("w0 must be > 0");
  if (k1 < 0.0 || k2 < 0.0 || k3 < 0.0) bad("gains must be >= 0");
  if (!(theta_straight > 0.0 && theta_straight < theta_moderate)) {
    bad("need 0 < theta_straight < theta_moderate");
  }
  if (!(w_max >= w0)) bad("w_max must be >= w0");
  if (lane_center < 0.0 || lane_center > 1.0) bad("lane_center outside [0,1]");
  if (!(0.0 <= horizon_y_min && horizon_y_min < horizon_y_max &&
        horizon_y_max <= 1.0)) {
    bad("horizon band must satisfy 0 <= y_min < y_max <= 1");
  }
}

SteeringRegime classify_regime(double theta_deg, const DroiConfig& cfg) {
  const double a = std::abs(theta_deg);
  if (a <= cfg.theta_straight) return SteeringRegime::kStraight;
  if (a <= cfg.theta_moderate) return SteeringRegime::kModerate;
  return SteeringRegime::kSharp;
}

DroiResult critical_width(double theta_deg, double v, const DroiConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(theta_deg) || !std::isfinite(v)) {
    throw Error(ErrorCode::kNonFinite, "critical_width: non-finite input");
  }
  if (v < 0.0) {
    throw Error(ErrorCode::kDomain,
                "critical_width: speed must be >= 0, got " + std::to_string(v));
  }
  const double a = std::abs(theta_deg);
  if (a > 540.0) {
    throw Error(ErrorCode::kDomain, "critical_width: |theta| > 540 degrees");
  }
  DroiResult r;
  r.regime = classify_regime(theta_deg, cfg);
  const double steer = cfg.deadband ? std::max(a - cfg.theta_straight, 0.0) : a;
  r.w_c = cfg.w0 + cfg.k1 * steer + cfg.k2 * v;
  if (r.regime == SteeringRegime::kSharp) {
    r.shift = (theta_deg < 0.0 ? -1.0 : 1.0) * cfg.k3 * (a - cfg.theta_moderate);
  }
  r.roi = roi_rectangle(r.w_c, r.shift, cfg, cfg.horizon_y_min, cfg.horizon_y_max);
  return r;
}

NormRect roi_rectangle(double w_c, double shift, const DroiConfig& cfg,
                       double y_min, double y_max) {
  if (!(cfg.w_max >= cfg.w0)) {
    throw Error(ErrorCode::kInvalidArgument, "roi_rectangle: w_max < w0");
  }
  const double half = std::min(w_c / cfg.w_max, 1.0) / 2.0;
  double center = cfg.lane_center + shift / cfg.w_max;
  center = std::clamp(center, half, 1.0 - half);
  NormRect r;
  r.x_min = std::max(center - half, 0.0);
  r.x_max = std::min(center + half, 1.0);
  r.y_min = y_min;
  r.y_max = y_max;
  return r;
}

TrajectoryReplay replay_trajectory(const std::vector<TrajectorySample>& log,
                                   const DroiConfig& cfg) {
  TrajectoryReplay out;
  out.samples = log;
  double sum = 0.0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (i > 0 && !(log[i].t > log[i - 1].t)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "replay_trajectory: timestamps not strictly increasing at "
                  "sample " + std::to_string(i));
    }
    out.results.push_back(critical_width(log[i].theta, log[i].v, cfg));
    sum += out.results.back().roi.area();
  }
  if (!log.empty()) out.mean_roi_fraction = sum / static_cast<double>(log.size());
  return out;
}

std::vector<TrajectorySample> read_trajectory_csv(std::istream& is) {
  std::vector<TrajectorySample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    TrajectorySample s;
    std::string extra;
    if (!(ss >> s.t >> s.theta >> s.v) || (ss >> extra)) {
      if (lineno == 1) continue;  // header
      throw Error(ErrorCode::kParse, "trajectory line " + std::to_string(lineno) +
                                         ": expected t,theta_deg,speed_mps");
    }
    out.push_back(s);
  }
  return out;
}

void write_replay_csv(std::ostream& os, const TrajectoryReplay& r) {
  os << std::setprecision(10) << "t,w_c,regime,x_min,y_min,x_max,y_max\n";
  for (std::size_t i = 0; i < r.results.size(); ++i) {
    const auto& d = r.results[i];
    os << r.samples[i].t << ',' << d.w_c << ',' << to_string(d.regime) << ','
       << d.roi.x_min << ',' << d.roi.y_min << ',' << d.roi.x_max << ','
       << d.roi.y_max << "\n";
  }
}

}  // namespace apd
