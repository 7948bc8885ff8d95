#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "apd/tensor.hpp"

namespace apd {

enum class SteeringRegime { kStraight, kModerate, kSharp };
std::string to_string(SteeringRegime r);

struct DroiConfig {
  double w0 = 3.0;     // meters
  double k1 = 0.05;    // meters per degree
  double k2 = 0.1;     // meters per m/s
  double k3 = 0.05;    // lateral shift, meters per degree past theta_moderate
  double theta_straight = 30.0;
  double theta_moderate = 60.0;
  bool deadband = true;
  double w_max = 12.0;
  double lane_center = 0.5;
  double horizon_y_min = 0.35;
  double horizon_y_max = 1.0;

  void validate() const;
};

struct NormRect {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 1.0;
  double y_max = 1.0;
  double area() const { return (x_max - x_min) * (y_max - y_min); }
};

struct DroiResult {
  double w_c = 0.0;
  double shift = 0.0;  // signed lateral shift in meters, sharp regime only
  SteeringRegime regime = SteeringRegime::kStraight;
  NormRect roi;
};

SteeringRegime classify_regime(double theta_deg, const DroiConfig& cfg);

// theta in degrees (signed), v in m/s.
DroiResult critical_width(double theta_deg, double v, const DroiConfig& cfg = {});

NormRect roi_rectangle(double w_c, double shift, const DroiConfig& cfg,
                       double y_min, double y_max);

struct TrajectorySample {
  double t = 0.0;
  double theta = 0.0;
  double v = 0.0;
};

struct TrajectoryReplay {
  std::vector<TrajectorySample> samples;
  std::vector<DroiResult> results;
  double mean_roi_fraction = 0.0;
};

TrajectoryReplay replay_trajectory(const std::vector<TrajectorySample>& log,
                                   const DroiConfig& cfg = {});

// CSV with header t,theta_deg,speed_mps.
std::vector<TrajectorySample> read_trajectory_csv(std::istream& is);
// t,w_c,regime,x_min,y_min,x_max,y_max
void write_replay_csv(std::ostream& os, const TrajectoryReplay& r);

}  // namespace apd
