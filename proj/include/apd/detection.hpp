#pragma once

#include <array>
#include <vector>

#include "apd/autograd.hpp"

namespace apd {

// Axis-aligned box, center + extent, in normalized image coordinates.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static Box from_corners(double x1, double y1, double x2, double y2);
  bool operator==(const Box&) const = default;
};

// Throws on boxes with non-positive extent.
void require_valid(const Box& b, const char* what);

// Intersection over union; rejects degenerate boxes.
double iou(const Box& a, const Box& b);
// Same ratio but tolerant of zero-area boxes (returns 0 for an empty union).
double overlap_iou(const Box& a, const Box& b);

// Clips corners to [0,1].
Box clip_unit(const Box& b);

struct GroundTruth {
  int class_id = 0;
  Box box;
  int image_id = 0;
};

struct Detection {
  int class_id = 0;
  double confidence = 0.0;
  Box box;
  int image_id = 0;
};

// Head output of one pyramid level: class logits (N, C, H, W) and side
// distance logits (N, 4 * reg_max, H, W), side-major (l, t, r, b).
struct LevelPrediction {
  Var cls;
  Var box;
  int stride = 8;
};

struct RawPredictions {
  std::vector<LevelPrediction> levels;
  int image_h = 0;
  int image_w = 0;
  int num_classes = 0;
  int reg_max = 0;
};

}  // namespace apd
