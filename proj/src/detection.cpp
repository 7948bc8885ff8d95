#include "apd/detection.hpp"

#include <algorithm>
#include <string>

namespace apd {

Box Box::from_corners(double x1, double y1, double x2, double y2) {
  return {0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
}

void require_valid(const Box& b, const char* what) {
  if (!(b.w > 0.0) || !(b.h > 0.0)) {
    throw Error(ErrorCode::kDomain, std::string(what) +
                                        ": degenerate box (w=" + std::to_string(b.w) +
                                        ", h=" + std::to_string(b.h) + ")");
  }
}

double overlap_iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double iou(const Box& a, const Box& b) {
  require_valid(a, "iou");
  require_valid(b, "iou");
  return overlap_iou(a, b);
}

Box clip_unit(const Box& b) {
  auto c = [](double v) { return std::clamp(v, 0.0, 1.0); };
  return Box::from_corners(c(b.x1()), c(b.y1()), c(b.x2()), c(b.y2()));
}

}  // namespace apd
