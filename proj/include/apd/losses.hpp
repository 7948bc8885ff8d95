#pragma once

#include <array>
#include <span>
#include <vector>

#include "apd/detection.hpp"

namespace apd {

struct LossWeights {
  double cls = 0.5;
  double box = 7.5;
  double dfl = 1.5;

  void validate() const;
};

// ---- CIoU ----------------------------------------------------------------

struct CiouTerms {
  double iou = 0.0;
  double rho2 = 0.0;  // squared center distance
  double c2 = 0.0;    // squared diagonal of the enclosing box
  double v = 0.0;     // aspect-ratio consistency
  double alpha = 0.0;
  double loss = 0.0;
};

CiouTerms ciou_terms(const Box& pred, const Box& gt);
// 1 - IoU + rho^2/c^2 + alpha*v; alpha := 0 when IoU = 1 and v = 0.
double ciou_loss(const Box& pred, const Box& gt);
// Gradient w.r.t. the predicted corners (x1, y1, x2, y2), alpha included.
std::array<double, 4> ciou_loss_grad(const Box& pred, const Box& gt);

// ---- Distribution focal loss ----------------------------------------------

struct DflTarget {
  double y = 0.0;
  int y_l = 0;
  int y_r = 1;

  // Requires 0 <= y <= reg_max - 1; the top edge uses y_l = reg_max - 2.
  static DflTarget make(double y, int reg_max);
};

double dfl_loss(std::span<const double> logits, const DflTarget& target);
std::vector<double> dfl_loss_grad(std::span<const double> logits,
                                  const DflTarget& target);
// Expectation sum_i i * softmax(logits)_i.
double distribution_expectation(std::span<const double> logits);

// ---- Classification -------------------------------------------------------

// max(x,0) - x*t + log(1 + e^{-|x|})
double bce_logits(double logit, double target);
double bce_logits_grad(double logit, double target);

// ---- Assignment -----------------------------------------------------------

struct LevelGeometry {
  int stride = 8;
  int h = 0;
  int w = 0;
};

// Per level, per cell (row-major): index into the image's GT list, or -1.
struct Assignment {
  std::vector<std::vector<int>> cells;
  int positives() const;
};

// A cell is positive for a GT when its center lies strictly inside the GT box
// and the level is the GT's best scale match (max side in pixels closest to
// 4 * stride). Conflicts go to the GT with the highest centerness, then the
// lower GT index.
Assignment assign_targets(std::span<const GroundTruth> gts,
                          std::span<const LevelGeometry> levels, int image_h,
                          int image_w);

// ---- Total loss -----------------------------------------------------------

struct LossResult {
  double total = 0.0;
  double cls = 0.0;  // unweighted terms
  double box = 0.0;
  double dfl = 0.0;
  int positives = 0;
  // d total / d logits, one tensor per level, same shapes as the predictions.
  std::vector<Tensor4> grad_cls;
  std::vector<Tensor4> grad_box;
};

// gts[n] holds the objects of batch image n.
LossResult total_loss(const RawPredictions& preds,
                      const std::vector<std::vector<GroundTruth>>& gts,
                      const LossWeights& weights, bool with_grad = true);

}  // namespace apd
