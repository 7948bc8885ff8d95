#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "apd/losses.hpp"
#include "apd/metrics.hpp"

using namespace apd;

TEST(Box, IouOfKnownOverlap) {
  const Box a = Box::from_corners(0.0, 0.0, 0.4, 0.4);
  const Box b = Box::from_corners(0.2, 0.2, 0.6, 0.6);
  EXPECT_NEAR(iou(a, b), 0.04 / (0.16 + 0.16 - 0.04), 1e-12);
  EXPECT_EQ(iou(a, Box::from_corners(0.5, 0.5, 0.9, 0.9)), 0.0);
  EXPECT_THROW(iou(a, Box{0.5, 0.5, 0.0, 0.1}), Error);
  EXPECT_EQ(overlap_iou(Box{0.5, 0.5, 0.0, 0.0}, Box{0.5, 0.5, 0.0, 0.0}), 0.0);
}

TEST(Ciou, IdenticalBoxesGiveZero) {
  const Box b{0.4, 0.5, 0.2, 0.3};
  EXPECT_NEAR(ciou_loss(b, b), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(ciou_terms(b, b).alpha, 0.0);
}

TEST(Ciou, TermsMatchDefinition) {
  const Box p = Box::from_corners(0.1, 0.1, 0.5, 0.3);
  const Box g = Box::from_corners(0.2, 0.15, 0.45, 0.6);
  const CiouTerms t = ciou_terms(p, g);
  const double inter = (0.45 - 0.2) * (0.3 - 0.15);
  const double iu = inter / (p.area() + g.area() - inter);
  const double rho2 = std::pow(p.cx - g.cx, 2) + std::pow(p.cy - g.cy, 2);
  const double c2 = std::pow(0.5 - 0.1, 2) + std::pow(0.6 - 0.1, 2);
  const double v = 4.0 / (std::numbers::pi * std::numbers::pi) *
                   std::pow(std::atan(g.w / g.h) - std::atan(p.w / p.h), 2);
  const double alpha = v / (1.0 - iu + v);
  EXPECT_NEAR(t.iou, iu, 1e-14);
  EXPECT_NEAR(t.rho2, rho2, 1e-14);
  EXPECT_NEAR(t.c2, c2, 1e-14);
  EXPECT_NEAR(t.v, v, 1e-14);
  EXPECT_NEAR(t.loss, 1.0 - iu + rho2 / c2 + alpha * v, 1e-14);
}

TEST(Ciou, DisjointBoxesExceedOne) {
  const Box p = Box::from_corners(0.0, 0.0, 0.1, 0.1);
  const Box g = Box::from_corners(0.8, 0.8, 0.9, 0.9);
  EXPECT_GT(ciou_loss(p, g), 1.0);
  EXPECT_LT(ciou_loss(p, g), 3.0);
}

TEST(Dfl, TargetSplit) {
  const DflTarget t = DflTarget::make(2.3, 8);
  EXPECT_EQ(t.y_l, 2);
  EXPECT_EQ(t.y_r, 3);
  const DflTarget top = DflTarget::make(7.0, 8);
  EXPECT_EQ(top.y_l, 6);
  EXPECT_EQ(top.y_r, 7);
  EXPECT_THROW(DflTarget::make(7.5, 8), Error);
  EXPECT_THROW(DflTarget::make(-0.1, 8), Error);
}

TEST(Dfl, MatchesWeightedCrossEntropy) {
  const std::vector<double> logits{0.3, -1.0, 2.0, 0.5};
  const DflTarget t = DflTarget::make(1.25, 4);
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  const double ref = -(0.75 * std::log(std::exp(logits[1]) / z) +
                       0.25 * std::log(std::exp(logits[2]) / z));
  EXPECT_NEAR(dfl_loss(logits, t), ref, 1e-13);
  const auto g = dfl_loss_grad(logits, t);
  double sum = 0.0;
  for (double v : g) sum += v;
  EXPECT_NEAR(sum, 0.0, 1e-13);
}

TEST(Dfl, ExpectationOfPeakedLogits) {
  std::vector<double> l(8, -100.0);
  l[5] = 100.0;
  EXPECT_NEAR(distribution_expectation(l), 5.0, 1e-9);
  EXPECT_NEAR(distribution_expectation(std::vector<double>(5, 0.0)), 2.0, 1e-12);
}

TEST(Bce, MatchesNaiveAndIsStable) {
  for (double x : {-3.0, -0.5, 0.0, 1.0, 4.0})
    for (double t : {0.0, 0.3, 1.0}) {
      const double s = 1.0 / (1.0 + std::exp(-x));
      EXPECT_NEAR(bce_logits(x, t), -(t * std::log(s) + (1 - t) * std::log(1 - s)), 1e-12);
      EXPECT_NEAR(bce_logits_grad(x, t), s - t, 1e-14);
    }
  EXPECT_NEAR(bce_logits(800.0, 1.0), 0.0, 1e-300);
  EXPECT_NEAR(bce_logits(-800.0, 1.0), 800.0, 1e-9);
}

TEST(Assigner, PicksLevelByScaleAndInteriorCells) {
  // 64x64 image, levels at strides 8/16/32. A 32 px box best matches stride 8
  // (4 * 8 = 32).
  const LevelGeometry lv[] = {{8, 8, 8}, {16, 4, 4}, {32, 2, 2}};
  const GroundTruth gt{0, Box::from_corners(0.0, 0.0, 0.5, 0.5)};
  const Assignment a = assign_targets(std::span(&gt, 1), lv, 64, 64);
  EXPECT_EQ(a.positives(), 16);
  EXPECT_EQ(a.cells[0][0], 0);
  EXPECT_EQ(a.cells[0][3 * 8 + 3], 0);
  EXPECT_EQ(a.cells[0][4], -1);
  for (int v : a.cells[1]) EXPECT_EQ(v, -1);
}

TEST(LossWeights, Validation) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.box = -1.0;
  EXPECT_THROW(w.validate(), Error);
}

namespace {

Detection det(int cls, double conf, double x1, double y1, double x2, double y2, int img = 0) {
  return {cls, conf, Box::from_corners(x1, y1, x2, y2), img};
}
GroundTruth gt(int cls, double x1, double y1, double x2, double y2, int img = 0) {
  return {cls, Box::from_corners(x1, y1, x2, y2), img};
}

}  // namespace

TEST(Metrics, PerfectDetectionsScoreOne) {
  const std::vector<GroundTruth> g{gt(0, 0.1, 0.1, 0.3, 0.3), gt(1, 0.5, 0.5, 0.9, 0.8),
                                   gt(0, 0.2, 0.2, 0.4, 0.4, 1)};
  std::vector<Detection> d;
  for (const auto& x : g) d.push_back({x.class_id, 0.9, x.box, x.image_id});
  const EvalReport r = evaluate(d, g, 2);
  EXPECT_DOUBLE_EQ(r.map50, 1.0);
  EXPECT_DOUBLE_EQ(r.map50_95, 1.0);
  EXPECT_DOUBLE_EQ(r.mf1, 1.0);
}

TEST(Metrics, HighConfidenceFalsePositiveHalvesAp) {
  const std::vector<GroundTruth> g{gt(0, 0.1, 0.1, 0.3, 0.3)};
  const std::vector<Detection> d{det(0, 0.9, 0.6, 0.6, 0.8, 0.8), det(0, 0.8, 0.1, 0.1, 0.3, 0.3)};
  EXPECT_NEAR(average_precision(d, g, 0, 0.5), 0.5, 1e-12);
  const auto curve = pr_curve(d, g, 0, 0.5);
  ASSERT_EQ(curve.size(), 2u);
  EXPECT_DOUBLE_EQ(curve[0].precision, 0.0);
  EXPECT_DOUBLE_EQ(curve[1].recall, 1.0);
}

TEST(Metrics, MatchingIsOneToOneAndClassAware) {
  const std::vector<GroundTruth> g{gt(0, 0.1, 0.1, 0.3, 0.3)};
  const std::vector<Detection> d{det(0, 0.9, 0.1, 0.1, 0.3, 0.3), det(0, 0.8, 0.1, 0.1, 0.3, 0.3),
                                 det(1, 0.95, 0.1, 0.1, 0.3, 0.3)};
  const MatchResult m = match(d, g, 0, 0.5);
  EXPECT_EQ(m.counts.n_tp, 1);
  EXPECT_EQ(m.counts.n_fp, 1);
  EXPECT_EQ(m.counts.n_fn, 0);
  ASSERT_EQ(m.order.size(), 2u);
  EXPECT_EQ(m.order[0], 0u);
  EXPECT_TRUE(m.is_tp[0]);
}

TEST(Metrics, DetectionsInOtherImagesDoNotMatch) {
  const std::vector<GroundTruth> g{gt(0, 0.1, 0.1, 0.3, 0.3, 0)};
  const std::vector<Detection> d{det(0, 0.9, 0.1, 0.1, 0.3, 0.3, 1)};
  EXPECT_EQ(match(d, g, 0, 0.5).counts.n_tp, 0);
}

TEST(Metrics, PrecisionRecallConventions) {
  const PrecisionRecall none = precision_recall({0, 0, 3});
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.recall, 0.0);
  const PrecisionRecall vac = precision_recall({0, 2, 0});
  EXPECT_EQ(vac.recall, 1.0);
  EXPECT_EQ(f1_score(0.0, 0.0), 0.0);
  EXPECT_NEAR(f1_score(0.5, 1.0), 2.0 / 3.0, 1e-15);
}

TEST(Metrics, CocoThresholds) {
  const auto t = coco_iou_thresholds();
  ASSERT_EQ(t.size(), 10u);
  EXPECT_DOUBLE_EQ(t.front(), 0.5);
  EXPECT_NEAR(t.back(), 0.95, 1e-12);
}

TEST(Metrics, ConfusionMatrixCountsBackground) {
  const std::vector<GroundTruth> g{gt(0, 0.1, 0.1, 0.3, 0.3), gt(1, 0.5, 0.5, 0.7, 0.7)};
  const std::vector<Detection> d{det(1, 0.9, 0.1, 0.1, 0.3, 0.3),   // wrong class
                                 det(0, 0.9, 0.8, 0.8, 0.95, 0.95)};  // background
  const ConfusionMatrix cm = confusion_matrix(d, g, 2, 0.25, 0.5);
  EXPECT_EQ(cm.raw[0][1], 1);  // truth 0 predicted 1
  EXPECT_EQ(cm.raw[1][2], 1);  // truth 1 missed
  EXPECT_EQ(cm.raw[2][0], 1);  // background predicted 0
  EXPECT_EQ(cm.total(), 3);
}

TEST(Metrics, SingleThresholdOption) {
  const std::vector<GroundTruth> g{gt(0, 0.1, 0.1, 0.3, 0.3)};
  const std::vector<Detection> d{det(0, 0.9, 0.1, 0.1, 0.3, 0.32)};
  EvalOptions o;
  o.all_thresholds = false;
  o.iou = 0.75;
  const EvalReport r = evaluate(d, g, 1, o);
  ASSERT_EQ(r.iou_thresholds.size(), 1u);
  EXPECT_DOUBLE_EQ(r.map50, 1.0);
  o.iou = 0.0;
  EXPECT_THROW(evaluate(d, g, 1, o), Error);
  std::ostringstream os;
  write_report(os, r, {"pedestrian"});
  EXPECT_NE(os.str().find("pedestrian"), std::string::npos);
}
