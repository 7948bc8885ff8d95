#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "apd/detection.hpp"

namespace apd {

struct MatchCounts {
  int n_tp = 0;
  int n_fp = 0;
  int n_fn = 0;
};

struct MatchResult {
  MatchCounts counts;
  // Detection indices (into the input span) in evaluation order: descending
  // confidence, ties by input order.
  std::vector<std::size_t> order;
  std::vector<bool> is_tp;  // parallel to `order`
  int num_gt = 0;
};

// Greedy same-class matching within each image: every detection takes the
// unmatched GT of its class with the highest IoU >= iou_t (ties: lower GT
// index). Only detections and GTs of `class_id` take part.
MatchResult match(std::span<const Detection> dets,
                  std::span<const GroundTruth> gts, int class_id, double iou_t);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

// P := 0 with no detections; R := 1 with no GTs (vacuous).
PrecisionRecall precision_recall(const MatchCounts& c);
double f1_score(double precision, double recall);

// Area under the monotone precision envelope over recall, with a PR point at
// every distinct detection confidence. 0 when the class has no GTs.
double average_precision(std::span<const Detection> dets,
                         std::span<const GroundTruth> gts, int class_id,
                         double iou_t);

struct PrPoint {
  double confidence = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};
std::vector<PrPoint> pr_curve(std::span<const Detection> dets,
                              std::span<const GroundTruth> gts, int class_id,
                              double iou_t);

// 0.50, 0.55, ..., 0.95
std::vector<double> coco_iou_thresholds();

struct ConfusionMatrix {
  int num_classes = 0;  // background is index num_classes
  std::vector<std::vector<long long>> raw;
  std::vector<std::vector<double>> normalized;  // row-normalized over truth

  long long total() const;
};

// Class-agnostic one-to-one matching per image, best IoU first.
ConfusionMatrix confusion_matrix(std::span<const Detection> dets,
                                 std::span<const GroundTruth> gts,
                                 int num_classes, double conf_t, double iou_t);

struct ClassSummary {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  int num_classes = 0;
  std::vector<double> iou_thresholds;
  std::vector<std::vector<double>> ap;  // [class][threshold]
  double map50 = 0.0;     // mean AP at iou_thresholds[0]
  double map50_95 = 0.0;  // mean AP averaged over all iou_thresholds
  double mf1 = 0.0;
  double mf1_confidence = 0.0;
  std::vector<ClassSummary> per_class;  // at mf1_confidence, iou_thresholds[0]
  ConfusionMatrix confusion;
};

struct EvalOptions {
  bool all_thresholds = true;  // 0.50:0.05:0.95; false: `iou` only
  double iou = 0.5;
  double confusion_conf = 0.25;
  double confusion_iou = 0.5;
};

EvalReport evaluate(std::span<const Detection> dets,
                    std::span<const GroundTruth> gts, int num_classes,
                    const EvalOptions& opts = {});

void write_report(std::ostream& os, const EvalReport& r,
                  const std::vector<std::string>& class_names = {});
// class,confidence,precision,recall rows at IoU 0.5.
void write_pr_csv(std::ostream& os, std::span<const Detection> dets,
                  std::span<const GroundTruth> gts, int num_classes);

}  // namespace apd
