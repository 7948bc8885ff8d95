#include "apd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>

namespace apd {

namespace {

std::vector<std::size_t> confidence_order(std::span<const Detection> dets,
                                          int class_id) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].class_id == class_id) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].confidence > dets[b].confidence;
  });
  return idx;
}

}  // namespace

MatchResult match(std::span<const Detection> dets,
                  std::span<const GroundTruth> gts, int class_id, double iou_t) {
  MatchResult r;
  std::map<int, std::vector<std::size_t>> by_image;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gts[g].class_id != class_id) continue;
    by_image[gts[g].image_id].push_back(g);
    ++r.num_gt;
  }
  std::vector<bool> taken(gts.size(), false);
  r.order = confidence_order(dets, class_id);
  r.is_tp.assign(r.order.size(), false);
  for (std::size_t k = 0; k < r.order.size(); ++k) {
    const Detection& d = dets[r.order[k]];
    auto it = by_image.find(d.image_id);
    if (it == by_image.end()) continue;
    double best = -1.0;
    std::size_t best_g = 0;
    for (std::size_t g : it->second) {
      if (taken[g]) continue;
      const double v = overlap_iou(d.box, gts[g].box);
      if (v >= iou_t && v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best >= 0.0) {
      taken[best_g] = true;
      r.is_tp[k] = true;
    }
  }
  for (bool tp : r.is_tp) {
    if (tp) {
      ++r.counts.n_tp;
    } else {
      ++r.counts.n_fp;
    }
  }
  r.counts.n_fn = r.num_gt - r.counts.n_tp;
  return r;
}

PrecisionRecall precision_recall(const MatchCounts& c) {
  PrecisionRecall pr;
  const int det = c.n_tp + c.n_fp;
  const int gt = c.n_tp + c.n_fn;
  pr.precision = det > 0 ? static_cast<double>(c.n_tp) / det : 0.0;
  pr.recall = gt > 0 ? static_cast<double>(c.n_tp) / gt : 1.0;
  return pr;
}

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

std::vector<PrPoint> pr_curve(std::span<const Detection> dets,
                              std::span<const GroundTruth> gts, int class_id,
                              double iou_t) {
  const MatchResult m = match(dets, gts, class_id, iou_t);
  std::vector<PrPoint> pts;
  int tp = 0;
  int fp = 0;
  for (std::size_t k = 0; k < m.order.size(); ++k) {
    if (m.is_tp[k]) {
      ++tp;
    } else {
      ++fp;
    }
    const double conf = dets[m.order[k]].confidence;
    const bool group_end = k + 1 == m.order.size() ||
                           dets[m.order[k + 1]].confidence != conf;
    if (!group_end) continue;
    const auto pr = precision_recall({tp, fp, m.num_gt - tp});
    pts.push_back({conf, pr.precision, m.num_gt > 0 ? pr.recall : 0.0});
  }
  return pts;
}

double average_precision(std::span<const Detection> dets,
                         std::span<const GroundTruth> gts, int class_id,
                         double iou_t) {
  int num_gt = 0;
  for (const auto& g : gts) num_gt += g.class_id == class_id ? 1 : 0;
  if (num_gt == 0) return 0.0;
  const auto pts = pr_curve(dets, gts, class_id, iou_t);
  // Envelope: precision at recall r is the best precision at any recall >= r.
  std::vector<double> env(pts.size());
  double run = 0.0;
  for (std::size_t k = pts.size(); k-- > 0;) {
    run = std::max(run, pts[k].precision);
    env[k] = run;
  }
  double ap = 0.0;
  double prev_r = 0.0;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    ap += (pts[k].recall - prev_r) * env[k];
    prev_r = pts[k].recall;
  }
  return ap;
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

long long ConfusionMatrix::total() const {
  long long s = 0;
  for (const auto& row : raw) s = std::accumulate(row.begin(), row.end(), s);
  return s;
}

ConfusionMatrix confusion_matrix(std::span<const Detection> dets,
                                 std::span<const GroundTruth> gts,
                                 int num_classes, double conf_t, double iou_t) {
  ConfusionMatrix cm;
  cm.num_classes = num_classes;
  const int bg = num_classes;
  cm.raw.assign(num_classes + 1, std::vector<long long>(num_classes + 1, 0));
  std::map<int, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> images;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].confidence >= conf_t) images[dets[i].image_id].first.push_back(i);
  }
  for (std::size_t g = 0; g < gts.size(); ++g) images[gts[g].image_id].second.push_back(g);

  for (const auto& [img, lists] : images) {
    const auto& [di, gi] = lists;
    struct Pair {
      double iou;
      std::size_t d, g;
    };
    std::vector<Pair> pairs;
    for (std::size_t a = 0; a < di.size(); ++a) {
      for (std::size_t b = 0; b < gi.size(); ++b) {
        const double v = overlap_iou(dets[di[a]].box, gts[gi[b]].box);
        if (v >= iou_t) pairs.push_back({v, a, b});
      }
    }
    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const Pair& x, const Pair& y) { return x.iou > y.iou; });
    std::vector<bool> dm(di.size(), false), gm(gi.size(), false);
    for (const Pair& p : pairs) {
      if (dm[p.d] || gm[p.g]) continue;
      dm[p.d] = gm[p.g] = true;
      ++cm.raw[gts[gi[p.g]].class_id][dets[di[p.d]].class_id];
    }
    for (std::size_t b = 0; b < gi.size(); ++b) {
      if (!gm[b]) ++cm.raw[gts[gi[b]].class_id][bg];
    }
    for (std::size_t a = 0; a < di.size(); ++a) {
      if (!dm[a]) ++cm.raw[bg][dets[di[a]].class_id];
    }
  }
  cm.normalized.assign(num_classes + 1, std::vector<double>(num_classes + 1, 0.0));
  for (int r = 0; r <= num_classes; ++r) {
    const long long support =
        std::accumulate(cm.raw[r].begin(), cm.raw[r].end(), 0LL);
    if (support == 0) continue;
    for (int c = 0; c <= num_classes; ++c) {
      cm.normalized[r][c] = static_cast<double>(cm.raw[r][c]) / support;
    }
  }
  return cm;
}

EvalReport evaluate(std::span<const Detection> dets,
                    std::span<const GroundTruth> gts, int num_classes,
                    const EvalOptions& opts) {
  if (num_classes < 1) {
    throw Error(ErrorCode::kInvalidArgument, "evaluate: need >= 1 class");
  }
  for (const auto& d : dets) {
    if (d.class_id < 0 || d.class_id >= num_classes) {
      throw Error(ErrorCode::kRange,
                  "evaluate: detection class " + std::to_string(d.class_id) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  for (const auto& g : gts) {
    if (g.class_id < 0 || g.class_id >= num_classes) {
      throw Error(ErrorCode::kRange,
                  "evaluate: ground-truth class " + std::to_string(g.class_id) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  EvalReport r;
  r.num_classes = num_classes;
  r.iou_thresholds = opts.all_thresholds ? coco_iou_thresholds()
                                         : std::vector<double>{opts.iou};
  if (!(opts.iou > 0.0 && opts.iou <= 1.0)) {
    throw Error(ErrorCode::kRange, "evaluate: iou threshold must be in (0,1]");
  }
  r.ap.assign(num_classes, std::vector<double>(r.iou_thresholds.size(), 0.0));
  for (int c = 0; c < num_classes; ++c) {
    for (std::size_t t = 0; t < r.iou_thresholds.size(); ++t) {
      r.ap[c][t] = average_precision(dets, gts, c, r.iou_thresholds[t]);
    }
  }
  for (int c = 0; c < num_classes; ++c) {
    r.map50 += r.ap[c][0];
    r.map50_95 += std::accumulate(r.ap[c].begin(), r.ap[c].end(), 0.0) /
                  static_cast<double>(r.iou_thresholds.size());
  }
  r.map50 /= num_classes;
  r.map50_95 /= num_classes;

  // Mean F1 at the confidence threshold that maximizes it. Greedy
  // matching in confidence order makes every threshold a prefix of the full
  // matching, so cumulative counts suffice.
  std::vector<MatchResult> m;
  std::vector<double> candidates{0.0};
  for (int c = 0; c < num_classes; ++c) m.push_back(match(dets, gts, c, r.iou_thresholds[0]));
  for (const auto& d : dets) candidates.push_back(d.confidence);
  std::sort(candidates.begin(), candidates.end(), std::greater<>());
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());
  double best = -1.0;
  for (double thr : candidates) {
    double sum = 0.0;
    std::vector<ClassSummary> per(num_classes);
    for (int c = 0; c < num_classes; ++c) {
      MatchCounts k;
      for (std::size_t i = 0; i < m[c].order.size(); ++i) {
        if (dets[m[c].order[i]].confidence < thr) break;
        if (m[c].is_tp[i]) {
          ++k.n_tp;
        } else {
          ++k.n_fp;
        }
      }
      k.n_fn = m[c].num_gt - k.n_tp;
      const auto pr = precision_recall(k);
      per[c] = {pr.precision, pr.recall, f1_score(pr.precision, pr.recall)};
      sum += per[c].f1;
    }
    const double mean = sum / num_classes;
    if (mean > best) {
      best = mean;
      r.mf1 = mean;
      r.mf1_confidence = thr;
      r.per_class = per;
    }
  }
  r.confusion = confusion_matrix(dets, gts, num_classes, opts.confusion_conf,
                                 opts.confusion_iou);
  return r;
}

void write_report(std::ostream& os, const EvalReport& r,
                  const std::vector<std::string>& class_names) {
  auto name = [&](int c) {
    if (c == r.num_classes) return std::string("background");
    return c < static_cast<int>(class_names.size()) ? class_names[c]
                                                     : "class" + std::to_string(c);
  };
  os << std::setprecision(10);
  os << "classes: " << r.num_classes << "\n";
  os << "iou_thresholds: " << r.iou_thresholds.front();
  if (r.iou_thresholds.size() > 1) os << ".." << r.iou_thresholds.back();
  os << "\n";
  os << "map50: " << r.map50 << "\n";
  if (r.iou_thresholds.size() > 1) os << "map50_95: " << r.map50_95 << "\n";
  os << "mf1: " << r.mf1 << "\n";
  os << "mf1_confidence: " << r.mf1_confidence << "\n";
  for (int c = 0; c < r.num_classes; ++c) {
    os << "class " << name(c) << ": ap50=" << r.ap[c][0];
    if (r.iou_thresholds.size() > 1) {
      os << " ap50_95="
         << std::accumulate(r.ap[c].begin(), r.ap[c].end(), 0.0) /
                static_cast<double>(r.ap[c].size());
    }
    if (c < static_cast<int>(r.per_class.size())) {
      os << " p=" << r.per_class[c].precision << " r=" << r.per_class[c].recall
         << " f1=" << r.per_class[c].f1;
    }
    os << "\n";
  }
  auto matrix = [&](const char* title, auto const& m) {
    os << title << ":\n";
    for (int i = 0; i <= r.num_classes; ++i) {
      os << "  " << name(i) << ":";
      for (int j = 0; j <= r.num_classes; ++j) os << ' ' << m[i][j];
      os << "\n";
    }
  };
  matrix("confusion_raw", r.confusion.raw);
  matrix("confusion_normalized", r.confusion.normalized);
}

void write_pr_csv(std::ostream& os, std::span<const Detection> dets,
                  std::span<const GroundTruth> gts, int num_classes) {
  os << std::setprecision(10) << "class,confidence,precision,recall\n";
  for (int c = 0; c < num_classes; ++c) {
    for (const auto& p : pr_curve(dets, gts, c, 0.5)) {
      os << c << ',' << p.confidence << ',' << p.precision << ',' << p.recall
         << "\n";
    }
  }
}

}  // namespace apd
