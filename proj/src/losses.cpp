#include "apd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace apd {

void LossWeights::validate() const {
  if (cls < 0 || box < 0 || dfl < 0 || !(cls > 0 || box > 0 || dfl > 0)) {
    throw Error(ErrorCode::kInvalidArgument,
                "loss weights must be non-negative with at least one > 0");
  }
}

namespace {

constexpr double kAspectScale = 4.0 / (std::numbers::pi * std::numbers::pi);

}  // namespace

CiouTerms ciou_terms(const Box& pred, const Box& gt) {
  require_valid(pred, "ciou_loss pred");
  require_valid(gt, "ciou_loss gt");
  CiouTerms t;
  t.iou = overlap_iou(pred, gt);
  const double dx = pred.cx - gt.cx;
  const double dy = pred.cy - gt.cy;
  t.rho2 = dx * dx + dy * dy;
  const double cw = std::max(pred.x2(), gt.x2()) - std::min(pred.x1(), gt.x1());
  const double ch = std::max(pred.y2(), gt.y2()) - std::min(pred.y1(), gt.y1());
  t.c2 = cw * cw + ch * ch;
  const double a = std::atan(gt.w / gt.h) - std::atan(pred.w / pred.h);
  t.v = kAspectScale * a * a;
  const double denom = (1.0 - t.iou) + t.v;
  t.alpha = denom > 0.0 ? t.v / denom : 0.0;
  t.loss = 1.0 - t.iou + t.rho2 / t.c2 + t.alpha * t.v;
  return t;
}

double ciou_loss(const Box& pred, const Box& gt) {
  return ciou_terms(pred, gt).loss;
}

std::array<double, 4> ciou_loss_grad(const Box& pred, const Box& gt) {
  const CiouTerms t = ciou_terms(pred, gt);
  const double x1 = pred.x1(), y1 = pred.y1(), x2 = pred.x2(), y2 = pred.y2();
  const double gx1 = gt.x1(), gy1 = gt.y1(), gx2 = gt.x2(), gy2 = gt.y2();
  const double w = pred.w, h = pred.h;

  // Intersection and union.
  const double iw = std::min(x2, gx2) - std::max(x1, gx1);
  const double ih = std::min(y2, gy2) - std::max(y1, gy1);
  std::array<double, 4> d_inter{0, 0, 0, 0};
  double inter = 0.0;
  if (iw > 0.0 && ih > 0.0) {
    inter = iw * ih;
    d_inter[0] = x1 >= gx1 ? -ih : 0.0;
    d_inter[1] = y1 >= gy1 ? -iw : 0.0;
    d_inter[2] = x2 <= gx2 ? ih : 0.0;
    d_inter[3] = y2 <= gy2 ? iw : 0.0;
  }
  const double uni = w * h + gt.area() - inter;
  const std::array<double, 4> d_area{-h, -w, h, w};
  std::array<double, 4> d_iou{};
  for (int i = 0; i < 4; ++i) {
    const double d_uni = d_area[i] - d_inter[i];
    d_iou[i] = (d_inter[i] * uni - inter * d_uni) / (uni * uni);
  }

  // Normalized center distance.
  const double ddx = pred.cx - gt.cx;
  const double ddy = pred.cy - gt.cy;
  const std::array<double, 4> d_rho2{ddx, ddy, ddx, ddy};
  const double cw = std::max(x2, gx2) - std::min(x1, gx1);
  const double ch = std::max(y2, gy2) - std::min(y1, gy1);
  const std::array<double, 4> d_c2{x1 <= gx1 ? -2.0 * cw : 0.0,
                                   y1 <= gy1 ? -2.0 * ch : 0.0,
                                   x2 >= gx2 ? 2.0 * cw : 0.0,
                                   y2 >= gy2 ? 2.0 * ch : 0.0};

  // Aspect term.
  const double a = std::atan(gt.w / gt.h) - std::atan(w / h);
  const double dv_dw = -2.0 * kAspectScale * a * h / (w * w + h * h);
  const double dv_dh = 2.0 * kAspectScale * a * w / (w * w + h * h);
  const std::array<double, 4> d_v{-dv_dw, -dv_dh, dv_dw, dv_dh};
  const double denom = (1.0 - t.iou) + t.v;

  std::array<double, 4> g{};
  for (int i = 0; i < 4; ++i) {
    const double d_ratio = d_rho2[i] / t.c2 - t.rho2 * d_c2[i] / (t.c2 * t.c2);
    double d_alpha = 0.0;
    if (denom > 0.0) {
      d_alpha = (d_v[i] * (1.0 - t.iou) + t.v * d_iou[i]) / (denom * denom);
    }
    g[i] = -d_iou[i] + d_ratio + t.v * d_alpha + t.alpha * d_v[i];
  }
  return g;
}

DflTarget DflTarget::make(double y, int reg_max) {
  if (reg_max < 2) {
    throw Error(ErrorCode::kInvalidArgument, "dfl: reg_max must be >= 2");
  }
  if (!(y >= 0.0) || y > reg_max - 1) {
    throw Error(ErrorCode::kRange, "dfl: target " + std::to_string(y) +
                                       " outside [0, " +
                                       std::to_string(reg_max - 1) + "]");
  }
  DflTarget t;
  t.y = y;
  t.y_l = std::min(static_cast<int>(std::floor(y)), reg_max - 2);
  t.y_r = t.y_l + 1;
  return t;
}

namespace {

std::vector<double> log_softmax(std::span<const double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

void check_dfl(std::span<const double> logits, const DflTarget& t) {
  if (logits.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "dfl: need >= 2 bins");
  }
  if (t.y_l < 0 || t.y_r >= static_cast<int>(logits.size()) ||
      t.y < t.y_l || t.y > t.y_r) {
    throw Error(ErrorCode::kRange, "dfl: target out of range for " +
                                       std::to_string(logits.size()) + " bins");
  }
}

}  // namespace

double dfl_loss(std::span<const double> logits, const DflTarget& target) {
  check_dfl(logits, target);
  const auto lp = log_softmax(logits);
  const double wl = target.y_r - target.y;
  const double wr = target.y - target.y_l;
  return -(wl * lp[target.y_l] + wr * lp[target.y_r]);
}

std::vector<double> dfl_loss_grad(std::span<const double> logits,
                                  const DflTarget& target) {
  check_dfl(logits, target);
  const auto lp = log_softmax(logits);
  std::vector<double> g(logits.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::exp(lp[i]);
  g[target.y_l] -= target.y_r - target.y;
  g[target.y_r] -= target.y - target.y_l;
  return g;
}

double distribution_expectation(std::span<const double> logits) {
  const auto lp = log_softmax(logits);
  double e = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) e += static_cast<double>(i) * std::exp(lp[i]);
  return e;
}

double bce_logits(double logit, double target) {
  return std::max(logit, 0.0) - logit * target +
         std::log1p(std::exp(-std::abs(logit)));
}

double bce_logits_grad(double logit, double target) {
  return sigmoid(logit) - target;
}

int Assignment::positives() const {
  int n = 0;
  for (const auto& lvl : cells) {
    for (int g : lvl) n += g >= 0 ? 1 : 0;
  }
  return n;
}

Assignment assign_targets(std::span<const GroundTruth> gts,
                          std::span<const LevelGeometry> levels, int image_h,
                          int image_w) {
  Assignment a;
  a.cells.resize(levels.size());
  for (std::size_t l = 0; l < levels.size(); ++l) {
    a.cells[l].assign(static_cast<std::size_t>(levels[l].h) * levels[l].w, -1);
  }
  if (levels.empty()) return a;
  std::vector<std::vector<double>> score(levels.size());
  for (std::size_t l = 0; l < levels.size(); ++l) {
    score[l].assign(a.cells[l].size(), -1.0);
  }
  for (std::size_t gi = 0; gi < gts.size(); ++gi) {
    const Box& b = gts[gi].box;
    const double side = std::max(b.w * image_w, b.h * image_h);
    std::size_t best = 0;
    double best_gap = std::abs(side - 4.0 * levels[0].stride);
    for (std::size_t l = 1; l < levels.size(); ++l) {
      const double gap = std::abs(side - 4.0 * levels[l].stride);
      if (gap < best_gap) {
        best_gap = gap;
        best = l;
      }
    }
    const LevelGeometry& lv = levels[best];
    const double x1 = b.x1() * image_w, x2 = b.x2() * image_w;
    const double y1 = b.y1() * image_h, y2 = b.y2() * image_h;
    for (int gy = 0; gy < lv.h; ++gy) {
      const double cy = (gy + 0.5) * lv.stride;
      if (!(cy > y1 && cy < y2)) continue;
      for (int gx = 0; gx < lv.w; ++gx) {
        const double cx = (gx + 0.5) * lv.stride;
        if (!(cx > x1 && cx < x2)) continue;
        const double l = cx - x1, r = x2 - cx, t = cy - y1, btm = y2 - cy;
        const double centerness =
            std::min(l, r) / std::max(l, r) * std::min(t, btm) / std::max(t, btm);
        const std::size_t cell = static_cast<std::size_t>(gy) * lv.w + gx;
        // Strict comparison keeps the lower GT index on ties.
        if (centerness > score[best][cell]) {
          score[best][cell] = centerness;
          a.cells[best][cell] = static_cast<int>(gi);
        }
      }
    }
  }
  return a;
}

LossResult total_loss(const RawPredictions& preds,
                      const std::vector<std::vector<GroundTruth>>& gts,
                      const LossWeights& weights, bool with_grad) {
  weights.validate();
  const int reg_max = preds.reg_max;
  const int num_classes = preds.num_classes;
  if (preds.levels.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "total_loss: no prediction levels");
  }
  const int batch = preds.levels[0].cls->value.n();
  if (static_cast<int>(gts.size()) != batch) {
    throw Error(ErrorCode::kShapeMismatch,
                "total_loss: " + std::to_string(gts.size()) +
                    " annotation lists for batch of " + std::to_string(batch));
  }
  std::vector<LevelGeometry> geo;
  double cls_count = 0.0;
  for (const auto& lv : preds.levels) {
    const Shape cs = lv.cls->value.shape();
    const Shape bs = lv.box->value.shape();
    if (cs.c != num_classes || bs.c != 4 * reg_max || cs.h != bs.h ||
        cs.w != bs.w || cs.n != batch || bs.n != batch) {
      throw Error(ErrorCode::kShapeMismatch,
                  "total_loss: level tensors " + to_string(cs) + " / " +
                      to_string(bs) + " do not match the head layout");
    }
    geo.push_back({lv.stride, cs.h, cs.w});
    cls_count += static_cast<double>(cs.n) * cs.c * cs.h * cs.w;
  }

  struct Positive {
    int n, level, cell, gt;
  };
  std::vector<Positive> positives;
  std::vector<Assignment> assignments;
  for (int n = 0; n < batch; ++n) {
    assignments.push_back(
        assign_targets(gts[n], geo, preds.image_h, preds.image_w));
    for (std::size_t l = 0; l < geo.size(); ++l) {
      const auto& cells = assignments.back().cells[l];
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (cells[c] >= 0) {
          positives.push_back({n, static_cast<int>(l), static_cast<int>(c), cells[c]});
        }
      }
    }
  }

  LossResult r;
  r.positives = static_cast<int>(positives.size());
  if (with_grad) {
    for (const auto& lv : preds.levels) {
      r.grad_cls.emplace_back(lv.cls->value.shape());
      r.grad_box.emplace_back(lv.box->value.shape());
    }
  }

  // Classification over every cell and class.
  double cls_sum = 0.0;
  for (std::size_t l = 0; l < geo.size(); ++l) {
    const Tensor4& logits = preds.levels[l].cls->value;
    const int plane = geo[l].h * geo[l].w;
    for (int n = 0; n < batch; ++n) {
      const auto& cells = assignments[n].cells[l];
      for (int c = 0; c < num_classes; ++c) {
        for (int q = 0; q < plane; ++q) {
          const int g = cells[q];
          const double target =
              (g >= 0 && gts[n][g].class_id == c) ? 1.0 : 0.0;
          const std::size_t idx =
              logits.index(n, c, q / geo[l].w, q % geo[l].w);
          cls_sum += bce_logits(logits[idx], target);
          if (with_grad) {
            r.grad_cls[l][idx] =
                weights.cls * bce_logits_grad(logits[idx], target) / cls_count;
          }
        }
      }
    }
  }
  r.cls = cls_sum / cls_count;

  // Box regression and distribution terms over positive cells.
  const double npos = static_cast<double>(positives.size());
  double box_sum = 0.0;
  double dfl_sum = 0.0;
  std::vector<double> side_logits(reg_max);
  for (const Positive& p : positives) {
    const LevelGeometry& lg = geo[p.level];
    const Tensor4& bl = preds.levels[p.level].box->value;
    const int gy = p.cell / lg.w;
    const int gx = p.cell % lg.w;
    const double s = lg.stride;
    const double cx = (gx + 0.5) * s;
    const double cy = (gy + 0.5) * s;
    const Box& gtb = gts[p.n][p.gt].box;
    const double gx1 = gtb.x1() * preds.image_w, gx2 = gtb.x2() * preds.image_w;
    const double gy1 = gtb.y1() * preds.image_h, gy2 = gtb.y2() * preds.image_h;
    const std::array<double, 4> target_dist{(cx - gx1) / s, (cy - gy1) / s,
                                            (gx2 - cx) / s, (gy2 - cy) / s};
    std::array<double, 4> dist{};
    std::array<std::vector<double>, 4> probs;
    for (int side = 0; side < 4; ++side) {
      for (int i = 0; i < reg_max; ++i) {
        side_logits[i] = bl[bl.index(p.n, side * reg_max + i, gy, gx)];
      }
      const auto lp = log_softmax(side_logits);
      probs[side].resize(reg_max);
      double e = 0.0;
      for (int i = 0; i < reg_max; ++i) {
        probs[side][i] = std::exp(lp[i]);
        e += i * probs[side][i];
      }
      dist[side] = e;
      const double y = std::clamp(target_dist[side], 0.0, reg_max - 1.0);
      const DflTarget tgt = DflTarget::make(y, reg_max);
      dfl_sum += 0.25 * dfl_loss(side_logits, tgt);
      if (with_grad) {
        const auto g = dfl_loss_grad(side_logits, tgt);
        for (int i = 0; i < reg_max; ++i) {
          r.grad_box[p.level][bl.index(p.n, side * reg_max + i, gy, gx)] +=
              weights.dfl * 0.25 * g[i] / npos;
        }
      }
    }
    const Box pred_px = Box::from_corners(cx - dist[0] * s, cy - dist[1] * s,
                                          cx + dist[2] * s, cy + dist[3] * s);
    const Box gt_px = Box::from_corners(gx1, gy1, gx2, gy2);
    box_sum += ciou_loss(pred_px, gt_px);
    if (with_grad) {
      const auto gc = ciou_loss_grad(pred_px, gt_px);
      // x1 = cx - l*s, y1 = cy - t*s, x2 = cx + r*s, y2 = cy + b*s
      const std::array<double, 4> d_dist{-gc[0] * s, -gc[1] * s, gc[2] * s,
                                         gc[3] * s};
      for (int side = 0; side < 4; ++side) {
        for (int i = 0; i < reg_max; ++i) {
          const double d_logit =
              probs[side][i] * (static_cast<double>(i) - dist[side]);
          r.grad_box[p.level][bl.index(p.n, side * reg_max + i, gy, gx)] +=
              weights.box * d_dist[side] * d_logit / npos;
        }
      }
    }
  }
  r.box = npos > 0 ? box_sum / npos : 0.0;
  r.dfl = npos > 0 ? dfl_sum / npos : 0.0;
  r.total = weights.cls * r.cls + weights.box * r.box + weights.dfl * r.dfl;
  return r;
}

}  // namespace apd
