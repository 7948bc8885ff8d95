// Acceptance run: one PASS/FAIL line per criterion, exit code = number of
// failed criteria. Oracles below are written independently of the library
// code paths they check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "apd/droi.hpp"
#include "apd/io.hpp"
#include "apd/metrics.hpp"
#include "apd/model.hpp"
#include "apd/simam.hpp"
#include "apd/suite.hpp"
#include "apd/train.hpp"

#ifndef APD_CLI_PATH
#error "APD_CLI_PATH must point at the apd executable"
#endif

namespace fs = std::filesystem;
using namespace apd;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int prec = 6) {
  std::ostringstream ss;
  ss << std::setprecision(prec) << v;
  return ss.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failed = 0;

void criterion(int id, const std::string& title, const std::function<Outcome()>& body) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++g_failed;
  std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << std::setw(2) << id << ". " << title
            << " | " << o.detail << " | " << num(seconds_since(t0), 3) << " s"
            << std::endl;
}

// ---- oracles -----------------------------------------------------------------

// Minimizes the per-neuron energy over (w, b) by Newton's method with
// finite-difference derivatives of the raw objective.
double numeric_energy_min(double t, const std::vector<double>& nb, double lambda) {
  auto energy = [&](double w, double b) {
    double acc = 0.0;
    for (double x : nb) acc += (-1.0 - (w * x + b)) * (-1.0 - (w * x + b));
    return acc / static_cast<double>(nb.size()) + (1.0 - (w * t + b)) * (1.0 - (w * t + b)) +
           lambda * w * w;
  };
  double w = 0.0, b = 0.0;
  const double h = 1e-3;  // exact for quadratics up to rounding
  for (int it = 0; it < 8; ++it) {
    const double gw = (energy(w + h, b) - energy(w - h, b)) / (2 * h);
    const double gb = (energy(w, b + h) - energy(w, b - h)) / (2 * h);
    const double e0 = energy(w, b);
    const double hww = (energy(w + h, b) - 2 * e0 + energy(w - h, b)) / (h * h);
    const double hbb = (energy(w, b + h) - 2 * e0 + energy(w, b - h)) / (h * h);
    const double hwb = (energy(w + h, b + h) - energy(w + h, b - h) - energy(w - h, b + h) +
                        energy(w - h, b - h)) / (4 * h * h);
    const double det = hww * hbb - hwb * hwb;
    w -= (hbb * gw - hwb * gb) / det;
    b -= (hww * gb - hwb * gw) / det;
  }
  return energy(w, b);
}

double naive_window_max(const Tensor4& x, int n, int c, int y, int xx, int r) {
  double m = -std::numeric_limits<double>::infinity();
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const int yy = y + dy, xv = xx + dx;
      if (yy < 0 || yy >= x.h() || xv < 0 || xv >= x.w()) continue;
      m = std::max(m, x.at(n, c, yy, xv));
    }
  }
  return m;
}

double golden_min(const std::function<double(double)>& f, double lo, double hi) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 200 && b - a > 1e-13; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

double corner_iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = iw * ih;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

// AP by an exhaustive sweep: for every distinct confidence threshold the kept
// detections are re-matched from scratch.
double sweep_ap(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                int cls, double iou_t) {
  std::vector<Detection> d;
  for (const auto& x : dets) {
    if (x.class_id == cls) d.push_back(x);
  }
  int n_gt = 0;
  for (const auto& g : gts) n_gt += g.class_id == cls;
  if (n_gt == 0) return 0.0;
  std::vector<double> thr;
  for (const auto& x : d) thr.push_back(x.confidence);
  std::sort(thr.begin(), thr.end(), std::greater<>());
  thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
  std::vector<double> prec, rec;
  for (double tau : thr) {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(d.size()); ++i) {
      if (d[i].confidence >= tau) idx.push_back(i);
    }
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return d[a].confidence > d[b].confidence; });
    std::vector<bool> used(gts.size(), false);
    int tp = 0;
    for (int i : idx) {
      int best = -1;
      double best_iou = -1.0;
      for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
        if (used[g] || gts[g].class_id != cls || gts[g].image_id != d[i].image_id) continue;
        const double v = corner_iou(d[i].box, gts[g].box);
        if (v >= iou_t && v > best_iou) {
          best_iou = v;
          best = g;
        }
      }
      if (best >= 0) {
        used[best] = true;
        ++tp;
      }
    }
    prec.push_back(static_cast<double>(tp) / idx.size());
    rec.push_back(static_cast<double>(tp) / n_gt);
  }
  double ap = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < prec.size(); ++k) {
    const double p = *std::max_element(prec.begin() + k, prec.end());
    ap += (rec[k] - prev) * p;
    prev = rec[k];
  }
  return ap;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run(const std::string& cmd) { return std::system(cmd.c_str()); }

}  // namespace

int main() {
  std::cout << std::unitbuf;

  criterion(1, "gradient suite (rel err <= 1e-4, model <= 1e-3, 5 seeds)", [] {
    const auto t0 = Clock::now();
    bool ok = true;
    double worst_layer = 0.0, worst_model = 0.0;
    std::string failed;
    int runs = 0;
    for (const auto& c : gradient_cases()) {
      for (int s = 1; s <= 5; ++s) {
        const auto r = c.run(static_cast<std::uint64_t>(s) * 7919u, c.tol);
        ++runs;
        (c.module == "model" ? worst_model : worst_layer) =
            std::max(c.module == "model" ? worst_model : worst_layer, r.max_rel_error);
        if (!r.pass) {
          ok = false;
          failed += " " + c.name + "@" + std::to_string(s);
        }
      }
    }
    const double sec = seconds_since(t0);
    ok = ok && sec <= 300.0;
    return Outcome{ok, std::to_string(runs) + " runs, worst layer " + num(worst_layer) +
                           ", worst model " + num(worst_model) +
                           (failed.empty() ? "" : ", failed:" + failed)};
  });

  criterion(2, "SimAM closed form vs numeric minimum; uniform weight", [] {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_int_distribution<int> size(2, 40);
    std::uniform_real_distribution<double> lam(1e-4, 0.5);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      std::vector<double> nb(size(rng));
      const double shift = 3.0 * nd(rng), scale = std::exp(nd(rng));
      for (auto& v : nb) v = shift + scale * nd(rng);
      const double t = shift + scale * 2.0 * nd(rng);
      const double lambda = lam(rng);
      double mu = 0.0;
      for (double v : nb) mu += v;
      mu /= nb.size();
      double s2 = 0.0;
      for (double v : nb) s2 += (v - mu) * (v - mu);
      s2 /= nb.size();
      const double closed = simam_energy_min(t, mu, s2, lambda);
      worst = std::max(worst, std::abs(closed - numeric_energy_min(t, nb, lambda)));
    }
    const Tensor4 w = simam_weights(Tensor4(Shape{2, 3, 5, 4}, -1.25));
    double dev = 0.0;
    for (double v : w.values()) dev = std::max(dev, std::abs(v - 0.6224593312018546));
    return Outcome{worst <= 1e-6 && dev <= 1e-9,
                   "max |de| " + num(worst) + " over 100, uniform weight dev " + num(dev)};
  });

  criterion(3, "SimSPPF cascade equals 9x9 / 13x13 pools", [] {
    std::mt19937_64 rng(33);
    std::normal_distribution<double> nd;
    std::uniform_int_distribution<int> dim(1, 17);
    int mismatches = 0;
    for (int i = 0; i < 20; ++i) {
      Tensor4 x(Shape{2, 3, dim(rng), dim(rng)});
      for (auto& v : x.values()) v = std::round(nd(rng) * 4.0) / 4.0;  // many ties
      const Tensor4 y1 = maxpool2d(x, 5, 1, 2);
      const Tensor4 y2 = maxpool2d(y1, 5, 1, 2);
      const Tensor4 y3 = maxpool2d(y2, 5, 1, 2);
      for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
          for (int y = 0; y < x.h(); ++y)
            for (int xx = 0; xx < x.w(); ++xx) {
              mismatches += y2.at(n, c, y, xx) != naive_window_max(x, n, c, y, xx, 4);
              mismatches += y3.at(n, c, y, xx) != naive_window_max(x, n, c, y, xx, 6);
            }
      const Tensor4 p9 = maxpool2d(x, 9, 1, 4), p13 = maxpool2d(x, 13, 1, 6);
      mismatches += y2.values() != p9.values();
      mismatches += y3.values() != p13.values();
    }
    return Outcome{mismatches == 0, std::to_string(mismatches) + " mismatches over 20 tensors"};
  });

  criterion(4, "Mish: value and slope at 0, global minimum in [-0.309, -0.308]", [] {
    const double m0 = mish(0.0);
    const double d0 = mish_derivative(0.0);
    double best_x = 0.0, best = 0.0;
    for (long i = 0; i <= 5'000'000; ++i) {
      const double x = -5.0 + i * 1e-6;
      const double v = mish(x);
      if (v < best) {
        best = v;
        best_x = x;
      }
    }
    const bool ok = m0 == 0.0 && std::abs(d0 - 0.6) <= 1e-9 && best >= -0.309 &&
                    best <= -0.308;
    return Outcome{ok, "mish(0)=" + num(m0) + ", mish'(0)=" + num(d0, 12) + ", argmin " +
                           num(best_x, 8) + ", min " + num(best, 8)};
  });

  criterion(5, "CIoU: self loss 0, disjoint hand case 1.2, alpha/v ranges", [] {
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> pos(0.0, 1.0), ext(1e-3, 1.0);
    double self = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Box b{pos(rng), pos(rng), ext(rng), ext(rng)};
      self = std::max(self, std::abs(ciou_loss(b, b)));
    }
    // [0,1]x[0,1] vs [1,2]x[0,1]: IoU 0, rho^2 = 1, c^2 = 2^2 + 1^2, v = 0.
    const double hand = ciou_loss(Box::from_corners(0, 0, 1, 1), Box::from_corners(1, 0, 2, 1));
    bool ranges = true;
    for (int i = 0; i < 10000; ++i) {
      const CiouTerms t = ciou_terms(Box{pos(rng), pos(rng), ext(rng), ext(rng)},
                                     Box{pos(rng), pos(rng), ext(rng), ext(rng)});
      ranges = ranges && t.alpha >= 0.0 && t.alpha <= 1.0 && t.v >= 0.0 && t.v <= 1.0;
    }
    return Outcome{self <= 1e-12 && std::abs(hand - 1.2) <= 1e-9 && ranges,
                   "max self " + num(self) + ", hand " + num(hand, 15) + ", ranges " +
                       (ranges ? "ok" : "violated")};
  });

  criterion(6, "DFL: one-hot 0, midpoint ln 2, minimizer p[y_l] = y_r - y", [] {
    const int rm = 8;
    double one_hot = 0.0;
    for (int k = 0; k < rm; ++k) {
      std::vector<double> logits(rm, 0.0);
      logits[k] = 1000.0;
      one_hot = std::max(one_hot, std::abs(dfl_loss(logits, DflTarget::make(k, rm))));
    }
    std::vector<double> mid(rm, -1e4);
    mid[3] = mid[4] = 0.0;
    const double half = dfl_loss(mid, DflTarget::make(3.5, rm));
    std::mt19937_64 rng(66);
    std::uniform_real_distribution<double> uy(0.0, rm - 1.0);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const DflTarget t = DflTarget::make(uy(rng), rm);
      const double pl = golden_min(
          [&](double p) {
            std::vector<double> lg(rm, -1e4);
            lg[t.y_l] = std::log(p);
            lg[t.y_r] = std::log(1.0 - p);
            return dfl_loss(lg, t);
          },
          1e-12, 1.0 - 1e-12);
      worst = std::max(worst, std::abs(pl - (t.y_r - t.y)));
    }
    return Outcome{one_hot <= 1e-12 && std::abs(half - std::log(2.0)) <= 1e-9 && worst <= 1e-6,
                   "one-hot " + num(one_hot) + ", midpoint " + num(half, 15) +
                       ", minimizer dev " + num(worst)};
  });

  criterion(7, "parameter economy (ghost <= 0.75 x plain, SimAM adds 0)", [] {
    auto count = [](const ModelConfig& c) {
      const Model m(c, 1);
      std::size_t n = 0;
      for (const auto& [name, v] : m.registry().params()) n += v->value.size();
      return n;
    };
    ModelConfig ghost, plain, no_simam;
    plain.use_c3ghost = false;
    no_simam.use_simam = false;
    const double a = static_cast<double>(count(ghost));
    const double b = static_cast<double>(count(plain));
    const double c = static_cast<double>(count(no_simam));
    return Outcome{a / b <= 0.75 && a == c,
                   num(a, 10) + " / " + num(b, 10) + " = " + num(a / b) +
                       ", SimAM delta " + num(a - c)};
  });

  criterion(8, "ablation rows Exp1-Exp5 build, forward and train 50 steps", [] {
    const ToySceneSpec spec;
    Dataset data;
    data.class_names = {"a", "b"};
    data.images = Tensor4(Shape{8, 3, 64, 64});
    for (int i = 0; i < 8; ++i) {
      const ToyScene s = generate_toy_scene(100 + i, spec);
      std::copy(s.image.values().begin(), s.image.values().end(),
                data.images.values().begin() + i * s.image.size());
      auto g = s.gts;
      for (auto& x : g) x.image_id = i;
      data.gts.push_back(g);
    }
    TrainConfig tc;
    tc.steps = 50;
    tc.warmup_steps = 5;
    std::string detail;
    bool ok = true;
    std::vector<double> first_outputs;
    for (int row = 1; row <= 5; ++row) {
      Model m(ablation_config(row), 7);
      const double out0 = m.forward(data.images).levels[0].cls->value[0];
      first_outputs.push_back(out0);
      const TrainResult r = train_toy(m, data, tc);
      bool finite = true;
      for (const auto& s : r.curve) finite = finite && std::isfinite(s.total);
      ok = ok && finite && r.curve.size() == 51;
      detail += "Exp" + std::to_string(row) + " " + std::to_string(m.parameter_count()) +
                "p loss " + num(r.curve.front().total, 4) + "->" + num(r.curve.back().total, 4) +
                "; ";
    }
    for (std::size_t i = 1; i < first_outputs.size(); ++i) {
      ok = ok && first_outputs[i] != first_outputs[i - 1];
    }
    return Outcome{ok, detail + (ok ? "each toggle changes the output" : "")};
  });

  criterion(9, "toy overfit: loss <= 10% of initial, train mAP@0.5 >= 0.90", [] {
    const auto t0 = Clock::now();
    const fs::path dir = fs::temp_directory_path() / "apd_acceptance_toy";
    fs::remove_all(dir);
    const DatasetManifest m = write_toy_dataset(dir, 2024, 20, ToySceneSpec{});
    const Dataset data = load_dataset(DatasetManifest::load((dir / "manifest.txt").string()));
    Model model(ModelConfig{}, 2024);
    TrainConfig tc;
    tc.steps = 600;
    const TrainResult r = train_toy(model, data, tc);
    recalibrate_batchnorm(model, data.images);
    const auto dets = predict(model, data.images);
    std::vector<GroundTruth> gts;
    for (const auto& g : data.gts) gts.insert(gts.end(), g.begin(), g.end());
    double map50 = 0.0;
    for (int c = 0; c < 2; ++c) map50 += sweep_ap(dets, gts, c, 0.5) / 2.0;
    const double ratio = r.curve.back().total / r.curve.front().total;
    const double sec = seconds_since(t0);
    fs::remove_all(dir);
    return Outcome{ratio <= 0.10 && map50 >= 0.90 && sec <= 900.0,
                   std::to_string(tc.steps) + " steps, loss " + num(r.curve.front().total) +
                       " -> " + num(r.curve.back().total) + " (ratio " + num(ratio) +
                       "), mAP@0.5 " + num(map50) + ", " + std::to_string(gts.size()) +
                       " objects"};
  });

  criterion(10, "metrics vs exhaustive sweep; confusion rows; perfect fixture", [] {
    std::mt19937_64 rng(1010);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0, row_dev = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
      const int nc = 1 + static_cast<int>(u(rng) * 3);
      const int images = 1 + static_cast<int>(u(rng) * 4);
      std::vector<GroundTruth> gts;
      std::vector<Detection> dets;
      auto rbox = [&] {
        const double w = 0.05 + 0.3 * u(rng), h = 0.05 + 0.3 * u(rng);
        return Box{w / 2 + (1 - w) * u(rng), h / 2 + (1 - h) * u(rng), w, h};
      };
      const int n_gt = static_cast<int>(u(rng) * 30);
      for (int i = 0; i < n_gt; ++i) {
        gts.push_back({static_cast<int>(u(rng) * nc), rbox(), static_cast<int>(u(rng) * images)});
      }
      const int n_det = static_cast<int>(u(rng) * 201);
      for (int i = 0; i < n_det; ++i) {
        Detection d;
        // Coarse confidences force tie groups.
        d.confidence = std::round(u(rng) * 20.0) / 20.0;
        if (!gts.empty() && u(rng) < 0.6) {
          const auto& g = gts[static_cast<std::size_t>(u(rng) * gts.size())];
          d.class_id = u(rng) < 0.85 ? g.class_id : static_cast<int>(u(rng) * nc);
          d.image_id = g.image_id;
          d.box = Box{g.box.cx + 0.05 * (u(rng) - 0.5), g.box.cy + 0.05 * (u(rng) - 0.5),
                      g.box.w * (0.8 + 0.4 * u(rng)), g.box.h * (0.8 + 0.4 * u(rng))};
        } else {
          d.class_id = static_cast<int>(u(rng) * nc);
          d.image_id = static_cast<int>(u(rng) * images);
          d.box = rbox();
        }
        dets.push_back(d);
      }
      EvalOptions opts;
      const EvalReport rep = evaluate(dets, gts, nc, opts);
      const auto thr = coco_iou_thresholds();
      double map50 = 0.0, map5095 = 0.0;
      for (int c = 0; c < nc; ++c) {
        for (std::size_t t = 0; t < thr.size(); ++t) {
          const double ap = sweep_ap(dets, gts, c, thr[t]);
          worst = std::max(worst, std::abs(ap - rep.ap[c][t]));
          if (t == 0) map50 += ap / nc;
          map5095 += ap / (nc * thr.size());
        }
      }
      worst = std::max({worst, std::abs(map50 - rep.map50), std::abs(map5095 - rep.map50_95)});
      for (const auto& row : rep.confusion.normalized) {
        double s = 0.0;
        for (double v : row) s += v;
        if (s > 0.0) row_dev = std::max(row_dev, std::abs(s - 1.0));
      }
    }
    std::vector<GroundTruth> g{{0, {0.25, 0.25, 0.2, 0.2}, 0},
                               {1, {0.7, 0.6, 0.3, 0.2}, 0},
                               {1, {0.5, 0.5, 0.1, 0.1}, 1}};
    std::vector<Detection> p;
    for (const auto& x : g) p.push_back({x.class_id, 1.0, x.box, x.image_id});
    const EvalReport perfect = evaluate(p, g, 2);
    bool exact = perfect.map50 == 1.0 && perfect.map50_95 == 1.0 && perfect.mf1 == 1.0;
    for (const auto& c : perfect.per_class) {
      exact = exact && c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0;
    }
    return Outcome{worst <= 1e-9 && row_dev <= 1e-9 && exact,
                   "max AP dev " + num(worst) + ", row-sum dev " + num(row_dev) +
                       ", perfect fixture " + (exact ? "exact" : "not exact")};
  });

  criterion(11, "DROI: W0 at rest, 6.25 / 4.75 fixtures, monotone and continuous", [] {
    DroiConfig on;
    DroiConfig off = on;
    off.deadband = false;
    const double rest_on = critical_width(0.0, 0.0, on).w_c;
    const double rest_off = critical_width(0.0, 0.0, off).w_c;
    const double fix_off = critical_width(45.0, 10.0, off).w_c;
    const double fix_on = critical_width(45.0, 10.0, on).w_c;
    bool monotone = true;
    double max_jump = 0.0;
    const double dtheta = 0.01, dv = 0.5;
    for (const DroiConfig* cfg : {&on, &off}) {
      for (double v = 0.0; v <= 40.0 + 1e-12; v += dv) {
        double prev = -1.0;
        for (double a = 0.0; a <= 90.0 + 1e-12; a += dtheta) {
          const double wp = critical_width(a, v, *cfg).w_c;
          const double wn = critical_width(-a, v, *cfg).w_c;
          monotone = monotone && wp == wn && wp >= prev && wp >= cfg->w0;
          if (v + dv <= 40.0) monotone = monotone && critical_width(a, v + dv, *cfg).w_c >= wp;
          if (cfg == &on && prev >= 0.0) {
            max_jump = std::max(max_jump, std::abs(wp - prev) - on.k1 * dtheta);
          }
          prev = wp;
        }
      }
    }
    for (double b : {-60.0, -30.0, 0.0, 30.0, 60.0}) {
      for (double v : {0.0, 13.0, 40.0}) {
        const double lo = critical_width(std::nextafter(b, -1e9), v, on).w_c;
        const double hi = critical_width(std::nextafter(b, 1e9), v, on).w_c;
        max_jump = std::max(max_jump, std::abs(hi - lo));
      }
    }
    max_jump = std::max(max_jump, 0.0);
    const bool ok = rest_on == on.w0 && rest_off == off.w0 && std::abs(fix_off - 6.25) <= 1e-12 &&
                    std::abs(fix_on - 4.75) <= 1e-12 && monotone && max_jump <= 1e-9;
    return Outcome{ok, "rest " + num(rest_on) + "/" + num(rest_off) + ", verbatim " +
                           num(fix_off, 15) + ", deadband " + num(fix_on, 15) + ", monotone " +
                           (monotone ? "yes" : "no") + ", max jump " + num(max_jump)};
  });

  criterion(12, "determinism: selftest, train-toy, forward bit-identical", [] {
    const fs::path dir = fs::temp_directory_path() / "apd_acceptance_det";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cli = APD_CLI_PATH;
    {
      std::ofstream cfg(dir / "train.cfg");
      cfg << "seed = 5\nsteps = 25\nimages = 4\nwarmup_steps = 5\nlog_every = 0\n";
    }
    std::string detail;
    bool ok = true;
    for (int runno = 0; runno < 2; ++runno) {
      const fs::path r = dir / ("run" + std::to_string(runno));
      fs::create_directories(r);
      int rc = run(cli + " selftest > " + (r / "selftest.txt").string());
      rc |= run(cli + " train-toy --config " + (dir / "train.cfg").string() + " --out " +
                (r / "train").string() + " > " + (r / "train.txt").string() + " 2>/dev/null");
      rc |= run(cli + " forward --weights " + (r / "train" / "weights.w1").string() +
                " --config " + (r / "train" / "model.cfg").string() + " --input " +
                (dir / "run0" / "train" / "data" / "images" / "0001.t4").string() + " --out " +
                (r / "det.txt").string() + " > /dev/null");
      ok = ok && rc == 0;
    }
    const char* files[] = {"selftest.txt",         "train.txt",           "train/loss_curve.csv",
                           "train/weights.w1",     "train/pred/0000.txt", "train/report.txt",
                           "det.txt"};
    int same = 0;
    for (const char* f : files) {
      const std::string a = slurp(dir / "run0" / f), b = slurp(dir / "run1" / f);
      const bool eq = !a.empty() && a == b;
      same += eq;
      if (!eq) detail += std::string(" differs:") + f;
    }
    ok = ok && same == static_cast<int>(std::size(files));
    fs::remove_all(dir);
    return Outcome{ok, std::to_string(same) + "/" + std::to_string(std::size(files)) +
                           " artifacts identical across two runs" + detail};
  });

  std::cout << (g_failed == 0 ? "ALL 12 CRITERIA PASSED"
                              : std::to_string(g_failed) + " CRITERIA FAILED")
            << std::endl;
  return g_failed == 0 ? 0 : 1;
}
