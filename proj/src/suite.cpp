#include "apd/suite.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "apd/droi.hpp"
#include "apd/ghost.hpp"
#include "apd/igd.hpp"
#include "apd/io.hpp"
#include "apd/losses.hpp"
#include "apd/metrics.hpp"
#include "apd/model.hpp"
#include "apd/simam.hpp"

namespace apd {

namespace {

Tensor4 random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Tensor4 t(s);
  for (auto& v : t.values()) v = nd(rng);
  return t;
}

GradCheckOptions options(std::uint64_t seed, double tol, double h = 1e-5) {
  GradCheckOptions o;
  o.seed = seed;
  o.tol = tol;
  o.h = h;
  return o;
}

// Randomizes batchnorm affine parameters so the checks do not sit at the
// identity initialization.
void perturb_params(ParamRegistry& reg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (const auto& [name, var] : reg.params()) {
    const bool gamma = name.ends_with(".gamma");
    const bool beta = name.ends_with(".beta");
    if (!gamma && !beta) continue;
    for (auto& v : var->value.values()) v = (gamma ? 1.0 : 0.0) + u(rng);
  }
}

template <class Layer, class Build>
GradCase layer_case(std::string module, std::string name, Shape in, Build build) {
  GradCase c;
  c.module = std::move(module);
  c.name = std::move(name);
  c.run = [in, build](std::uint64_t seed, double tol) {
    std::mt19937_64 rng(seed);
    ParamRegistry reg;
    BuildContext ctx{&reg, &rng};
    auto layer = std::make_shared<Layer>(build(ctx));
    perturb_params(reg, rng);
    const Tensor4 x = random_tensor(in, rng);
    return grad_check(
        [layer](Tape* t, const Var& v) { return layer->forward(t, v); }, x,
        options(seed, tol));
  };
  return c;
}

// Box corners kept well apart so the boxes stay non-degenerate under the
// finite-difference step.
std::vector<double> random_corner_pair(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.1, 0.6);
  std::uniform_real_distribution<double> ext(0.1, 0.4);
  std::vector<double> v;
  for (int b = 0; b < 2; ++b) {
    const double x1 = pos(rng), y1 = pos(rng);
    v.insert(v.end(), {x1, y1, x1 + ext(rng), y1 + ext(rng)});
  }
  return v;
}

}  // namespace

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;

  {
    GradCase c{"conv2d", "conv2d.input", 1e-4, {}};
    c.run = [](std::uint64_t seed, double tol) {
      std::mt19937_64 rng(seed);
      const ConvSpec spec{4, 6, 3, 2, 1, 2, true};
      auto w = make_var(random_tensor(spec.weight_shape(), rng, 0.5));
      auto b = make_var(random_tensor(Shape{6, 1, 1, 1}, rng));
      return grad_check(
          [=](Tape* t, const Var& x) { return ag::conv2d(t, x, spec, w, b); },
          random_tensor(Shape{2, 4, 7, 6}, rng), options(seed, tol));
    };
    cases.push_back(c);
    c.name = "conv2d.weight";
    c.run = [](std::uint64_t seed, double tol) {
      std::mt19937_64 rng(seed);
      const ConvSpec spec{3, 4, 3, 1, 1, 1, false};
      auto x = make_var(random_tensor(Shape{2, 3, 5, 5}, rng));
      return grad_check(
          [=](Tape* t, const Var& w) { return ag::conv2d(t, x, spec, w); },
          random_tensor(spec.weight_shape(), rng, 0.5), options(seed, tol));
    };
    cases.push_back(c);
  }
  {
    GradCase c{"batchnorm2d", "batchnorm2d.input", 1e-4, {}};
    c.run = [](std::uint64_t seed, double tol) {
      std::mt19937_64 rng(seed);
      auto g = make_var(random_tensor(Shape{1, 3, 1, 1}, rng));
      auto b = make_var(random_tensor(Shape{1, 3, 1, 1}, rng));
      auto st = std::make_shared<BatchNormStats>(BatchNormStats::fresh(3));
      return grad_check(
          [=](Tape* t, const Var& x) { return ag::batchnorm2d(t, x, g, b, *st); },
          random_tensor(Shape{3, 3, 4, 4}, rng), options(seed, tol));
    };
    cases.push_back(c);
    c.name = "batchnorm2d.gamma";
    c.run = [](std::uint64_t seed, double tol) {
      std::mt19937_64 rng(seed);
      auto x = make_var(random_tensor(Shape{3, 3, 4, 4}, rng));
      auto b = make_var(random_tensor(Shape{1, 3, 1, 1}, rng));
      auto st = std::make_shared<BatchNormStats>(BatchNormStats::fresh(3));
      return grad_check(
          [=](Tape* t, const Var& g) { return ag::batchnorm2d(t, x, g, b, *st); },
          random_tensor(Shape{1, 3, 1, 1}, rng), options(seed, tol));
    };
    cases.push_back(c);
  }
  for (auto kind : {ActivationKind::kMish, ActivationKind::kSilu}) {
    GradCase c{to_string(kind), to_string(kind), 1e-4, {}};
    c.run = [kind](std::uint64_t seed, double tol) {
      std::mt19937_64 rng(seed);
      return grad_check(
          [kind](Tape* t, const Var& x) { return ag::activate(t, x, kind); },
          random_tensor(Shape{2, 3, 4, 5}, rng, 2.0), options(seed, tol));
    };
    cases.push_back(c);
  }
  {
    GradCase c{"simam", "simam_forward", 1e-4, {}};
    c.run = [](std::uint64_t seed, double tol) {
      std::mt19937_64 rng(seed);
      return grad_check([](Tape* t, const Var& x) { return ag::simam(t, x); },
                        random_tensor(Shape{2, 3, 4, 5}, rng), options(seed, tol));
    };
    cases.push_back(c);
  }
  cases.push_back(layer_case<SimConv>(
      "sim_conv", "sim_conv", Shape{2, 4, 6, 6}, [](BuildContext& ctx) {
        return SimConv(ctx, "sc", 4, 6, 3, 1, ActivationKind::kMish);
      }));
  cases.push_back(layer_case<GhostConv>(
      "ghost_conv", "ghost_conv", Shape{2, 4, 6, 6}, [](BuildContext& ctx) {
        return GhostConv(ctx, "gc", GhostSpec{4, 8, 2, 1, 3, 1});
      }));
  cases.push_back(layer_case<C3Block>(
      "c3ghost_block", "c3ghost_block", Shape{2, 8, 6, 6}, [](BuildContext& ctx) {
        return C3Block(ctx, "c3", C3GhostSpec{8, 8, 1, 0.5}, true);
      }));
  cases.push_back(layer_case<SimSppf>(
      "simsppf", "simsppf_forward", Shape{2, 8, 6, 6}, [](BuildContext& ctx) {
        return SimSppf(ctx, "sppf", SimSppfSpec{8});
      }));
  {
    GradCase c{"igd_neck", "igd_neck_forward", 1e-4, {}};
    c.run = [](std::uint64_t seed, double tol) {
      std::mt19937_64 rng(seed);
      ParamRegistry reg;
      BuildContext ctx{&reg, &rng};
      auto neck = std::make_shared<IgdNeck>(ctx, "neck", IgdSpec{{4, 6, 8}});
      perturb_params(reg, rng);
      auto p4 = make_var(random_tensor(Shape{2, 6, 4, 4}, rng));
      auto p5 = make_var(random_tensor(Shape{2, 8, 2, 2}, rng));
      // Gradient w.r.t. p3; p4/p5 stay fixed. All three outputs are checked.
      return grad_check(
          [=](Tape* t, const Var& p3) {
            const PyramidFeatures out = neck->forward(t, {p3, p4, p5});
            return ag::concat_channels(
                t, {out.p3, ag::resize_nearest(t, out.p4, 8, 8),
                    ag::resize_nearest(t, out.p5, 8, 8)});
          },
          // Outputs are large relative to their gradients; a wider step keeps
          // rounding error well below tolerance.
          random_tensor(Shape{2, 4, 8, 8}, rng), options(seed, tol, 1e-4));
    };
    cases.push_back(c);
  }
  {
    GradCase c{"ciou_loss", "ciou_loss", 1e-4, {}};
    c.run = [](std::uint64_t seed, double tol) {
      std::mt19937_64 rng(seed);
      const auto v = random_corner_pair(rng);
      const Box gt = Box::from_corners(v[4], v[5], v[6], v[7]);
      auto pred = [](std::span<const double> p) {
        return Box::from_corners(p[0], p[1], p[2], p[3]);
      };
      const std::vector<double> x(v.begin(), v.begin() + 4);
      return grad_check_scalar(
          [=](std::span<const double> p) { return ciou_loss(pred(p), gt); },
          [=](std::span<const double> p) {
            const auto g = ciou_loss_grad(pred(p), gt);
            return std::vector<double>(g.begin(), g.end());
          },
          x, options(seed, tol));
    };
    cases.push_back(c);
  }
  {
    GradCase c{"dfl_loss", "dfl_loss", 1e-4, {}};
    c.run = [](std::uint64_t seed, double tol) {
      std::mt19937_64 rng(seed);
      const int reg_max = 8;
      std::uniform_real_distribution<double> uy(0.0, reg_max - 1.0);
      const DflTarget tgt = DflTarget::make(uy(rng), reg_max);
      const Tensor4 x = random_tensor(Shape{1, reg_max, 1, 1}, rng);
      return grad_check_scalar(
          [=](std::span<const double> l) { return dfl_loss(l, tgt); },
          [=](std::span<const double> l) { return dfl_loss_grad(l, tgt); },
          x.data(), options(seed, tol));
    };
    cases.push_back(c);
  }
  {
    GradCase c{"bce_logits", "bce_logits", 1e-4, {}};
    c.run = [](std::uint64_t seed, double tol) {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> ut(0.0, 1.0);
      const Tensor4 x = random_tensor(Shape{1, 16, 1, 1}, rng, 3.0);
      std::vector<double> targets(16);
      for (auto& t : targets) t = ut(rng) < 0.5 ? 0.0 : ut(rng);
      return grad_check_scalar(
          [=](std::span<const double> l) {
            double s = 0.0;
            for (std::size_t i = 0; i < l.size(); ++i) s += bce_logits(l[i], targets[i]);
            return s;
          },
          [=](std::span<const double> l) {
            std::vector<double> g(l.size());
            for (std::size_t i = 0; i < l.size(); ++i) g[i] = bce_logits_grad(l[i], targets[i]);
            return g;
          },
          x.data(), options(seed, tol));
    };
    cases.push_back(c);
  }
  {
    GradCase c{"model", "micro_model_end_to_end", 1e-3, {}};
    c.run = [](std::uint64_t seed, double tol) {
      auto model = std::make_shared<Model>(ModelConfig{}, seed);
      std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
      perturb_params(model->registry(), rng);
      const Tensor4 x = random_tensor(Shape{2, 3, 64, 64}, rng, 0.5);
      return grad_check(
          [model](Tape* t, const Var& img) {
            const RawPredictions p = model->forward(t, img);
            std::vector<Var> parts;
            for (const auto& lv : p.levels) {
              parts.push_back(ag::resize_nearest(t, lv.cls, 4, 4));
              parts.push_back(ag::resize_nearest(t, lv.box, 4, 4));
            }
            return ag::concat_channels(t, parts);
          },
          x, options(seed, tol));
    };
    cases.push_back(c);
  }
  return cases;
}

std::vector<std::string> gradient_modules() {
  std::vector<std::string> out;
  for (const auto& c : gradient_cases()) {
    if (std::find(out.begin(), out.end(), c.module) == out.end()) out.push_back(c.module);
  }
  return out;
}

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

template <class F>
void add_check(std::vector<CheckResult>& out, const std::string& name, F f) {
  CheckResult r{name, false, ""};
  try {
    r.pass = f(r.detail);
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  out.push_back(r);
}

}  // namespace

std::vector<CheckResult> run_selftest(int grad_seeds) {
  std::vector<CheckResult> out;
  for (const auto& c : gradient_cases()) {
    add_check(out, "gradcheck " + c.name, [&](std::string& d) {
      double worst = 0.0;
      bool ok = true;
      for (int s = 0; s < grad_seeds; ++s) {
        const auto r = c.run(static_cast<std::uint64_t>(s + 1), c.tol);
        worst = std::max(worst, r.max_rel_error);
        ok = ok && r.pass;
      }
      d = "max rel err " + fmt(worst);
      return ok;
    });
  }
  add_check(out, "simam uniform weight", [](std::string& d) {
    const Tensor4 w = simam_weights(Tensor4(Shape{1, 2, 3, 3}, 0.7));
    double worst = 0.0;
    for (double v : w.values()) worst = std::max(worst, std::abs(v - sigmoid(0.5)));
    d = "max dev " + fmt(worst);
    return worst <= 1e-12;
  });
  add_check(out, "simam closed form", [](std::string& d) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd;
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      std::vector<double> nb(9);
      for (auto& v : nb) v = nd(rng);
      const double t = nd(rng);
      const EnergyStats st = energy_stats(nb);
      const double s2 = st.sigma2_hat * (st.m - 1) / st.m;
      const double e = simam_energy_min(t, st.mu_hat, s2, 1e-4);
      worst = std::max(worst, std::abs(e - energy_numeric_oracle(t, nb, 1e-4).e_min));
    }
    d = "max |de| " + fmt(worst);
    return worst <= 1e-6;
  });
  add_check(out, "sppf cascade equals wide pools", [](std::string& d) {
    std::mt19937_64 rng(5);
    const Tensor4 x = random_tensor(Shape{1, 3, 11, 9}, rng);
    const Tensor4 y2 = maxpool2d(maxpool2d(x, 5, 1, 2), 5, 1, 2);
    const Tensor4 y3 = maxpool2d(y2, 5, 1, 2);
    const bool ok = y2.values() == maxpool2d(x, 9, 1, 4).values() &&
                    y3.values() == maxpool2d(x, 13, 1, 6).values();
    d = ok ? "exact" : "mismatch";
    return ok;
  });
  add_check(out, "mish values", [](std::string& d) {
    const double d0 = mish_derivative(0.0);
    d = "mish(0)=" + fmt(mish(0.0)) + " mish'(0)=" + fmt(d0);
    return mish(0.0) == 0.0 && std::abs(d0 - 0.6) <= 1e-9;
  });
  add_check(out, "ciou identities", [](std::string& d) {
    const Box a{0.3, 0.3, 0.2, 0.2};
    const Box b = Box::from_corners(0.4, 0.2, 0.6, 0.4);
    const double self = ciou_loss(a, a);
    const double disjoint = ciou_loss(a, b);
    d = "self " + fmt(self) + " disjoint " + fmt(disjoint);
    return std::abs(self) <= 1e-12 && std::abs(disjoint - 1.2) <= 1e-9;
  });
  add_check(out, "dfl values", [](std::string& d) {
    std::vector<double> uniform2{0.0, 0.0, -1e9, -1e9};
    const double mid = dfl_loss(uniform2, DflTarget::make(0.5, 4));
    d = "midpoint " + fmt(mid);
    return std::abs(mid - std::log(2.0)) <= 1e-9;
  });
  add_check(out, "parameter economy", [](std::string& d) {
    ModelConfig on;
    ModelConfig off = on;
    off.use_c3ghost = false;
    ModelConfig nosim = on;
    nosim.use_simam = false;
    const double a = static_cast<double>(Model(on, 1).parameter_count());
    const double b = static_cast<double>(Model(off, 1).parameter_count());
    const double c = static_cast<double>(Model(nosim, 1).parameter_count());
    d = "ghost/plain " + fmt(a / b);
    return a / b <= 0.75 && a == c;
  });
  add_check(out, "metrics perfect fixture", [](std::string& d) {
    std::vector<GroundTruth> g{{0, {0.3, 0.3, 0.2, 0.2}, 0}, {1, {0.7, 0.6, 0.2, 0.3}, 0}};
    std::vector<Detection> p;
    for (const auto& x : g) p.push_back({x.class_id, 1.0, x.box, x.image_id});
    const EvalReport r = evaluate(p, g, 2);
    d = "map50 " + fmt(r.map50) + " mf1 " + fmt(r.mf1);
    return r.map50 == 1.0 && r.map50_95 == 1.0 && r.mf1 == 1.0;
  });
  add_check(out, "droi fixtures", [](std::string& d) {
    DroiConfig c;
    const double base = critical_width(0.0, 0.0, c).w_c;
    const double on = critical_width(45.0, 10.0, c).w_c;
    c.deadband = false;
    const double off = critical_width(45.0, 10.0, c).w_c;
    d = "W0 " + fmt(base) + " deadband " + fmt(on) + " verbatim " + fmt(off);
    return base == 3.0 && std::abs(on - 4.75) <= 1e-12 && std::abs(off - 6.25) <= 1e-12;
  });
  add_check(out, "annotation round trip", [](std::string& d) {
    const ToyScene s = generate_toy_scene(3, ToySceneSpec{});
    std::stringstream ss;
    write_annotations(ss, s.gts);
    const auto back = parse_annotations(ss);
    bool ok = back.size() == s.gts.size();
    for (std::size_t i = 0; ok && i < back.size(); ++i) {
      ok = back[i].class_id == s.gts[i].class_id && back[i].box == s.gts[i].box;
    }
    d = std::to_string(back.size()) + " objects";
    return ok;
  });
  add_check(out, "forward determinism", [](std::string& d) {
    std::mt19937_64 rng(9);
    const Tensor4 x = random_tensor(Shape{1, 3, 64, 64}, rng, 0.5);
    Model a(ModelConfig{}, 4);
    Model b(ModelConfig{}, 4);
    const auto pa = a.forward(x);
    const auto pb = b.forward(x);
    bool ok = true;
    for (std::size_t l = 0; l < pa.levels.size(); ++l) {
      ok = ok && pa.levels[l].cls->value.values() == pb.levels[l].cls->value.values() &&
           pa.levels[l].box->value.values() == pb.levels[l].box->value.values();
    }
    d = ok ? "bit-identical" : "outputs differ";
    return ok;
  });
  return out;
}

}  // namespace apd
