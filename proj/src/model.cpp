#include "apd/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace apd {

void ModelConfig::validate() const {
  auto bad = [](const std::string& m) {
    throw Error(ErrorCode::kInvalidArgument, "model config: " + m);
  };
  if (num_classes < 1) bad("num_classes must be >= 1");
  if (reg_max < 2) bad("reg_max must be >= 2");
  if (!(width > 0.0) || !(depth > 0.0)) bad("width and depth must be > 0");
  if (strides != std::array<int, 3>{8, 16, 32}) bad("strides must be 8,16,32");
  if (!(simam_lambda > 0.0)) bad("simam_lambda must be > 0");
  if (conf_threshold < 0.0 || conf_threshold > 1.0) {
    bad("conf_threshold outside [0,1]");
  }
  if (nms_iou < 0.0 || nms_iou > 1.0) bad("nms_iou outside [0,1]");
  if (igd_c_g < 0) bad("igd_c_g must be >= 0");
  if (igd_passes < 1 || igd_passes > 2) bad("igd_passes must be 1 or 2");
  if (base_channels() < 4 || base_channels() % 4 != 0) {
    bad("width " + std::to_string(width) + " gives " +
        std::to_string(base_channels()) +
        " base channels; need a positive multiple of 4");
  }
}

int ModelConfig::base_channels() const {
  return static_cast<int>(std::lround(16.0 * width));
}

int ModelConfig::igd_width() const {
  return igd_c_g > 0 ? igd_c_g : level_channels()[1];
}

int ModelConfig::repeats() const {
  return std::max(1, static_cast<int>(std::lround(depth)));
}

std::array<int, 3> ModelConfig::level_channels() const {
  const int b = base_channels();
  return {b, 2 * b, 4 * b};
}

int ModelConfig::head_channels() const { return 2 * base_channels(); }

ModelConfig ablation_config(int row, const ModelConfig& base) {
  if (row < 1 || row > 5) {
    throw Error(ErrorCode::kRange,
                "ablation row must be 1..5, got " + std::to_string(row));
  }
  ModelConfig c = base;
  c.use_simsppf = row >= 2;
  c.use_simam = row >= 3;
  c.use_igd = row >= 4;
  c.activation = row >= 5 ? ActivationKind::kMish : ActivationKind::kSilu;
  return c;
}

namespace {

const ModelConfig& validated(const ModelConfig& c) {
  c.validate();
  return c;
}

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(validated(cfg)), rng_(seed) {
  BuildContext ctx{&registry_, &rng_, cfg_.bn_eps, cfg_.bn_momentum};
  const auto act = cfg_.activation;
  const int b = cfg_.base_channels();
  const auto ch = cfg_.level_channels();
  const bool ghost = cfg_.use_c3ghost;

  stem1_ = SimConv(ctx, "stem1", 3, b / 2, 3, 2, act);
  stem2_ = SimConv(ctx, "stem2", b / 2, b, 3, 2, act);
  int c_prev = b;
  for (int i = 0; i < 3; ++i) {
    const std::string name = "stage" + std::to_string(i + 3);
    if (ghost) {
      down_[i].ghost = GhostConv(ctx, name + ".down",
                                 GhostSpec{c_prev, ch[i], 2, 3, 3, 2, act, true});
    } else {
      down_[i].plain = SimConv(ctx, name + ".down", c_prev, ch[i], 3, 2, act);
    }
    c3_[i] = C3Block(ctx, name + ".c3",
                     C3GhostSpec{ch[i], ch[i], cfg_.repeats(), 0.5, act}, ghost);
    c_prev = ch[i];
  }
  const SimSppfSpec sp{ch[2], 0, ch[2]};
  if (cfg_.use_simsppf) {
    sppf_ = SimSppf(ctx, "sppf", sp);
  } else {
    plain_sppf_ = PlainSppf(ctx, "sppf", sp, act);
  }
  if (cfg_.use_igd) {
    neck_ = IgdNeck(ctx, "neck", IgdSpec{ch, cfg_.igd_width(), cfg_.igd_passes, act});
  }
  const int hc = cfg_.head_channels();
  const double prior_bias = -std::log((1.0 - 0.01) / 0.01);
  for (int i = 0; i < 3; ++i) {
    const std::string name = "head" + std::to_string(i + 3);
    Head& h = heads_[i];
    if (ghost) {
      h.cls_ghost = GhostConv(ctx, name + ".cls_stem",
                              GhostSpec{ch[i], hc, 2, 1, 3, 1, act, true});
      h.box_ghost = GhostConv(ctx, name + ".box_stem",
                              GhostSpec{ch[i], hc, 2, 1, 3, 1, act, true});
    } else {
      h.cls_stem = SimConv(ctx, name + ".cls_stem", ch[i], hc, 3, 1, act);
      h.box_stem = SimConv(ctx, name + ".box_stem", ch[i], hc, 3, 1, act);
    }
    h.cls_out = Conv2dLayer(ctx, name + ".cls_out",
                            ConvSpec{hc, cfg_.num_classes, 1, 1, 0, 1, true});
    h.box_out = Conv2dLayer(ctx, name + ".box_out",
                            ConvSpec{hc, 4 * cfg_.reg_max, 1, 1, 0, 1, true});
    auto cls_bias = h.cls_out.bias()->value.data();
    std::fill(cls_bias.begin(), cls_bias.end(), prior_bias);
  }
}

Var Model::downsample(Tape* tape, const Downsample& d, const Var& x) const {
  return cfg_.use_c3ghost ? d.ghost.forward(tape, x) : d.plain.forward(tape, x);
}

Var Model::head_branch(Tape* tape, const SimConv& s, const GhostConv& g,
                       const Conv2dLayer& out, const Var& x) const {
  const Var h = cfg_.use_c3ghost ? g.forward(tape, x) : s.forward(tape, x);
  return out.forward(tape, h);
}

RawPredictions Model::forward(Tape* tape, const Var& image) const {
  const Shape s = image->value.shape();
  if (s.c != 3) {
    throw Error(ErrorCode::kShapeMismatch,
                "forward: expected 3 input channels, got " + std::to_string(s.c));
  }
  if (s.h < 32 || s.w < 32 || s.h % 32 != 0 || s.w % 32 != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "forward: image dims " + std::to_string(s.h) + "x" +
                    std::to_string(s.w) + " must be positive multiples of 32");
  }
  if (cfg_.use_simam && (s.h / 32) * (s.w / 32) < 2) {
    throw Error(ErrorCode::kInvalidArgument,
                "forward: SimAM needs at least 2 positions at stride 32; image " +
                    std::to_string(s.h) + "x" + std::to_string(s.w) + " gives 1");
  }
  Var x = stem2_.forward(tape, stem1_.forward(tape, image));
  std::array<Var, 3> p;
  const SimamConfig sim{cfg_.simam_lambda};
  for (int i = 0; i < 3; ++i) {
    x = c3_[i].forward(tape, downsample(tape, down_[i], x));
    if (cfg_.use_simam) x = ag::simam(tape, x, sim);
    p[i] = x;
  }
  p[2] = cfg_.use_simsppf ? sppf_.forward(tape, p[2])
                          : plain_sppf_.forward(tape, p[2]);
  PyramidFeatures f{p[0], p[1], p[2]};
  if (cfg_.use_igd) f = neck_.forward(tape, f);
  const auto levels = f.levels();

  RawPredictions out;
  out.image_h = s.h;
  out.image_w = s.w;
  out.num_classes = cfg_.num_classes;
  out.reg_max = cfg_.reg_max;
  for (int i = 0; i < 3; ++i) {
    const Head& h = heads_[i];
    LevelPrediction lp;
    lp.cls = head_branch(tape, h.cls_stem, h.cls_ghost, h.cls_out, levels[i]);
    lp.box = head_branch(tape, h.box_stem, h.box_ghost, h.box_out, levels[i]);
    lp.stride = cfg_.strides[i];
    out.levels.push_back(std::move(lp));
  }
  return out;
}

RawPredictions Model::forward(const Tensor4& image) const {
  return forward(nullptr, make_var(image));
}

std::vector<Model::BlockCost> Model::block_costs(int h, int w) const {
  const int b = cfg_.base_channels();
  const auto ch = cfg_.level_channels();
  const bool ghost = cfg_.use_c3ghost;
  std::vector<BlockCost> out;
  Cost c = count_sim_conv(ConvSpec{3, b / 2, 3, 2, 1, 1}, h, w);
  out.push_back({"stem1", c});
  c = count_sim_conv(ConvSpec{b / 2, b, 3, 2, 1, 1}, c.out_h, c.out_w);
  out.push_back({"stem2", c});
  int c_prev = b;
  std::array<std::pair<int, int>, 3> dims{};
  for (int i = 0; i < 3; ++i) {
    const std::string name = "stage" + std::to_string(i + 3);
    const int ih = c.out_h, iw = c.out_w;
    c = ghost ? count_params_flops(GhostSpec{c_prev, ch[i], 2, 3, 3, 2}, ih, iw)
              : count_sim_conv(ConvSpec{c_prev, ch[i], 3, 2, 1, 1}, ih, iw);
    out.push_back({name + ".down", c});
    Cost k = count_params_flops(C3GhostSpec{ch[i], ch[i], cfg_.repeats()},
                                c.out_h, c.out_w, ghost);
    k.out_h = c.out_h;
    k.out_w = c.out_w;
    out.push_back({name + (ghost ? ".c3ghost" : ".c3"), k});
    if (cfg_.use_simam) {
      Cost sc;
      sc.out_h = c.out_h;
      sc.out_w = c.out_w;
      out.push_back({name + ".simam", sc});
    }
    dims[i] = {c.out_h, c.out_w};
    c_prev = ch[i];
  }
  {
    const int mid = ch[2] / 2;
    const int ph = dims[2].first, pw = dims[2].second;
    Cost s = count_sim_conv(ConvSpec{ch[2], mid, 1, 1, 0, 1}, ph, pw);
    const int k2 = cfg_.use_simsppf ? 3 : 1;
    s += count_sim_conv(ConvSpec{4 * mid, ch[2], k2, 1, k2 / 2, 1}, ph, pw);
    out.push_back({cfg_.use_simsppf ? "simsppf" : "sppf", s});
  }
  if (cfg_.use_igd) {
    const int cg = cfg_.igd_width();
    const int h4 = dims[1].first, w4 = dims[1].second;
    Cost n;
    for (int pass = 0; pass < cfg_.igd_passes; ++pass) {
      for (int i = 0; i < 3; ++i) {
        n += count_sim_conv(ConvSpec{ch[i], cg, 1, 1, 0, 1}, dims[i].first,
                            dims[i].second);
      }
      n += count_sim_conv(ConvSpec{3 * cg, cg, 1, 1, 0, 1}, h4, w4);
      for (int slot = 0; slot < 2; ++slot) {
        const int lv = pass == 0 ? slot : slot + 1;
        n += count_params_flops(ConvSpec{cg, ch[lv], 1, 1, 0, 1, false}, h4, w4);
        n += count_params_flops(ConvSpec{ch[lv], ch[lv], 1, 1, 0, 1, true},
                                dims[lv].first, dims[lv].second);
      }
    }
    out.push_back({"igd_neck", n});
  }
  const int hc = cfg_.head_channels();
  for (int i = 0; i < 3; ++i) {
    const int lh = dims[i].first, lw = dims[i].second;
    Cost hd;
    for (int branch = 0; branch < 2; ++branch) {
      hd += ghost ? count_params_flops(GhostSpec{ch[i], hc, 2, 1, 3, 1}, lh, lw)
                  : count_sim_conv(ConvSpec{ch[i], hc, 3, 1, 1, 1}, lh, lw);
    }
    hd += count_params_flops(ConvSpec{hc, cfg_.num_classes, 1, 1, 0, 1, true}, lh, lw);
    hd += count_params_flops(ConvSpec{hc, 4 * cfg_.reg_max, 1, 1, 0, 1, true}, lh, lw);
    out.push_back({"head" + std::to_string(i + 3), hd});
  }
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_t) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].confidence > dets[b].confidence;
  });
  std::vector<Detection> kept;
  for (std::size_t i : order) {
    bool keep = true;
    for (const Detection& k : kept) {
      if (k.image_id == dets[i].image_id && k.class_id == dets[i].class_id &&
          overlap_iou(k.box, dets[i].box) > iou_t) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(dets[i]);
  }
  return kept;
}

std::vector<Detection> decode(const RawPredictions& preds, const ModelConfig& cfg,
                              int image_id_offset) {
  const int rm = preds.reg_max;
  std::vector<Detection> out;
  if (preds.levels.empty()) return out;
  const int batch = preds.levels[0].cls->value.n();
  std::vector<double> logits(rm);
  for (int n = 0; n < batch; ++n) {
    // Candidates in (level, cell, class) order; NMS breaks confidence ties by
    // this order.
    std::vector<Detection> cand;
    for (const auto& lv : preds.levels) {
      const Tensor4& cl = lv.cls->value;
      const Tensor4& bx = lv.box->value;
      const double s = lv.stride;
      for (int gy = 0; gy < cl.h(); ++gy) {
        for (int gx = 0; gx < cl.w(); ++gx) {
          std::array<double, 4> dist{};
          bool computed = false;
          for (int c = 0; c < cl.c(); ++c) {
            const double conf = sigmoid(cl.at(n, c, gy, gx));
            if (conf < cfg.conf_threshold) continue;
            if (!computed) {
              for (int side = 0; side < 4; ++side) {
                for (int i = 0; i < rm; ++i) {
                  logits[i] = bx.at(n, side * rm + i, gy, gx);
                }
                dist[side] = distribution_expectation(logits);
              }
              computed = true;
            }
            const double cx = (gx + 0.5) * s;
            const double cy = (gy + 0.5) * s;
            Box b = Box::from_corners(
                (cx - dist[0] * s) / preds.image_w, (cy - dist[1] * s) / preds.image_h,
                (cx + dist[2] * s) / preds.image_w, (cy + dist[3] * s) / preds.image_h);
            cand.push_back({c, conf, clip_unit(b), n + image_id_offset});
          }
        }
      }
    }
    for (auto& d : nms(cand, cfg.nms_iou)) out.push_back(d);
  }
  return out;
}

// ---- Weights ---------------------------------------------------------------

namespace {

constexpr const char* kWeightsMagic = "W1";

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw Error(ErrorCode::kParse, "weights: truncated record header");
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_record(std::ostream& os, const std::string& name, const Tensor4& t) {
  write_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_t4(os, t);
}

Tensor4 stats_tensor(const std::vector<double>& v) {
  return Tensor4(Shape{1, static_cast<int>(v.size()), 1, 1}, v);
}

}  // namespace

void save_weights(std::ostream& os, const Model& model) {
  const auto& reg = model.registry();
  os << kWeightsMagic << ' '
     << reg.params().size() + 2 * reg.stats().size() << "\n";
  for (const auto& [name, var] : reg.params()) write_record(os, name, var->value);
  for (const auto& [name, st] : reg.stats()) {
    write_record(os, name + ".running_mean", stats_tensor(st->running_mean));
    write_record(os, name + ".running_var", stats_tensor(st->running_var));
  }
  if (!os) throw Error(ErrorCode::kIo, "weights: write failed");
}

void load_weights(std::istream& is, Model& model) {
  std::string magic;
  std::size_t count = 0;
  if (!(is >> magic >> count) || magic != kWeightsMagic || is.get() != '\n') {
    throw Error(ErrorCode::kParse, "weights: missing W1 header");
  }
  std::map<std::string, Tensor4> records;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t len = read_u32(is);
    if (len > 4096) throw Error(ErrorCode::kParse, "weights: name too long");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) {
      throw Error(ErrorCode::kParse, "weights: truncated name");
    }
    records.insert_or_assign(name, read_t4(is));
  }
  auto take = [&](const std::string& name, Shape expect) -> Tensor4 {
    auto it = records.find(name);
    if (it == records.end()) {
      throw Error(ErrorCode::kParse, "weights: missing tensor " + name);
    }
    if (!(it->second.shape() == expect)) {
      throw Error(ErrorCode::kShapeMismatch,
                  "weights: " + name + " has shape " + to_string(it->second.shape()) +
                      ", model expects " + to_string(expect));
    }
    Tensor4 t = std::move(it->second);
    records.erase(it);
    return t;
  };
  auto& reg = model.registry();
  for (const auto& [name, var] : reg.params()) {
    var->value = take(name, var->value.shape());
  }
  for (const auto& [name, st] : reg.stats()) {
    const Shape s{1, static_cast<int>(st->running_mean.size()), 1, 1};
    st->running_mean = take(name + ".running_mean", s).values();
    st->running_var = take(name + ".running_var", s).values();
  }
  if (!records.empty()) {
    throw Error(ErrorCode::kParse,
                "weights: unexpected tensor " + records.begin()->first);
  }
}

void save_weights(const std::string& path, const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  save_weights(os, model);
}

void load_weights(const std::string& path, Model& model) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIo, "cannot open " + path);
  load_weights(is, model);
}

}  // namespace apd
