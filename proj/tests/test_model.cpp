#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "apd/model.hpp"

using namespace apd;

namespace {

Tensor4 random_image(int n, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor4 t(Shape{n, 3, h, w});
  for (auto& v : t.values()) v = u(rng);
  return t;
}

ModelConfig all_off() {
  ModelConfig c;
  c.use_c3ghost = false;
  c.use_igd = false;
  c.use_simam = false;
  c.use_simsppf = false;
  c.activation = ActivationKind::kSilu;
  return c;
}

}  // namespace

TEST(ModelConfig, DerivedWidths) {
  ModelConfig c;
  EXPECT_EQ(c.base_channels(), 16);
  EXPECT_EQ(c.level_channels(), (std::array<int, 3>{16, 32, 64}));
  EXPECT_EQ(c.repeats(), 1);
  c.width = 0.5;
  EXPECT_EQ(c.base_channels(), 8);
}

TEST(ModelConfig, Validation) {
  ModelConfig c;
  c.num_classes = 0;
  EXPECT_THROW(c.validate(), Error);
  c = ModelConfig{};
  c.reg_max = 1;
  EXPECT_THROW(c.validate(), Error);
  c = ModelConfig{};
  c.simam_lambda = 0.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Ablation, RowsAddComponentsInOrder) {
  const ModelConfig r1 = ablation_config(1);
  EXPECT_FALSE(r1.use_simsppf);
  EXPECT_FALSE(r1.use_simam);
  EXPECT_FALSE(r1.use_igd);
  EXPECT_EQ(r1.activation, ActivationKind::kSilu);
  const ModelConfig r3 = ablation_config(3);
  EXPECT_TRUE(r3.use_simsppf);
  EXPECT_TRUE(r3.use_simam);
  EXPECT_FALSE(r3.use_igd);
  const ModelConfig r5 = ablation_config(5);
  EXPECT_TRUE(r5.use_igd);
  EXPECT_EQ(r5.activation, ActivationKind::kMish);
  EXPECT_THROW(ablation_config(0), Error);
  EXPECT_THROW(ablation_config(6), Error);
}

TEST(Model, OutputShapes) {
  Model m(ModelConfig{}, 1);
  const RawPredictions p = m.forward(random_image(2, 64, 96, 2));
  ASSERT_EQ(p.levels.size(), 3u);
  const int strides[] = {8, 16, 32};
  for (int l = 0; l < 3; ++l) {
    EXPECT_EQ(p.levels[l].stride, strides[l]);
    EXPECT_EQ(p.levels[l].cls->value.shape(), (Shape{2, 2, 64 / strides[l], 96 / strides[l]}));
    EXPECT_EQ(p.levels[l].box->value.shape(), (Shape{2, 32, 64 / strides[l], 96 / strides[l]}));
  }
}

TEST(Model, RejectsBadInput) {
  Model m(ModelConfig{}, 1);
  EXPECT_THROW(m.forward(random_image(1, 30, 32, 1)), Error);
  EXPECT_THROW(m.forward(Tensor4(Shape{1, 1, 32, 32})), Error);
  // A 32x32 image leaves one position at stride 32, too few for SimAM.
  EXPECT_THROW(m.forward(random_image(1, 32, 32, 1)), Error);
  EXPECT_NO_THROW(m.forward(random_image(1, 32, 64, 1)));
  Model plain(ablation_config(2), 1);
  EXPECT_NO_THROW(plain.forward(random_image(1, 32, 32, 1)));
}

TEST(Model, BlockCostsMatchRegistry) {
  for (int row = 1; row <= 5; ++row) {
    Model m(ablation_config(row), 3);
    std::int64_t total = 0;
    for (const auto& b : m.block_costs(64, 64)) total += b.cost.params();
    EXPECT_EQ(total, static_cast<std::int64_t>(m.parameter_count())) << row;
  }
}

TEST(Model, LighterThanPlainCounterpart) {
  Model full(ModelConfig{}, 1);
  ModelConfig pc;
  pc.use_c3ghost = false;
  Model plain(pc, 1);
  EXPECT_LE(static_cast<double>(full.parameter_count()) / plain.parameter_count(), 0.75);
}

TEST(Model, SameSeedSameWeights) {
  Model a(ModelConfig{}, 9), b(ModelConfig{}, 9), c(ModelConfig{}, 10);
  const Tensor4 x = random_image(1, 64, 64, 4);
  const auto pa = a.forward(x), pb = b.forward(x), pc = c.forward(x);
  EXPECT_EQ(pa.levels[0].cls->value.values(), pb.levels[0].cls->value.values());
  EXPECT_NE(pa.levels[0].cls->value.values(), pc.levels[0].cls->value.values());
}

TEST(Model, WeightsRoundTrip) {
  Model a(ModelConfig{}, 5);
  a.forward(random_image(2, 64, 64, 6));  // moves running stats
  a.set_training(false);
  std::stringstream ss;
  save_weights(ss, a);
  Model b(ModelConfig{}, 77);
  load_weights(ss, b);
  b.set_training(false);
  const Tensor4 x = random_image(1, 64, 64, 7);
  const auto pa = a.forward(x), pb = b.forward(x);
  for (int l = 0; l < 3; ++l) {
    EXPECT_EQ(pa.levels[l].cls->value.values(), pb.levels[l].cls->value.values());
    EXPECT_EQ(pa.levels[l].box->value.values(), pb.levels[l].box->value.values());
  }
}

TEST(Model, WeightsRejectArchitectureMismatch) {
  Model a(ModelConfig{}, 5);
  std::stringstream ss;
  save_weights(ss, a);
  Model b(all_off(), 5);
  EXPECT_THROW(load_weights(ss, b), Error);
  std::stringstream junk("not a weights file");
  EXPECT_THROW(load_weights(junk, a), Error);
}

TEST(Nms, SuppressesOverlapsInConfidenceOrder) {
  std::vector<Detection> d{
      {0, 0.6, Box{0.5, 0.5, 0.2, 0.2}, 0},
      {0, 0.9, Box{0.51, 0.5, 0.2, 0.2}, 0},
      {0, 0.5, Box{0.2, 0.2, 0.1, 0.1}, 0},
  };
  const auto kept = nms(d, 0.5);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_DOUBLE_EQ(kept[0].confidence, 0.9);
  EXPECT_DOUBLE_EQ(kept[1].confidence, 0.5);
}

TEST(Decode, ExpectationDistancesAndThreshold) {
  ModelConfig cfg;
  cfg.num_classes = 1;
  cfg.reg_max = 4;
  RawPredictions p;
  p.image_h = 32;
  p.image_w = 32;
  p.num_classes = 1;
  p.reg_max = 4;
  const int dims[] = {4, 2, 1};
  for (int l = 0; l < 3; ++l) {
    Tensor4 cls(Shape{1, 1, dims[l], dims[l]}, -20.0);
    Tensor4 box(Shape{1, 16, dims[l], dims[l]}, 0.0);
    if (l == 0) {
      cls.at(0, 0, 1, 2) = 5.0;
      // Peaked logits: every side points at bin 1.
      for (int s = 0; s < 4; ++s) box.at(0, s * 4 + 1, 1, 2) = 50.0;
    }
    p.levels.push_back({make_var(cls), make_var(box), 8 << l});
  }
  const auto dets = decode(p, cfg);
  ASSERT_EQ(dets.size(), 1u);
  // Anchor at (2.5, 1.5) * 8 = (20, 12) px; each side 1 * 8 = 8 px.
  EXPECT_NEAR(dets[0].box.cx, 20.0 / 32, 1e-9);
  EXPECT_NEAR(dets[0].box.cy, 12.0 / 32, 1e-9);
  EXPECT_NEAR(dets[0].box.w, 16.0 / 32, 1e-9);
  EXPECT_NEAR(dets[0].confidence, 1.0 / (1.0 + std::exp(-5.0)), 1e-12);
}

TEST(Model, IgdWidthAndPassesAreConfigurable) {
  for (auto [cg, passes] : {std::pair{0, 1}, std::pair{24, 2}, std::pair{8, 1}}) {
    ModelConfig c;
    c.igd_c_g = cg;
    c.igd_passes = passes;
    Model m(c, 2);
    std::int64_t total = 0;
    for (const auto& b : m.block_costs(64, 64)) total += b.cost.params();
    EXPECT_EQ(total, static_cast<std::int64_t>(m.parameter_count())) << cg << " " << passes;
    EXPECT_NO_THROW(m.forward(random_image(1, 64, 64, 3)));
  }
  ModelConfig bad;
  bad.igd_passes = 3;
  EXPECT_THROW(bad.validate(), Error);
}
