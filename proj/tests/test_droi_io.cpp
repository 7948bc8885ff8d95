#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "apd/droi.hpp"
#include "apd/io.hpp"

using namespace apd;
namespace fs = std::filesystem;

TEST(Droi, RegimeBoundaries) {
  const DroiConfig c;
  EXPECT_EQ(classify_regime(30.0, c), SteeringRegime::kStraight);
  EXPECT_EQ(classify_regime(std::nextafter(30.0, 31.0), c), SteeringRegime::kModerate);
  EXPECT_EQ(classify_regime(-60.0, c), SteeringRegime::kModerate);
  EXPECT_EQ(classify_regime(-60.5, c), SteeringRegime::kSharp);
}

TEST(Droi, WidthFormula) {
  const DroiConfig c;
  EXPECT_DOUBLE_EQ(critical_width(0.0, 0.0, c).w_c, 3.0);
  EXPECT_DOUBLE_EQ(critical_width(20.0, 10.0, c).w_c, 3.0 + 0.1 * 10.0);
  EXPECT_NEAR(critical_width(45.0, 10.0, c).w_c, 3.0 + 0.05 * 15.0 + 1.0, 1e-12);
  DroiConfig nodb = c;
  nodb.deadband = false;
  EXPECT_NEAR(critical_width(45.0, 10.0, nodb).w_c, 3.0 + 0.05 * 45.0 + 1.0, 1e-12);
}

TEST(Droi, ContinuousAcrossRegimes) {
  const DroiConfig c;
  for (double th : {30.0, 60.0, -30.0, -60.0}) {
    const double lo = critical_width(std::nextafter(th, 0.0), 5.0, c).w_c;
    const double hi = critical_width(std::nextafter(th, th * 2), 5.0, c).w_c;
    EXPECT_NEAR(lo, hi, 1e-9) << th;
  }
}

TEST(Droi, SharpTurnShiftsTowardSteering) {
  const DroiConfig c;
  const DroiResult r = critical_width(80.0, 5.0, c);
  EXPECT_EQ(r.regime, SteeringRegime::kSharp);
  EXPECT_NEAR(r.shift, 0.05 * 20.0, 1e-12);
  EXPECT_GT(0.5 * (r.roi.x_min + r.roi.x_max), 0.5);
  const DroiResult l = critical_width(-80.0, 5.0, c);
  EXPECT_LT(0.5 * (l.roi.x_min + l.roi.x_max), 0.5);
}

TEST(Droi, RoiStaysInsideImage) {
  const DroiConfig c;
  for (double th = -500.0; th <= 500.0; th += 13.0)
    for (double v : {0.0, 20.0, 200.0}) {
      const NormRect r = critical_width(th, v, c).roi;
      EXPECT_GE(r.x_min, 0.0);
      EXPECT_LE(r.x_max, 1.0);
      EXPECT_LT(r.x_min, r.x_max);
      EXPECT_DOUBLE_EQ(r.y_min, 0.35);
      EXPECT_DOUBLE_EQ(r.y_max, 1.0);
    }
}

TEST(Droi, RejectsInvalidInput) {
  EXPECT_THROW(critical_width(0.0, -1.0), Error);
  EXPECT_THROW(critical_width(NAN, 1.0), Error);
  EXPECT_THROW(critical_width(600.0, 1.0), Error);
  DroiConfig bad;
  bad.theta_straight = 70.0;
  EXPECT_THROW(critical_width(0.0, 1.0, bad), Error);
}

TEST(Droi, TrajectoryCsvAndReplay) {
  std::istringstream in("t,theta_deg,speed_mps\n0,0,10\n0.1,45,10\n0.2,-90,5\n");
  const auto log = read_trajectory_csv(in);
  ASSERT_EQ(log.size(), 3u);
  const TrajectoryReplay r = replay_trajectory(log);
  ASSERT_EQ(r.results.size(), 3u);
  EXPECT_EQ(r.results[2].regime, SteeringRegime::kSharp);
  EXPECT_GT(r.mean_roi_fraction, 0.0);
  EXPECT_LE(r.mean_roi_fraction, 0.65);
  std::ostringstream out;
  write_replay_csv(out, r);
  EXPECT_EQ(out.str().rfind("t,w_c,regime,x_min,y_min,x_max,y_max\n", 0), 0u);
  std::istringstream bad("t,theta,v\n0,1,2\nx,y\n");
  EXPECT_THROW(read_trajectory_csv(bad), Error);
  EXPECT_THROW(replay_trajectory({{0.0, 0.0, 1.0}, {0.0, 1.0, 1.0}}), Error);
}

TEST(Annotations, ParseAndRoundTrip) {
  std::istringstream in("0 0.5 0.5 0.2 0.4\n\n1 0.1 0.2 0.1 0.1\n");
  const auto g = parse_annotations(in, 3);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[1].class_id, 1);
  EXPECT_EQ(g[0].image_id, 3);
  std::ostringstream out;
  write_annotations(out, g);
  std::istringstream back(out.str());
  const auto g2 = parse_annotations(back, 3);
  ASSERT_EQ(g2.size(), 2u);
  EXPECT_EQ(g2[0].box, g[0].box);
}

TEST(Annotations, ErrorsCarryLineNumbers) {
  auto expect_error = [](const std::string& text, ErrorCode code, const std::string& where) {
    std::istringstream in(text);
    try {
      parse_annotations(in, 0, "lbl.txt", 2);
      FAIL() << "no error for: " << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), code);
      EXPECT_NE(e.message().find(where), std::string::npos) << e.message();
    }
  };
  expect_error("0 0.5 0.5 0.2\n", ErrorCode::kParse, "lbl.txt:1");
  expect_error("0 0.5 0.5 0.2 0.2\n0 0.5 abc 0.2 0.2\n", ErrorCode::kParse, "lbl.txt:2");
  expect_error("0 0.95 0.5 0.2 0.2\n", ErrorCode::kRange, "lbl.txt:1");
  expect_error("2 0.5 0.5 0.2 0.2\n", ErrorCode::kRange, "lbl.txt:1");
  expect_error("0 0.5 0.5 0.0 0.2\n", ErrorCode::kRange, "lbl.txt:1");
}

TEST(Predictions, ParseValidatesConfidence) {
  std::istringstream ok("1 0.75 0.5 0.5 0.2 0.2\n");
  const auto d = parse_predictions(ok);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_DOUBLE_EQ(d[0].confidence, 0.75);
  std::istringstream bad("1 1.5 0.5 0.5 0.2 0.2\n");
  EXPECT_THROW(parse_predictions(bad), Error);
}

TEST(KeyValue, TypedAccessAndUnusedKeys) {
  std::istringstream in("# comment\nsteps = 12\nlr=0.5\nflag = true\nname = abc\ntypo = 1\n");
  const KeyValueConfig kv = KeyValueConfig::parse(in);
  EXPECT_EQ(kv.get_int("steps", 0), 12);
  EXPECT_DOUBLE_EQ(kv.get_double("lr", 0.0), 0.5);
  EXPECT_TRUE(kv.get_bool("flag", false));
  EXPECT_EQ(kv.get_string("name", ""), "abc");
  EXPECT_EQ(kv.get_int("missing", 7), 7);
  EXPECT_EQ(kv.unused_keys(), std::vector<std::string>{"typo"});
  EXPECT_THROW(kv.get_int("lr", 0), Error);
  std::istringstream dup("a = 1\na = 2\n");
  EXPECT_THROW(KeyValueConfig::parse(dup), Error);
  std::istringstream noeq("just words\n");
  EXPECT_THROW(KeyValueConfig::parse(noeq), Error);
}

TEST(KeyValue, ModelConfigKeys) {
  std::istringstream in("activation = silu\nuse_igd = false\nnum_classes = 3\n");
  const ModelConfig m = model_config_from(KeyValueConfig::parse(in));
  EXPECT_EQ(m.activation, ActivationKind::kSilu);
  EXPECT_FALSE(m.use_igd);
  EXPECT_EQ(m.num_classes, 3);
}

TEST(KeyValue, SeedEnvironmentOverride) {
  std::istringstream in("seed = 5\n");
  const KeyValueConfig kv = KeyValueConfig::parse(in);
  unsetenv("APD_SEED");
  EXPECT_EQ(resolve_seed(kv, 1), 5u);
  setenv("APD_SEED", "99", 1);
  EXPECT_EQ(resolve_seed(kv, 1), 99u);
  setenv("APD_SEED", "nope", 1);
  EXPECT_THROW(resolve_seed(kv, 1), Error);
  unsetenv("APD_SEED");
}

TEST(ToyScene, DeterministicAndNonOverlapping) {
  const ToySceneSpec spec;
  const ToyScene a = generate_toy_scene(123, spec);
  const ToyScene b = generate_toy_scene(123, spec);
  EXPECT_EQ(a.image.values(), b.image.values());
  ASSERT_EQ(a.gts.size(), 2u);
  EXPECT_EQ(overlap_iou(a.gts[0].box, a.gts[1].box), 0.0);
  for (const auto& g : a.gts) {
    const double side = g.box.w * spec.width;
    EXPECT_NEAR(side, std::round(side), 1e-9);
    EXPECT_GE(side, spec.min_side);
    EXPECT_LE(side, spec.max_side);
  }
  ToySceneSpec crowded = spec;
  crowded.objects = 40;
  crowded.min_side = 28;
  EXPECT_THROW(generate_toy_scene(1, crowded), Error);
}

TEST(Dataset, WriteAndLoadToyDataset) {
  const fs::path dir = fs::temp_directory_path() / "apd_unit_dataset";
  fs::remove_all(dir);
  ToySceneSpec spec;
  spec.height = spec.width = 32;
  spec.min_side = 6;
  spec.max_side = 12;
  write_toy_dataset(dir, 7, 3, spec);
  const DatasetManifest m = DatasetManifest::load((dir / "manifest.txt").string());
  EXPECT_EQ(m.entries.size(), 3u);
  const Dataset d = load_dataset(m);
  EXPECT_EQ(d.images.shape(), (Shape{3, 3, 32, 32}));
  EXPECT_EQ(d.gts.size(), 3u);
  EXPECT_EQ(d.gts[2][0].image_id, 2);
  EXPECT_EQ(d.class_names.size(), 2u);
  EXPECT_EQ(load_class_names((dir / "classes.txt").string()), d.class_names);
  fs::remove(dir / "labels" / "0001.txt");
  EXPECT_THROW(DatasetManifest::load((dir / "manifest.txt").string()), Error);
  fs::remove_all(dir);
}
