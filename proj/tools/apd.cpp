// apd: command-line front end for the micro YOLO-APD kernel library.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "apd/droi.hpp"
#include "apd/io.hpp"
#include "apd/metrics.hpp"
#include "apd/model.hpp"
#include "apd/suite.hpp"
#include "apd/train.hpp"

namespace fs = std::filesystem;
using namespace apd;

namespace {

KeyValueConfig load_optional(const std::string& path) {
  return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

void reject_unused(const KeyValueConfig& kv, const std::string& path) {
  const auto extra = kv.unused_keys();
  if (!extra.empty()) {
    throw Error(ErrorCode::kParse, path + ": unknown key '" + extra.front() + "'");
  }
}

std::ofstream open_file(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error(ErrorCode::kIo, "cannot open " + p.string() + " for writing");
  return os;
}

std::string stem_name(int i) {
  std::ostringstream ss;
  ss << std::setw(4) << std::setfill('0') << i;
  return ss.str();
}

// ---- selftest / gradcheck ----------------------------------------------------

int cmd_selftest(int seeds) {
  int failed = 0;
  for (const auto& r : run_selftest(seeds)) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    failed += r.pass ? 0 : 1;
  }
  std::cout << (failed == 0 ? "selftest: all checks passed\n"
                            : "selftest: " + std::to_string(failed) + " check(s) failed\n");
  return failed == 0 ? 0 : 1;
}

int cmd_gradcheck(const std::string& module, int seeds) {
  int failed = 0;
  std::cout << "case,seed,max_rel_error,tol,checked,result\n" << std::setprecision(4);
  for (const auto& c : gradient_cases()) {
    if (!module.empty() && c.module != module) continue;
    for (int s = 1; s <= seeds; ++s) {
      const auto r = c.run(static_cast<std::uint64_t>(s), c.tol);
      std::cout << c.name << ',' << s << ',' << r.max_rel_error << ',' << c.tol << ','
                << r.checked << ',' << (r.pass ? "pass" : "FAIL") << "\n";
      failed += r.pass ? 0 : 1;
    }
  }
  return failed == 0 ? 0 : 1;
}

// ---- bench -------------------------------------------------------------------

int cmd_bench(const std::string& config, int size, int batch, int repeat) {
  const KeyValueConfig kv = load_optional(config);
  const ModelConfig mc = model_config_from(kv);
  reject_unused(kv, config);
  Model model(mc, 0);
  std::cout << std::left << std::setw(18) << "block" << std::right << std::setw(10)
            << "params" << std::setw(14) << "MFLOPs" << std::setw(10) << "out" << "\n";
  Cost total;
  for (const auto& b : model.block_costs(size, size)) {
    std::cout << std::left << std::setw(18) << b.name << std::right << std::setw(10)
              << b.cost.params() << std::setw(14) << std::fixed << std::setprecision(3)
              << b.cost.flops / 1e6 << std::setw(10)
              << (std::to_string(b.cost.out_h) + "x" + std::to_string(b.cost.out_w))
              << "\n";
    total += b.cost;
  }
  std::cout << std::left << std::setw(18) << "total" << std::right << std::setw(10)
            << total.params() << std::setw(14) << total.flops / 1e6 << "\n";
  std::cout << "registry parameters: " << model.parameter_count() << "\n";

  ModelConfig plain = mc;
  plain.use_c3ghost = !mc.use_c3ghost;
  const Model other(plain, 0);
  std::cout << "use_c3ghost=" << (mc.use_c3ghost ? "true" : "false")
            << " vs toggled: " << model.parameter_count() << " / "
            << other.parameter_count() << " parameters\n";

  model.set_training(false);
  const Tensor4 img(Shape{batch, 3, size, size}, 0.5);
  (void)model.forward(img);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < repeat; ++i) (void)model.forward(img);
  const double sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << std::setprecision(3) << "forward " << batch << "x3x" << size << "x"
            << size << ": " << 1e3 * sec / repeat << " ms/batch, "
            << batch * repeat / sec << " images/s\n";
  return 0;
}

// ---- train-toy ---------------------------------------------------------------

int cmd_train_toy(const std::string& config, const std::string& out_dir) {
  const KeyValueConfig kv = load_optional(config);
  const std::uint64_t seed = resolve_seed(kv, 0);
  const ModelConfig mc = model_config_from(kv);
  TrainConfig tc;
  tc.steps = 600;
  tc = train_config_from(kv, tc);
  ToySceneSpec spec;
  spec.height = spec.width = kv.get_int("image_size", 64);
  spec.num_classes = mc.num_classes;
  spec.objects = kv.get_int("objects", spec.objects);
  spec.min_side = kv.get_int("min_side", spec.min_side);
  spec.max_side = kv.get_int("max_side", spec.max_side);
  const int count = kv.get_int("images", 20);
  const std::string manifest_path = kv.get_string("manifest", "");
  const int log_every = kv.get_int("log_every", 50);
  reject_unused(kv, config.empty() ? "<defaults>" : config);

  const fs::path out(out_dir);
  fs::create_directories(out);
  const DatasetManifest manifest =
      manifest_path.empty()
          ? write_toy_dataset(out / "data", seed, count, spec)
          : DatasetManifest::load(manifest_path);
  const Dataset data = load_dataset(manifest);
  if (static_cast<int>(data.class_names.size()) != mc.num_classes) {
    throw Error(ErrorCode::kInvalidArgument,
                "dataset has " + std::to_string(data.class_names.size()) +
                    " classes, model config has " + std::to_string(mc.num_classes));
  }

  Model model(mc, seed);
  auto curve_os = open_file(out / "loss_curve.csv");
  curve_os << std::setprecision(17) << "step,total,cls,box,dfl,lr\n";
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult tr = train_toy(model, data, tc, [&](const StepLoss& s) {
    curve_os << s.step << ',' << s.total << ',' << s.cls << ',' << s.box << ','
             << s.dfl << ',' << s.lr << "\n";
    if (log_every > 0 && (s.step % log_every == 0 || s.step == tc.steps)) {
      std::cerr << "step " << s.step << " loss " << s.total << " (cls " << s.cls
                << ", box " << s.box << ", dfl " << s.dfl << ")\n";
    }
  });
  const double sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  recalibrate_batchnorm(model, data.images);
  save_weights((out / "weights.w1").string(), model);
  {
    auto os = open_file(out / "model.cfg");
    os << "# resolved model configuration\n";
    os << "num_classes = " << mc.num_classes << "\nwidth = " << mc.width
       << "\ndepth = " << mc.depth << "\nreg_max = " << mc.reg_max
       << "\nactivation = " << to_string(mc.activation) << std::boolalpha
       << "\nuse_simsppf = " << mc.use_simsppf << "\nuse_simam = " << mc.use_simam
       << "\nuse_igd = " << mc.use_igd << "\nuse_c3ghost = " << mc.use_c3ghost
       << std::setprecision(17) << "\nsimam_lambda = " << mc.simam_lambda
       << "\nconf_threshold = " << mc.conf_threshold << "\nnms_iou = " << mc.nms_iou
       << "\nigd_c_g = " << mc.igd_c_g << "\nigd_passes = " << mc.igd_passes
       << "\nbn_eps = " << mc.bn_eps << "\nbn_momentum = " << mc.bn_momentum << "\n";
  }

  const std::vector<Detection> dets = predict(model, data.images);
  fs::create_directories(out / "pred");
  std::vector<std::vector<Detection>> per_image(data.gts.size());
  for (const auto& d : dets) per_image[d.image_id].push_back(d);
  for (std::size_t i = 0; i < per_image.size(); ++i) {
    const std::string stem = fs::path(manifest.entries[i].annotation).stem().string();
    save_predictions((out / "pred" / (stem + ".txt")).string(), per_image[i]);
  }
  std::vector<GroundTruth> all_gt;
  for (const auto& g : data.gts) all_gt.insert(all_gt.end(), g.begin(), g.end());
  const EvalReport rep = evaluate(dets, all_gt, mc.num_classes);
  {
    auto os = open_file(out / "report.txt");
    write_report(os, rep, data.class_names);
  }
  const double initial = tr.curve.front().total;
  const double final_loss = tr.curve.back().total;
  std::ostringstream summary;
  summary << std::setprecision(10) << "steps: " << tc.steps << "\nimages: " << data.gts.size()
          << "\ninitial_loss: " << initial << "\nfinal_loss: " << final_loss
          << "\nloss_ratio: " << final_loss / initial << "\nmap50: " << rep.map50
          << "\nmap50_95: " << rep.map50_95 << "\nmf1: " << rep.mf1 << "\n";
  {
    auto os = open_file(out / "summary.txt");
    os << summary.str();
  }
  std::cout << summary.str();
  std::cerr << "train time: " << std::setprecision(3) << sec << " s\n";
  return 0;
}

// ---- forward -----------------------------------------------------------------

int cmd_forward(const std::string& weights, const std::string& input,
                const std::string& out, const std::string& config) {
  const KeyValueConfig kv = load_optional(config);
  const ModelConfig mc = model_config_from(kv);
  reject_unused(kv, config);
  Model model(mc, 0);
  load_weights(weights, model);
  const Tensor4 img = load_t4(input);
  const std::vector<Detection> dets = predict(model, img);
  if (img.n() == 1) {
    save_predictions(out, dets);
  } else {
    fs::create_directories(out);
    std::vector<std::vector<Detection>> per(img.n());
    for (const auto& d : dets) per[d.image_id].push_back(d);
    for (int i = 0; i < img.n(); ++i) {
      save_predictions((fs::path(out) / (stem_name(i) + ".txt")).string(), per[i]);
    }
  }
  std::cout << dets.size() << " detections from " << img.n() << " image(s)\n";
  return 0;
}

// ---- eval --------------------------------------------------------------------

int cmd_eval(const std::string& gt_dir, const std::string& pred_dir,
             const std::string& classes, double iou, bool all, double conf,
             const std::string& pr_csv) {
  const auto names = load_class_names(classes);
  const int nc = static_cast<int>(names.size());
  if (!fs::is_directory(gt_dir)) throw Error(ErrorCode::kIo, "not a directory: " + gt_dir);
  if (!fs::is_directory(pred_dir)) throw Error(ErrorCode::kIo, "not a directory: " + pred_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(gt_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<GroundTruth> gts;
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const int id = static_cast<int>(i);
    const auto g = load_annotations(files[i].string(), id, nc);
    gts.insert(gts.end(), g.begin(), g.end());
    const fs::path p = fs::path(pred_dir) / files[i].filename();
    if (fs::exists(p)) {
      const auto d = load_predictions(p.string(), id, nc);
      dets.insert(dets.end(), d.begin(), d.end());
    }
  }
  EvalOptions opts;
  opts.all_thresholds = all;
  opts.iou = iou;
  opts.confusion_conf = conf;
  opts.confusion_iou = iou;
  const EvalReport r = evaluate(dets, gts, nc, opts);
  std::cout << "images: " << files.size() << "\n";
  write_report(std::cout, r, names);
  if (!pr_csv.empty()) {
    auto os = open_file(pr_csv);
    write_pr_csv(os, dets, gts, nc);
  }
  return 0;
}

// ---- droi --------------------------------------------------------------------

int cmd_droi(double theta, double speed, const std::string& config, int deadband) {
  const KeyValueConfig kv = load_optional(config);
  DroiConfig cfg = droi_config_from(kv);
  reject_unused(kv, config);
  if (deadband >= 0) cfg.deadband = deadband == 1;
  const DroiResult r = critical_width(theta, speed, cfg);
  std::cout << std::setprecision(12) << "W_c = " << r.w_c << "\nregime = "
            << to_string(r.regime) << "\nshift = " << r.shift << "\nroi = "
            << r.roi.x_min << ' ' << r.roi.y_min << ' ' << r.roi.x_max << ' '
            << r.roi.y_max << "\n";
  return 0;
}

int cmd_droi_replay(const std::string& log, const std::string& config,
                    const std::string& out) {
  const KeyValueConfig kv = load_optional(config);
  const DroiConfig cfg = droi_config_from(kv);
  reject_unused(kv, config);
  std::ifstream is(log);
  if (!is) throw Error(ErrorCode::kIo, "cannot open " + log);
  const TrajectoryReplay r = replay_trajectory(read_trajectory_csv(is), cfg);
  if (out.empty()) {
    write_replay_csv(std::cout, r);
    std::cerr << "mean_roi_fraction = " << r.mean_roi_fraction << "\n";
  } else {
    auto os = open_file(out);
    write_replay_csv(os, r);
    std::cout << r.results.size() << " samples, mean_roi_fraction = "
              << r.mean_roi_fraction << "\n";
  }
  return 0;
}

// ---- gen-toy -----------------------------------------------------------------

int cmd_gen_toy(std::uint64_t seed, const std::string& out, int count,
                const ToySceneSpec& spec) {
  const DatasetManifest m = write_toy_dataset(out, seed, count, spec);
  std::cout << "wrote " << m.entries.size() << " scenes to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"apd: micro YOLO-APD kernels, training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough(false);

  int seeds = 2;
  auto* selftest = app.add_subcommand("selftest", "Run the invariant suites");
  selftest->add_option("--seeds", seeds, "Seeds per gradient case")->check(CLI::PositiveNumber);

  std::string module;
  int grad_seeds = 5;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--module", module, "Restrict to one module")
      ->check(CLI::IsMember(gradient_modules()));
  gradcheck->add_option("--seeds", grad_seeds, "Seeds per case")->check(CLI::PositiveNumber);

  std::string config;
  int size = 64, batch = 1, repeat = 20;
  auto* bench = app.add_subcommand("bench", "Parameter/FLOP table and forward timing");
  bench->add_option("--config", config, "Model config file")->check(CLI::ExistingFile);
  bench->add_option("--size", size, "Square input size")->check(CLI::PositiveNumber);
  bench->add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber);
  bench->add_option("--repeat", repeat, "Timed forward passes")->check(CLI::PositiveNumber);

  std::string out;
  auto* train = app.add_subcommand("train-toy", "Train on a synthetic toy set");
  train->add_option("--config", config, "Config file")->check(CLI::ExistingFile);
  train->add_option("--out", out, "Output directory")->required();

  std::string weights, input;
  auto* forward = app.add_subcommand("forward", "Run inference on a T4 tensor");
  forward->add_option("--weights", weights, "W1 weights file")->required()->check(CLI::ExistingFile);
  forward->add_option("--input", input, "T4 image tensor (N,3,H,W)")->required()->check(CLI::ExistingFile);
  forward->add_option("--out", out, "Detections file (directory when N > 1)")->required();
  forward->add_option("--config", config, "Model config file")->check(CLI::ExistingFile);

  std::string gt_dir, pred_dir, classes, pr_csv;
  double iou = 0.5, conf = 0.25;
  bool all_thresholds = false;
  auto* eval = app.add_subcommand("eval", "Evaluate prediction files against annotations");
  eval->add_option("--gt", gt_dir, "Annotation directory")->required();
  eval->add_option("--pred", pred_dir, "Prediction directory")->required();
  eval->add_option("--classes", classes, "Class names file")->required()->check(CLI::ExistingFile);
  eval->add_option("--iou", iou, "IoU threshold")->check(CLI::Range(1e-9, 1.0));
  eval->add_flag("--all-thresholds", all_thresholds, "Average over IoU 0.50:0.95");
  eval->add_option("--confusion-conf", conf, "Confidence cut for the confusion matrix");
  eval->add_option("--pr-csv", pr_csv, "Write precision/recall points here");

  double theta = 0.0, speed = 0.0;
  int deadband = -1;
  auto* droi = app.add_subcommand("droi", "Critical region for one steering/speed sample");
  droi->add_option("--theta", theta, "Steering angle, degrees")->required();
  droi->add_option("--speed", speed, "Speed, m/s")->required();
  droi->add_option("--config", config, "DROI config file")->check(CLI::ExistingFile);
  droi->add_option("--deadband", deadband, "1 = continuity mode, 0 = verbatim")
      ->check(CLI::Range(0, 1));

  std::string log;
  auto* replay = app.add_subcommand("droi-replay", "Replay a t,theta_deg,speed_mps log");
  replay->add_option("--log", log, "Trajectory CSV")->required()->check(CLI::ExistingFile);
  replay->add_option("--config", config, "DROI config file")->check(CLI::ExistingFile);
  replay->add_option("--out", out, "Output CSV (default stdout)");

  std::uint64_t gen_seed = 0;
  int count = 20;
  ToySceneSpec spec;
  auto* gen = app.add_subcommand("gen-toy", "Write a synthetic toy dataset");
  gen->add_option("--seed", gen_seed, "Seed")->required();
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--count", count, "Number of scenes")->check(CLI::NonNegativeNumber);
  gen->add_option("--size", spec.height, "Square image size")->check(CLI::PositiveNumber);
  gen->add_option("--classes", spec.num_classes, "Class count")->check(CLI::PositiveNumber);
  gen->add_option("--objects", spec.objects, "Objects per scene")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*selftest) return cmd_selftest(seeds);
    if (*gradcheck) return cmd_gradcheck(module, grad_seeds);
    if (*bench) return cmd_bench(config, size, batch, repeat);
    if (*train) return cmd_train_toy(config, out);
    if (*forward) return cmd_forward(weights, input, out, config);
    if (*eval) return cmd_eval(gt_dir, pred_dir, classes, iou, all_thresholds, conf, pr_csv);
    if (*droi) return cmd_droi(theta, speed, config, deadband);
    if (*replay) return cmd_droi_replay(log, config, out);
    if (*gen) {
      spec.width = spec.height;
      return cmd_gen_toy(gen_seed, out, count, spec);
    }
  } catch (const apd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
