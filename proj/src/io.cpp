#include "apd/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace apd {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& s) {
  const auto h = s.find('#');
  return h == std::string::npos ? s : s.substr(0, h);
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIo, "cannot open " + path);
  return is;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  return os;
}

[[noreturn]] void line_error(ErrorCode code, const std::string& source, int line,
                             const std::string& msg) {
  throw Error(code, source + ":" + std::to_string(line) + ": " + msg);
}

double parse_number(const std::string& tok, const std::string& source, int line) {
  double v = 0.0;
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    line_error(ErrorCode::kParse, source, line, "not a number: '" + tok + "'");
  }
  if (!std::isfinite(v)) {
    line_error(ErrorCode::kRange, source, line, "non-finite value '" + tok + "'");
  }
  return v;
}

int parse_class(const std::string& tok, const std::string& source, int line,
                int num_classes) {
  int v = 0;
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    line_error(ErrorCode::kParse, source, line, "bad class id '" + tok + "'");
  }
  if (v < 0 || (num_classes > 0 && v >= num_classes)) {
    line_error(ErrorCode::kRange, source, line,
               "class id " + tok + " out of range");
  }
  return v;
}

Box parse_box(const std::vector<std::string>& tok, std::size_t at,
              const std::string& source, int line) {
  Box b{parse_number(tok[at], source, line), parse_number(tok[at + 1], source, line),
        parse_number(tok[at + 2], source, line), parse_number(tok[at + 3], source, line)};
  constexpr double kSlack = 1e-9;
  auto in01 = [&](double v) { return v >= -kSlack && v <= 1.0 + kSlack; };
  if (!in01(b.cx) || !in01(b.cy) || !in01(b.w) || !in01(b.h)) {
    line_error(ErrorCode::kRange, source, line, "box value outside [0,1]");
  }
  if (!(b.w > 0.0) || !(b.h > 0.0)) {
    line_error(ErrorCode::kRange, source, line, "box extent must be > 0");
  }
  if (!in01(b.x1()) || !in01(b.y1()) || !in01(b.x2()) || !in01(b.y2())) {
    line_error(ErrorCode::kRange, source, line, "box extends outside the image");
  }
  return b;
}

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string t;
  while (ss >> t) out.push_back(t);
  return out;
}

constexpr int kDigits = 17;

}  // namespace

// ---- Annotations -------------------------------------------------------------

std::vector<GroundTruth> parse_annotations(std::istream& is, int image_id,
                                           const std::string& source,
                                           int num_classes) {
  std::vector<GroundTruth> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto tok = tokens(line);
    if (tok.empty()) continue;
    if (tok.size() != 5) {
      line_error(ErrorCode::kParse, source, lineno,
                 "expected 'class_id cx cy w h', got " + std::to_string(tok.size()) +
                     " fields");
    }
    GroundTruth g;
    g.class_id = parse_class(tok[0], source, lineno, num_classes);
    g.box = parse_box(tok, 1, source, lineno);
    g.image_id = image_id;
    out.push_back(g);
  }
  return out;
}

std::vector<GroundTruth> load_annotations(const std::string& path, int image_id,
                                          int num_classes) {
  auto is = open_in(path);
  return parse_annotations(is, image_id, path, num_classes);
}

void write_annotations(std::ostream& os, const std::vector<GroundTruth>& gts) {
  os << std::setprecision(kDigits);
  for (const auto& g : gts) {
    os << g.class_id << ' ' << g.box.cx << ' ' << g.box.cy << ' ' << g.box.w << ' '
       << g.box.h << "\n";
  }
}

void save_annotations(const std::string& path, const std::vector<GroundTruth>& gts) {
  auto os = open_out(path);
  write_annotations(os, gts);
}

std::vector<Detection> parse_predictions(std::istream& is, int image_id,
                                         const std::string& source,
                                         int num_classes) {
  std::vector<Detection> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto tok = tokens(line);
    if (tok.empty()) continue;
    if (tok.size() != 6) {
      line_error(ErrorCode::kParse, source, lineno,
                 "expected 'class_id confidence cx cy w h', got " +
                     std::to_string(tok.size()) + " fields");
    }
    Detection d;
    d.class_id = parse_class(tok[0], source, lineno, num_classes);
    d.confidence = parse_number(tok[1], source, lineno);
    if (d.confidence < 0.0 || d.confidence > 1.0) {
      line_error(ErrorCode::kRange, source, lineno, "confidence outside [0,1]");
    }
    d.box = parse_box(tok, 2, source, lineno);
    d.image_id = image_id;
    out.push_back(d);
  }
  return out;
}

std::vector<Detection> load_predictions(const std::string& path, int image_id,
                                        int num_classes) {
  auto is = open_in(path);
  return parse_predictions(is, image_id, path, num_classes);
}

void write_predictions(std::ostream& os, const std::vector<Detection>& dets) {
  os << std::setprecision(kDigits);
  for (const auto& d : dets) {
    os << d.class_id << ' ' << d.confidence << ' ' << d.box.cx << ' ' << d.box.cy
       << ' ' << d.box.w << ' ' << d.box.h << "\n";
  }
}

void save_predictions(const std::string& path, const std::vector<Detection>& dets) {
  auto os = open_out(path);
  write_predictions(os, dets);
}

std::vector<std::string> load_class_names(const std::string& path) {
  auto is = open_in(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    line = trim(strip_comment(line));
    if (!line.empty()) out.push_back(line);
  }
  if (out.empty()) throw Error(ErrorCode::kParse, path + ": no class names");
  return out;
}

// ---- Config ----------------------------------------------------------------

KeyValueConfig KeyValueConfig::parse(std::istream& is, const std::string& source) {
  KeyValueConfig kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      line_error(ErrorCode::kParse, source, lineno, "expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) line_error(ErrorCode::kParse, source, lineno, "empty key");
    if (kv.has(key)) {
      line_error(ErrorCode::kParse, source, lineno, "duplicate key '" + key + "'");
    }
    kv.values_[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  auto is = open_in(path);
  return parse(is, path);
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_[key] = true;
  return it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_[key] = true;
  const std::string& s = it->second;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::kParse, "config: " + key + " = '" + s + "' is not a number");
  }
  return v;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_[key] = true;
  const std::string& s = it->second;
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kParse, "config: " + key + " = '" + s + "' is not an integer");
  }
  return v;
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key,
                                      std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_[key] = true;
  const std::string& s = it->second;
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kParse,
                "config: " + key + " = '" + s + "' is not an unsigned integer");
  }
  return v;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_[key] = true;
  std::string s = it->second;
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw Error(ErrorCode::kParse, "config: " + key + " = '" + it->second +
                                     "' is not a boolean");
}

std::vector<std::string> KeyValueConfig::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) {
    if (!used_.count(k)) out.push_back(k);
  }
  return out;
}

ModelConfig model_config_from(const KeyValueConfig& kv, ModelConfig c) {
  c.num_classes = kv.get_int("num_classes", c.num_classes);
  c.width = kv.get_double("width", c.width);
  c.depth = kv.get_double("depth", c.depth);
  c.reg_max = kv.get_int("reg_max", c.reg_max);
  if (kv.has("activation")) {
    c.activation = parse_activation(kv.get_string("activation", ""));
  }
  c.use_simsppf = kv.get_bool("use_simsppf", c.use_simsppf);
  c.use_simam = kv.get_bool("use_simam", c.use_simam);
  c.use_igd = kv.get_bool("use_igd", c.use_igd);
  c.use_c3ghost = kv.get_bool("use_c3ghost", c.use_c3ghost);
  c.simam_lambda = kv.get_double("simam_lambda", c.simam_lambda);
  c.conf_threshold = kv.get_double("conf_threshold", c.conf_threshold);
  c.nms_iou = kv.get_double("nms_iou", c.nms_iou);
  c.igd_c_g = kv.get_int("igd_c_g", c.igd_c_g);
  c.igd_passes = kv.get_int("igd_passes", c.igd_passes);
  c.bn_eps = kv.get_double("bn_eps", c.bn_eps);
  c.bn_momentum = kv.get_double("bn_momentum", c.bn_momentum);
  c.validate();
  return c;
}

DroiConfig droi_config_from(const KeyValueConfig& kv, DroiConfig c) {
  c.w0 = kv.get_double("w0", c.w0);
  c.k1 = kv.get_double("k1", c.k1);
  c.k2 = kv.get_double("k2", c.k2);
  c.k3 = kv.get_double("k3", c.k3);
  c.theta_straight = kv.get_double("theta_straight", c.theta_straight);
  c.theta_moderate = kv.get_double("theta_moderate", c.theta_moderate);
  c.deadband = kv.get_bool("deadband", c.deadband);
  c.w_max = kv.get_double("w_max", c.w_max);
  c.lane_center = kv.get_double("lane_center", c.lane_center);
  c.horizon_y_min = kv.get_double("horizon_y_min", c.horizon_y_min);
  c.horizon_y_max = kv.get_double("horizon_y_max", c.horizon_y_max);
  c.validate();
  return c;
}

std::uint64_t resolve_seed(const KeyValueConfig& kv, std::uint64_t fallback) {
  std::uint64_t seed = kv.get_u64("seed", fallback);
  if (const char* env = std::getenv("APD_SEED"); env && *env) {
    const std::string s(env);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw Error(ErrorCode::kParse, "APD_SEED='" + s + "' is not an unsigned integer");
    }
    seed = v;
  }
  return seed;
}

// ---- Dataset -----------------------------------------------------------------

DatasetManifest DatasetManifest::load(const std::string& path) {
  auto is = open_in(path);
  DatasetManifest m;
  m.root = std::filesystem::path(path).parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      line_error(ErrorCode::kParse, path, lineno, "expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const auto vals = tokens(line.substr(eq + 1));
    if (key == "classes") {
      m.class_names = vals;
    } else if (key == "split") {
      if (vals.size() != 1) line_error(ErrorCode::kParse, path, lineno, "bad split");
      m.split = vals[0];
    } else if (key == "entry") {
      if (vals.size() != 2) {
        line_error(ErrorCode::kParse, path, lineno,
                   "entry needs '<image.t4> <labels.txt>'");
      }
      m.entries.push_back({vals[0], vals[1]});
    } else {
      line_error(ErrorCode::kParse, path, lineno, "unknown key '" + key + "'");
    }
  }
  if (m.class_names.empty()) {
    throw Error(ErrorCode::kParse, path + ": manifest lists no classes");
  }
  for (const auto& e : m.entries) {
    for (const auto& f : {e.image, e.annotation}) {
      if (!std::filesystem::exists(m.root / f)) {
        throw Error(ErrorCode::kIo, path + ": missing file " + (m.root / f).string());
      }
    }
  }
  return m;
}

void DatasetManifest::save(const std::string& path) const {
  auto os = open_out(path);
  os << "classes =";
  for (const auto& c : class_names) os << ' ' << c;
  os << "\nsplit = " << split << "\n";
  for (const auto& e : entries) os << "entry = " << e.image << ' ' << e.annotation << "\n";
}

Dataset load_dataset(const DatasetManifest& m) {
  if (m.entries.empty()) throw Error(ErrorCode::kInvalidArgument, "dataset is empty");
  Dataset d;
  d.class_names = m.class_names;
  const int nc = static_cast<int>(m.class_names.size());
  std::vector<Tensor4> imgs;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    Tensor4 t = load_t4((m.root / e.image).string());
    if (t.n() != 1 || t.c() != 3) {
      throw Error(ErrorCode::kShapeMismatch,
                  e.image + ": expected (1,3,H,W), got " + to_string(t.shape()));
    }
    if (!imgs.empty() && !(t.shape() == imgs[0].shape())) {
      throw Error(ErrorCode::kShapeMismatch,
                  e.image + ": all images must share one size");
    }
    imgs.push_back(std::move(t));
    d.gts.push_back(load_annotations((m.root / e.annotation).string(),
                                     static_cast<int>(i), nc));
  }
  const Shape s0 = imgs[0].shape();
  d.images = Tensor4(Shape{static_cast<int>(imgs.size()), 3, s0.h, s0.w});
  const std::size_t per = imgs[0].size();
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    std::copy(imgs[i].values().begin(), imgs[i].values().end(),
              d.images.values().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return d;
}

// ---- Synthetic scenes --------------------------------------------------------

ToyScene generate_toy_scene(std::uint64_t seed, const ToySceneSpec& spec) {
  if (spec.height < 1 || spec.width < 1 || spec.num_classes < 1 || spec.objects < 0 ||
      spec.min_side < 1 || spec.max_side < spec.min_side || spec.margin < 0) {
    throw Error(ErrorCode::kInvalidArgument, "toy scene: invalid spec");
  }
  const int room_h = spec.height - 2 * spec.margin;
  const int room_w = spec.width - 2 * spec.margin;
  if (spec.objects > 0 && (spec.min_side > room_h || spec.min_side > room_w)) {
    throw Error(ErrorCode::kInfeasible, "toy scene: objects do not fit in the image");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ToyScene s;
  s.image = Tensor4(Shape{1, 3, spec.height, spec.width});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        s.image.at(0, c, y, x) = 0.4 + spec.noise * (2.0 * unit(rng) - 1.0);
      }
    }
  }
  struct Rect {
    int x0, y0, x1, y1;  // half-open pixel extents
  };
  std::vector<Rect> placed;
  for (int k = 0; k < spec.objects; ++k) {
    bool ok = false;
    for (int attempt = 0; attempt < 500 && !ok; ++attempt) {
      const int hi_w = std::min(spec.max_side, room_w);
      const int hi_h = std::min(spec.max_side, room_h);
      const int w = spec.min_side + static_cast<int>(unit(rng) * (hi_w - spec.min_side + 1));
      const int h = spec.min_side + static_cast<int>(unit(rng) * (hi_h - spec.min_side + 1));
      const int x0 = spec.margin + static_cast<int>(unit(rng) * (room_w - w + 1));
      const int y0 = spec.margin + static_cast<int>(unit(rng) * (room_h - h + 1));
      const Rect r{x0, y0, x0 + w, y0 + h};
      ok = std::none_of(placed.begin(), placed.end(), [&](const Rect& o) {
        return r.x0 < o.x1 + 1 && o.x0 < r.x1 + 1 && r.y0 < o.y1 + 1 && o.y0 < r.y1 + 1;
      });
      if (ok) placed.push_back(r);
    }
    if (!ok) {
      throw Error(ErrorCode::kInfeasible,
                  "toy scene: could not place object " + std::to_string(k + 1) +
                      " of " + std::to_string(spec.objects));
    }
  }
  for (std::size_t k = 0; k < placed.size(); ++k) {
    const Rect& r = placed[k];
    const int cls = static_cast<int>(unit(rng) * spec.num_classes);
    // Class palette: a distinct dominant channel and stripe period per class.
    const int dominant = cls % 3;
    const int period = 2 + cls;
    for (int y = r.y0; y < r.y1; ++y) {
      const double stripe = ((y - r.y0) / period) % 2 == 0 ? 0.15 : -0.15;
      for (int x = r.x0; x < r.x1; ++x) {
        for (int c = 0; c < 3; ++c) {
          const double base = c == dominant ? 0.95 : 0.1;
          s.image.at(0, c, y, x) = base + (c == dominant ? 0.0 : stripe + 0.15);
        }
      }
    }
    GroundTruth g;
    g.class_id = cls;
    g.box = Box::from_corners(static_cast<double>(r.x0) / spec.width,
                              static_cast<double>(r.y0) / spec.height,
                              static_cast<double>(r.x1) / spec.width,
                              static_cast<double>(r.y1) / spec.height);
    s.gts.push_back(g);
  }
  return s;
}

DatasetManifest write_toy_dataset(const std::filesystem::path& dir,
                                  std::uint64_t seed, int count,
                                  const ToySceneSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  DatasetManifest m;
  m.root = dir;
  for (int c = 0; c < spec.num_classes; ++c) m.class_names.push_back("class" + std::to_string(c));
  for (int i = 0; i < count; ++i) {
    const ToyScene s = generate_toy_scene(seed + static_cast<std::uint64_t>(i), spec);
    std::ostringstream stem;
    stem << std::setw(4) << std::setfill('0') << i;
    const std::string img = "images/" + stem.str() + ".t4";
    const std::string ann = "labels/" + stem.str() + ".txt";
    save_t4((dir / img).string(), s.image);
    save_annotations((dir / ann).string(), s.gts);
    m.entries.push_back({img, ann});
  }
  m.save((dir / "manifest.txt").string());
  auto os = open_out((dir / "classes.txt").string());
  for (const auto& c : m.class_names) os << c << "\n";
  return m;
}

}  // namespace apd
