#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "apd/detection.hpp"
#include "apd/droi.hpp"
#include "apd/losses.hpp"
#include "apd/model.hpp"

namespace apd {

// ---- Annotations and predictions -----------------------------------------
// Annotation line: class_id cx cy w h. Prediction line: class_id conf cx cy w h.
// Coordinates normalized; box must lie within [0,1] (1e-9 slack).

std::vector<GroundTruth> parse_annotations(std::istream& is, int image_id = 0,
                                           const std::string& source = "<input>",
                                           int num_classes = -1);
std::vector<GroundTruth> load_annotations(const std::string& path,
                                          int image_id = 0, int num_classes = -1);
void write_annotations(std::ostream& os, const std::vector<GroundTruth>& gts);
void save_annotations(const std::string& path, const std::vector<GroundTruth>& gts);

std::vector<Detection> parse_predictions(std::istream& is, int image_id = 0,
                                         const std::string& source = "<input>",
                                         int num_classes = -1);
std::vector<Detection> load_predictions(const std::string& path, int image_id = 0,
                                        int num_classes = -1);
void write_predictions(std::ostream& os, const std::vector<Detection>& dets);
void save_predictions(const std::string& path, const std::vector<Detection>& dets);

// One class name per line; blank lines and # comments skipped.
std::vector<std::string> load_class_names(const std::string& path);

// ---- Flat key = value config ----------------------------------------------

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& is, const std::string& source = "<input>");
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // Keys that no accessor has asked for; used to reject typos.
  std::vector<std::string> unused_keys() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> used_;
};

ModelConfig model_config_from(const KeyValueConfig& kv, ModelConfig base = {});
DroiConfig droi_config_from(const KeyValueConfig& kv, DroiConfig base = {});
// Seed from the config, overridden by the APD_SEED environment variable.
std::uint64_t resolve_seed(const KeyValueConfig& kv, std::uint64_t fallback);

// ---- Dataset ---------------------------------------------------------------

struct DatasetEntry {
  std::string image;       // T4 tensor (1,3,H,W), path relative to the manifest
  std::string annotation;  // annotation text file
};

// Manifest text: "classes = a b", "split = train" and one
// "entry = <image.t4> <labels.txt>" line per image.
struct DatasetManifest {
  std::vector<std::string> class_names;
  std::vector<DatasetEntry> entries;
  std::string split = "train";
  std::filesystem::path root;

  static DatasetManifest load(const std::string& path);
  void save(const std::string& path) const;
};

struct Dataset {
  Tensor4 images;  // (N,3,H,W)
  std::vector<std::vector<GroundTruth>> gts;
  std::vector<std::string> class_names;
};
Dataset load_dataset(const DatasetManifest& m);

// ---- Synthetic scenes ------------------------------------------------------

struct ToySceneSpec {
  int height = 64;
  int width = 64;
  int num_classes = 2;
  int objects = 2;
  int min_side = 12;  // pixels
  int max_side = 28;
  int margin = 2;
  double noise = 0.05;
};

struct ToyScene {
  Tensor4 image;  // (1,3,H,W)
  std::vector<GroundTruth> gts;
};

// Background noise plus non-overlapping axis-aligned rectangles on integer
// pixel edges. Class c has its own base color and stripe texture.
ToyScene generate_toy_scene(std::uint64_t seed, const ToySceneSpec& spec);

// Writes images/NNNN.t4, labels/NNNN.txt, classes.txt and manifest.txt under
// dir. Scene i uses seed + i.
DatasetManifest write_toy_dataset(const std::filesystem::path& dir,
                                  std::uint64_t seed, int count,
                                  const ToySceneSpec& spec);

}  // namespace apd
