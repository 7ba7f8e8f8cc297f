#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "agmtr/slic.hpp"
#include "agmtr/tensor.hpp"

namespace agmtr {

/// Twelve stroke-drawn shape families; class c uses family c mod 12.
inline constexpr const char* kShapeFamilies[] = {"disc", "ring", "bar",   "cross",   "L",    "T",
                                                 "U",    "H",    "wedge", "diamond", "star", "blob"};
inline constexpr int kNumFamilies = 12;

struct SyntheticDatasetSpec {
  int n_classes = 12;
  int images_per_class = 200;
  int height = 64;
  int width = 64;
  /// Object radius range in pixels.
  double min_radius = 22.0;
  double max_radius = 30.0;
  double color_jitter = 0.06;
  double pixel_noise = 0.03;
  /// Mean number of distractor blobs per image.
  double clutter = 2.5;
  /// Mean number of small blobs in the target class's own colors, so color
  /// alone does not separate object from background.
  double confusers = 0.5;
  uint64_t seed = 0;

  void validate() const;
};

std::string spec_to_json(const SyntheticDatasetSpec& spec);
SyntheticDatasetSpec spec_from_json(const std::string& text);

struct SyntheticSample {
  Tensor image;  // H×W×3 in [0,1], already quantized to 8 bits
  BinaryMask mask;
};

/// One image of class `class_id`; deterministic in (spec.seed, class, index).
SyntheticSample render_sample(const SyntheticDatasetSpec& spec, int class_id, int index);

/// PNG images under images/, PNG masks under masks/, manifest.json at the root.
void generate_dataset(const SyntheticDatasetSpec& spec, const std::filesystem::path& out_dir);

struct DatasetItem {
  int class_id = 0;
  std::string image_path;
  Tensor image;
  BinaryMask mask;
  SuperpixelLabels superpixels;  // empty unless computed at load
};

struct Dataset {
  SyntheticDatasetSpec spec;
  std::vector<DatasetItem> items;
  /// Item indices per class id.
  std::vector<std::vector<int64_t>> by_class;

  int n_classes() const { return static_cast<int>(by_class.size()); }
};

/// Reads the manifest plus every image and mask; superpixels are computed
/// once here when `superpixels` is set.
Dataset load_dataset(const std::filesystem::path& dir, bool superpixels, const SlicConfig& slic_config);
/// Renders in memory without touching the disk (tests, quick runs).
Dataset make_dataset(const SyntheticDatasetSpec& spec, bool superpixels, const SlicConfig& slic_config);

}  // namespace agmtr
