#pragma once

#include <cstdint>
#include <vector>

#include "agmtr/tensor.hpp"

namespace agmtr {

struct SuperpixelLabels {
  int64_t height = 0;
  int64_t width = 0;
  /// Row-major labels in [0, count).
  std::vector<int32_t> labels;
  int32_t count = 0;

  int32_t at(int64_t y, int64_t x) const { return labels[static_cast<size_t>(y * width + x)]; }
  /// True when every label in [0, count) occurs and nothing else does.
  bool is_contiguous_partition() const;
  std::vector<int64_t> segment_sizes() const;
};

struct SlicConfig {
  int n_segments = 100;
  double compactness = 10.0;
  int iters = 10;
  /// Cluster in CIE-Lab instead of (scaled) RGB.
  bool use_lab = false;
};

/// SLIC: grid-seeded k-means in joint color–position space, restricted to
/// 2S×2S windows, followed by merging of small disconnected fragments.
/// `image` is H×W×3 with values in [0,1].
SuperpixelLabels slic(const Tensor& image, const SlicConfig& config);

/// Majority vote of each patch_size×patch_size block onto the coarse grid;
/// ties go to the lowest label. Labels keep their image-level ids, so some
/// may no longer appear.
SuperpixelLabels downsample_labels(const SuperpixelLabels& labels, int64_t patch_size);

}  // namespace agmtr
