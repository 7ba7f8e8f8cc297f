#pragma once

#include <vector>

#include "agmtr/autodiff.hpp"
#include "agmtr/tensor.hpp"

namespace agmtr {

/// K binary maps over an H×W grid; exactly one map is active per pixel.
struct LocalMaskSet {
  std::vector<BinaryMask> masks;

  int64_t count() const { return static_cast<int64_t>(masks.size()); }
  /// True when every pixel is covered by exactly one map.
  bool is_partition() const;
};

/// Mean of the feature vectors (H×W×C) at active mask pixels. Throws EmptyMask.
Tensor masked_average_pool(const Tensor& feature, const BinaryMask& mask);
/// dot(a,b)/(‖a‖‖b‖). Throws ZeroVector when either norm is below 1e-12.
double cosine_similarity(const Tensor& a, const Tensor& b);
/// Row softmax with an additive {0,-inf} mask. Throws AllMaskedRow.
Tensor masked_softmax(const Tensor& logits, const Tensor& additive_mask);
/// Per-pixel argmax over K score maps (K×H×W), ties to the lowest index.
LocalMaskSet argmax_one_hot(const Tensor& scores);

/// Additive mask for one attention row: 0 where `mask` is active, -inf elsewhere.
std::vector<double> additive_row(const BinaryMask& mask);
/// Stacks additive rows into an N×HW tensor.
Tensor additive_mask(const std::vector<BinaryMask>& rows);

namespace ad {

/// Masked average pooling on flattened features [HW,C] → [1,C].
Var masked_average_pool(Var features, const BinaryMask& mask);

}  // namespace ad

}  // namespace agmtr
