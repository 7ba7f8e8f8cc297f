#include "agmtr/numerics.hpp"

#include <cmath>
#include <limits>

namespace agmtr {

bool LocalMaskSet::is_partition() const {
  if (masks.empty()) return false;
  const auto n = masks.front().size();
  for (int64_t i = 0; i < n; ++i) {
    int covered = 0;
    for (const auto& m : masks) {
      if (m.size() != n) return false;
      covered += m[i];
    }
    if (covered != 1) return false;
  }
  return true;
}

Tensor masked_average_pool(const Tensor& feature, const BinaryMask& mask) {
  require_rank(feature, 3, "masked_average_pool");
  if (feature.dim(0) != mask.height() || feature.dim(1) != mask.width())
    throw ShapeMismatch("masked_average_pool: feature " + shape_str(feature.shape()) + " vs mask " +
                        std::to_string(mask.height()) + "x" + std::to_string(mask.width()));
  const auto c = feature.dim(2);
  ad::Tape tape;
  auto f = tape.constant(feature.reshaped({mask.size(), c}));
  return ad::masked_average_pool(f, mask).value().reshaped({c});
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw ShapeMismatch("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  constexpr double eps = 1e-12;
  if (na < eps || nb < eps) throw ZeroVector("cosine_similarity of a zero vector");
  return dot / (na * nb);
}

Tensor masked_softmax(const Tensor& logits, const Tensor& additive_mask) {
  ad::Tape tape;
  return ad::softmax_rows(tape.constant(logits), &additive_mask).value();
}

LocalMaskSet argmax_one_hot(const Tensor& scores) {
  require_rank(scores, 3, "argmax_one_hot");
  const auto k = scores.dim(0), h = scores.dim(1), w = scores.dim(2);
  if (k < 1) throw ShapeMismatch("argmax_one_hot: need at least one score map");
  LocalMaskSet out;
  out.masks.assign(static_cast<size_t>(k), BinaryMask(h, w));
  const auto n = h * w;
  for (int64_t p = 0; p < n; ++p) {
    int64_t best = 0;
    for (int64_t i = 1; i < k; ++i)
      if (scores[i * n + p] > scores[best * n + p]) best = i;
    out.masks[static_cast<size_t>(best)].set(p, true);
  }
  return out;
}

std::vector<double> additive_row(const BinaryMask& mask) {
  std::vector<double> row(static_cast<size_t>(mask.size()));
  for (int64_t i = 0; i < mask.size(); ++i)
    row[static_cast<size_t>(i)] = mask[i] ? 0.0 : -std::numeric_limits<double>::infinity();
  return row;
}

Tensor additive_mask(const std::vector<BinaryMask>& rows) {
  if (rows.empty()) throw ShapeMismatch("additive_mask: no rows");
  const auto n = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * static_cast<size_t>(n));
  for (const auto& r : rows) {
    if (r.size() != n) throw ShapeMismatch("additive_mask: rows differ in size");
    auto row = additive_row(r);
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor::allow_nonfinite({static_cast<int64_t>(rows.size()), n}, std::move(data));
}

namespace ad {

Var masked_average_pool(Var features, const BinaryMask& mask) {
  if (features.value().rank() != 2 || features.dim(0) != mask.size())
    throw ShapeMismatch("masked_average_pool: features " + shape_str(features.shape()) + " vs mask of " +
                        std::to_string(mask.size()) + " pixels");
  const auto active = mask.count();
  if (active == 0) throw EmptyMask("masked_average_pool: mask has no active pixels");
  Tensor w({1, mask.size()});
  const double inv = 1.0 / static_cast<double>(active);
  for (int64_t i = 0; i < mask.size(); ++i)
    if (mask[i]) w[i] = inv;
  return matmul(features.tape()->constant(std::move(w)), features);
}

}  // namespace ad

}  // namespace agmtr
