#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "agmtr/dataset.hpp"
#include "agmtr/model.hpp"
#include "agmtr/tensor.hpp"

namespace agmtr {

using Rng = std::mt19937_64;

struct FoldSplit {
  /// unseen[f] = test classes of fold f.
  std::vector<std::vector<int>> unseen;

  int n_folds() const { return static_cast<int>(unseen.size()); }
  std::vector<int> seen(int fold, int n_classes) const;
};

/// Contiguous class blocks; the first n_classes % n_folds folds get one extra.
FoldSplit split_folds(int n_classes, int n_folds);

enum class Phase { kTrain, kTest };

struct EpisodeIds {
  int class_id = -1;
  int fold = 0;
  std::vector<int64_t> support;
  int64_t query = -1;
  std::vector<int64_t> unlabeled;
};

/// Class uniform over the phase's pool, then K supports, the query and N_u
/// unlabeled images drawn without replacement, in that order. With N_u = 0
/// the rng advances exactly as far as it would for supports and query alone.
EpisodeIds sample_episode(const Dataset& dataset, const FoldSplit& split, int fold, Phase phase, int shots,
                          int n_unlabeled, Rng& rng);

enum class MaskScheme { kDense, kBbox, kScribble };
MaskScheme parse_mask_scheme(const std::string& name);
std::string to_string(MaskScheme scheme);

/// dense: identity; bbox: filled tight bounding box; scribble: random
/// 8-connected walk inside the foreground covering about 20% of it.
BinaryMask degrade_mask(const BinaryMask& mask, MaskScheme scheme, Rng& rng);

/// Materializes model input; support masks are degraded with `scheme`.
EpisodeInput make_episode_input(const Dataset& dataset, const EpisodeIds& ids, MaskScheme scheme, Rng& degrade_rng);

}  // namespace agmtr
