#include "agmtr/episode.hpp"

#include <algorithm>
#include <cmath>

#include "agmtr/errors.hpp"

namespace agmtr {

std::vector<int> FoldSplit::seen(int fold, int n_classes) const {
  const auto& u = unseen.at(static_cast<size_t>(fold));
  std::vector<int> out;
  for (int c = 0; c < n_classes; ++c)
    if (std::find(u.begin(), u.end(), c) == u.end()) out.push_back(c);
  return out;
}

FoldSplit split_folds(int n_classes, int n_folds) {
  if (n_folds < 1 || n_folds > n_classes) throw Error("split_folds: need 1 <= n_folds <= n_classes");
  FoldSplit s;
  int next = 0;
  for (int f = 0; f < n_folds; ++f) {
    const int size = n_classes / n_folds + (f < n_classes % n_folds ? 1 : 0);
    std::vector<int> block;
    for (int i = 0; i < size; ++i) block.push_back(next++);
    s.unseen.push_back(std::move(block));
  }
  return s;
}

namespace {

int64_t uniform_index(int64_t n, Rng& rng) { return std::uniform_int_distribution<int64_t>(0, n - 1)(rng); }

}  // namespace

EpisodeIds sample_episode(const Dataset& dataset, const FoldSplit& split, int fold, Phase phase, int shots,
                          int n_unlabeled, Rng& rng) {
  if (fold < 0 || fold >= split.n_folds()) throw Error("sample_episode: fold out of range");
  if (shots < 1 || n_unlabeled < 0) throw Error("sample_episode: need K >= 1 and N_u >= 0");
  const std::vector<int> pool =
      phase == Phase::kTest ? split.unseen[static_cast<size_t>(fold)] : split.seen(fold, dataset.n_classes());
  if (pool.empty()) throw InsufficientImages("sample_episode: empty class pool");
  EpisodeIds ids;
  ids.fold = fold;
  ids.class_id = pool[static_cast<size_t>(uniform_index(static_cast<int64_t>(pool.size()), rng))];
  std::vector<int64_t> items = dataset.by_class[static_cast<size_t>(ids.class_id)];
  const auto need = static_cast<size_t>(shots + 1 + n_unlabeled);
  if (items.size() < need)
    throw InsufficientImages("sample_episode: class " + std::to_string(ids.class_id) + " has " +
                             std::to_string(items.size()) + " images, need " + std::to_string(need));
  // Partial Fisher–Yates: one draw per selected item.
  for (size_t i = 0; i < need; ++i) {
    const auto j = i + static_cast<size_t>(uniform_index(static_cast<int64_t>(items.size() - i), rng));
    std::swap(items[i], items[j]);
  }
  ids.support.assign(items.begin(), items.begin() + shots);
  ids.query = items[static_cast<size_t>(shots)];
  ids.unlabeled.assign(items.begin() + shots + 1, items.begin() + static_cast<int64_t>(need));
  return ids;
}

MaskScheme parse_mask_scheme(const std::string& name) {
  if (name == "dense") return MaskScheme::kDense;
  if (name == "bbox") return MaskScheme::kBbox;
  if (name == "scribble") return MaskScheme::kScribble;
  throw Error("unknown mask scheme: " + name);
}

std::string to_string(MaskScheme scheme) {
  switch (scheme) {
    case MaskScheme::kDense: return "dense";
    case MaskScheme::kBbox: return "bbox";
    default: return "scribble";
  }
}

BinaryMask degrade_mask(const BinaryMask& mask, MaskScheme scheme, Rng& rng) {
  if (!mask.any()) throw EmptyMask("degrade_mask: empty mask");
  const auto h = mask.height(), w = mask.width();
  if (scheme == MaskScheme::kDense) return mask;
  if (scheme == MaskScheme::kBbox) {
    int64_t y0 = h, y1 = -1, x0 = w, x1 = -1;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        if (mask.at(y, x)) {
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
        }
    BinaryMask out(h, w);
    for (int64_t y = y0; y <= y1; ++y)
      for (int64_t x = x0; x <= x1; ++x) out.set(y, x, true);
    return out;
  }
  const auto fg = mask.active_indices();
  const auto target = std::max<int64_t>(1, std::lround(0.2 * static_cast<double>(fg.size())));
  BinaryMask out(h, w);
  int64_t cur = fg[static_cast<size_t>(uniform_index(static_cast<int64_t>(fg.size()), rng))];
  out.set(cur, true);
  int64_t covered = 1;
  // Momentum keeps the walk stroke-like instead of a compact clump.
  int dir = static_cast<int>(uniform_index(8, rng));
  constexpr int dy8[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
  constexpr int dx8[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  const int64_t max_steps = 50 * target;
  for (int64_t step = 0; covered < target && step < max_steps; ++step) {
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.25) dir = (dir + static_cast<int>(uniform_index(3, rng)) + 7) % 8;
    int moved = -1;
    for (int t = 0; t < 8 && moved < 0; ++t) {
      const int d = (dir + (t % 2 ? (t + 1) / 2 : 8 - t / 2)) % 8;
      const auto y = cur / w + dy8[d], x = cur % w + dx8[d];
      if (y < 0 || y >= h || x < 0 || x >= w || !mask.at(y, x)) continue;
      moved = d;
      cur = y * w + x;
    }
    if (moved < 0) break;  // isolated pixel
    dir = moved;
    if (!out[cur]) {
      out.set(cur, true);
      ++covered;
    }
  }
  return out;
}

EpisodeInput make_episode_input(const Dataset& dataset, const EpisodeIds& ids, MaskScheme scheme, Rng& degrade_rng) {
  EpisodeInput in;
  for (auto s : ids.support) {
    const auto& it = dataset.items[static_cast<size_t>(s)];
    in.support_images.push_back(it.image);
    in.support_masks.push_back(degrade_mask(it.mask, scheme, degrade_rng));
  }
  for (auto u : ids.unlabeled) {
    const auto& it = dataset.items[static_cast<size_t>(u)];
    if (it.superpixels.labels.empty()) throw Error("make_episode_input: dataset loaded without superpixels");
    in.unlabeled_images.push_back(it.image);
    in.unlabeled_labels.push_back(it.superpixels);
  }
  const auto& q = dataset.items[static_cast<size_t>(ids.query)];
  in.query_image = q.image;
  in.query_mask = q.mask;
  in.sparse_support = scheme == MaskScheme::kScribble;
  return in;
}

}  // namespace agmtr
