#pragma once

#include <functional>
#include <vector>

#include "agmtr/tensor.hpp"

namespace agmtr {

/// Non-differentiable intermediates of one forward pass: transport plans,
/// hard local masks, graph adjacency. The reverse pass treats them as
/// constants. Recording them once and replaying them on later passes lets a
/// finite-difference check hold them fixed too, which is exactly the
/// derivative the reverse pass computes.
class StopGradCache {
 public:
  enum class Mode { kRecord, kReplay };

  explicit StopGradCache(Mode mode = Mode::kRecord) : mode_(mode) {}

  /// Record mode: computes, stores and returns. Replay mode: returns the next
  /// stored value (in call order) without calling `compute`.
  Tensor freeze(const std::function<Tensor()>& compute);

  void start_replay() {
    mode_ = Mode::kReplay;
    cursor_ = 0;
  }
  Mode mode() const { return mode_; }
  size_t size() const { return values_.size(); }

 private:
  Mode mode_;
  std::vector<Tensor> values_;
  size_t cursor_ = 0;
};

/// Helper for optional caches.
inline Tensor freeze(StopGradCache* cache, const std::function<Tensor()>& compute) {
  return cache ? cache->freeze(compute) : compute();
}

}  // namespace agmtr
