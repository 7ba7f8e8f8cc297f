#include "agmtr/stop_grad.hpp"

namespace agmtr {

Tensor StopGradCache::freeze(const std::function<Tensor()>& compute) {
  if (mode_ == Mode::kRecord) {
    values_.push_back(compute());
    return values_.back();
  }
  if (cursor_ >= values_.size()) throw Error("stop-gradient replay ran past the recorded values");
  return values_[cursor_++];
}

}  // namespace agmtr
