#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "agmtr/tensor.hpp"

namespace agmtr {

struct IouCounts {
  uint64_t intersection = 0;
  uint64_t union_ = 0;
  /// An empty union (nothing predicted, nothing there) counts as perfect.
  double iou() const { return union_ == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(union_); }
};

/// Integer counters summed over episodes, so results do not depend on the
/// order episodes arrive in or how they were split across workers.
class MetricAccumulator {
 public:
  void add(int class_id, const BinaryMask& pred, const BinaryMask& truth);
  void merge(const MetricAccumulator& other);

  bool empty() const { return episodes_ == 0; }
  uint64_t episodes() const { return episodes_; }
  const std::map<int, IouCounts>& classes() const { return classes_; }
  const IouCounts& foreground() const { return fg_; }
  const IouCounts& background() const { return bg_; }

  bool operator==(const MetricAccumulator&) const;

 private:
  std::map<int, IouCounts> classes_;
  IouCounts fg_, bg_;
  uint64_t episodes_ = 0;
};

/// Mean over accumulated classes of pooled class IoU. Throws EmptyAccumulator.
double miou(const MetricAccumulator& acc);
/// (IoU_F + IoU_B) / 2 with both pooled over all episodes.
double fb_iou(const MetricAccumulator& acc);

/// One {"fold","class","iou"} record per class, then a summary record.
std::string metrics_json_lines(const MetricAccumulator& acc, int fold);

}  // namespace agmtr
