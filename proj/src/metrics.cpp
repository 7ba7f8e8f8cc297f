#include "agmtr/metrics.hpp"

#include "json.hpp"

#include "agmtr/errors.hpp"

namespace agmtr {

void MetricAccumulator::add(int class_id, const BinaryMask& pred, const BinaryMask& truth) {
  if (pred.height() != truth.height() || pred.width() != truth.width())
    throw ShapeMismatch("MetricAccumulator::add: prediction and truth differ in size");
  uint64_t fi = 0, fu = 0, bi = 0, bu = 0;
  for (int64_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, t = truth[i] != 0;
    fi += p && t;
    fu += p || t;
    bi += !p && !t;
    bu += !p || !t;
  }
  auto& c = classes_[class_id];
  c.intersection += fi;
  c.union_ += fu;
  fg_.intersection += fi;
  fg_.union_ += fu;
  bg_.intersection += bi;
  bg_.union_ += bu;
  ++episodes_;
}

void MetricAccumulator::merge(const MetricAccumulator& other) {
  for (const auto& [k, v] : other.classes_) {
    classes_[k].intersection += v.intersection;
    classes_[k].union_ += v.union_;
  }
  fg_.intersection += other.fg_.intersection;
  fg_.union_ += other.fg_.union_;
  bg_.intersection += other.bg_.intersection;
  bg_.union_ += other.bg_.union_;
  episodes_ += other.episodes_;
}

bool MetricAccumulator::operator==(const MetricAccumulator& o) const {
  auto same = [](const IouCounts& a, const IouCounts& b) { return a.intersection == b.intersection && a.union_ == b.union_; };
  if (episodes_ != o.episodes_ || classes_.size() != o.classes_.size() || !same(fg_, o.fg_) || !same(bg_, o.bg_)) return false;
  for (const auto& [k, v] : classes_) {
    auto it = o.classes_.find(k);
    if (it == o.classes_.end() || !same(v, it->second)) return false;
  }
  return true;
}

double miou(const MetricAccumulator& acc) {
  if (acc.empty()) throw EmptyAccumulator("miou: no episodes accumulated");
  double s = 0.0;
  for (const auto& [k, v] : acc.classes()) s += v.iou();
  return s / static_cast<double>(acc.classes().size());
}

double fb_iou(const MetricAccumulator& acc) {
  if (acc.empty()) throw EmptyAccumulator("fb_iou: no episodes accumulated");
  return 0.5 * (acc.foreground().iou() + acc.background().iou());
}

std::string metrics_json_lines(const MetricAccumulator& acc, int fold) {
  std::string out;
  for (const auto& [k, v] : acc.classes()) {
    nlohmann::json j = {{"fold", fold}, {"class", k}, {"iou", v.iou()}};
    out += j.dump() + "\n";
  }
  nlohmann::json s = {{"fold", fold}, {"summary", true}, {"miou", miou(acc)}, {"fb_iou", fb_iou(acc)},
                      {"episodes", acc.episodes()}};
  out += s.dump() + "\n";
  return out;
}

}  // namespace agmtr
