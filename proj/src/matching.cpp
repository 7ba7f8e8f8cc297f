#include "agmtr/matching.hpp"

#include <cmath>

#include "agmtr/errors.hpp"

namespace agmtr {

Prediction predict(ad::Var query, ad::Var agents, int64_t height, int64_t width, double tau) {
  const auto k = agents.dim(0), p = query.dim(0);
  if (k < 2) throw ShapeMismatch("predict: need at least one foreground and one background agent");
  if (p != height * width) throw ShapeMismatch("predict: query does not match grid");
  const ad::Var scores = ad::cosine_matrix(agents, query);
  Prediction out;
  out.fg_score = ad::max_over_rows(scores, 0, k - 1);
  out.bg_score = ad::slice_rows(scores, k - 1, 1);
  out.probs = Tensor({p, 2});
  out.hard = BinaryMask(height, width);
  const auto& f = out.fg_score.value();
  const auto& b = out.bg_score.value();
  for (int64_t i = 0; i < p; ++i) {
    const double z = tau * (f[i] - b[i]);
    const double pf = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    out.probs.at(i, 0) = 1.0 - pf;
    out.probs.at(i, 1) = pf;
    out.hard.set(i, f[i] > b[i]);
  }
  return out;
}

ad::Var matching_loss(const Prediction& pred, const Tensor& target, double tau) {
  return ad::bce_two_way(pred.bg_score, pred.fg_score, target, tau);
}

ad::Var total_loss(ad::Var main, ad::Var asl, double gamma) {
  if (gamma < 0.0) throw Error("total_loss: gamma must be non-negative");
  if (!asl.valid() || gamma == 0.0) return main;
  return ad::add(main, ad::scale(asl, gamma));
}

BinaryMask upsample_nearest(const BinaryMask& mask, int64_t factor) {
  if (factor < 1) throw Error("upsample_nearest: factor must be at least 1");
  BinaryMask out(mask.height() * factor, mask.width() * factor);
  for (int64_t y = 0; y < out.height(); ++y)
    for (int64_t x = 0; x < out.width(); ++x) out.set(y, x, mask.at(y / factor, x / factor) != 0);
  return out;
}

}  // namespace agmtr
