#pragma once

#include "agmtr/autodiff.hpp"
#include "agmtr/tensor.hpp"

namespace agmtr {

struct Prediction {
  ad::Var fg_score;  // [HW] max cosine over foreground agents
  ad::Var bg_score;  // [1,HW] cosine to the background agent
  Tensor probs;      // HW×2 (background, foreground)
  BinaryMask hard;   // feature grid
};

/// Cosine matching of query pixels ([HW,C]) against agents ([N_a+1,C],
/// background last). A pixel is foreground only if its best foreground score
/// beats the background score strictly.
Prediction predict(ad::Var query, ad::Var agents, int64_t height, int64_t width, double tau);

/// BCE of the matching output against a {0,1} target over the feature grid.
ad::Var matching_loss(const Prediction& pred, const Tensor& target, double tau);

/// L_main + γ·L_asl; an invalid `asl` contributes nothing.
ad::Var total_loss(ad::Var main, ad::Var asl, double gamma);

/// Each cell becomes a factor×factor block.
BinaryMask upsample_nearest(const BinaryMask& mask, int64_t factor);

}  // namespace agmtr
