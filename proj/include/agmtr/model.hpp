#pragma once

#include <cstdint>
#include <vector>

#include "agmtr/aad.hpp"
#include "agmtr/ale.hpp"
#include "agmtr/encoder.hpp"
#include "agmtr/matching.hpp"
#include "agmtr/params.hpp"
#include "agmtr/sad.hpp"
#include "agmtr/slic.hpp"
#include "agmtr/stop_grad.hpp"

namespace agmtr {

struct ModelConfig {
  EncoderConfig encoder;
  ale::AleConfig ale;
  aad::AadConfig aad;
  sad::SadConfig sad;
  bool use_ale = true;
  bool use_aad = true;
  bool use_sad = true;
  double gamma = 0.8;
  double tau = 10.0;
  /// A patch is foreground when at least this fraction of its pixels is.
  double mask_threshold = 0.5;

  /// Unlabeled images an episode actually carries (0 when AAD is off).
  int64_t n_unlabeled() const { return use_aad ? aad.n_unlabeled : 0; }
  void validate() const;
};

void init_model_params(ParamRegistry& params, const ModelConfig& config, uint64_t seed);

struct EpisodeInput {
  std::vector<Tensor> support_images;  // H_img×W_img×3 in [0,1]
  std::vector<BinaryMask> support_masks;
  std::vector<Tensor> unlabeled_images;
  std::vector<SuperpixelLabels> unlabeled_labels;  // image resolution
  Tensor query_image;
  BinaryMask query_mask;  // may be empty for inference
  /// Support masks are scribbles: every patch a scribble passes through is
  /// support foreground.
  bool sparse_support = false;
};

/// Image mask → patch grid. With `fallback_any`, a mask whose patches all
/// fall below the threshold keeps every patch it touches instead (thin
/// scribbles would otherwise vanish).
BinaryMask feature_mask(const BinaryMask& mask, int64_t patch, double threshold, bool fallback_any);
/// Patches holding at least one mask pixel.
BinaryMask touched_patches(const BinaryMask& mask, int64_t patch);

struct ForwardResult {
  ad::Var loss;
  ad::Var main_loss;
  ad::Var asl_loss;  // invalid without the decoder
  Prediction prediction;
  ad::Var agents;
  ad::Var query;  // query features the prediction matched against
  ale::AleOutput ale;  // fields unset without ALE
  sad::DecoderOutput decoder;
  BinaryMask support_grid;
  Tensor target;
};

ForwardResult forward(ad::Tape& tape, const ParamRegistry& params, const ModelConfig& config, const EpisodeInput& episode,
                      StopGradCache* cache = nullptr);

/// Hard prediction at image resolution.
BinaryMask predicted_mask(const ForwardResult& result, const ModelConfig& config);

}  // namespace agmtr
