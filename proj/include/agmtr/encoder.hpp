#pragma once

#include <cstdint>

#include "agmtr/autodiff.hpp"
#include "agmtr/params.hpp"
#include "agmtr/tensor.hpp"

namespace agmtr {

/// Toy ViT: linear patch embedding, learned absolute positions, `depth`
/// pre-norm transformer blocks and a final LayerNorm.
struct EncoderConfig {
  int64_t patch_size = 4;
  int64_t depth = 2;
  int64_t dim = 64;
  int64_t heads = 4;
  int64_t mlp_ratio = 4;
  int64_t image_height = 64;
  int64_t image_width = 64;

  int64_t grid_height() const { return image_height / patch_size; }
  int64_t grid_width() const { return image_width / patch_size; }
  int64_t tokens() const { return grid_height() * grid_width(); }
  void validate() const;
};

void init_encoder_params(ParamRegistry& params, const EncoderConfig& config, uint64_t seed);

/// [H_img, W_img, 3] image with values in [0,1] → [H·W, 3·p²] patch rows.
Tensor patchify(const Tensor& image, int64_t patch_size);

/// Differentiable encoding: flattened feature map [H·W, C], rows in
/// row-major grid order.
ad::Var encode(ad::Tape& tape, const ParamRegistry& params, const EncoderConfig& config, const Tensor& image);

/// Value-only convenience returning H×W×C.
Tensor encode(const Tensor& image, const ParamRegistry& params, const EncoderConfig& config);

}  // namespace agmtr
