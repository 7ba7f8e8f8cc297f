#include "agmtr/model.hpp"

#include "agmtr/errors.hpp"
#include "agmtr/numerics.hpp"

namespace agmtr {

void ModelConfig::validate() const {
  encoder.validate();
  aad.validate();
  if (ale.n_agents < 1) throw Error("model: n_agents must be at least 1");
  if (sad.n_blocks < 0) throw Error("model: n_blocks must be non-negative");
  if (gamma < 0.0 || !(tau > 0.0)) throw Error("model: gamma must be >= 0 and tau > 0");
}

void init_model_params(ParamRegistry& params, const ModelConfig& config, uint64_t seed) {
  config.validate();
  init_encoder_params(params, config.encoder, seed);
  if (config.use_ale) ale::init_params(params, config.encoder.dim, config.ale, seed);
  if (config.use_aad) aad::init_params(params, config.encoder.dim, config.aad, seed);
  if (config.use_sad) sad::init_params(params, config.encoder.dim, config.sad, seed);
}

BinaryMask touched_patches(const BinaryMask& mask, int64_t patch) {
  if (mask.height() % patch != 0 || mask.width() % patch != 0) throw ShapeMismatch("feature mask: size not divisible by patch");
  BinaryMask out(mask.height() / patch, mask.width() / patch);
  for (int64_t y = 0; y < mask.height(); ++y)
    for (int64_t x = 0; x < mask.width(); ++x)
      if (mask.at(y, x)) out.set(y / patch, x / patch, true);
  return out;
}

BinaryMask feature_mask(const BinaryMask& mask, int64_t patch, double threshold, bool fallback_any) {
  if (mask.height() % patch != 0 || mask.width() % patch != 0) throw ShapeMismatch("feature_mask: size not divisible by patch");
  const auto gh = mask.height() / patch, gw = mask.width() / patch;
  BinaryMask out(gh, gw);
  const double cells = static_cast<double>(patch * patch);
  for (int64_t gy = 0; gy < gh; ++gy)
    for (int64_t gx = 0; gx < gw; ++gx) {
      int64_t n = 0;
      for (int64_t dy = 0; dy < patch; ++dy)
        for (int64_t dx = 0; dx < patch; ++dx) n += mask.at(gy * patch + dy, gx * patch + dx);
      out.set(gy, gx, static_cast<double>(n) / cells >= threshold);
    }
  if (fallback_any && !out.any()) return touched_patches(mask, patch);
  return out;
}

namespace {

ad::Var prototype_agents(ad::Tape& tape, ad::Var features, const BinaryMask& mask) {
  const ad::Var fg = ad::masked_average_pool(features, mask);
  const BinaryMask bg_mask = mask.complement();
  if (!bg_mask.any()) {
    warn("forward: support has no background pixels, using a zero background prototype");
    return ad::concat_rows({fg, tape.constant(Tensor::zeros({1, features.dim(1)}))});
  }
  return ad::concat_rows({fg, ad::masked_average_pool(features, bg_mask)});
}

}  // namespace

ForwardResult forward(ad::Tape& tape, const ParamRegistry& params, const ModelConfig& config, const EpisodeInput& episode,
                      StopGradCache* cache) {
  const auto& enc = config.encoder;
  if (episode.support_images.empty() || episode.support_images.size() != episode.support_masks.size())
    throw ShapeMismatch("forward: need matching support images and masks");
  ForwardResult out;

  std::vector<ad::Var> support_feats;
  std::vector<BinaryMask> support_grids;
  for (size_t k = 0; k < episode.support_images.size(); ++k) {
    support_feats.push_back(encode(tape, params, enc, episode.support_images[k]));
    support_grids.push_back(episode.sparse_support
                                ? touched_patches(episode.support_masks[k], enc.patch_size)
                                : feature_mask(episode.support_masks[k], enc.patch_size, config.mask_threshold, true));
  }
  const ad::Var fs = support_feats.size() == 1 ? support_feats.front() : ad::concat_rows(support_feats);
  out.support_grid = ale::stack_masks(support_grids);
  if (!out.support_grid.any()) throw EmptyMask("forward: support masks are empty");

  const ad::Var fq = encode(tape, params, enc, episode.query_image);

  ad::Var agents;
  if (config.use_ale) {
    out.ale = ale::run(tape, params, config.ale, fs, out.support_grid, cache);
    agents = out.ale.agents;
  } else {
    agents = prototype_agents(tape, fs, out.support_grid);
  }

  if (config.use_aad && !episode.unlabeled_images.empty()) {
    if (episode.unlabeled_images.size() != episode.unlabeled_labels.size())
      throw ShapeMismatch("forward: one superpixel map per unlabeled image required");
    std::vector<ad::Var> feats;
    std::vector<SuperpixelLabels> grids;
    for (size_t i = 0; i < episode.unlabeled_images.size(); ++i) {
      feats.push_back(encode(tape, params, enc, episode.unlabeled_images[i]));
      grids.push_back(downsample_labels(episode.unlabeled_labels[i], enc.patch_size));
    }
    agents = aad::run(tape, params, config.aad, agents, feats, grids, cache);
  }

  ad::Var query = fq;
  if (config.use_sad) {
    out.decoder = sad::run_decoder(tape, params, config.sad, agents, fq, cache);
    agents = out.decoder.agents;
    query = out.decoder.query;
  }
  out.agents = agents;
  out.query = query;
  out.prediction = predict(query, agents, enc.grid_height(), enc.grid_width(), config.tau);

  if (episode.query_mask.size() > 0) {
    out.target = feature_mask(episode.query_mask, enc.patch_size, config.mask_threshold, false).as_tensor();
    out.main_loss = matching_loss(out.prediction, out.target, config.tau);
    if (config.use_sad && !out.decoder.blocks.empty()) {
      std::vector<ad::Var> scores;
      for (const auto& b : out.decoder.blocks) scores.push_back(b.scores);
      out.asl_loss = sad::agent_segmentation_loss(scores, out.target, config.sad.tau);
    }
    out.loss = total_loss(out.main_loss, out.asl_loss, config.gamma);
  }
  return out;
}

BinaryMask predicted_mask(const ForwardResult& result, const ModelConfig& config) {
  return upsample_nearest(result.prediction.hard, config.encoder.patch_size);
}

}  // namespace agmtr
