#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "agmtr/autodiff.hpp"
#include "agmtr/numerics.hpp"
#include "agmtr/params.hpp"
#include "agmtr/stop_grad.hpp"
#include "agmtr/tensor.hpp"

// Semantic alignment decoder. Each block assigns query pixels to their most
// similar agent, lets every agent attend to its own pixels, and the final
// step pulls the query features toward the aligned agents.
namespace agmtr::sad {

struct SadConfig {
  int64_t n_blocks = 7;
  double tau = 10.0;
};

void init_params(ParamRegistry& params, int64_t dim, const SadConfig& config, uint64_t seed);

struct PseudoMasks {
  ad::Var scores;  // (N_a+1)×HW cosine scores
  /// Winning agent per query pixel.
  std::vector<int64_t> owner;
  LocalMaskSet masks(int64_t height, int64_t width, int64_t n_agents) const;
};

/// Cosine scores between agents and query pixels, hard-assigned by argmax
/// (ties to the lower agent index). The assignment is a constant for the
/// reverse pass.
PseudoMasks pseudo_local_masks(ad::Var agents, ad::Var query, StopGradCache* cache = nullptr);

/// One alignment block with parameters under `prefix` ("sad.block0." ...).
/// Agents owning no pixel are passed through untouched.
struct SabResult {
  ad::Var agents;
  PseudoMasks masks;
};
SabResult sab_step(ad::Tape& tape, const ParamRegistry& params, const std::string& prefix, ad::Var agents, ad::Var query,
                   StopGradCache* cache = nullptr);

struct DecoderOutput {
  ad::Var agents;
  ad::Var query;  // HW×C aligned query feature
  std::vector<PseudoMasks> blocks;
};

DecoderOutput run_decoder(ad::Tape& tape, const ParamRegistry& params, const SadConfig& config, ad::Var agents,
                          ad::Var query, StopGradCache* cache = nullptr);

/// Mean over blocks of BCE(sigmoid(τ (max_fg score − bg score)), target).
ad::Var agent_segmentation_loss(const std::vector<ad::Var>& block_scores, const Tensor& target, double tau);

}  // namespace agmtr::sad
