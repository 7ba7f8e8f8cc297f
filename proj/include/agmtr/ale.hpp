#pragma once

#include <cstdint>
#include <vector>

#include "agmtr/autodiff.hpp"
#include "agmtr/params.hpp"
#include "agmtr/sinkhorn.hpp"
#include "agmtr/stop_grad.hpp"
#include "agmtr/tensor.hpp"

// Agent learning encoder: mines N_a local-aware foreground agents and one
// background agent from the support feature map.
//
// Features enter flattened as [P, C] with P the number of support pixels;
// several supports are stacked along P (and their masks stacked vertically),
// so the K-shot case needs no special handling.
namespace agmtr::ale {

struct AleConfig {
  int64_t n_agents = 5;
  /// Split the foreground among agents with optimal transport; when off the
  /// masked cross-attention weights are used directly.
  bool use_ot = true;
  /// Add the support prototype to the agent tokens (otherwise tokens only).
  bool init_from_support = true;
  double token_std = 1.0;
  SinkhornConfig sinkhorn;
};

void init_params(ParamRegistry& params, int64_t dim, const AleConfig& config, uint64_t seed);

/// Row i = MAP(features, mask) + tokens[i] (or tokens alone when
/// `from_support` is false). Throws EmptyMask.
ad::Var init_agents(ad::Var features, const BinaryMask& mask, ad::Var tokens, bool from_support = true);

/// softmax((P W_q)(F W_k)ᵀ/√d + M̃) with M̃ = 0 on foreground, -inf elsewhere.
ad::Var foreground_attention(ad::Var agents, ad::Var features, const BinaryMask& mask, ad::Var wq, ad::Var wk);

struct LocalAttention {
  /// N_a×P, zero outside the foreground, rows rescaled to sum 1.
  Tensor weights;
  /// Plan over the N_f foreground pixels before padding/rescaling.
  TransportPlan plan;
  std::vector<int64_t> foreground;
};

/// Agent/foreground similarity A^f = (1 + cos)/2, cost 1 − A^f, entropic OT,
/// zero-padding back to all P pixels and row rescaling.
LocalAttention decompose_local_attention(const Tensor& agents, const Tensor& features, const BinaryMask& mask,
                                         const SinkhornConfig& config);

/// Foreground agents F_proj(Ã (F W_v)) followed by the background agent
/// MAP(F, 1 − M); an all-foreground support yields a zero background agent.
ad::Var build_agent_set(ad::Var local_attention, ad::Var features, const BinaryMask& mask, const ParamRegistry& params);

struct AleOutput {
  ad::Var agents;      // (N_a+1)×C
  ad::Var initial;     // N_a×C
  ad::Var attention;   // N_a×P masked cross-attention
  Tensor local_attention;
  TransportPlan plan;
};

AleOutput run(ad::Tape& tape, const ParamRegistry& params, const AleConfig& config, ad::Var features,
              const BinaryMask& mask, StopGradCache* cache = nullptr);

/// Stacks masks of equal width vertically, matching row-stacked features.
BinaryMask stack_masks(const std::vector<BinaryMask>& masks);

}  // namespace agmtr::ale
