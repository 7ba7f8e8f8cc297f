#pragma once

#include <cstdint>
#include <vector>

#include "agmtr/autodiff.hpp"
#include "agmtr/params.hpp"
#include "agmtr/slic.hpp"
#include "agmtr/stop_grad.hpp"
#include "agmtr/tensor.hpp"

// Agent aggregation decoder: superpixel prototypes from unlabeled images, a
// one-layer graph attention pass over a cosine-threshold graph, and adaptive
// absorption of the enhanced prototypes into the agents.
namespace agmtr::aad {

struct AadConfig {
  int64_t n_unlabeled = 5;
  int n_segments = 100;
  double delta = 0.5;
  double beta_init = 0.4;
  double leaky_slope = 0.2;

  void validate() const;
};

void init_params(ParamRegistry& params, int64_t dim, const AadConfig& config, uint64_t seed);

/// One row per nonempty segment: the mean feature over that segment.
/// `features` is [HW, C], `labels` must already live on the feature grid.
ad::Var unlabeled_prototypes(ad::Var features, const SuperpixelLabels& labels);
/// Row-stacks the prototypes of several images.
ad::Var unlabeled_prototypes(const std::vector<ad::Var>& features, const std::vector<SuperpixelLabels>& labels);

struct PrototypeGraph {
  Tensor prototypes;  // N×C
  Tensor adjacency;   // N×N of 0/1

  bool is_symmetric() const;
  bool has_self_loops() const;
};

/// adj(m,n) = 1 iff cos(p_m, p_n) > delta or m == n. Zero rows connect only
/// to themselves.
PrototypeGraph build_graph(const Tensor& prototypes, double delta);

/// H + softmax_N(LeakyReLU(a_srcᵀ W h_i + a_dstᵀ W h_j)) · (H W), the softmax
/// restricted to each node's neighbors.
ad::Var gat_enhance(ad::Var prototypes, const Tensor& adjacency, ad::Var w, ad::Var a_src, ad::Var a_dst,
                    double slope = 0.2);

/// p̃_i = p_i + β Σ_j w_ij p_u^j with ReLU-clamped, row-normalized cosine
/// weights; rows without a positive similarity pass through.
ad::Var adaptive_aggregate(ad::Var agents, ad::Var enhanced, ad::Var beta);
/// Weights used by adaptive_aggregate, for inspection.
Tensor aggregation_weights(const Tensor& agents, const Tensor& enhanced);

/// Full pass; returns the agents unchanged when there are no prototypes.
ad::Var run(ad::Tape& tape, const ParamRegistry& params, const AadConfig& config, ad::Var agents,
            const std::vector<ad::Var>& unlabeled_features, const std::vector<SuperpixelLabels>& labels,
            StopGradCache* cache = nullptr);

}  // namespace agmtr::aad
