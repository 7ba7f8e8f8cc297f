#pragma once

#include <cstdint>

#include "agmtr/errors.hpp"
#include "agmtr/tensor.hpp"

namespace agmtr {

struct SinkhornConfig {
  double lambda = 20.0;
  int max_iters = 200;
  double marginal_tol = 1e-6;
  /// Throw NoConvergence instead of warning and returning the last iterate.
  bool strict = false;

  void validate() const;
};

/// N_a×N_f plan with row sums 1/N_a and column sums 1/N_f.
struct TransportPlan {
  Tensor matrix;
  /// max over rows and columns of |marginal − target| at return.
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

class NoConvergence : public Error {
 public:
  NoConvergence(const std::string& message, TransportPlan best)
      : Error(message), best_(std::move(best)) {}
  const TransportPlan& best() const { return best_; }

 private:
  TransportPlan best_;
};

/// Entropic OT: argmin Σ T·cost − (1/λ) H(T) over the uniform-marginal
/// transport polytope, by log-domain Sinkhorn scaling.
TransportPlan sinkhorn_solve(const Tensor& cost, const SinkhornConfig& config);

/// Σ T·cost + (1/λ) Σ T log T.
double entropic_objective(const Tensor& plan, const Tensor& cost, double lambda);
double transport_cost(const Tensor& plan, const Tensor& cost);
/// Worst absolute deviation of row/column sums from 1/N_a and 1/N_f.
double marginal_residual(const Tensor& plan);

}  // namespace agmtr
