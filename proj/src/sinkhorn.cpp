#include "agmtr/sinkhorn.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace agmtr {

void SinkhornConfig::validate() const {
  if (!(lambda > 0.0)) throw Error("sinkhorn: lambda must be positive");
  if (max_iters < 1) throw Error("sinkhorn: max_iters must be at least 1");
}

double marginal_residual(const Tensor& plan) {
  const auto n = plan.dim(0), m = plan.dim(1);
  const double a = 1.0 / static_cast<double>(n), b = 1.0 / static_cast<double>(m);
  double worst = 0.0;
  std::vector<double> cols(static_cast<size_t>(m), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    double r = 0.0;
    for (int64_t j = 0; j < m; ++j) {
      r += plan.at(i, j);
      cols[static_cast<size_t>(j)] += plan.at(i, j);
    }
    worst = std::max(worst, std::abs(r - a));
  }
  for (double c : cols) worst = std::max(worst, std::abs(c - b));
  return worst;
}

double transport_cost(const Tensor& plan, const Tensor& cost) {
  double s = 0.0;
  for (int64_t i = 0; i < plan.numel(); ++i) s += plan[i] * cost[i];
  return s;
}

double entropic_objective(const Tensor& plan, const Tensor& cost, double lambda) {
  double neg_entropy = 0.0;
  for (double t : plan.data())
    if (t > 0.0) neg_entropy += t * std::log(t);
  return transport_cost(plan, cost) + neg_entropy / lambda;
}

TransportPlan sinkhorn_solve(const Tensor& cost, const SinkhornConfig& config) {
  config.validate();
  require_rank(cost, 2, "sinkhorn_solve");
  const auto n = cost.dim(0), m = cost.dim(1);
  if (n < 1 || m < 1) throw ShapeMismatch("sinkhorn_solve: empty cost matrix");
  if (!cost.all_finite()) throw NonFiniteValue("sinkhorn_solve: non-finite cost");

  // log T(i,j) = f_i + g_j − λ C(i,j)
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));
  std::vector<double> kernel(static_cast<size_t>(n * m));
  for (int64_t i = 0; i < n * m; ++i) kernel[static_cast<size_t>(i)] = -config.lambda * cost[i];
  std::vector<double> f(static_cast<size_t>(n), 0.0), g(static_cast<size_t>(m), 0.0);

  auto lse_row = [&](int64_t i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < m; ++j) mx = std::max(mx, g[j] + kernel[i * m + j]);
    double s = 0.0;
    for (int64_t j = 0; j < m; ++j) s += std::exp(g[j] + kernel[i * m + j] - mx);
    return mx + std::log(s);
  };
  auto lse_col = [&](int64_t j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < n; ++i) mx = std::max(mx, f[i] + kernel[i * m + j]);
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += std::exp(f[i] + kernel[i * m + j] - mx);
    return mx + std::log(s);
  };
  auto materialize = [&] {
    Tensor t({n, m});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < m; ++j) t[i * m + j] = std::exp(f[i] + g[j] + kernel[i * m + j]);
    return t;
  };

  // Nearly sparse kernels make plain scaling crawl: the residual shrinks by
  // a factor close to 1 per sweep. Once that factor has settled, the
  // potentials are over-relaxed with the SOR weight for it. Plain sweeps are
  // block ascent on the dual a·Σf + b·Σg − ΣT; an over-relaxed sweep that
  // lowers the dual is undone and scaling restarts unrelaxed.
  auto residual = [&] {
    double worst = 0.0;
    for (int64_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(std::exp(f[i] + lse_row(i)) - std::exp(log_a)));
    for (int64_t j = 0; j < m; ++j) worst = std::max(worst, std::abs(std::exp(g[j] + lse_col(j)) - std::exp(log_b)));
    return worst;
  };
  auto dual = [&] {
    long double s = 0.0L;
    for (int64_t i = 0; i < n; ++i) s += std::exp(log_a) * f[i];
    for (int64_t j = 0; j < m; ++j) s += std::exp(log_b) * g[j];
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < m; ++j) s -= std::exp(f[i] + g[j] + kernel[i * m + j]);
    return s;
  };
  TransportPlan plan;
  double omega = 1.0, prev = std::numeric_limits<double>::infinity(), prev_ratio = 0.0;
  long double prev_dual = -std::numeric_limits<long double>::infinity();
  int plain_left = 10;
  std::vector<double> f_old, g_old;
  for (int it = 1; it <= config.max_iters; ++it) {
    f_old = f;
    g_old = g;
    for (int64_t i = 0; i < n; ++i) f[i] = (1.0 - omega) * f[i] + omega * (log_a - lse_row(i));
    for (int64_t j = 0; j < m; ++j) g[j] = (1.0 - omega) * g[j] + omega * (log_b - lse_col(j));
    plan.iterations = it;
    const double res = residual();
    if (res < config.marginal_tol) {
      plan.matrix = materialize();
      plan.residual = marginal_residual(plan.matrix);
      plan.converged = plan.residual < config.marginal_tol;
      if (plan.converged) return plan;
    }
    if (omega > 1.0) {
      const long double d = dual();
      if (d < prev_dual) {
        f = f_old;
        g = g_old;
        omega = 1.0;
        plain_left = 10;
        continue;
      }
      prev_dual = d;
      prev = res;
      continue;
    }
    const double ratio = res / prev;
    if (--plain_left <= 0 && ratio < 1.0 && ratio > 0.5 && std::abs(ratio - prev_ratio) < 0.05 * (1.0 - ratio) + 1e-3) {
      omega = std::min(1.99, 2.0 / (1.0 + std::sqrt(1.0 - ratio)));
      prev_dual = dual();
    }
    prev_ratio = ratio;
    prev = res;
  }
  plan.matrix = materialize();
  plan.residual = marginal_residual(plan.matrix);
  plan.converged = plan.residual < config.marginal_tol;
  if (plan.converged) return plan;
  const std::string msg = "sinkhorn: marginal residual " + std::to_string(plan.residual) + " after " +
                          std::to_string(plan.iterations) + " iterations";
  if (config.strict) throw NoConvergence(msg, plan);
  warn(msg);
  return plan;
}

}  // namespace agmtr
