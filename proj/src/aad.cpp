#include "agmtr/aad.hpp"

#include <cmath>
#include <limits>

#include "agmtr/errors.hpp"

namespace agmtr::aad {

using ad::Var;

void AadConfig::validate() const {
  if (n_unlabeled < 0) throw Error("aad: n_unlabeled must be non-negative");
  if (n_segments < 1) throw Error("aad: n_segments must be at least 1");
  if (!(delta > -1.0 && delta < 1.0)) throw Error("aad: delta must lie in (-1, 1)");
}

void init_params(ParamRegistry& params, int64_t dim, const AadConfig& config, uint64_t seed) {
  config.validate();
  params.add("aad.gat.w", trunc_normal({dim, dim}, 0.02, name_seed("aad.gat.w", seed)));
  params.add("aad.gat.a_src", trunc_normal({dim, 1}, 0.02, name_seed("aad.gat.a_src", seed)));
  params.add("aad.gat.a_dst", trunc_normal({dim, 1}, 0.02, name_seed("aad.gat.a_dst", seed)));
  params.add("aad.beta", Tensor::scalar(config.beta_init));
}

Var unlabeled_prototypes(Var features, const SuperpixelLabels& labels) {
  const auto hw = features.dim(0);
  if (labels.height * labels.width != hw) throw ShapeMismatch("unlabeled_prototypes: labels do not match feature grid");
  std::vector<int64_t> counts(static_cast<size_t>(labels.count), 0);
  for (auto l : labels.labels) ++counts[static_cast<size_t>(l)];
  std::vector<int64_t> row_of(counts.size(), -1);
  int64_t rows = 0;
  for (size_t s = 0; s < counts.size(); ++s)
    if (counts[s] > 0) row_of[s] = rows++;
  Tensor pool({rows, hw});
  for (int64_t i = 0; i < hw; ++i) {
    const auto s = static_cast<size_t>(labels.labels[static_cast<size_t>(i)]);
    pool.at(row_of[s], i) = 1.0 / static_cast<double>(counts[s]);
  }
  return ad::matmul(features.tape()->constant(std::move(pool)), features);
}

Var unlabeled_prototypes(const std::vector<Var>& features, const std::vector<SuperpixelLabels>& labels) {
  if (features.size() != labels.size()) throw ShapeMismatch("unlabeled_prototypes: one label map per image required");
  std::vector<Var> parts;
  for (size_t i = 0; i < features.size(); ++i) parts.push_back(unlabeled_prototypes(features[i], labels[i]));
  return ad::concat_rows(parts);
}

bool PrototypeGraph::is_symmetric() const {
  const auto n = adjacency.dim(0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j)
      if (adjacency.at(i, j) != adjacency.at(j, i)) return false;
  return true;
}

bool PrototypeGraph::has_self_loops() const {
  for (int64_t i = 0; i < adjacency.dim(0); ++i)
    if (adjacency.at(i, i) != 1.0) return false;
  return true;
}

PrototypeGraph build_graph(const Tensor& prototypes, double delta) {
  require_rank(prototypes, 2, "build_graph");
  const auto n = prototypes.dim(0), c = prototypes.dim(1);
  std::vector<double> norm(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t k = 0; k < c; ++k) s += prototypes.at(i, k) * prototypes.at(i, k);
    norm[static_cast<size_t>(i)] = std::sqrt(s);
  }
  PrototypeGraph g{prototypes, Tensor({n, n})};
  for (int64_t i = 0; i < n; ++i) {
    g.adjacency.at(i, i) = 1.0;
    for (int64_t j = i + 1; j < n; ++j) {
      const double d = norm[static_cast<size_t>(i)] * norm[static_cast<size_t>(j)];
      if (d < 1e-12) continue;
      double dot = 0.0;
      for (int64_t k = 0; k < c; ++k) dot += prototypes.at(i, k) * prototypes.at(j, k);
      if (dot / d > delta) g.adjacency.at(i, j) = g.adjacency.at(j, i) = 1.0;
    }
  }
  return g;
}

Var gat_enhance(Var prototypes, const Tensor& adjacency, Var w, Var a_src, Var a_dst, double slope) {
  const auto n = prototypes.dim(0);
  if (adjacency.rank() != 2 || adjacency.dim(0) != n || adjacency.dim(1) != n)
    throw ShapeMismatch("gat_enhance: adjacency must be N×N");
  const Var wh = ad::matmul(prototypes, w);
  const Var e = ad::leaky_relu(ad::outer_add(ad::matmul(wh, a_src), ad::matmul(wh, a_dst)), slope);
  std::vector<double> bias(static_cast<size_t>(n * n));
  for (int64_t i = 0; i < n * n; ++i)
    bias[static_cast<size_t>(i)] = adjacency[i] > 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  const Tensor mask = Tensor::allow_nonfinite({n, n}, std::move(bias));
  return ad::add(prototypes, ad::matmul(ad::softmax_rows(e, &mask), wh));
}

Var adaptive_aggregate(Var agents, Var enhanced, Var beta) {
  if (agents.dim(1) != enhanced.dim(1)) throw ShapeMismatch("adaptive_aggregate: widths differ");
  const Var weights = ad::relu_row_normalize(ad::cosine_matrix(agents, enhanced));
  return ad::add(agents, ad::mul_scalar(ad::matmul(weights, enhanced), beta));
}

Tensor aggregation_weights(const Tensor& agents, const Tensor& enhanced) {
  ad::Tape tape;
  return ad::relu_row_normalize(ad::cosine_matrix(tape.constant(agents), tape.constant(enhanced))).value();
}

Var run(ad::Tape& tape, const ParamRegistry& params, const AadConfig& config, Var agents,
        const std::vector<Var>& unlabeled_features, const std::vector<SuperpixelLabels>& labels, StopGradCache* cache) {
  if (unlabeled_features.empty()) return agents;
  const Var protos = unlabeled_prototypes(unlabeled_features, labels);
  const Tensor adjacency = freeze(cache, [&] { return build_graph(protos.value(), config.delta).adjacency; });
  const Var enhanced = gat_enhance(protos, adjacency, params.bind(tape, "aad.gat.w"), params.bind(tape, "aad.gat.a_src"),
                                   params.bind(tape, "aad.gat.a_dst"), config.leaky_slope);
  return adaptive_aggregate(agents, enhanced, params.bind(tape, "aad.beta"));
}

}  // namespace agmtr::aad
