#include "agmtr/ale.hpp"

#include <cmath>

#include "agmtr/errors.hpp"
#include "agmtr/numerics.hpp"

namespace agmtr::ale {

using ad::Var;

void init_params(ParamRegistry& params, int64_t dim, const AleConfig& config, uint64_t seed) {
  if (config.n_agents < 1) throw Error("ale: n_agents must be at least 1");
  params.add("ale.tokens", normal({config.n_agents, dim}, config.token_std, name_seed("ale.tokens", seed)));
  for (const char* n : {"ale.wq", "ale.wk", "ale.wv"}) params.add(n, near_identity(dim, 0.02, name_seed(n, seed)));
  params.add("ale.mlp.w1", trunc_normal({dim, dim}, 0.02, name_seed("ale.mlp.w1", seed)));
  params.add("ale.mlp.b1", Tensor::zeros({dim}));
  params.add("ale.mlp.w2", trunc_normal({dim, dim}, 0.02, name_seed("ale.mlp.w2", seed)));
  params.add("ale.mlp.b2", Tensor::zeros({dim}));
}

Var init_agents(Var features, const BinaryMask& mask, Var tokens, bool from_support) {
  if (tokens.dim(1) != features.dim(1)) throw ShapeMismatch("init_agents: token width differs from feature width");
  if (!from_support) {
    if (!mask.any()) throw EmptyMask("init_agents: empty support mask");
    return tokens;
  }
  const Var proto = ad::masked_average_pool(features, mask);
  return ad::add_bias(tokens, ad::reshape(proto, {features.dim(1)}));
}

Var foreground_attention(Var agents, Var features, const BinaryMask& mask, Var wq, Var wk) {
  if (features.dim(0) != mask.size()) throw ShapeMismatch("foreground_attention: mask/feature size mismatch");
  if (!mask.any()) throw EmptyMask("foreground_attention: empty support mask");
  const Var q = ad::matmul(agents, wq);
  const Var k = ad::matmul(features, wk);
  const Var logits = ad::scale(ad::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(features.dim(1))));
  const Tensor bias = additive_mask(std::vector<BinaryMask>(static_cast<size_t>(agents.dim(0)), mask));
  return ad::softmax_rows(logits, &bias);
}

namespace {

std::vector<double> row_norms(const Tensor& x) {
  const auto n = x.dim(0), c = x.dim(1);
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t k = 0; k < c; ++k) s += x.at(i, k) * x.at(i, k);
    out[static_cast<size_t>(i)] = std::sqrt(s);
  }
  return out;
}

}  // namespace

LocalAttention decompose_local_attention(const Tensor& agents, const Tensor& features, const BinaryMask& mask,
                                         const SinkhornConfig& config) {
  require_rank(agents, 2, "decompose_local_attention");
  require_rank(features, 2, "decompose_local_attention");
  if (features.dim(0) != mask.size() || agents.dim(1) != features.dim(1))
    throw ShapeMismatch("decompose_local_attention: shape mismatch");
  LocalAttention out;
  out.foreground = mask.active_indices();
  if (out.foreground.empty()) throw EmptyMask("decompose_local_attention: empty support mask");
  const auto na = agents.dim(0), nf = static_cast<int64_t>(out.foreground.size()), c = agents.dim(1);
  if (nf < na) warn("decompose_local_attention: fewer foreground pixels than agents");

  const auto an = row_norms(agents), fn = row_norms(features);
  Tensor cost({na, nf});
  for (int64_t i = 0; i < na; ++i)
    for (int64_t j = 0; j < nf; ++j) {
      const auto p = out.foreground[static_cast<size_t>(j)];
      double dot = 0.0;
      for (int64_t k = 0; k < c; ++k) dot += agents.at(i, k) * features.at(p, k);
      const double denom = an[static_cast<size_t>(i)] * fn[static_cast<size_t>(p)];
      const double cs = denom < 1e-12 ? 0.0 : dot / denom;
      cost.at(i, j) = 1.0 - 0.5 * (1.0 + cs);
    }
  out.plan = sinkhorn_solve(cost, config);

  out.weights = Tensor({na, features.dim(0)});
  for (int64_t i = 0; i < na; ++i) {
    double mass = 0.0;
    for (int64_t j = 0; j < nf; ++j) mass += out.plan.matrix.at(i, j);
    for (int64_t j = 0; j < nf; ++j) out.weights.at(i, out.foreground[static_cast<size_t>(j)]) = out.plan.matrix.at(i, j) / mass;
  }
  return out;
}

Var build_agent_set(Var local_attention, Var features, const BinaryMask& mask, const ParamRegistry& params) {
  ad::Tape& tape = *features.tape();
  const Var wv = params.bind(tape, "ale.wv");
  const Var x = ad::matmul(local_attention, ad::matmul(features, wv));
  const Var hidden = ad::relu(ad::add_bias(ad::matmul(x, params.bind(tape, "ale.mlp.w1")), params.bind(tape, "ale.mlp.b1")));
  const Var fg = ad::add(x, ad::add_bias(ad::matmul(hidden, params.bind(tape, "ale.mlp.w2")), params.bind(tape, "ale.mlp.b2")));
  const BinaryMask bg_mask = mask.complement();
  Var bg;
  if (bg_mask.any()) {
    bg = ad::masked_average_pool(features, bg_mask);
  } else {
    warn("build_agent_set: support has no background pixels, using a zero background agent");
    bg = tape.constant(Tensor::zeros({1, features.dim(1)}));
  }
  return ad::concat_rows({fg, bg});
}

AleOutput run(ad::Tape& tape, const ParamRegistry& params, const AleConfig& config, Var features, const BinaryMask& mask,
              StopGradCache* cache) {
  AleOutput out;
  out.initial = init_agents(features, mask, params.bind(tape, "ale.tokens"), config.init_from_support);
  out.attention = foreground_attention(out.initial, features, mask, params.bind(tape, "ale.wq"), params.bind(tape, "ale.wk"));
  Var local;
  if (config.use_ot) {
    out.local_attention = freeze(cache, [&] {
      auto d = decompose_local_attention(out.initial.value(), features.value(), mask, config.sinkhorn);
      out.plan = d.plan;
      return d.weights;
    });
    local = tape.constant(out.local_attention);
  } else {
    out.local_attention = out.attention.value();
    local = out.attention;
  }
  out.agents = build_agent_set(local, features, mask, params);
  return out;
}

BinaryMask stack_masks(const std::vector<BinaryMask>& masks) {
  if (masks.empty()) throw Error("stack_masks: no masks");
  const auto w = masks.front().width();
  int64_t h = 0;
  std::vector<uint8_t> data;
  for (const auto& m : masks) {
    if (m.width() != w) throw ShapeMismatch("stack_masks: widths differ");
    h += m.height();
    data.insert(data.end(), m.vec().begin(), m.vec().end());
  }
  return BinaryMask(h, w, std::move(data));
}

}  // namespace agmtr::ale
