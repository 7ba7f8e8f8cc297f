#include "agmtr/sad.hpp"

#include <cmath>
#include <limits>

#include "agmtr/errors.hpp"

namespace agmtr::sad {

using ad::Var;

namespace {

void add_attention_block(ParamRegistry& params, const std::string& prefix, int64_t dim, uint64_t seed, bool mlp) {
  for (const char* n : {"wq", "wk", "wv"}) params.add(prefix + n, near_identity(dim, 0.02, name_seed(prefix + n, seed)));
  if (!mlp) return;
  params.add(prefix + "mlp.w1", trunc_normal({dim, dim}, 0.02, name_seed(prefix + "mlp.w1", seed)));
  params.add(prefix + "mlp.b1", Tensor::zeros({dim}));
  params.add(prefix + "mlp.w2", trunc_normal({dim, dim}, 0.02, name_seed(prefix + "mlp.w2", seed)));
  params.add(prefix + "mlp.b2", Tensor::zeros({dim}));
}

Var scaled_scores(Var q, Var k) { return ad::scale(ad::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(q.dim(1)))); }

}  // namespace

void init_params(ParamRegistry& params, int64_t dim, const SadConfig& config, uint64_t seed) {
  if (config.n_blocks < 0) throw Error("sad: n_blocks must be non-negative");
  for (int64_t b = 0; b < config.n_blocks; ++b) add_attention_block(params, "sad.block" + std::to_string(b) + ".", dim, seed, true);
  add_attention_block(params, "sad.final.", dim, seed, false);
}

LocalMaskSet PseudoMasks::masks(int64_t height, int64_t width, int64_t n_agents) const {
  if (static_cast<int64_t>(owner.size()) != height * width) throw ShapeMismatch("PseudoMasks::masks: grid mismatch");
  LocalMaskSet out;
  out.masks.assign(static_cast<size_t>(n_agents), BinaryMask(height, width));
  for (size_t i = 0; i < owner.size(); ++i) out.masks[static_cast<size_t>(owner[i])].set(static_cast<int64_t>(i), true);
  return out;
}

PseudoMasks pseudo_local_masks(Var agents, Var query, StopGradCache* cache) {
  PseudoMasks out;
  out.scores = ad::cosine_matrix(agents, query);
  const Tensor owner = freeze(cache, [&] {
    const auto& s = out.scores.value();
    const auto k = s.dim(0), p = s.dim(1);
    Tensor idx({p});
    for (int64_t j = 0; j < p; ++j) {
      int64_t best = 0;
      for (int64_t i = 1; i < k; ++i)
        if (s.at(i, j) > s.at(best, j)) best = i;
      idx[j] = static_cast<double>(best);
    }
    return idx;
  });
  out.owner.resize(static_cast<size_t>(owner.numel()));
  for (int64_t j = 0; j < owner.numel(); ++j) out.owner[static_cast<size_t>(j)] = static_cast<int64_t>(owner[j]);
  return out;
}

SabResult sab_step(ad::Tape& tape, const ParamRegistry& params, const std::string& prefix, Var agents, Var query,
                   StopGradCache* cache) {
  SabResult out;
  out.masks = pseudo_local_masks(agents, query, cache);
  const auto n = agents.dim(0), p = query.dim(0);
  std::vector<int64_t> active;
  std::vector<std::vector<double>> bias_rows;
  for (int64_t i = 0; i < n; ++i) {
    std::vector<double> row(static_cast<size_t>(p), -std::numeric_limits<double>::infinity());
    bool any = false;
    for (int64_t j = 0; j < p; ++j)
      if (out.masks.owner[static_cast<size_t>(j)] == i) {
        row[static_cast<size_t>(j)] = 0.0;
        any = true;
      }
    if (!any) continue;
    active.push_back(i);
    bias_rows.push_back(std::move(row));
  }
  // Every pixel has an owner, so at least one agent is active.
  std::vector<double> bias;
  for (auto& r : bias_rows) bias.insert(bias.end(), r.begin(), r.end());
  const Tensor mask = Tensor::allow_nonfinite({static_cast<int64_t>(active.size()), p}, std::move(bias));

  const Var sel = ad::gather_rows(agents, active);
  const Var attn = ad::softmax_rows(
      scaled_scores(ad::matmul(sel, params.bind(tape, prefix + "wq")), ad::matmul(query, params.bind(tape, prefix + "wk"))),
      &mask);
  const Var h = ad::add(sel, ad::matmul(attn, ad::matmul(query, params.bind(tape, prefix + "wv"))));
  const Var hidden = ad::relu(ad::add_bias(ad::matmul(h, params.bind(tape, prefix + "mlp.w1")), params.bind(tape, prefix + "mlp.b1")));
  const Var updated =
      ad::add(h, ad::add_bias(ad::matmul(hidden, params.bind(tape, prefix + "mlp.w2")), params.bind(tape, prefix + "mlp.b2")));
  out.agents = static_cast<int64_t>(active.size()) == n ? updated : ad::scatter_rows(agents, updated, active);
  return out;
}

DecoderOutput run_decoder(ad::Tape& tape, const ParamRegistry& params, const SadConfig& config, Var agents, Var query,
                          StopGradCache* cache) {
  DecoderOutput out;
  for (int64_t b = 0; b < config.n_blocks; ++b) {
    auto r = sab_step(tape, params, "sad.block" + std::to_string(b) + ".", agents, query, cache);
    agents = r.agents;
    out.blocks.push_back(std::move(r.masks));
  }
  out.agents = agents;
  const Var attn = ad::softmax_rows(
      scaled_scores(ad::matmul(query, params.bind(tape, "sad.final.wq")), ad::matmul(agents, params.bind(tape, "sad.final.wk"))));
  out.query = ad::add(query, ad::matmul(attn, ad::matmul(agents, params.bind(tape, "sad.final.wv"))));
  return out;
}

Var agent_segmentation_loss(const std::vector<Var>& block_scores, const Tensor& target, double tau) {
  if (block_scores.empty()) throw Error("agent_segmentation_loss: no blocks");
  Var total;
  for (const auto& s : block_scores) {
    const auto k = s.dim(0);
    if (k < 2) throw ShapeMismatch("agent_segmentation_loss: need foreground and background rows");
    const Var l = ad::bce_two_way(ad::slice_rows(s, k - 1, 1), ad::max_over_rows(s, 0, k - 1), target, tau);
    total = total.valid() ? ad::add(total, l) : l;
  }
  return ad::scale(total, 1.0 / static_cast<double>(block_scores.size()));
}

}  // namespace agmtr::sad
