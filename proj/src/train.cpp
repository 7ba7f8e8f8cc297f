#include "agmtr/train.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "agmtr/errors.hpp"
#include "json.hpp"

namespace agmtr {

using nlohmann::json;

int64_t RunConfig::total_iters() const {
  return static_cast<int64_t>(epochs) * ((episodes_per_epoch + batch - 1) / batch);
}

void RunConfig::validate() const {
  model.validate();
  if (!(lr > 0.0) || epochs < 1 || episodes_per_epoch < 1 || batch < 1) throw Error("run config: lr, epochs, batch must be positive");
  if (fold < 0 || fold >= n_folds) throw Error("run config: fold out of range");
  if (shots < 1) throw Error("run config: shots must be at least 1");
  if (weight_decay < 0.0 || momentum < 0.0 || momentum >= 1.0) throw Error("run config: bad optimizer settings");
}

namespace {

template <typename T>
void get(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw Error("run config: unknown key '" + k + "' in " + where);
}

json model_to_json(const ModelConfig& m) {
  return {
      {"encoder",
       {{"patch_size", m.encoder.patch_size},
        {"depth", m.encoder.depth},
        {"dim", m.encoder.dim},
        {"heads", m.encoder.heads},
        {"mlp_ratio", m.encoder.mlp_ratio},
        {"image_height", m.encoder.image_height},
        {"image_width", m.encoder.image_width}}},
      {"ale",
       {{"n_agents", m.ale.n_agents},
        {"use_ot", m.ale.use_ot},
        {"init_from_support", m.ale.init_from_support},
        {"token_std", m.ale.token_std},
        {"sinkhorn_lambda", m.ale.sinkhorn.lambda},
        {"sinkhorn_max_iters", m.ale.sinkhorn.max_iters},
        {"sinkhorn_tol", m.ale.sinkhorn.marginal_tol}}},
      {"aad",
       {{"n_unlabeled", m.aad.n_unlabeled},
        {"n_segments", m.aad.n_segments},
        {"delta", m.aad.delta},
        {"beta_init", m.aad.beta_init}}},
      {"sad", {{"n_blocks", m.sad.n_blocks}, {"tau", m.sad.tau}}},
      {"use_ale", m.use_ale},
      {"use_aad", m.use_aad},
      {"use_sad", m.use_sad},
      {"gamma", m.gamma},
      {"tau", m.tau},
      {"mask_threshold", m.mask_threshold},
  };
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  reject_unknown(j, {"encoder", "ale", "aad", "sad", "use_ale", "use_aad", "use_sad", "gamma", "tau", "mask_threshold"}, "model");
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    reject_unknown(e, {"patch_size", "depth", "dim", "heads", "mlp_ratio", "image_height", "image_width"}, "model.encoder");
    get(e, "patch_size", m.encoder.patch_size);
    get(e, "depth", m.encoder.depth);
    get(e, "dim", m.encoder.dim);
    get(e, "heads", m.encoder.heads);
    get(e, "mlp_ratio", m.encoder.mlp_ratio);
    get(e, "image_height", m.encoder.image_height);
    get(e, "image_width", m.encoder.image_width);
  }
  if (j.contains("ale")) {
    const auto& a = j.at("ale");
    reject_unknown(a, {"n_agents", "use_ot", "init_from_support", "token_std", "sinkhorn_lambda", "sinkhorn_max_iters", "sinkhorn_tol"},
                   "model.ale");
    get(a, "n_agents", m.ale.n_agents);
    get(a, "use_ot", m.ale.use_ot);
    get(a, "init_from_support", m.ale.init_from_support);
    get(a, "token_std", m.ale.token_std);
    get(a, "sinkhorn_lambda", m.ale.sinkhorn.lambda);
    get(a, "sinkhorn_max_iters", m.ale.sinkhorn.max_iters);
    get(a, "sinkhorn_tol", m.ale.sinkhorn.marginal_tol);
  }
  if (j.contains("aad")) {
    const auto& a = j.at("aad");
    reject_unknown(a, {"n_unlabeled", "n_segments", "delta", "beta_init"}, "model.aad");
    get(a, "n_unlabeled", m.aad.n_unlabeled);
    get(a, "n_segments", m.aad.n_segments);
    get(a, "delta", m.aad.delta);
    get(a, "beta_init", m.aad.beta_init);
  }
  if (j.contains("sad")) {
    const auto& s = j.at("sad");
    reject_unknown(s, {"n_blocks", "tau"}, "model.sad");
    get(s, "n_blocks", m.sad.n_blocks);
    get(s, "tau", m.sad.tau);
  }
  get(j, "use_ale", m.use_ale);
  get(j, "use_aad", m.use_aad);
  get(j, "use_sad", m.use_sad);
  get(j, "gamma", m.gamma);
  get(j, "tau", m.tau);
  get(j, "mask_threshold", m.mask_threshold);
  return m;
}

}  // namespace

std::string run_config_to_json(const RunConfig& c) {
  json j = {{"model", model_to_json(c.model)},
            {"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"momentum", c.momentum},
            {"poly_power", c.poly_power},
            {"batch", c.batch},
            {"epochs", c.epochs},
            {"episodes_per_epoch", c.episodes_per_epoch},
            {"shots", c.shots},
            {"seed", c.seed},
            {"fold", c.fold},
            {"n_folds", c.n_folds},
            {"eval_episodes", c.eval_episodes},
            {"eval_every", c.eval_every},
            {"mask_scheme", to_string(c.mask_scheme)}};
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("run config: ") + e.what());
  }
  reject_unknown(j,
                 {"model", "lr", "weight_decay", "momentum", "poly_power", "batch", "epochs", "episodes_per_epoch", "shots",
                  "seed", "fold", "n_folds", "eval_episodes", "eval_every", "mask_scheme"},
                 "run");
  RunConfig c;
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  get(j, "lr", c.lr);
  get(j, "weight_decay", c.weight_decay);
  get(j, "momentum", c.momentum);
  get(j, "poly_power", c.poly_power);
  get(j, "batch", c.batch);
  get(j, "epochs", c.epochs);
  get(j, "episodes_per_epoch", c.episodes_per_epoch);
  get(j, "shots", c.shots);
  get(j, "seed", c.seed);
  get(j, "fold", c.fold);
  get(j, "n_folds", c.n_folds);
  get(j, "eval_episodes", c.eval_episodes);
  get(j, "eval_every", c.eval_every);
  if (j.contains("mask_scheme")) c.mask_scheme = parse_mask_scheme(j.at("mask_scheme").get<std::string>());
  c.validate();
  return c;
}

void apply_seed_override(RunConfig& config) {
  if (const char* s = std::getenv("AGMTR_SEED"); s && *s) {
    char* end = nullptr;
    const auto v = std::strtoull(s, &end, 10);
    if (*end != '\0') throw Error("AGMTR_SEED must be a non-negative integer");
    config.seed = v;
  }
}

double poly_lr(double base, int64_t iter, int64_t total, double power) {
  if (total <= 0) throw Error("poly_lr: total must be positive");
  const double frac = std::clamp(static_cast<double>(iter) / static_cast<double>(total), 0.0, 1.0);
  return base * std::pow(1.0 - frac, power);
}

void SgdMomentum::step(ParamRegistry& params, double lr) {
  for (auto& [name, p] : params) {
    if (!p.trainable || p.grad.shape() != p.value.shape()) continue;
    auto& v = velocity_[name];
    if (v.shape() != p.value.shape()) v = Tensor(p.value.shape());
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      v[i] = momentum_ * v[i] + p.grad[i] + weight_decay_ * p.value[i];
      p.value[i] -= lr * v[i];
    }
  }
}

namespace {

Rng stream(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(a),
                    static_cast<uint32_t>(b), static_cast<uint32_t>(c)};
  return Rng(seq);
}

}  // namespace

TrainResult train(const RunConfig& config, const Dataset& dataset, const LogSink& sink) {
  config.validate();
  TrainResult out;
  init_model_params(out.params, config.model, config.seed);
  const auto split = split_folds(dataset.n_classes(), config.n_folds);
  Rng rng = stream(config.seed, static_cast<uint64_t>(config.fold), 1, 0);
  Rng degrade_rng = stream(config.seed, static_cast<uint64_t>(config.fold), 2, 0);
  SgdMomentum opt(config.momentum, config.weight_decay);
  const auto total = config.total_iters();
  const int n_u = static_cast<int>(config.model.n_unlabeled());
  for (int64_t it = 0; it < total; ++it) {
    out.params.zero_grad();
    double loss = 0.0;
    std::vector<int> classes;
    for (int b = 0; b < config.batch; ++b) {
      const auto ids = sample_episode(dataset, split, config.fold, Phase::kTrain, config.shots, n_u, rng);
      classes.push_back(ids.class_id);
      const auto input = make_episode_input(dataset, ids, MaskScheme::kDense, degrade_rng);
      ad::Tape tape;
      const auto r = forward(tape, out.params, config.model, input);
      const double l = r.loss.value()[0];
      if (!std::isfinite(l))
        throw NonFiniteLoss("train: non-finite loss at iter " + std::to_string(it) + " (class " +
                            std::to_string(ids.class_id) + ", query item " + std::to_string(ids.query) + ")");
      loss += l / config.batch;
      tape.backward(r.loss);
      out.params.accumulate_grads(tape, 1.0 / config.batch);
    }
    TrainLog entry{it, poly_lr(config.lr, it, total, config.poly_power), loss, -1.0, std::move(classes)};
    opt.step(out.params, entry.lr);
    if (config.eval_every > 0 && ((it + 1) % config.eval_every == 0 || it + 1 == total)) {
      EvalOptions eo{config.fold, config.n_folds, Phase::kTest, config.eval_episodes, config.shots, config.mask_scheme, config.seed};
      entry.eval_miou = miou(evaluate(out.params, config.model, dataset, eo));
    }
    out.log.push_back(entry);
    if (sink) sink(entry);
  }
  return out;
}

MetricAccumulator evaluate(const ParamRegistry& params, const ModelConfig& model, const Dataset& dataset,
                           const EvalOptions& o) {
  const auto split = split_folds(dataset.n_classes(), o.n_folds);
  const auto phase_id = o.phase == Phase::kTest ? 1u : 0u;
  Rng rng = stream(o.seed, static_cast<uint64_t>(o.fold), 100 + phase_id, static_cast<uint64_t>(o.shots));
  Rng degrade_rng = stream(o.seed, static_cast<uint64_t>(o.fold), 200 + phase_id, static_cast<uint64_t>(o.shots));
  MetricAccumulator acc;
  const int n_u = static_cast<int>(model.n_unlabeled());
  for (int e = 0; e < o.episodes; ++e) {
    const auto ids = sample_episode(dataset, split, o.fold, o.phase, o.shots, n_u, rng);
    const auto input = make_episode_input(dataset, ids, o.scheme, degrade_rng);
    ad::Tape tape;
    tape.set_grad_enabled(false);
    const auto r = forward(tape, params, model, input);
    acc.add(ids.class_id, predicted_mask(r, model), input.query_mask);
  }
  return acc;
}

void save_checkpoint(const std::filesystem::path& dir, const ParamRegistry& params, const RunConfig& config) {
  params.save(dir);
  std::ofstream out(dir / "run.json");
  out << run_config_to_json(config) << "\n";
  if (!out) throw IoError("cannot write run.json in " + dir.string());
}

RunConfig load_checkpoint(const std::filesystem::path& dir, ParamRegistry& params) {
  std::ifstream in(dir / "run.json");
  if (!in) throw IoError("missing run.json in " + dir.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig config = run_config_from_json(ss.str());
  init_model_params(params, config.model, config.seed);
  params.load(dir);
  return config;
}

}  // namespace agmtr
