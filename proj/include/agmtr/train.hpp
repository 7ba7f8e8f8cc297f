#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "agmtr/dataset.hpp"
#include "agmtr/episode.hpp"
#include "agmtr/metrics.hpp"
#include "agmtr/model.hpp"
#include "agmtr/params.hpp"

namespace agmtr {

struct RunConfig {
  ModelConfig model;
  double lr = 0.002;
  double weight_decay = 0.00005;
  double momentum = 0.9;
  double poly_power = 0.9;
  int batch = 8;
  int epochs = 5;
  int episodes_per_epoch = 600;
  int shots = 1;
  uint64_t seed = 0;
  int fold = 0;
  int n_folds = 3;
  int eval_episodes = 200;
  /// Evaluate on unseen classes every this many iterations (0 = never).
  int eval_every = 0;
  MaskScheme mask_scheme = MaskScheme::kDense;

  int64_t total_iters() const;
  void validate() const;
};

std::string run_config_to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const std::string& text);
/// AGMTR_SEED, when set, replaces the configured seed.
void apply_seed_override(RunConfig& config);

/// base·(1 − iter/total)^power.
double poly_lr(double base, int64_t iter, int64_t total, double power);

/// Heavy-ball SGD with L2 weight decay folded into the gradient.
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(ParamRegistry& params, double lr);

 private:
  double momentum_, weight_decay_;
  std::map<std::string, Tensor> velocity_;
};

struct TrainLog {
  int64_t iter = 0;
  double lr = 0.0;
  double loss = 0.0;
  double eval_miou = -1.0;  // set on evaluation iterations
  std::vector<int> classes;  // class of each episode in the batch
};

struct TrainResult {
  ParamRegistry params;
  std::vector<TrainLog> log;
};

using LogSink = std::function<void(const TrainLog&)>;

/// Parameters are initialised from `config.seed`; episodes come from the
/// fold's seen classes. Throws NonFiniteLoss on a NaN/Inf episode loss.
TrainResult train(const RunConfig& config, const Dataset& dataset, const LogSink& sink = {});

struct EvalOptions {
  int fold = 0;
  int n_folds = 3;
  Phase phase = Phase::kTest;
  int episodes = 200;
  int shots = 1;
  MaskScheme scheme = MaskScheme::kDense;
  uint64_t seed = 0;
};

/// Episode sampling depends only on (seed, fold, phase, shots, N_u), so two
/// models evaluated with the same options see the same supports and queries.
MetricAccumulator evaluate(const ParamRegistry& params, const ModelConfig& model, const Dataset& dataset,
                           const EvalOptions& options);

/// Directory with the parameter tensors and run.json.
void save_checkpoint(const std::filesystem::path& dir, const ParamRegistry& params, const RunConfig& config);
RunConfig load_checkpoint(const std::filesystem::path& dir, ParamRegistry& params);

}  // namespace agmtr
