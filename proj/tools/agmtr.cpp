// agmtr command line: dataset generation, training, evaluation, score-map
// dumps and component ablations.

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "agmtr/errors.hpp"
#include "agmtr/image_io.hpp"
#include "agmtr/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace agmtr;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void note_data_dir(const fs::path& ckpt, const fs::path& data) {
  std::ofstream(ckpt / "data.json") << nlohmann::json{{"data", fs::absolute(data).string()}}.dump() << "\n";
}

fs::path data_dir_for(const fs::path& ckpt, const std::string& given) {
  if (!given.empty()) return given;
  if (fs::exists(ckpt / "data.json")) return nlohmann::json::parse(slurp(ckpt / "data.json")).at("data").get<std::string>();
  throw Error("no --data given and the checkpoint does not record one");
}

Dataset load(const fs::path& dir, const ModelConfig& model) {
  SlicConfig sc;
  sc.n_segments = model.aad.n_segments;
  return load_dataset(dir, model.n_unlabeled() > 0, sc);
}

uint64_t seed_or_env(uint64_t seed) {
  RunConfig tmp;
  tmp.seed = seed;
  apply_seed_override(tmp);
  return tmp.seed;
}

void print_log(const TrainLog& l) {
  nlohmann::json j = {{"iter", l.iter}, {"lr", l.lr}, {"loss", l.loss}};
  if (l.eval_miou >= 0.0) j["eval_miou"] = l.eval_miou;
  std::cout << j.dump() << std::endl;
}

// Blue → red ramp over [-1, 1].
Tensor heatmap(const Tensor& scores, int64_t row, int64_t gh, int64_t gw, int64_t patch) {
  Tensor img({gh * patch, gw * patch, 3});
  for (int64_t y = 0; y < gh * patch; ++y)
    for (int64_t x = 0; x < gw * patch; ++x) {
      const double v = 0.5 * (1.0 + std::clamp(scores.at(row, (y / patch) * gw + x / patch), -1.0, 1.0));
      img.at(y, x, 0) = v;
      img.at(y, x, 1) = 1.0 - std::abs(2.0 * v - 1.0);
      img.at(y, x, 2) = 1.0 - v;
    }
  return img;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"AgMTR few-shot segmentation toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Render the synthetic shape dataset to disk");
  std::string spec_path, out_dir;
  gen->add_option("--spec", spec_path, "Dataset spec JSON (defaults if omitted)");
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* trn = app.add_subcommand("train", "Episodic training on the seen classes of one fold");
  std::string config_path, data_dir, ckpt_dir;
  int fold = -1;
  trn->add_option("--config", config_path, "Run config JSON");
  trn->add_option("--data", data_dir, "Dataset directory")->required();
  trn->add_option("--fold", fold, "Fold (overrides the config)");
  trn->add_option("--out", ckpt_dir, "Checkpoint directory")->required();

  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on test episodes");
  int episodes = 200, shots = 0;
  std::string scheme = "dense", json_out, phase = "test";
  evl->add_option("--ckpt", ckpt_dir, "Checkpoint directory")->required();
  evl->add_option("--data", data_dir, "Dataset directory (defaults to the one used in training)");
  evl->add_option("--fold", fold, "Fold (defaults to the training fold)");
  evl->add_option("--episodes", episodes, "Number of episodes");
  evl->add_option("--shots", shots, "Support images per episode (defaults to the training value)");
  evl->add_option("--mask-scheme", scheme, "Support labels: dense, bbox or scribble")
      ->check(CLI::IsMember({"dense", "bbox", "scribble"}));
  evl->add_option("--phase", phase, "test (unseen classes) or train (seen classes)")->check(CLI::IsMember({"test", "train"}));
  evl->add_option("--json", json_out, "Write JSON lines here instead of stdout");

  auto* epi = app.add_subcommand("episode", "Dump agent score maps of one test episode as PNG heatmaps");
  std::string dump_dir;
  epi->add_option("--ckpt", ckpt_dir, "Checkpoint directory")->required();
  epi->add_option("--data", data_dir, "Dataset directory");
  epi->add_option("--dump", dump_dir, "Output directory")->required();
  epi->add_option("--fold", fold, "Fold");

  auto* abl = app.add_subcommand("ablate", "Train and evaluate with a subset of the components");
  std::string components;
  abl->add_option("--components", components, "Comma list from ale,aad,sad; empty for the prototype baseline")->required();
  abl->add_option("--config", config_path, "Run config JSON");
  abl->add_option("--data", data_dir, "Dataset directory")->required();
  abl->add_option("--fold", fold, "Fold");
  abl->add_option("--episodes", episodes, "Test episodes");
  abl->add_option("--out", ckpt_dir, "Optional checkpoint directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      SyntheticDatasetSpec spec;
      if (!spec_path.empty()) spec = spec_from_json(slurp(spec_path));
      spec.seed = seed_or_env(spec.seed);
      generate_dataset(spec, out_dir);
      std::cout << "wrote " << spec.n_classes * spec.images_per_class << " images to " << out_dir << "\n";
      return 0;
    }

    if (trn->parsed() || abl->parsed()) {
      RunConfig config = config_path.empty() ? RunConfig{} : run_config_from_json(slurp(config_path));
      apply_seed_override(config);
      if (fold >= 0) config.fold = fold;
      if (abl->parsed()) {
        auto& m = config.model;
        m.use_ale = m.use_aad = m.use_sad = false;
        std::stringstream ss(components);
        for (std::string c; std::getline(ss, c, ',');) {
          if (c == "ale") m.use_ale = true;
          else if (c == "aad") m.use_aad = true;
          else if (c == "sad") m.use_sad = true;
          else if (!c.empty()) throw Error("unknown component: " + c);
        }
      }
      config.validate();
      const Dataset ds = load(data_dir, config.model);
      auto result = train(config, ds, print_log);
      if (!ckpt_dir.empty()) {
        save_checkpoint(ckpt_dir, result.params, config);
        note_data_dir(ckpt_dir, data_dir);
      }
      if (abl->parsed()) {
        EvalOptions eo{config.fold, config.n_folds, Phase::kTest, episodes, config.shots, config.mask_scheme, config.seed};
        const auto acc = evaluate(result.params, config.model, ds, eo);
        std::cout << metrics_json_lines(acc, config.fold);
      }
      return 0;
    }

    if (evl->parsed()) {
      ParamRegistry params;
      const RunConfig config = load_checkpoint(ckpt_dir, params);
      const Dataset ds = load(data_dir_for(ckpt_dir, data_dir), config.model);
      EvalOptions eo{fold >= 0 ? fold : config.fold, config.n_folds, phase == "test" ? Phase::kTest : Phase::kTrain,
                     episodes, shots > 0 ? shots : config.shots, parse_mask_scheme(scheme), seed_or_env(config.seed)};
      const auto lines = metrics_json_lines(evaluate(params, config.model, ds, eo), eo.fold);
      if (json_out.empty()) {
        std::cout << lines;
      } else {
        std::ofstream out(json_out);
        out << lines;
        if (!out) throw IoError("cannot write " + json_out);
      }
      return 0;
    }

    if (epi->parsed()) {
      ParamRegistry params;
      const RunConfig config = load_checkpoint(ckpt_dir, params);
      const Dataset ds = load(data_dir_for(ckpt_dir, data_dir), config.model);
      const auto split = split_folds(ds.n_classes(), config.n_folds);
      Rng rng(seed_or_env(config.seed)), drng(seed_or_env(config.seed) + 1);
      const auto ids = sample_episode(ds, split, fold >= 0 ? fold : config.fold, Phase::kTest, config.shots,
                                      static_cast<int>(config.model.n_unlabeled()), rng);
      const auto input = make_episode_input(ds, ids, MaskScheme::kDense, drng);
      ad::Tape tape;
      tape.set_grad_enabled(false);
      const auto r = forward(tape, params, config.model, input);
      fs::create_directories(dump_dir);
      const auto& enc = config.model.encoder;
      write_png_rgb(fs::path(dump_dir) / "query.png", input.query_image);
      write_png_mask(fs::path(dump_dir) / "query_mask.png", input.query_mask);
      write_png_rgb(fs::path(dump_dir) / "support.png", input.support_images.front());
      write_png_mask(fs::path(dump_dir) / "prediction.png", predicted_mask(r, config.model));
      const Tensor final_scores = ad::cosine_matrix(r.agents, r.query).value();
      for (int64_t a = 0; a < final_scores.dim(0); ++a) {
        const std::string name = a + 1 == final_scores.dim(0) ? "agent_bg.png" : "agent_" + std::to_string(a) + ".png";
        write_png_rgb(fs::path(dump_dir) / name, heatmap(final_scores, a, enc.grid_height(), enc.grid_width(), enc.patch_size));
      }
      for (size_t b = 0; b < r.decoder.blocks.size(); ++b) {
        const auto& s = r.decoder.blocks[b].scores.value();
        for (int64_t a = 0; a < s.dim(0); ++a)
          write_png_rgb(fs::path(dump_dir) / ("block" + std::to_string(b) + "_agent" + std::to_string(a) + ".png"),
                        heatmap(s, a, enc.grid_height(), enc.grid_width(), enc.patch_size));
      }
      std::cout << "class " << ids.class_id << ", " << final_scores.dim(0) << " agents, dumped to " << dump_dir << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "agmtr: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
