// Acceptance run: one PASS/FAIL line per criterion.
//
//   agmtr_acceptance [--only 1,5,11] [--calibration tests/calibration.json]
//
// Criteria 6-9 share one benchmark: for seed s in {0,1,2} on fold s, five
// component configurations are trained and evaluated on 200 unseen-class
// episodes. The benchmark takes most of the runtime.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "agmtr/errors.hpp"
#include "agmtr/numerics.hpp"
#include "agmtr/sinkhorn.hpp"
#include "agmtr/train.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace agmtr;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& title, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS" : "FAIL") << " " << std::setw(2) << id << " " << title << ": " << detail << std::endl;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

Tensor random_cost(int64_t n, int64_t m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor c({n, m});
  for (int64_t i = 0; i < c.numel(); ++i) c[i] = u(rng);
  return c;
}

// 1. Library objective vs the long-double dual Newton oracle.
void sinkhorn_correctness() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int64_t> rows(1, 4), cols(1, 16);
  SinkhornConfig cfg;
  cfg.lambda = 20.0;
  cfg.max_iters = 100000;
  double worst_obj = 0.0, worst_res = 0.0, solver_time = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t n = trial == 0 ? 4 : rows(rng), m = trial == 0 ? 16 : cols(rng);
    const Tensor cost = random_cost(n, m, rng);
    const auto t0 = Clock::now();
    const auto plan = sinkhorn_solve(cost, cfg);
    solver_time += seconds_since(t0);
    const auto ref = oracle::entropic_ot(oracle::from_tensor(cost), cfg.lambda);
    const double ours = entropic_objective(plan.matrix, cost, cfg.lambda);
    const double theirs = static_cast<double>(oracle::entropic_objective(ref, oracle::from_tensor(cost), cfg.lambda));
    worst_obj = std::max(worst_obj, std::abs(ours - theirs));
    worst_res = std::max(worst_res, marginal_residual(plan.matrix));
  }
  report(1, "sinkhorn vs oracle", worst_obj <= 1e-4 && worst_res <= 1e-6 && solver_time < 1.0,
         "max |dobj| " + fmt(worst_obj) + ", max residual " + fmt(worst_res) + ", solver time " + fmt(solver_time) + " s");
}

// 2. λ = 2000 plans vs vertex enumeration on costs whose optimum is unique
// with a margin: the second-best vertex costs at least 0.01 more, so the
// entropic plan is within e^-20 of the vertex.
void ot_vs_exact() {
  std::mt19937_64 rng(202);
  SinkhornConfig cfg;
  cfg.lambda = 2000.0;
  cfg.max_iters = 200000;
  double worst = 0.0;
  int cases = 0, skipped = 0;
  for (int64_t n : {2, 3}) {
    int accepted = 0;
    while (accepted < 25) {
      const Tensor cost = random_cost(n, n, rng);
      const auto exact = oracle::exact_ot(oracle::from_tensor(cost));
      if (!exact.unique || exact.second_cost - exact.cost < 0.01L) {
        ++skipped;
        continue;
      }
      ++accepted;
      ++cases;
      const auto plan = sinkhorn_solve(cost, cfg);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j)
          worst = std::max(worst, std::abs(plan.matrix.at(i, j) - static_cast<double>(exact.plan[i][j])));
    }
  }
  report(2, "OT vs exact", worst <= 1e-3,
         std::to_string(cases) + " costs (" + std::to_string(skipped) + " without a clear unique optimum skipped), max entry error " +
             fmt(worst));
}

SyntheticDatasetSpec benchmark_spec(uint64_t seed) {
  SyntheticDatasetSpec spec;
  spec.seed = seed;
  return spec;
}

// 3 and 4 on untrained and briefly perturbed models over random test
// episodes of the full configuration.
void episode_invariants() {
  ModelConfig model;
  const SlicConfig slic{.n_segments = model.aad.n_segments};
  SyntheticDatasetSpec spec = benchmark_spec(7);
  spec.images_per_class = 20;
  const Dataset ds = make_dataset(spec, true, slic);
  const auto split = split_folds(ds.n_classes(), 3);
  ParamRegistry params;
  init_model_params(params, model, 7);

  double worst_row = 0.0, worst_bg = 0.0;
  bool all_converged = true, partitions = true;
  int episodes = 0, blocks = 0;
  Rng rng(17), drng(18);
  for (int e = 0; e < 30; ++e) {
    const auto ids = sample_episode(ds, split, e % 3, Phase::kTest, 1 + e % 2, static_cast<int>(model.n_unlabeled()), rng);
    const auto input = make_episode_input(ds, ids, MaskScheme::kDense, drng);
    ad::Tape tape;
    tape.set_grad_enabled(false);
    const auto r = forward(tape, params, model, input);
    ++episodes;
    const Tensor& plan = r.ale.plan.matrix;
    all_converged = all_converged && r.ale.plan.converged;
    for (int64_t i = 0; i < plan.dim(0); ++i) {
      double row = 0.0;
      for (int64_t j = 0; j < plan.dim(1); ++j) row += plan.at(i, j);
      worst_row = std::max(worst_row, std::abs(row - 1.0 / static_cast<double>(model.ale.n_agents)));
    }
    const Tensor& att = r.ale.attention.value();
    const Tensor& local = r.ale.local_attention;
    for (int64_t p = 0; p < r.support_grid.size(); ++p) {
      if (r.support_grid[p]) continue;
      for (int64_t a = 0; a < att.dim(0); ++a) {
        worst_bg = std::max({worst_bg, std::abs(att.at(a, p)), std::abs(local.at(a, p))});
      }
    }
    const auto& enc = model.encoder;
    for (const auto& b : r.decoder.blocks) {
      ++blocks;
      partitions = partitions && b.masks(enc.grid_height(), enc.grid_width(), r.agents.value().dim(0)).is_partition();
    }
  }
  report(3, "equal allocation", worst_row <= 1e-6 && all_converged,
         std::to_string(episodes) + " episodes, max |row mass - 1/N_a| " + fmt(worst_row) +
             (all_converged ? "" : ", some plans did not converge"));
  report(4, "masking exactness", worst_bg == 0.0 && partitions,
         "max background attention " + fmt(worst_bg) + ", " + std::to_string(blocks) + " SAB masks " +
             (partitions ? "all partitions" : "NOT all partitions"));
}

// 5. Finite differences with the stop-gradient values of the first pass
// replayed, so both sides differentiate the same function.
void gradient_check() {
  const auto t0 = Clock::now();
  ModelConfig model;
  model.encoder.image_height = model.encoder.image_width = 32;
  model.encoder.patch_size = 4;
  model.encoder.dim = 8;
  model.encoder.heads = 2;
  model.encoder.depth = 1;
  model.ale.n_agents = 3;
  model.sad.n_blocks = 2;
  model.aad.n_unlabeled = 2;
  model.aad.n_segments = 12;
  SyntheticDatasetSpec spec;
  spec.height = spec.width = 32;
  spec.min_radius = 10;
  spec.max_radius = 14;
  spec.images_per_class = 6;
  spec.seed = 5;
  const Dataset ds = make_dataset(spec, true, SlicConfig{.n_segments = model.aad.n_segments});
  const auto split = split_folds(ds.n_classes(), 3);
  Rng rng(3), drng(4);
  const auto ids = sample_episode(ds, split, 0, Phase::kTrain, 1, 2, rng);
  const auto input = make_episode_input(ds, ids, MaskScheme::kDense, drng);

  double worst = 0.0;
  int64_t checked = 0;
  std::string detail;
  for (bool use_ot : {true, false}) {
    model.ale.use_ot = use_ot;
    ParamRegistry params;
    init_model_params(params, model, 11);
    StopGradCache cache;
    int calls = 0;
    const LossFn loss = [&](ad::Tape& tape, const ParamRegistry& p) {
      if (calls++ > 0) cache.start_replay();
      return forward(tape, p, model, input, &cache).loss;
    };
    const auto rep = check_gradients(loss, params, 1e-5, 1e-6, 0, 2);
    worst = std::max(worst, rep.max_rel_error);
    checked += rep.checked;
    detail += std::string(use_ot ? "OT" : "no OT") + " max rel " + fmt(rep.max_rel_error) + " (" + rep.worst_param + " " +
              fmt(rep.worst_analytic) + " vs " + fmt(rep.worst_numeric) + "), ";
  }
  const double elapsed = seconds_since(t0);
  report(5, "gradient check", worst < 1e-4 && elapsed < 300.0,
         detail + std::to_string(checked) + " entries, " + fmt(elapsed) + " s");
}

// Benchmark shared by 6-9.
struct Variant {
  std::string name;
  bool ale, aad, sad;
};
const std::vector<Variant> kVariants = {
    {"full", true, true, true},
    {"ale+aad", true, true, false},
    {"ale+sad", true, false, true},
    {"ale", true, false, false},
    {"baseline", false, false, false},
};

struct SeedResult {
  std::map<std::string, double> unseen;
  double seen = 0.0, k5 = 0.0, scribble = 0.0, bbox = 0.0;
};

RunConfig benchmark_config(const Variant& v, uint64_t seed) {
  RunConfig rc;
  rc.seed = seed;
  rc.fold = static_cast<int>(seed);
  // calibrated for the toy encoder trained from scratch; the default is the
  // pretrained-backbone value
  rc.lr = 0.01;
  rc.model.use_ale = v.ale;
  rc.model.use_aad = v.aad;
  rc.model.use_sad = v.sad;
  return rc;
}

std::vector<SeedResult> run_benchmark(double& elapsed) {
  const auto t0 = Clock::now();
  std::vector<SeedResult> out;
  for (uint64_t seed = 0; seed < 3; ++seed) {
    const Dataset ds = make_dataset(benchmark_spec(seed), true, SlicConfig{.n_segments = ModelConfig{}.aad.n_segments});
    SeedResult res;
    for (const auto& v : kVariants) {
      const auto ts = Clock::now();
      const RunConfig rc = benchmark_config(v, seed);
      const auto trained = train(rc, ds);
      EvalOptions eo{rc.fold, rc.n_folds, Phase::kTest, 200, 1, MaskScheme::kDense, rc.seed};
      res.unseen[v.name] = miou(evaluate(trained.params, rc.model, ds, eo));
      if (v.name == "full") {
        auto seen = eo;
        seen.phase = Phase::kTrain;
        res.seen = miou(evaluate(trained.params, rc.model, ds, seen));
        auto k5 = eo;
        k5.shots = 5;
        res.k5 = miou(evaluate(trained.params, rc.model, ds, k5));
        auto weak = eo;
        weak.scheme = MaskScheme::kScribble;
        res.scribble = miou(evaluate(trained.params, rc.model, ds, weak));
        weak.scheme = MaskScheme::kBbox;
        res.bbox = miou(evaluate(trained.params, rc.model, ds, weak));
      }
      std::cout << "  seed " << seed << " " << std::setw(8) << v.name << " unseen " << fmt(res.unseen[v.name])
                << (v.name == "full" ? "  seen " + fmt(res.seen) + "  K=5 " + fmt(res.k5) + "  scribble " +
                                           fmt(res.scribble) + "  bbox " + fmt(res.bbox)
                                     : "")
                << "  (" << fmt(seconds_since(ts), 3) << " s)" << std::endl;
    }
    out.push_back(res);
  }
  elapsed = seconds_since(t0);
  return out;
}

double mean(const std::vector<SeedResult>& rs, const std::function<double(const SeedResult&)>& f) {
  double s = 0.0;
  for (const auto& r : rs) s += f(r);
  return s / static_cast<double>(rs.size());
}

void benchmark_criteria(const std::set<int>& want, const std::filesystem::path& calibration) {
  double elapsed = 0.0;
  const auto rs = run_benchmark(elapsed);
  auto unseen = [&](const std::string& v) { return mean(rs, [&](const SeedResult& r) { return r.unseen.at(v); }); };

  if (want.count(6)) {
    const double band = -0.005;
    const double g1 = unseen("full") - unseen("ale+aad"), g2 = unseen("full") - unseen("ale+sad"),
                 g3 = unseen("ale") - unseen("baseline");
    report(6, "degradation chain", g1 >= band && g2 >= band && g3 >= band && elapsed < 7200.0,
           "full-(ale+aad) " + fmt(g1) + ", full-(ale+sad) " + fmt(g2) + ", ale-baseline " + fmt(g3) + ", benchmark " +
               fmt(elapsed, 5) + " s");
  }
  if (want.count(7)) {
    const double seen = mean(rs, [](const SeedResult& r) { return r.seen; }), un = unseen("full");
    bool pass = seen >= 0.85 && un >= 0.60;
    std::string note;
    if (std::filesystem::exists(calibration)) {
      std::ifstream in(calibration);
      const auto j = nlohmann::json::parse(in);
      const double cs = j.at("seen").get<double>(), cu = j.at("unseen").get<double>();
      pass = pass && seen >= cs - 0.02 && un >= cu - 0.02;
      note = ", calibration seen " + fmt(cs) + " unseen " + fmt(cu);
    } else {
      std::ofstream(calibration) << nlohmann::json{{"seen", seen}, {"unseen", un}}.dump(2) << "\n";
      note = ", recorded as calibration in " + calibration.string();
    }
    report(7, "learning at desk scale", pass, "seen " + fmt(seen) + ", unseen " + fmt(un) + note);
  }
  if (want.count(8)) {
    const double k1 = unseen("full"), k5 = mean(rs, [](const SeedResult& r) { return r.k5; });
    report(8, "K-shot monotonicity", k5 >= k1, "K=1 " + fmt(k1) + ", K=5 " + fmt(k5));
  }
  if (want.count(9)) {
    const double dense = unseen("full"), scribble = mean(rs, [](const SeedResult& r) { return r.scribble; }),
                 bbox = mean(rs, [](const SeedResult& r) { return r.bbox; });
    report(9, "weak-label ordering", dense >= scribble && scribble >= bbox,
           "dense " + fmt(dense) + ", scribble " + fmt(scribble) + ", bbox " + fmt(bbox));
  }
}

// 10. use_aad with zero unlabeled images vs use_aad off, short training.
void nu_zero_identity() {
  SyntheticDatasetSpec spec = benchmark_spec(4);
  spec.images_per_class = 30;
  const Dataset ds = make_dataset(spec, true, SlicConfig{});
  RunConfig a;
  a.seed = 4;
  a.fold = 1;
  a.epochs = 1;
  a.episodes_per_epoch = 48;
  RunConfig b = a;
  a.model.aad.n_unlabeled = 0;
  b.model.use_aad = false;
  const auto ra = train(a, ds), rb = train(b, ds);
  bool same = true;
  int shared = 0;
  for (const auto& [name, p] : rb.params) {
    if (!ra.params.contains(name)) {
      same = false;
      continue;
    }
    ++shared;
    const Tensor& x = ra.params.value(name);
    same = same && x.shape() == p.value.shape() &&
           std::equal(x.ptr(), x.ptr() + x.numel(), p.value.ptr());
  }
  bool losses = ra.log.size() == rb.log.size();
  for (size_t i = 0; losses && i < ra.log.size(); ++i) losses = ra.log[i].loss == rb.log[i].loss;
  EvalOptions eo{a.fold, a.n_folds, Phase::kTest, 40, 1, MaskScheme::kDense, a.seed};
  const bool eval_same = evaluate(ra.params, a.model, ds, eo) == evaluate(rb.params, b.model, ds, eo);
  report(10, "N_u=0 identity", same && losses && eval_same,
         std::to_string(shared) + " shared parameters " + (same ? "bit-identical" : "DIFFER") + ", losses " +
             (losses ? "identical" : "DIFFER") + ", evaluation " + (eval_same ? "identical" : "DIFFERS"));
}

// 11. Crafted cases with values worked out by hand.
void metric_oracle() {
  struct Case {
    std::vector<oracle::Episode> episodes;
    double miou, fb;
  };
  auto ep = [](int c, std::vector<int> pred, std::vector<int> truth) { return oracle::Episode{c, std::move(pred), std::move(truth)}; };
  // Pixel counts below: I = intersection, U = union for the class (FG) and
  // the complement (BG).
  const std::vector<Case> cases = {
      // perfect: FG 2/2, BG 2/2
      {{ep(0, {1, 1, 0, 0}, {1, 1, 0, 0})}, 1.0, 1.0},
      // FG 1/2, BG 2/3
      {{ep(0, {1, 1, 0, 0}, {1, 0, 0, 0})}, 0.5, (0.5 + 2.0 / 3.0) / 2.0},
      // everything wrong: FG 0/4, BG 0/4
      {{ep(0, {1, 1, 0, 0}, {0, 0, 1, 1})}, 0.0, 0.0},
      // empty prediction and empty truth: FG empty union counts 1, BG 4/4
      {{ep(0, {0, 0, 0, 0}, {0, 0, 0, 0})}, 1.0, 1.0},
      // nothing predicted: FG 0/2, BG 2/4
      {{ep(0, {0, 0, 0, 0}, {1, 1, 0, 0})}, 0.0, 0.25},
      // two classes: class 0 FG 1/1, class 1 FG 1/3; pooled FG 2/4, BG 4/6
      {{ep(0, {1, 0, 0, 0}, {1, 0, 0, 0}), ep(1, {1, 1, 1, 0}, {1, 0, 0, 0})}, (1.0 + 1.0 / 3.0) / 2.0, (0.5 + 4.0 / 6.0) / 2.0},
      // pooling within a class: episodes 1/1 and 1/3 give class IoU 2/4
      {{ep(2, {1, 0, 0, 0}, {1, 0, 0, 0}), ep(2, {1, 1, 1, 0}, {1, 0, 0, 0})}, 0.5, (0.5 + 4.0 / 6.0) / 2.0},
      // all-foreground image predicted perfectly: FG 4/4, BG empty union 1
      {{ep(3, {1, 1, 1, 1}, {1, 1, 1, 1})}, 1.0, 1.0},
      // three classes 1/2, 1/4, 0/1; pooled FG 2/7, BG 2/3 + 0/3 + 3/4 = 5/10
      {{ep(0, {1, 1, 0, 0}, {1, 0, 0, 0}), ep(1, {1, 1, 1, 1}, {1, 0, 0, 0}), ep(2, {0, 0, 0, 0}, {1, 0, 0, 0})},
       (0.5 + 0.25 + 0.0) / 3.0,
       (2.0 / 7.0 + 0.5) / 2.0},
      // 3x3 image, truth a plus, prediction a column: FG 3/5, BG 4/6
      {{ep(5, {0, 1, 0, 0, 1, 0, 0, 1, 0}, {0, 1, 0, 1, 1, 1, 0, 1, 0})}, 3.0 / 5.0, (3.0 / 5.0 + 4.0 / 6.0) / 2.0},
  };
  int exact = 0, agree = 0;
  for (const auto& c : cases) {
    MetricAccumulator acc;
    for (const auto& e : c.episodes) {
      const int64_t n = static_cast<int64_t>(e.pred.size());
      const int64_t w = n == 9 ? 3 : 2, h = n / w;
      BinaryMask p(h, w), t(h, w);
      for (int64_t i = 0; i < n; ++i) {
        p.set(i, e.pred[static_cast<size_t>(i)] != 0);
        t.set(i, e.truth[static_cast<size_t>(i)] != 0);
      }
      acc.add(e.class_id, p, t);
    }
    const auto ref = oracle::iou_scores(c.episodes);
    exact += miou(acc) == c.miou && fb_iou(acc) == c.fb;
    agree += ref.miou == c.miou && ref.fb_iou == c.fb;
  }
  report(11, "metric oracle", exact == static_cast<int>(cases.size()) && agree == static_cast<int>(cases.size()),
         std::to_string(exact) + "/" + std::to_string(cases.size()) + " exact matches (independent recount " +
             std::to_string(agree) + "/" + std::to_string(cases.size()) + ")");
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  set_warnings_enabled(false);
  CLI::App app{"AgMTR acceptance criteria"};
  std::string only, calibration = "calibration.json";
  app.add_option("--only", only, "Comma list of criteria to run (default all)");
  app.add_option("--calibration", calibration, "Recorded seen/unseen mIoU for the regression check");
  CLI11_PARSE(app, argc, argv);

  std::set<int> want;
  std::stringstream ss(only);
  for (std::string t; std::getline(ss, t, ',');)
    if (!t.empty()) want.insert(std::stoi(t));
  if (want.empty())
    for (int i = 1; i <= 11; ++i) want.insert(i);

  try {
    if (want.count(1)) sinkhorn_correctness();
    if (want.count(2)) ot_vs_exact();
    if (want.count(3) || want.count(4)) episode_invariants();
    if (want.count(5)) gradient_check();
    if (want.count(10)) nu_zero_identity();
    if (want.count(11)) metric_oracle();
    if (want.count(6) || want.count(7) || want.count(8) || want.count(9)) benchmark_criteria(want, calibration);
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  return failures == 0 ? 0 : 1;
}
