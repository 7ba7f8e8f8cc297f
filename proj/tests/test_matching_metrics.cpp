#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "agmtr/matching.hpp"
#include "agmtr/metrics.hpp"
#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"

using namespace agmtr;
using ad::Tape;
using ad::Var;

namespace {

Tensor rnd(Shape s, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = n(rng);
  return t;
}

BinaryMask random_mask(int64_t h, int64_t w, std::mt19937_64& rng, double p) {
  std::bernoulli_distribution b(p);
  BinaryMask m(h, w);
  for (int64_t i = 0; i < h * w; ++i) m.set(i, b(rng));
  return m;
}

}  // namespace

TEST_SUITE("matching_metrics") {
  TEST_CASE("prediction probabilities sum to one and follow the hard mask") {
    Tape t;
    const auto pred = predict(t.constant(rnd({12, 5}, 1)), t.constant(rnd({4, 5}, 2)), 3, 4, 10);
    for (int i = 0; i < 12; ++i) {
      CHECK(pred.probs.at(i, 0) + pred.probs.at(i, 1) == doctest::Approx(1.0).epsilon(1e-15));
      CHECK((pred.probs.at(i, 1) > 0.5) == (pred.hard[i] == 1));
    }
  }

  TEST_CASE("pixel equal to a foreground agent and orthogonal to the background wins") {
    Tape t;
    const auto pred = predict(t.constant(Tensor({1, 3}, {0, 2, 0})), t.constant(Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1})), 1, 1, 10);
    CHECK(pred.hard[0] == 1);
  }

  TEST_CASE("hand-set 2x2 scores") {
    Tape t;
    // Agents: fg0 = e0, fg1 = e1, bg = e2. Query rows are unit vectors so the
    // scores are their coordinates.
    const double a = 0.6, b = 0.8;
    const Tensor q({4, 3}, {1, 0, 0, 0, a, b, a, 0, b, 0, 0, 1});
    const auto pred = predict(t.constant(q), t.constant(Tensor::identity(3)), 2, 2, 10);
    const double fg[4] = {1, a, a, 0}, bg[4] = {0, b, b, 1};
    for (int i = 0; i < 4; ++i) {
      const double pf = 1.0 / (1.0 + std::exp(-10 * (fg[i] - bg[i])));
      CHECK(pred.probs.at(i, 1) == doctest::Approx(pf).epsilon(1e-12));
      CHECK(pred.hard[i] == (fg[i] > bg[i]));
    }
  }

  TEST_CASE("hard mask is invariant under a monotone transform of the scores") {
    // Scaling query rows does not move cosines; scaling agents neither. The
    // logit temperature is a monotone map of the margin.
    Tape t;
    const Tensor q = rnd({20, 4}, 3), agents = rnd({3, 4}, 4);
    const auto base = predict(t.constant(q), t.constant(agents), 4, 5, 10);
    for (double tau : {0.1, 1.0, 50.0}) CHECK(predict(t.constant(q), t.constant(agents), 4, 5, tau).hard == base.hard);
    Tensor q2 = q;
    for (auto& v : q2.data()) v *= 3.5;
    CHECK(predict(t.constant(q2), t.constant(agents), 4, 5, 10).hard == base.hard);
  }

  TEST_CASE("total loss") {
    Tape t;
    const Var main = t.constant(Tensor::scalar(0.5)), asl = t.constant(Tensor::scalar(0.25));
    CHECK(total_loss(main, asl, 0.0).value()[0] == 0.5);
    CHECK(total_loss(main, asl, 0.8).value()[0] == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(total_loss(main, Var{}, 0.8).value()[0] == 0.5);
    CHECK_THROWS(total_loss(main, asl, -1.0));
    // Perfect matching and block scores: loss near zero.
    const Tensor y({2}, {1, 0});
    const Var s = t.constant(Tensor({2, 2}, {1, -1, -1, 1}));
    const Var l = total_loss(ad::bce_two_way(ad::slice_rows(s, 1, 1), ad::max_over_rows(s, 0, 1), y, 10),
                             ad::bce_two_way(ad::slice_rows(s, 1, 1), ad::max_over_rows(s, 0, 1), y, 10), 0.8);
    CHECK(l.value()[0] < 1e-8);
  }

  TEST_CASE("nearest upsampling") {
    const BinaryMask m(1, 2, {1, 0});
    const BinaryMask up = upsample_nearest(m, 2);
    CHECK(up == BinaryMask(2, 4, {1, 1, 0, 0, 1, 1, 0, 0}));
  }

  TEST_CASE("metric examples") {
    MetricAccumulator perfect;
    std::mt19937_64 rng(5);
    for (int e = 0; e < 6; ++e) {
      const BinaryMask m = random_mask(4, 4, rng, 0.4);
      perfect.add(e % 3, m, m);
    }
    CHECK(miou(perfect) == 1.0);
    CHECK(fb_iou(perfect) == 1.0);

    MetricAccumulator disjoint;
    disjoint.add(0, BinaryMask(1, 4, {1, 1, 0, 0}), BinaryMask(1, 4, {0, 0, 1, 1}));
    CHECK(disjoint.classes().at(0).iou() == 0.0);

    MetricAccumulator third;
    third.add(0, BinaryMask(1, 4, {1, 1, 0, 0}), BinaryMask(1, 4, {0, 1, 1, 0}));
    CHECK(third.classes().at(0).iou() == doctest::Approx(1.0 / 3).epsilon(1e-15));

    CHECK_THROWS_AS(miou(MetricAccumulator{}), EmptyAccumulator);
    CHECK_THROWS_AS(fb_iou(MetricAccumulator{}), EmptyAccumulator);
    CHECK_THROWS_AS(third.add(0, BinaryMask(1, 3), BinaryMask(1, 4)), ShapeMismatch);
  }

  TEST_CASE("metrics agree with the oracle, stay in [0,1] and ignore episode order") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<oracle::Episode> eps;
      std::vector<std::pair<BinaryMask, BinaryMask>> masks;
      std::vector<int> cls;
      for (int e = 0; e < 12; ++e) {
        const BinaryMask p = random_mask(5, 5, rng, 0.3), g = random_mask(5, 5, rng, 0.4);
        oracle::Episode ep{e % 4, {}, {}};
        for (int i = 0; i < 25; ++i) {
          ep.pred.push_back(p[i]);
          ep.truth.push_back(g[i]);
        }
        eps.push_back(ep);
        masks.push_back({p, g});
        cls.push_back(e % 4);
      }
      MetricAccumulator acc;
      for (size_t e = 0; e < masks.size(); ++e) acc.add(cls[e], masks[e].first, masks[e].second);
      const auto ref = oracle::iou_scores(eps);
      CHECK(miou(acc) == doctest::Approx(ref.miou).epsilon(1e-14));
      CHECK(fb_iou(acc) == doctest::Approx(ref.fb_iou).epsilon(1e-14));
      CHECK(miou(acc) >= 0.0);
      CHECK(miou(acc) <= 1.0);
      for (const auto& [c, v] : acc.classes()) {
        CHECK(v.iou() >= 0.0);
        CHECK(v.iou() <= 1.0);
      }

      std::vector<size_t> order(masks.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), rng);
      MetricAccumulator shuffled;
      for (auto e : order) shuffled.add(cls[e], masks[e].first, masks[e].second);
      CHECK(shuffled == acc);
      CHECK(miou(shuffled) == miou(acc));
      CHECK(fb_iou(shuffled) == fb_iou(acc));

      // Split and merge in either order.
      MetricAccumulator a, b;
      for (size_t e = 0; e < masks.size(); ++e) (e % 2 ? a : b).add(cls[e], masks[e].first, masks[e].second);
      MetricAccumulator ab = a, ba = b;
      ab.merge(b);
      ba.merge(a);
      CHECK(ab == acc);
      CHECK(ba == acc);
    }
  }

  TEST_CASE("JSON lines: one record per class plus a summary") {
    MetricAccumulator acc;
    acc.add(4, BinaryMask(1, 2, {1, 0}), BinaryMask(1, 2, {1, 1}));
    acc.add(7, BinaryMask(1, 2, {1, 0}), BinaryMask(1, 2, {1, 0}));
    std::istringstream in(metrics_json_lines(acc, 2));
    std::vector<nlohmann::json> recs;
    for (std::string line; std::getline(in, line);) recs.push_back(nlohmann::json::parse(line));
    REQUIRE(recs.size() == 3);
    CHECK(recs[0]["fold"] == 2);
    CHECK(recs[0]["class"] == 4);
    CHECK(recs[0]["iou"].get<double>() == 0.5);
    CHECK(recs[1]["class"] == 7);
    CHECK(recs[1]["iou"].get<double>() == 1.0);
    CHECK(recs[2]["summary"] == true);
    CHECK(recs[2]["miou"].get<double>() == 0.75);
    CHECK(recs[2]["episodes"] == 2);
  }
}
