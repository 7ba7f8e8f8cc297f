#include <cmath>
#include <random>

#include "agmtr/aad.hpp"
#include "agmtr/numerics.hpp"
#include "doctest.h"

using namespace agmtr;
using ad::Tape;
using ad::Var;

namespace {

Tensor rnd(Shape s, uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, scale);
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = n(rng);
  return t;
}

SuperpixelLabels labels_of(int64_t h, int64_t w, std::vector<int32_t> l, int32_t count) {
  SuperpixelLabels s;
  s.height = h;
  s.width = w;
  s.labels = std::move(l);
  s.count = count;
  return s;
}

// Single-head GAT layer with residual, written out loop by loop.
Tensor gat_oracle(const Tensor& h, const Tensor& adj, const Tensor& w, const Tensor& asrc, const Tensor& adst, double slope) {
  const int64_t n = h.dim(0), c = h.dim(1);
  std::vector<std::vector<double>> wh(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(c), 0));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < c; ++k)
      for (int64_t q = 0; q < c; ++q) wh[i][k] += h.at(i, q) * w.at(q, k);
  Tensor out = h;
  for (int64_t i = 0; i < n; ++i) {
    std::vector<double> e(static_cast<size_t>(n), -INFINITY);
    double mx = -INFINITY;
    for (int64_t j = 0; j < n; ++j) {
      if (adj.at(i, j) == 0) continue;
      double s = 0;
      for (int64_t k = 0; k < c; ++k) s += asrc[k] * wh[i][k] + adst[k] * wh[j][k];
      e[j] = s > 0 ? s : slope * s;
      mx = std::max(mx, e[j]);
    }
    double z = 0;
    for (int64_t j = 0; j < n; ++j)
      if (adj.at(i, j) != 0) z += std::exp(e[j] - mx);
    for (int64_t j = 0; j < n; ++j) {
      if (adj.at(i, j) == 0) continue;
      const double a = std::exp(e[j] - mx) / z;
      for (int64_t k = 0; k < c; ++k) out.at(i, k) += a * wh[j][k];
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("aad") {
  TEST_CASE("prototypes: global mean, counts and hand pooling") {
    Tape t;
    const Tensor f = rnd({6, 3}, 1);
    const Tensor one = aad::unlabeled_prototypes(t.constant(f), labels_of(2, 3, {0, 0, 0, 0, 0, 0}, 1)).value();
    const Tensor mean = masked_average_pool(f.reshaped({2, 3, 3}), BinaryMask::ones(2, 3));
    for (int c = 0; c < 3; ++c) CHECK(one.at(0, c) == doctest::Approx(mean[c]).epsilon(1e-14));

    // Label 1 never occurs after downsampling: dropped.
    const auto sparse = labels_of(2, 3, {0, 0, 2, 2, 3, 3}, 4);
    const Tensor p = aad::unlabeled_prototypes(t.constant(f), sparse).value();
    CHECK(p.dim(0) == 3);
    const Tensor two = aad::unlabeled_prototypes({t.constant(f), t.constant(f)}, {sparse, sparse}).value();
    CHECK(two.dim(0) == 6);

    const Tensor hand =
        aad::unlabeled_prototypes(t.constant(Tensor({2, 1}, {1, 3})), labels_of(2, 1, {0, 1}, 2)).value();
    CHECK(hand.vec() == std::vector<double>{1, 3});
  }

  TEST_CASE("graph: identical, orthogonal, boundary cosine") {
    const auto full = aad::build_graph(Tensor({3, 2}, {1, 1, 1, 1, 1, 1}), 0.5);
    for (double v : full.adjacency.data()) CHECK(v == 1.0);
    const auto eye = aad::build_graph(Tensor::identity(3), 0.5);
    CHECK(eye.adjacency == Tensor::identity(3));
    // cos = 0.5 exactly: (1,0) vs (1/2, √3/2) differs in the last ulp, so use
    // a pair with an exact dyadic cosine: (1,0,0,0) vs (1,1,1,1) → 1/2.
    const auto edge = aad::build_graph(Tensor({2, 4}, {1, 0, 0, 0, 1, 1, 1, 1}), 0.5);
    CHECK(edge.adjacency.at(0, 1) == 0.0);
    CHECK(edge.adjacency.at(1, 0) == 0.0);
    const auto below = aad::build_graph(Tensor({2, 4}, {1, 0, 0, 0, 1, 1, 1, 1}), 0.49);
    CHECK(below.adjacency.at(0, 1) == 1.0);
  }

  TEST_CASE("graph invariants over random prototypes; zero rows isolated") {
    for (uint64_t s = 0; s < 20; ++s) {
      Tensor p = rnd({9, 4}, s);
      for (int c = 0; c < 4; ++c) p.at(3, c) = 0.0;
      const auto g = aad::build_graph(p, 0.3);
      CHECK(g.is_symmetric());
      CHECK(g.has_self_loops());
      for (int j = 0; j < 9; ++j)
        if (j != 3) CHECK(g.adjacency.at(3, j) == 0.0);
      for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j) {
          if (i == j || i == 3 || j == 3) continue;
          const bool edge = cosine_similarity(p.row(i).reshaped({4}), p.row(j).reshaped({4})) > 0.3;
          CHECK(g.adjacency.at(i, j) == (edge ? 1.0 : 0.0));
        }
    }
  }

  TEST_CASE("GAT matches a loop-by-loop oracle") {
    for (uint64_t s = 0; s < 5; ++s) {
      const Tensor h = rnd({7, 5}, 10 + s), w = rnd({5, 5}, 20 + s, 0.5), as = rnd({5, 1}, 30 + s), ad_ = rnd({5, 1}, 40 + s);
      const auto g = aad::build_graph(h, 0.1);
      Tape t;
      const Tensor mine =
          aad::gat_enhance(t.constant(h), g.adjacency, t.constant(w), t.constant(as), t.constant(ad_), 0.2).value();
      const Tensor ref = gat_oracle(h, g.adjacency, w, as, ad_, 0.2);
      for (int64_t i = 0; i < h.numel(); ++i) CHECK(mine[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("GAT special cases") {
    Tape t;
    const Tensor h = rnd({4, 3}, 50), w = rnd({3, 3}, 51);
    const Var hv = t.constant(h), a = t.constant(rnd({3, 1}, 52)), b = t.constant(rnd({3, 1}, 53));
    // Identity adjacency: h + h W.
    const Tensor self = aad::gat_enhance(hv, Tensor::identity(4), t.constant(w), a, b).value();
    for (int i = 0; i < 4; ++i)
      for (int k = 0; k < 3; ++k) {
        double x = h.at(i, k);
        for (int q = 0; q < 3; ++q) x += h.at(i, q) * w.at(q, k);
        CHECK(self.at(i, k) == doctest::Approx(x).epsilon(1e-13));
      }
    // Equal nodes, full graph: equal outputs.
    const Tensor same = aad::gat_enhance(t.constant(Tensor({3, 2}, {1, 2, 1, 2, 1, 2})), Tensor::full({3, 3}, 1.0),
                                         t.constant(rnd({2, 2}, 54)), t.constant(rnd({2, 1}, 55)),
                                         t.constant(rnd({2, 1}, 56)))
                           .value();
    CHECK(same.row(0) == same.row(1));
    CHECK(same.row(1) == same.row(2));
    CHECK(same.shape() == Shape{3, 2});
    // Zero weights: residual path only.
    const Tensor zero =
        aad::gat_enhance(hv, Tensor::full({4, 4}, 1.0), t.constant(Tensor::zeros({3, 3})), a, b).value();
    CHECK(zero == h);
  }

  TEST_CASE("adaptive aggregation") {
    Tape t;
    const Var agents = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    const Var protos = t.constant(Tensor({1, 2}, {1, 0.5}));
    CHECK(aad::adaptive_aggregate(agents, protos, t.constant(Tensor::scalar(0))).value() == agents.value());

    const Tensor one = aad::adaptive_aggregate(agents, protos, t.constant(Tensor::scalar(0.4))).value();
    CHECK(one.at(0, 0) == doctest::Approx(1.4));
    CHECK(one.at(0, 1) == doctest::Approx(0.2));
    CHECK(one.at(1, 0) == doctest::Approx(0.4));
    CHECK(one.at(1, 1) == doctest::Approx(1.2));

    // Similarities 0.6 and 0.2 to the single agent e0.
    const double s1 = 0.6, s2 = 0.2;
    const Tensor two({2, 2}, {s1, std::sqrt(1 - s1 * s1), s2, -std::sqrt(1 - s2 * s2)});
    const Tensor w = aad::aggregation_weights(Tensor({1, 2}, {1, 0}), two);
    CHECK(w.at(0, 0) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(w.at(0, 1) == doctest::Approx(0.25).epsilon(1e-12));

    // All similarities non-positive: pass through.
    const Tensor neg = aad::adaptive_aggregate(t.constant(Tensor({1, 2}, {1, 0})), t.constant(Tensor({2, 2}, {-1, 0, 0, 1})),
                                               t.constant(Tensor::scalar(0.4)))
                           .value();
    CHECK(neg.vec() == std::vector<double>{1, 0});
  }

  TEST_CASE("aggregation weights form probability vectors") {
    for (uint64_t s = 0; s < 20; ++s) {
      const Tensor w = aad::aggregation_weights(rnd({6, 5}, 60 + s), rnd({11, 5}, 80 + s));
      for (int i = 0; i < 6; ++i) {
        double sum = 0;
        for (int j = 0; j < 11; ++j) {
          CHECK(w.at(i, j) >= 0.0);
          sum += w.at(i, j);
        }
        CHECK((sum == doctest::Approx(1.0).epsilon(1e-12) || sum == 0.0));
      }
    }
  }

  TEST_CASE("no unlabeled images: identity on the agent set") {
    ParamRegistry p;
    aad::init_params(p, 4, aad::AadConfig{}, 0);
    CHECK(p.value("aad.beta")[0] == 0.4);
    Tape t;
    const Var agents = t.constant(rnd({4, 4}, 90));
    const Var out = aad::run(t, p, aad::AadConfig{}, agents, {}, {});
    CHECK(out.id() == agents.id());
  }

  TEST_CASE("config checks") {
    aad::AadConfig c;
    c.delta = 1.0;
    CHECK_THROWS(c.validate());
    c.delta = 0.5;
    c.n_unlabeled = -1;
    CHECK_THROWS(c.validate());
  }
}
