#include <algorithm>
#include <cmath>
#include <random>

#include "agmtr/slic.hpp"
#include "doctest.h"

using namespace agmtr;

namespace {

Tensor uniform_image(int64_t h, int64_t w, double r, double g, double b) {
  Tensor img({h, w, 3});
  for (int64_t i = 0; i < h * w; ++i) {
    img[i * 3] = r;
    img[i * 3 + 1] = g;
    img[i * 3 + 2] = b;
  }
  return img;
}

Tensor noise_image(int64_t h, int64_t w, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor img({h, w, 3});
  for (auto& v : img.data()) v = u(rng);
  return img;
}

SlicConfig cfg(int n, double compactness = 10.0) {
  SlicConfig c;
  c.n_segments = n;
  c.compactness = compactness;
  return c;
}

}  // namespace

TEST_SUITE("slic_superpixels") {
  TEST_CASE("one segment labels everything zero") {
    const auto l = slic(noise_image(20, 24, 1), cfg(1));
    CHECK(l.count == 1);
    CHECK(std::all_of(l.labels.begin(), l.labels.end(), [](int32_t v) { return v == 0; }));
  }

  TEST_CASE("labels form a contiguous total partition") {
    for (uint64_t seed = 0; seed < 8; ++seed) {
      for (int n : {4, 25, 100}) {
        SlicConfig c = cfg(n);
        c.use_lab = seed % 2 == 1;
        const auto l = slic(noise_image(32 + static_cast<int64_t>(seed), 40, seed), c);
        CHECK(l.labels.size() == static_cast<size_t>(l.height * l.width));
        CHECK(l.is_contiguous_partition());
        CHECK(l.count <= 2 * n + 4);
      }
    }
  }

  TEST_CASE("uniform image: segment sizes near HW / n") {
    const auto l = slic(uniform_image(64, 64, 0.3, 0.6, 0.2), cfg(16));
    REQUIRE(l.is_contiguous_partition());
    // With no color signal every pixel joins its nearest grid center: a 4x4
    // grid of 16x16 blocks.
    std::vector<int64_t> oracle(16, 0);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) ++oracle[static_cast<size_t>((y / 16) * 4 + x / 16)];
    for (auto s : l.segment_sizes()) {
      CHECK(s >= 128);
      CHECK(s <= 512);
    }
    auto sizes = l.segment_sizes();
    std::sort(sizes.begin(), sizes.end());
    CHECK(static_cast<int64_t>(sizes.size()) == 16);
    CHECK(sizes.front() >= oracle.front() / 2);
  }

  TEST_CASE("two-color halves separate") {
    Tensor img = uniform_image(32, 32, 0.1, 0.1, 0.1);
    for (int y = 0; y < 32; ++y)
      for (int x = 16; x < 32; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.9;
    const auto l = slic(img, cfg(2, 0.5));
    REQUIRE(l.count >= 2);
    std::vector<double> sum(static_cast<size_t>(l.count), 0.0);
    std::vector<int> n(static_cast<size_t>(l.count), 0);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        sum[static_cast<size_t>(l.at(y, x))] += img.at(y, x, 0);
        ++n[static_cast<size_t>(l.at(y, x))];
      }
    double lo = 1, hi = 0;
    for (int k = 0; k < l.count; ++k) {
      const double m = sum[static_cast<size_t>(k)] / n[static_cast<size_t>(k)];
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
    CHECK(hi - lo >= 0.5 * 0.8);
  }

  TEST_CASE("deterministic") {
    const Tensor img = noise_image(40, 40, 9);
    const auto a = slic(img, cfg(30)), b = slic(img, cfg(30));
    CHECK(a.labels == b.labels);
    CHECK(a.count == b.count);
  }

  TEST_CASE("argument checks") {
    SlicConfig bad = cfg(0);
    CHECK_THROWS(slic(noise_image(8, 8, 1), bad));
    SlicConfig iters = cfg(4);
    iters.iters = 0;
    CHECK_THROWS(slic(noise_image(8, 8, 1), iters));
    CHECK_THROWS_AS(slic(Tensor::zeros({8, 8, 1}), cfg(4)), ShapeMismatch);
  }

  TEST_CASE("majority-vote downsampling") {
    SuperpixelLabels l;
    l.height = 2;
    l.width = 4;
    l.count = 3;
    // Left 2x2 block: 1,1,0,1 → 1. Right block: 0,2,2,0 → tie → 0.
    l.labels = {1, 1, 0, 2, 0, 1, 2, 0};
    const auto d = downsample_labels(l, 2);
    CHECK(d.height == 1);
    CHECK(d.width == 2);
    CHECK(d.labels == std::vector<int32_t>{1, 0});
    CHECK(d.count == 3);
  }
}
