#include "agmtr/slic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>

namespace agmtr {

namespace {

struct Center {
  double c0, c1, c2, y, x;
};

double srgb_to_linear(double v) { return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4); }

std::array<double, 3> rgb_to_lab(double r, double g, double b) {
  r = srgb_to_linear(r);
  g = srgb_to_linear(g);
  b = srgb_to_linear(b);
  double x = (0.4124 * r + 0.3576 * g + 0.1805 * b) / 0.95047;
  double y = (0.2126 * r + 0.7152 * g + 0.0722 * b);
  double z = (0.0193 * r + 0.1192 * g + 0.9505 * b) / 1.08883;
  auto f = [](double t) { return t > 0.008856 ? std::cbrt(t) : 7.787 * t + 16.0 / 116.0; };
  const double fx = f(x), fy = f(y), fz = f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

}  // namespace

bool SuperpixelLabels::is_contiguous_partition() const {
  if (static_cast<int64_t>(labels.size()) != height * width || count < 1) return false;
  std::vector<uint8_t> seen(static_cast<size_t>(count), 0);
  for (auto l : labels) {
    if (l < 0 || l >= count) return false;
    seen[static_cast<size_t>(l)] = 1;
  }
  return std::all_of(seen.begin(), seen.end(), [](uint8_t s) { return s == 1; });
}

std::vector<int64_t> SuperpixelLabels::segment_sizes() const {
  std::vector<int64_t> sizes(static_cast<size_t>(std::max(count, 0)), 0);
  for (auto l : labels)
    if (l >= 0 && l < count) ++sizes[static_cast<size_t>(l)];
  return sizes;
}

SuperpixelLabels slic(const Tensor& image, const SlicConfig& config) {
  require_rank(image, 3, "slic");
  if (image.dim(2) != 3) throw ShapeMismatch("slic: expected 3 channels");
  if (config.n_segments < 1 || config.iters < 1) throw Error("slic: n_segments and iters must be at least 1");
  const auto h = image.dim(0), w = image.dim(1), n = h * w;

  // Color features on a 0..100 scale so the usual compactness range applies.
  std::vector<std::array<double, 3>> color(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double r = image[i * 3], g = image[i * 3 + 1], b = image[i * 3 + 2];
    color[static_cast<size_t>(i)] = config.use_lab ? rgb_to_lab(r, g, b) : std::array<double, 3>{r * 100.0, g * 100.0, b * 100.0};
  }

  const double ratio = static_cast<double>(h) / static_cast<double>(w);
  const int64_t ny = std::max<int64_t>(1, static_cast<int64_t>(std::floor(std::sqrt(config.n_segments * ratio))));
  const int64_t nx = std::max<int64_t>(1, std::lround(static_cast<double>(config.n_segments) / static_cast<double>(ny)));
  const double step = std::sqrt(static_cast<double>(n) / static_cast<double>(nx * ny));

  auto grad_at = [&](int64_t y, int64_t x) {
    auto px = [&](int64_t yy, int64_t xx) {
      yy = std::clamp<int64_t>(yy, 0, h - 1);
      xx = std::clamp<int64_t>(xx, 0, w - 1);
      return color[static_cast<size_t>(yy * w + xx)];
    };
    double g = 0.0;
    const auto a = px(y, x + 1), b = px(y, x - 1), c = px(y + 1, x), d = px(y - 1, x);
    for (int k = 0; k < 3; ++k) g += (a[k] - b[k]) * (a[k] - b[k]) + (c[k] - d[k]) * (c[k] - d[k]);
    return g;
  };

  std::vector<Center> centers;
  for (int64_t r = 0; r < ny; ++r)
    for (int64_t c = 0; c < nx; ++c) {
      auto cy = static_cast<int64_t>((static_cast<double>(r) + 0.5) * static_cast<double>(h) / static_cast<double>(ny));
      auto cx = static_cast<int64_t>((static_cast<double>(c) + 0.5) * static_cast<double>(w) / static_cast<double>(nx));
      // Move the seed to the lowest-gradient pixel of its 3×3 neighborhood.
      int64_t by = cy, bx = cx;
      double best = grad_at(cy, cx);
      for (int64_t dy = -1; dy <= 1; ++dy)
        for (int64_t dx = -1; dx <= 1; ++dx) {
          const auto yy = cy + dy, xx = cx + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const double g = grad_at(yy, xx);
          if (g < best) {
            best = g;
            by = yy;
            bx = xx;
          }
        }
      const auto& col = color[static_cast<size_t>(by * w + bx)];
      centers.push_back({col[0], col[1], col[2], static_cast<double>(by), static_cast<double>(bx)});
    }

  const double spatial = config.compactness / step;
  auto dist2 = [&](const Center& c, int64_t i) {
    const auto& col = color[static_cast<size_t>(i)];
    const double y = static_cast<double>(i / w), x = static_cast<double>(i % w);
    const double dc = (col[0] - c.c0) * (col[0] - c.c0) + (col[1] - c.c1) * (col[1] - c.c1) + (col[2] - c.c2) * (col[2] - c.c2);
    const double ds = (y - c.y) * (y - c.y) + (x - c.x) * (x - c.x);
    return dc + ds * spatial * spatial;
  };

  std::vector<int32_t> label(static_cast<size_t>(n), -1);
  std::vector<double> best(static_cast<size_t>(n));
  const auto k = static_cast<int32_t>(centers.size());
  for (int it = 0; it < config.iters; ++it) {
    std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
    std::fill(label.begin(), label.end(), -1);
    for (int32_t ci = 0; ci < k; ++ci) {
      const auto& c = centers[static_cast<size_t>(ci)];
      const auto y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(c.y - step)));
      const auto y1 = std::min<int64_t>(h - 1, static_cast<int64_t>(std::ceil(c.y + step)));
      const auto x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(c.x - step)));
      const auto x1 = std::min<int64_t>(w - 1, static_cast<int64_t>(std::ceil(c.x + step)));
      for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x) {
          const auto i = y * w + x;
          const double d = dist2(c, i);
          if (d < best[static_cast<size_t>(i)]) {
            best[static_cast<size_t>(i)] = d;
            label[static_cast<size_t>(i)] = ci;
          }
        }
    }
    // Pixels outside every window fall back to the globally nearest center.
    for (int64_t i = 0; i < n; ++i) {
      if (label[static_cast<size_t>(i)] >= 0) continue;
      double bd = std::numeric_limits<double>::infinity();
      for (int32_t ci = 0; ci < k; ++ci) {
        const double d = dist2(centers[static_cast<size_t>(ci)], i);
        if (d < bd) {
          bd = d;
          label[static_cast<size_t>(i)] = ci;
        }
      }
    }
    std::vector<std::array<double, 6>> acc(static_cast<size_t>(k), {0, 0, 0, 0, 0, 0});
    for (int64_t i = 0; i < n; ++i) {
      auto& a = acc[static_cast<size_t>(label[static_cast<size_t>(i)])];
      const auto& col = color[static_cast<size_t>(i)];
      a[0] += col[0];
      a[1] += col[1];
      a[2] += col[2];
      a[3] += static_cast<double>(i / w);
      a[4] += static_cast<double>(i % w);
      a[5] += 1.0;
    }
    for (int32_t ci = 0; ci < k; ++ci) {
      const auto& a = acc[static_cast<size_t>(ci)];
      if (a[5] == 0.0) continue;
      centers[static_cast<size_t>(ci)] = {a[0] / a[5], a[1] / a[5], a[2] / a[5], a[3] / a[5], a[4] / a[5]};
    }
  }

  // Connected components; fragments below a quarter of the nominal segment
  // size are absorbed by the segment adjacent to their first pixel.
  const int64_t min_size = std::max<int64_t>(1, n / std::max<int64_t>(1, k) / 4);
  SuperpixelLabels out;
  out.height = h;
  out.width = w;
  out.labels.assign(static_cast<size_t>(n), -1);
  constexpr int64_t dy4[4] = {-1, 0, 1, 0};
  constexpr int64_t dx4[4] = {0, -1, 0, 1};
  int32_t next = 0;
  std::vector<int64_t> component;
  for (int64_t start = 0; start < n; ++start) {
    if (out.labels[static_cast<size_t>(start)] >= 0) continue;
    int32_t adjacent = -1;
    const auto sy = start / w, sx = start % w;
    for (int d = 0; d < 4; ++d) {
      const auto yy = sy + dy4[d], xx = sx + dx4[d];
      if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
      const auto l = out.labels[static_cast<size_t>(yy * w + xx)];
      if (l >= 0) adjacent = l;
    }
    const auto old = label[static_cast<size_t>(start)];
    component.clear();
    component.push_back(start);
    out.labels[static_cast<size_t>(start)] = next;
    for (size_t q = 0; q < component.size(); ++q) {
      const auto p = component[q];
      const auto py = p / w, px = p % w;
      for (int d = 0; d < 4; ++d) {
        const auto yy = py + dy4[d], xx = px + dx4[d];
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const auto ni = yy * w + xx;
        if (out.labels[static_cast<size_t>(ni)] >= 0 || label[static_cast<size_t>(ni)] != old) continue;
        out.labels[static_cast<size_t>(ni)] = next;
        component.push_back(ni);
      }
    }
    if (static_cast<int64_t>(component.size()) < min_size && adjacent >= 0) {
      for (auto p : component) out.labels[static_cast<size_t>(p)] = adjacent;
    } else {
      ++next;
    }
  }
  out.count = next;
  return out;
}

SuperpixelLabels downsample_labels(const SuperpixelLabels& labels, int64_t patch_size) {
  if (patch_size < 1 || labels.height % patch_size != 0 || labels.width % patch_size != 0)
    throw ShapeMismatch("downsample_labels: label map not divisible by patch size");
  SuperpixelLabels out;
  out.height = labels.height / patch_size;
  out.width = labels.width / patch_size;
  out.count = labels.count;
  out.labels.resize(static_cast<size_t>(out.height * out.width));
  std::map<int32_t, int> votes;
  for (int64_t gy = 0; gy < out.height; ++gy)
    for (int64_t gx = 0; gx < out.width; ++gx) {
      votes.clear();
      for (int64_t dy = 0; dy < patch_size; ++dy)
        for (int64_t dx = 0; dx < patch_size; ++dx) ++votes[labels.at(gy * patch_size + dy, gx * patch_size + dx)];
      int32_t best = votes.begin()->first;
      int best_n = 0;
      for (const auto& [l, c] : votes)
        if (c > best_n) {
          best = l;
          best_n = c;
        }
      out.labels[static_cast<size_t>(gy * out.width + gx)] = best;
    }
  return out;
}

}  // namespace agmtr
