#include "agmtr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "agmtr/errors.hpp"
#include "agmtr/image_io.hpp"
#include "json.hpp"

namespace agmtr {

using nlohmann::json;

void SyntheticDatasetSpec::validate() const {
  if (n_classes < 1 || images_per_class < 1) throw Error("dataset spec: need at least one class and one image per class");
  if (height < 8 || width < 8) throw Error("dataset spec: image too small");
  if (!(min_radius > 0.0) || max_radius < min_radius) throw Error("dataset spec: bad radius range");
}

std::string spec_to_json(const SyntheticDatasetSpec& s) {
  json j = {{"n_classes", s.n_classes},     {"images_per_class", s.images_per_class},
            {"height", s.height},           {"width", s.width},
            {"min_radius", s.min_radius},   {"max_radius", s.max_radius},
            {"color_jitter", s.color_jitter}, {"pixel_noise", s.pixel_noise},
            {"clutter", s.clutter},         {"confusers", s.confusers},
            {"seed", s.seed}};
  return j.dump(2);
}

SyntheticDatasetSpec spec_from_json(const std::string& text) {
  const json j = json::parse(text);
  SyntheticDatasetSpec s;
  s.n_classes = j.value("n_classes", s.n_classes);
  s.images_per_class = j.value("images_per_class", s.images_per_class);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.min_radius = j.value("min_radius", s.min_radius);
  s.max_radius = j.value("max_radius", s.max_radius);
  s.color_jitter = j.value("color_jitter", s.color_jitter);
  s.pixel_noise = j.value("pixel_noise", s.pixel_noise);
  s.clutter = j.value("clutter", s.clutter);
  s.confusers = j.value("confusers", s.confusers);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

namespace {

using Rgb = std::array<double, 3>;

Rgb hsv(double h, double s, double v) {
  h = std::fmod(h, 360.0) / 60.0;
  const double c = v * s, x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0)), m = v - c;
  Rgb out{};
  switch (static_cast<int>(h)) {
    case 0: out = {c, x, 0}; break;
    case 1: out = {x, c, 0}; break;
    case 2: out = {0, c, x}; break;
    case 3: out = {0, x, c}; break;
    case 4: out = {x, 0, c}; break;
    default: out = {c, 0, x}; break;
  }
  return {out[0] + m, out[1] + m, out[2] + m};
}

// Golden-ratio hue steps: any run of consecutive class ids (one fold) is
// spread around the color wheel instead of sitting in one band of it. The
// secondary part is a darker shade of the same hue.
Rgb class_color(int class_id, bool secondary) {
  const double hue = 360.0 * std::fmod(class_id * 0.6180339887498949, 1.0);
  return secondary ? hsv(hue, 0.85, 0.5) : hsv(hue, 0.75, 0.95);
}

bool inside(int family, double u, double v, double phase) {
  const double r = std::hypot(u, v), th = std::atan2(v, u);
  auto box = [&](double u0, double u1, double v0, double v1) { return u >= u0 && u <= u1 && v >= v0 && v <= v1; };
  switch (family) {
    case 0: return r <= 1.0;
    case 1: return r <= 1.0 && r >= 0.5;
    case 2: return box(-1, 1, -0.4, 0.4);
    case 3: return box(-1, 1, -0.35, 0.35) || box(-0.35, 0.35, -1, 1);
    case 4: return box(-1, -0.25, -1, 1) || box(-1, 1, 0.25, 1);
    case 5: return box(-1, 1, -1, -0.3) || box(-0.35, 0.35, -1, 1);
    case 6: return (std::abs(u) >= 0.4 && box(-1, 1, -1, 1)) || box(-1, 1, 0.35, 1);
    case 7: return (std::abs(u) >= 0.45 && box(-1, 1, -1, 1)) || box(-1, 1, -0.3, 0.3);
    case 8: return v >= -1.0 && v <= 1.0 && std::abs(u) <= (v + 1.0) * 0.55;
    case 9: return std::abs(u) + std::abs(v) <= 1.0;
    case 10: return r <= 0.5 + 0.5 * std::pow(std::abs(std::cos(2.5 * th)), 1.5);
    default: return r <= 0.8 + 0.15 * std::sin(3.0 * th + phase) + 0.05 * std::cos(2.0 * th);
  }
}

double quantize(double v) { return std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

SyntheticSample render_sample(const SyntheticDatasetSpec& spec, int class_id, int index) {
  std::seed_seq seq{static_cast<uint32_t>(spec.seed), static_cast<uint32_t>(spec.seed >> 32), static_cast<uint32_t>(class_id),
                    static_cast<uint32_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int h = spec.height, w = spec.width;
  const int family = class_id % kNumFamilies;

  Tensor image({h, w, 3});
  BinaryMask mask(h, w);
  const double bg_level = 0.15 + 0.25 * uni(rng);
  const double bg_tint = 0.06 * (uni(rng) - 0.5);
  for (int64_t i = 0; i < h * w; ++i) {
    image[i * 3] = bg_level + bg_tint;
    image[i * 3 + 1] = bg_level;
    image[i * 3 + 2] = bg_level - bg_tint;
  }

  // Distractors: small ellipses in other classes' colors, then a few in the
  // target's own colors.
  std::poisson_distribution<int> n_clutter(spec.clutter);
  std::poisson_distribution<int> n_confusers(spec.confusers);
  const int nd = spec.n_classes > 1 ? n_clutter(rng) : 0;
  const int nc = spec.confusers > 0.0 ? n_confusers(rng) : 0;
  for (int d = 0; d < nd + nc; ++d) {
    int other = class_id;
    if (d < nd) {
      other = static_cast<int>(uni(rng) * (spec.n_classes - 1));
      if (other >= class_id) ++other;
    }
    const Rgb col = class_color(other, uni(rng) < 0.3);
    const double cy = uni(rng) * h, cx = uni(rng) * w, ry = 3.0 + 5.0 * uni(rng), rx = 3.0 + 5.0 * uni(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
        if (dy * dy + dx * dx > 1.0) continue;
        for (int c = 0; c < 3; ++c) image[(y * w + x) * 3 + c] = col[static_cast<size_t>(c)];
      }
  }

  Rgb primary = class_color(class_id, false), secondary = class_color(class_id, true);
  for (int c = 0; c < 3; ++c) {
    primary[static_cast<size_t>(c)] += spec.color_jitter * (2.0 * uni(rng) - 1.0);
    secondary[static_cast<size_t>(c)] += spec.color_jitter * (2.0 * uni(rng) - 1.0);
  }
  const double radius = spec.min_radius + (spec.max_radius - spec.min_radius) * uni(rng);
  const double angle = 2.0 * std::numbers::pi * uni(rng);
  const double aspect = 0.85 + 0.3 * uni(rng);
  const double margin = std::min(radius * 0.8, 0.5 * std::min(h, w) - 1.0);
  const double cy = margin + (h - 2.0 * margin) * uni(rng);
  const double cx = margin + (w - 2.0 * margin) * uni(rng);
  const double phase = 2.0 * std::numbers::pi * uni(rng);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double py = y + 0.5 - cy, px = x + 0.5 - cx;
      const double u = (ca * px + sa * py) / (radius * aspect), v = (-sa * px + ca * py) / radius;
      if (!inside(family, u, v, phase)) continue;
      mask.set(y, x, true);
      const Rgb& col = u > 0.35 ? secondary : primary;
      for (int c = 0; c < 3; ++c) image[(y * w + x) * 3 + c] = col[static_cast<size_t>(c)];
    }

  for (int64_t i = 0; i < image.numel(); ++i) image[i] = quantize(image[i] + spec.pixel_noise * gauss(rng));
  if (!mask.any()) mask.set(static_cast<int64_t>(cy), static_cast<int64_t>(cx), true);
  return {std::move(image), std::move(mask)};
}

namespace {

std::string item_name(int class_id, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%02d_%04d.png", class_id, index);
  return buf;
}

void finish(Dataset& ds, bool superpixels, const SlicConfig& slic_config) {
  ds.by_class.assign(static_cast<size_t>(ds.spec.n_classes), {});
  for (size_t i = 0; i < ds.items.size(); ++i) {
    auto& it = ds.items[i];
    if (it.class_id < 0 || it.class_id >= ds.spec.n_classes) throw IoError("dataset: class id out of range");
    ds.by_class[static_cast<size_t>(it.class_id)].push_back(static_cast<int64_t>(i));
    if (superpixels) it.superpixels = slic(it.image, slic_config);
  }
}

}  // namespace

void generate_dataset(const SyntheticDatasetSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  std::filesystem::create_directories(out_dir / "masks", ec);
  if (ec) throw IoError("cannot create " + out_dir.string());
  json items = json::array();
  for (int c = 0; c < spec.n_classes; ++c)
    for (int i = 0; i < spec.images_per_class; ++i) {
      const auto s = render_sample(spec, c, i);
      const auto name = item_name(c, i);
      write_png_rgb(out_dir / "images" / name, s.image);
      write_png_mask(out_dir / "masks" / name, s.mask);
      items.push_back({{"class", c}, {"image", "images/" + name}, {"mask", "masks/" + name}});
    }
  json manifest = {{"spec", json::parse(spec_to_json(spec))}, {"items", items}};
  std::ofstream out(out_dir / "manifest.json");
  out << manifest.dump(1) << "\n";
  if (!out) throw IoError("cannot write manifest in " + out_dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir, bool superpixels, const SlicConfig& slic_config) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("missing manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(std::string("bad manifest: ") + e.what());
  }
  Dataset ds;
  ds.spec = spec_from_json(manifest.at("spec").dump());
  for (const auto& it : manifest.at("items")) {
    DatasetItem item;
    item.class_id = it.at("class").get<int>();
    item.image_path = it.at("image").get<std::string>();
    item.image = read_png_rgb(dir / item.image_path);
    item.mask = read_png_mask(dir / it.at("mask").get<std::string>());
    if (item.mask.height() != item.image.dim(0) || item.mask.width() != item.image.dim(1))
      throw IoError("mask and image sizes differ for " + item.image_path);
    ds.items.push_back(std::move(item));
  }
  finish(ds, superpixels, slic_config);
  return ds;
}

Dataset make_dataset(const SyntheticDatasetSpec& spec, bool superpixels, const SlicConfig& slic_config) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  for (int c = 0; c < spec.n_classes; ++c)
    for (int i = 0; i < spec.images_per_class; ++i) {
      auto s = render_sample(spec, c, i);
      ds.items.push_back({c, "images/" + item_name(c, i), std::move(s.image), std::move(s.mask), {}});
    }
  finish(ds, superpixels, slic_config);
  return ds;
}

}  // namespace agmtr
