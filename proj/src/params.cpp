#include "agmtr/params.hpp"

#include <cmath>
#include <limits>
#include <fstream>
#include <random>

#include <json.hpp>

namespace agmtr {

Param& ParamRegistry::add(const std::string& name, Tensor value, bool trainable) {
  if (entries_.count(name)) throw Error("duplicate parameter name: " + name);
  Param p;
  p.grad = Tensor(value.shape());
  p.value = std::move(value);
  p.trainable = trainable;
  return entries_.emplace(name, std::move(p)).first->second;
}

const Param& ParamRegistry::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("unknown parameter: " + name);
  return it->second;
}

Param& ParamRegistry::get(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("unknown parameter: " + name);
  return it->second;
}

ad::Var ParamRegistry::bind(ad::Tape& tape, const std::string& name) const {
  const auto& p = get(name);
  return tape.bind(name, p.value, p.trainable);
}

void ParamRegistry::zero_grad() {
  for (auto& [_, p] : entries_) p.grad = Tensor(p.value.shape());
}

void ParamRegistry::accumulate_grads(const ad::Tape& tape, double scale) {
  for (const auto& [name, id] : tape.bound()) {
    auto& p = get(name);
    if (!p.trainable) continue;
    const Tensor* g = tape.grad_if_reached(id);
    if (!g) continue;
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
    for (int64_t i = 0; i < g->numel(); ++i) p.grad[i] += scale * (*g)[i];
  }
}

std::vector<std::string> ParamRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

int64_t ParamRegistry::total_numel() const {
  int64_t n = 0;
  for (const auto& [_, p] : entries_) n += p.value.numel();
  return n;
}

void ParamRegistry::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  int i = 0;
  for (const auto& [name, p] : entries_) {
    const auto file = "p" + std::to_string(i++) + ".agtr";
    write_tensor_file(dir / file, p.value);
    index.push_back({{"name", name}, {"file", file}, {"shape", p.value.shape()}, {"trainable", p.trainable}});
  }
  std::ofstream os(dir / "params.json");
  if (!os) throw IoError("cannot write " + (dir / "params.json").string());
  os << index.dump(2) << '\n';
}

void ParamRegistry::load(const std::filesystem::path& dir) {
  std::ifstream is(dir / "params.json");
  if (!is) throw IoError("cannot read " + (dir / "params.json").string());
  nlohmann::json index;
  try {
    is >> index;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed params.json: ") + e.what());
  }
  for (const auto& item : index) {
    const auto name = item.at("name").get<std::string>();
    auto& p = get(name);
    Tensor t = read_tensor_file(dir / item.at("file").get<std::string>());
    if (t.shape() != p.value.shape())
      throw IoError("checkpoint shape mismatch for " + name + ": " + shape_str(t.shape()) + " vs " +
                    shape_str(p.value.shape()));
    p.value = std::move(t);
  }
}

uint64_t name_seed(const std::string& name, uint64_t base_seed) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  uint64_t z = h ^ (base_seed + 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Tensor trunc_normal(Shape shape, double std, uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int64_t i = 0; i < t.numel(); ++i) {
    double v;
    do v = nd(rng);
    while (std::abs(v) > 2.0);
    t[i] = v * std;
  }
  return t;
}

Tensor normal(Shape shape, double std, uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, std);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = nd(rng);
  return t;
}

Tensor near_identity(int64_t n, double noise_std, uint64_t seed) {
  Tensor t = trunc_normal({n, n}, noise_std, seed);
  for (int64_t i = 0; i < n; ++i) t.at(i, i) += 1.0;
  return t;
}

GradCheckReport check_gradients(const LossFn& loss_fn, ParamRegistry& params, double step, double abs_floor,
                                int64_t max_per_param, int ladder) {
  std::map<std::string, Tensor> analytic;
  {
    ad::Tape tape;
    auto loss = loss_fn(tape, params);
    tape.backward(loss);
    for (const auto& [name, id] : tape.bound()) {
      if (!params.get(name).trainable) continue;
      const Tensor* g = tape.grad_if_reached(id);
      analytic[name] = g ? *g : Tensor(params.value(name).shape());
    }
  }
  auto eval = [&] {
    ad::Tape tape;
    return loss_fn(tape, params).value()[0];
  };

  GradCheckReport report;
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    // Parameters the loss never touches have an exact zero gradient.
    const Tensor ga = analytic.count(name) ? analytic[name] : Tensor(p.value.shape());
    const auto n = p.value.numel();
    const int64_t stride = (max_per_param > 0 && n > max_per_param) ? (n + max_per_param - 1) / max_per_param : 1;
    double worst = 0.0;
    for (int64_t i = 0; i < n; i += stride) {
      const double orig = p.value[i];
      const double a = ga[i];
      double num = 0.0, rel = std::numeric_limits<double>::infinity();
      for (int k = 0; k <= 2 * ladder; ++k) {
        const int e = k == 0 ? 0 : (k % 2 ? (k + 1) / 2 : -(k / 2));
        const double h = step * std::pow(4.0, e);
        p.value[i] = orig + h;
        const double lp = eval();
        p.value[i] = orig - h;
        const double lm = eval();
        p.value[i] = orig;
        const double n_h = (lp - lm) / (2.0 * h);
        const double r = std::abs(a - n_h) / std::max({std::abs(a), std::abs(n_h), abs_floor});
        if (r < rel) {
          rel = r;
          num = n_h;
        }
        if (rel < 1e-7) break;
      }
      ++report.checked;
      worst = std::max(worst, rel);
      if (rel > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = rel;
        report.worst_param = name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = num;
      }
    }
    report.per_param[name] = worst;
  }
  return report;
}

}  // namespace agmtr
