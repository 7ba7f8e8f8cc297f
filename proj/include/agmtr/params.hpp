#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "agmtr/autodiff.hpp"
#include "agmtr/tensor.hpp"

namespace agmtr {

struct Param {
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

/// Named learnable tensors. Names are unique; iteration is in name order so
/// every walk over the registry is deterministic.
class ParamRegistry {
 public:
  Param& add(const std::string& name, Tensor value, bool trainable = true);
  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const Param& get(const std::string& name) const;
  Param& get(const std::string& name);
  const Tensor& value(const std::string& name) const { return get(name).value; }

  ad::Var bind(ad::Tape& tape, const std::string& name) const;

  void zero_grad();
  /// Adds scale × (tape gradient) into the grad slot of every trainable
  /// parameter bound on `tape`.
  void accumulate_grads(const ad::Tape& tape, double scale = 1.0);

  std::vector<std::string> names() const;
  int64_t total_numel() const;
  size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// One portable tensor file per parameter plus an index file.
  void save(const std::filesystem::path& dir) const;
  /// Overwrites values of parameters present in `dir`; unknown names throw.
  void load(const std::filesystem::path& dir);

 private:
  std::map<std::string, Param> entries_;
};

/// Seed derived from a parameter name, so initial values do not depend on
/// which other parameters exist or in what order they were created.
uint64_t name_seed(const std::string& name, uint64_t base_seed);

Tensor trunc_normal(Shape shape, double std, uint64_t seed);
Tensor normal(Shape shape, double std, uint64_t seed);
/// Identity plus truncated-normal noise, for square C×C projections.
Tensor near_identity(int64_t n, double noise_std, uint64_t seed);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int64_t checked = 0;
  std::map<std::string, double> per_param;
};

using LossFn = std::function<ad::Var(ad::Tape&, const ParamRegistry&)>;

/// Central finite differences (L(θ+h) − L(θ−h)) / 2h against reverse-mode
/// gradients, element by element over every trainable parameter. Relative
/// error is |a − n| / max(|a|, |n|, abs_floor). `max_per_param` > 0 limits
/// the check to that many evenly spaced elements per parameter. With
/// `ladder` > 0 each element is also differenced with steps step·4^±k,
/// k ≤ ladder, and the closest estimate is kept: ReLU kinks near an entry
/// spoil large steps and roundoff spoils small ones.
GradCheckReport check_gradients(const LossFn& loss_fn, ParamRegistry& params, double step, double abs_floor = 1e-6,
                                int64_t max_per_param = 0, int ladder = 0);

}  // namespace agmtr
