#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "agmtr/tensor.hpp"

// Reverse-mode differentiation over Tensor values.
//
// A Tape records every operation of one forward pass in creation order, which
// is a valid topological order, so backward() simply walks it in reverse.
// Operations whose inputs require no gradient are recorded as constants and
// carry no adjoint. Tapes are single-threaded; run one tape per episode.
namespace agmtr::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  int64_t dim(int64_t axis) const { return value().dim(axis); }
  int32_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int32_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int32_t id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);

  /// Leaf bound to a named parameter; repeated binds of one name on this tape
  /// return the same Var. Non-trainable parameters bind as constants.
  Var bind(const std::string& name, const Tensor& value, bool trainable = true);
  const std::map<std::string, int32_t>& bound() const { return bound_; }

  /// With gradients disabled, bind() hands out constants: a pure inference
  /// pass that records no closures.
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  /// Records an op. `fn` is dropped when none of `inputs` requires a gradient.
  Var record(Tensor value, std::vector<int32_t> inputs, BackwardFn fn);

  void backward(Var loss);

  const Tensor& value(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool requires_grad(int32_t id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
  /// Gradient of the last backward() target w.r.t. `v`; zeros if unreached.
  Tensor grad(Var v) const;
  /// Null when backward() never reached node `id`.
  const Tensor* grad_if_reached(int32_t id) const;
  /// Accumulation buffer, allocated on first use.
  Tensor& grad_ref(int32_t id);
  /// Adds `g` into node `id`'s gradient, adopting the buffer if it is the first.
  void accumulate_grad(int32_t id, Tensor&& g);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  std::map<std::string, int32_t> bound_;
  bool grad_enabled_ = true;
};

// Elementwise, shapes must match exactly.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// x[n,c] + bias[c] broadcast over rows.
Var add_bias(Var x, Var bias);
/// x * s where s has a single element.
Var mul_scalar(Var x, Var s);

Var matmul(Var a, Var b);     // [m,k]·[k,n]
Var matmul_nt(Var a, Var b);  // [m,k]·[n,k]ᵀ

/// Row-wise softmax. `additive_mask` (same shape, entries 0 or -inf) is
/// optional; masked entries come out exactly 0. Throws AllMaskedRow.
Var softmax_rows(Var logits, const Tensor* additive_mask = nullptr);

Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var gelu(Var x);
Var relu(Var x);
Var leaky_relu(Var x, double slope);

/// Each row divided by its L2 norm; rows with norm < eps map to zero.
Var normalize_rows(Var x, double eps = 1e-12);
/// Cosine-similarity matrix [m,n] between rows of a [m,c] and b [n,c].
Var cosine_matrix(Var a, Var b);

/// Column-wise max over rows [first, first+count) of x[k,p] → [p]. Ties go to
/// the lowest row.
Var max_over_rows(Var x, int64_t first, int64_t count);

Var slice_rows(Var x, int64_t first, int64_t count);
Var slice_cols(Var x, int64_t first, int64_t count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(Var x, const std::vector<int64_t>& rows);
/// Copy of `base` with rows[i] replaced by rows_value row i.
Var scatter_rows(Var base, Var rows_value, const std::vector<int64_t>& rows);
Var reshape(Var x, Shape shape);

/// E(i,j) = col[i] + row[j] for column vectors of length n and m.
Var outer_add(Var col, Var row);

/// W(i,j) = relu(S(i,j)) / Σ_j relu(S(i,j)); all-nonpositive rows become 0.
Var relu_row_normalize(Var s);

/// Mean BCE of p = softmax(τ·[bg, fg])_fg against a {0,1} target.
Var bce_two_way(Var bg, Var fg, const Tensor& target, double tau);

Var sum(Var x);
Var mean(Var x);

}  // namespace agmtr::ad
