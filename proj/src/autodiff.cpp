#include "agmtr/autodiff.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

namespace agmtr::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<RowMat>;
using CMap = Eigen::Map<const RowMat>;

CMap cmap(const Tensor& t) { return CMap(t.ptr(), t.dim(0), t.dim(1)); }
Map map(Tensor& t) { return Map(t.ptr(), t.dim(0), t.dim(1)); }

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.tape() != b.tape()) throw Error(std::string(op) + ": operands live on different tapes");
}

void need_rank2(const Var& a, const char* op) {
  if (a.value().rank() != 2) throw ShapeMismatch(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

void accumulate(Tape& tape, int32_t id, const Tensor& g) {
  if (tape.requires_grad(id)) tape.accumulate_grad(id, Tensor(g));
}

void accumulate(Tape& tape, int32_t id, Tensor&& g) {
  if (tape.requires_grad(id)) tape.accumulate_grad(id, std::move(g));
}

template <class F>
Tensor map_values(const Tensor& x, F f) {
  Tensor out(x.shape());
  const auto* src = x.ptr();
  auto* dst = out.ptr();
  for (int64_t i = 0; i < x.numel(); ++i) dst[i] = f(src[i]);
  return out;
}

}  // namespace

const Tensor& Var::value() const {
  if (!tape_) throw Error("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, static_cast<int32_t>(nodes_.size() - 1));
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, static_cast<int32_t>(nodes_.size() - 1));
}

Var Tape::bind(const std::string& name, const Tensor& value, bool trainable) {
  if (auto it = bound_.find(name); it != bound_.end()) return Var(this, it->second);
  Var v = trainable && grad_enabled_ ? leaf(value) : constant(value);
  bound_.emplace(name, v.id());
  return v;
}

Var Tape::record(Tensor value, std::vector<int32_t> inputs, BackwardFn fn) {
  bool needs = false;
  for (auto id : inputs) needs = needs || requires_grad(id);
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}});
  return Var(this, static_cast<int32_t>(nodes_.size() - 1));
}

void Tape::accumulate_grad(int32_t id, Tensor&& g) {
  auto& node = nodes_[static_cast<size_t>(id)];
  if (g.shape() != node.value.shape()) throw ShapeMismatch("gradient shape does not match value");
  if (node.grad.shape() != node.value.shape()) {
    node.grad = std::move(g);
    return;
  }
  auto* d = node.grad.ptr();
  const auto* src = g.ptr();
  for (int64_t i = 0; i < g.numel(); ++i) d[i] += src[i];
}

Tensor& Tape::grad_ref(int32_t id) {
  auto& node = nodes_[static_cast<size_t>(id)];
  if (node.grad.shape() != node.value.shape()) node.grad = Tensor(node.value.shape());
  return node.grad;
}

const Tensor* Tape::grad_if_reached(int32_t id) const {
  const auto& node = nodes_[static_cast<size_t>(id)];
  return node.grad.shape() == node.value.shape() ? &node.grad : nullptr;
}

Tensor Tape::grad(Var v) const {
  const auto& node = nodes_[static_cast<size_t>(v.id())];
  if (node.grad.shape() != node.value.shape()) return Tensor(node.value.shape());
  return node.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw Error("backward: loss belongs to another tape");
  if (loss.value().numel() != 1) throw ShapeMismatch("backward: loss must be a scalar");
  for (auto& n : nodes_) n.grad = Tensor();
  if (!requires_grad(loss.id())) return;
  grad_ref(loss.id())[0] = 1.0;
  for (auto id = loss.id(); id >= 0; --id) {
    auto& node = nodes_[static_cast<size_t>(id)];
    if (!node.backward || node.grad.shape() != node.value.shape()) continue;
    node.backward(*this, node.grad);
  }
}

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  Tensor out = a.value();
  const auto* pb = b.value().ptr();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += pb[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    accumulate(t, ia, g);
    accumulate(t, ib, g);
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto* pb = b.value().ptr();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= pb[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    accumulate(t, ia, g);
    if (t.requires_grad(ib)) accumulate(t, ib, map_values(g, [](double v) { return -v; }));
  });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto* pb = b.value().ptr();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= pb[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    const auto& va = t.value(ia);
    const auto& vb = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor ga = g;
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] *= vb[i];
      accumulate(t, ia, std::move(ga));
    }
    if (t.requires_grad(ib)) {
      Tensor gb = g;
      for (int64_t i = 0; i < gb.numel(); ++i) gb[i] *= va[i];
      accumulate(t, ib, std::move(gb));
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = map_values(a.value(), [s](double v) { return v * s; });
  const auto ia = a.id();
  return a.tape()->record(std::move(out), {ia}, [ia, s](Tape& t, const Tensor& g) {
    accumulate(t, ia, map_values(g, [s](double v) { return v * s; }));
  });
}

Var add_bias(Var x, Var bias) {
  need_rank2(x, "add_bias");
  const auto n = x.dim(0), c = x.dim(1);
  if (bias.value().numel() != c) throw ShapeMismatch("add_bias: bias length does not match columns");
  Tensor out = x.value();
  const auto* pb = bias.value().ptr();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) out[i * c + j] += pb[j];
  const auto ix = x.id(), ib = bias.id();
  return x.tape()->record(std::move(out), {ix, ib}, [ix, ib, n, c](Tape& t, const Tensor& g) {
    accumulate(t, ix, g);
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_ref(ib);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
    }
  });
}

Var mul_scalar(Var x, Var s) {
  if (s.value().numel() != 1) throw ShapeMismatch("mul_scalar: scale must have one element");
  const double sv = s.value()[0];
  Tensor out = map_values(x.value(), [sv](double v) { return v * sv; });
  const auto ix = x.id(), is = s.id();
  return x.tape()->record(std::move(out), {ix, is}, [ix, is](Tape& t, const Tensor& g) {
    const double sv = t.value(is)[0];
    if (t.requires_grad(ix)) accumulate(t, ix, map_values(g, [sv](double v) { return v * sv; }));
    if (t.requires_grad(is)) {
      const auto& xv = t.value(ix);
      double acc = 0.0;
      for (int64_t i = 0; i < g.numel(); ++i) acc += g[i] * xv[i];
      t.grad_ref(is)[0] += acc;
    }
  });
}

Var matmul(Var a, Var b) {
  need_rank2(a, "matmul");
  need_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw ShapeMismatch("matmul: " + shape_str(a.shape()) + " · " + shape_str(b.shape()));
  Tensor out({a.dim(0), b.dim(1)});
  map(out).noalias() = cmap(a.value()) * cmap(b.value());
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) map(t.grad_ref(ia)).noalias() += cmap(g) * cmap(t.value(ib)).transpose();
    if (t.requires_grad(ib)) map(t.grad_ref(ib)).noalias() += cmap(t.value(ia)).transpose() * cmap(g);
  });
}

Var matmul_nt(Var a, Var b) {
  need_rank2(a, "matmul_nt");
  need_rank2(b, "matmul_nt");
  if (a.dim(1) != b.dim(1))
    throw ShapeMismatch("matmul_nt: " + shape_str(a.shape()) + " · " + shape_str(b.shape()) + "ᵀ");
  Tensor out({a.dim(0), b.dim(0)});
  map(out).noalias() = cmap(a.value()) * cmap(b.value()).transpose();
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) map(t.grad_ref(ia)).noalias() += cmap(g) * cmap(t.value(ib));
    if (t.requires_grad(ib)) map(t.grad_ref(ib)).noalias() += cmap(g).transpose() * cmap(t.value(ia));
  });
}

Var softmax_rows(Var logits, const Tensor* additive_mask) {
  need_rank2(logits, "softmax_rows");
  if (additive_mask && additive_mask->shape() != logits.shape())
    throw ShapeMismatch("softmax_rows: mask shape " + shape_str(additive_mask->shape()) + " vs logits " +
                        shape_str(logits.shape()));
  const auto n = logits.dim(0), m = logits.dim(1);
  const auto& x = logits.value();
  Tensor out({n, m});
  for (int64_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < m; ++j) {
      if (additive_mask && std::isinf((*additive_mask)[i * m + j])) continue;
      mx = std::max(mx, x[i * m + j]);
    }
    if (std::isinf(mx)) throw AllMaskedRow("softmax row " + std::to_string(i) + " is fully masked");
    double z = 0.0;
    for (int64_t j = 0; j < m; ++j) {
      if (additive_mask && std::isinf((*additive_mask)[i * m + j])) continue;
      const double madd = additive_mask ? (*additive_mask)[i * m + j] : 0.0;
      const double e = std::exp(x[i * m + j] + madd - mx);
      out[i * m + j] = e;
      z += e;
    }
    for (int64_t j = 0; j < m; ++j) out[i * m + j] /= z;
  }
  const auto ix = logits.id();
  const auto iy = static_cast<int32_t>(logits.tape()->size());
  return logits.tape()->record(std::move(out), {ix}, [ix, iy, n, m](Tape& t, const Tensor& g) {
    const auto& y = t.value(iy);
    auto& gx = t.grad_ref(ix);
    for (int64_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int64_t j = 0; j < m; ++j) dot += y[i * m + j] * g[i * m + j];
      for (int64_t j = 0; j < m; ++j) gx[i * m + j] += y[i * m + j] * (g[i * m + j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  need_rank2(x, "layer_norm");
  const auto n = x.dim(0), c = x.dim(1);
  if (gamma.value().numel() != c || beta.value().numel() != c)
    throw ShapeMismatch("layer_norm: affine parameters do not match width");
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  Tensor xhat({n, c});
  std::vector<double> inv_std(static_cast<size_t>(n));
  Tensor out({n, c});
  for (int64_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (int64_t j = 0; j < c; ++j) mu += xv[i * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double d = xv[i * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int64_t j = 0; j < c; ++j) {
      const double h = (xv[i * c + j] - mu) * is;
      xhat[i * c + j] = h;
      out[i * c + j] = h * gv[j] + bv[j];
    }
  }
  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape()->record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
        const auto& gv = t.value(ig);
        if (t.requires_grad(ig) || t.requires_grad(ib)) {
          auto& gg = t.grad_ref(ig);
          auto& gb = t.grad_ref(ib);
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < c; ++j) {
              gg[j] += g[i * c + j] * xhat[i * c + j];
              gb[j] += g[i * c + j];
            }
        }
        if (!t.requires_grad(ix)) return;
        auto& gx = t.grad_ref(ix);
        for (int64_t i = 0; i < n; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (int64_t j = 0; j < c; ++j) {
            const double dh = g[i * c + j] * gv[j];
            m1 += dh;
            m2 += dh * xhat[i * c + j];
          }
          m1 /= static_cast<double>(c);
          m2 /= static_cast<double>(c);
          const double is = inv_std[static_cast<size_t>(i)];
          for (int64_t j = 0; j < c; ++j) {
            const double dh = g[i * c + j] * gv[j];
            gx[i * c + j] += is * (dh - m1 - xhat[i * c + j] * m2);
          }
        }
      });
}

Var gelu(Var x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  Tensor out = map_values(x.value(), [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + a * v * v * v))); });
  const auto ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [ix](Tape& t, const Tensor& g) {
    const auto& xv = t.value(ix);
    auto& gx = t.grad_ref(ix);
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double v = xv[i];
      const double th = std::tanh(k * (v + a * v * v * v));
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * k * (1.0 + 3.0 * a * v * v);
      gx[i] += g[i] * d;
    }
  });
}

Var relu(Var x) { return leaky_relu(x, 0.0); }

Var leaky_relu(Var x, double slope) {
  Tensor out = map_values(x.value(), [slope](double v) { return v > 0.0 ? v : slope * v; });
  const auto ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [ix, slope](Tape& t, const Tensor& g) {
    const auto& xv = t.value(ix);
    auto& gx = t.grad_ref(ix);
    for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * (xv[i] > 0.0 ? 1.0 : slope);
  });
}

Var normalize_rows(Var x, double eps) {
  need_rank2(x, "normalize_rows");
  const auto n = x.dim(0), c = x.dim(1);
  const auto& xv = x.value();
  Tensor out({n, c});
  std::vector<double> norms(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) s += xv[i * c + j] * xv[i * c + j];
    const double nr = std::sqrt(s);
    norms[static_cast<size_t>(i)] = nr;
    if (nr < eps) continue;
    for (int64_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] / nr;
  }
  const auto ix = x.id();
  Tensor y = out;
  return x.tape()->record(std::move(out), {ix},
                          [ix, n, c, eps, y = std::move(y), norms = std::move(norms)](Tape& t, const Tensor& g) {
                            auto& gx = t.grad_ref(ix);
                            for (int64_t i = 0; i < n; ++i) {
                              const double nr = norms[static_cast<size_t>(i)];
                              if (nr < eps) continue;
                              double dot = 0.0;
                              for (int64_t j = 0; j < c; ++j) dot += y[i * c + j] * g[i * c + j];
                              for (int64_t j = 0; j < c; ++j) gx[i * c + j] += (g[i * c + j] - y[i * c + j] * dot) / nr;
                            }
                          });
}

Var cosine_matrix(Var a, Var b) { return matmul_nt(normalize_rows(a), normalize_rows(b)); }

Var max_over_rows(Var x, int64_t first, int64_t count) {
  need_rank2(x, "max_over_rows");
  const auto k = x.dim(0), p = x.dim(1);
  if (count < 1 || first < 0 || first + count > k) throw ShapeMismatch("max_over_rows: row range out of bounds");
  const auto& xv = x.value();
  Tensor out({p});
  std::vector<int64_t> arg(static_cast<size_t>(p));
  for (int64_t j = 0; j < p; ++j) {
    int64_t best = first;
    for (int64_t i = first + 1; i < first + count; ++i)
      if (xv[i * p + j] > xv[best * p + j]) best = i;
    arg[static_cast<size_t>(j)] = best;
    out[j] = xv[best * p + j];
  }
  const auto ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [ix, p, arg = std::move(arg)](Tape& t, const Tensor& g) {
    auto& gx = t.grad_ref(ix);
    for (int64_t j = 0; j < p; ++j) gx[arg[static_cast<size_t>(j)] * p + j] += g[j];
  });
}

Var slice_rows(Var x, int64_t first, int64_t count) {
  need_rank2(x, "slice_rows");
  const auto n = x.dim(0), c = x.dim(1);
  if (first < 0 || count < 0 || first + count > n) throw ShapeMismatch("slice_rows: out of range");
  const auto& xv = x.value();
  Tensor out({count, c}, std::vector<double>(xv.vec().begin() + first * c, xv.vec().begin() + (first + count) * c));
  const auto ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [ix, first, c](Tape& t, const Tensor& g) {
    auto& gx = t.grad_ref(ix);
    for (int64_t i = 0; i < g.numel(); ++i) gx[first * c + i] += g[i];
  });
}

Var slice_cols(Var x, int64_t first, int64_t count) {
  need_rank2(x, "slice_cols");
  const auto n = x.dim(0), c = x.dim(1);
  if (first < 0 || count < 0 || first + count > c) throw ShapeMismatch("slice_cols: out of range");
  const auto& xv = x.value();
  Tensor out({n, count});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < count; ++j) out[i * count + j] = xv[i * c + first + j];
  const auto ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [ix, first, n, c, count](Tape& t, const Tensor& g) {
    auto& gx = t.grad_ref(ix);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < count; ++j) gx[i * c + first + j] += g[i * count + j];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
  const auto c = parts.front().dim(1);
  int64_t rows = 0;
  std::vector<int32_t> ids;
  std::vector<int64_t> offsets;
  for (const auto& p : parts) {
    need_rank2(p, "concat_rows");
    if (p.dim(1) != c) throw ShapeMismatch("concat_rows: column counts differ");
    offsets.push_back(rows);
    rows += p.dim(0);
    ids.push_back(p.id());
  }
  std::vector<double> data;
  data.reserve(static_cast<size_t>(rows * c));
  for (const auto& p : parts) data.insert(data.end(), p.value().vec().begin(), p.value().vec().end());
  Tape* tape = parts.front().tape();
  return tape->record(Tensor({rows, c}, std::move(data)), ids, [ids, offsets, c](Tape& t, const Tensor& g) {
    for (size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto& gp = t.grad_ref(ids[k]);
      for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += g[offsets[k] * c + i];
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
  const auto n = parts.front().dim(0);
  int64_t cols = 0;
  std::vector<int32_t> ids;
  std::vector<int64_t> offsets, widths;
  for (const auto& p : parts) {
    need_rank2(p, "concat_cols");
    if (p.dim(0) != n) throw ShapeMismatch("concat_cols: row counts differ");
    offsets.push_back(cols);
    widths.push_back(p.dim(1));
    cols += p.dim(1);
    ids.push_back(p.id());
  }
  Tensor out({n, cols});
  for (size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < widths[k]; ++j) out[i * cols + offsets[k] + j] = v[i * widths[k] + j];
  }
  Tape* tape = parts.front().tape();
  return tape->record(std::move(out), ids, [ids, offsets, widths, n, cols](Tape& t, const Tensor& g) {
    for (size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto& gp = t.grad_ref(ids[k]);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < widths[k]; ++j) gp[i * widths[k] + j] += g[i * cols + offsets[k] + j];
    }
  });
}

Var gather_rows(Var x, const std::vector<int64_t>& rows) {
  need_rank2(x, "gather_rows");
  const auto n = x.dim(0), c = x.dim(1);
  const auto& xv = x.value();
  Tensor out({static_cast<int64_t>(rows.size()), c});
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= n) throw ShapeMismatch("gather_rows: index out of range");
    std::copy_n(xv.ptr() + rows[r] * c, c, out.ptr() + static_cast<int64_t>(r) * c);
  }
  const auto ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [ix, rows, c](Tape& t, const Tensor& g) {
    auto& gx = t.grad_ref(ix);
    for (size_t r = 0; r < rows.size(); ++r)
      for (int64_t j = 0; j < c; ++j) gx[rows[r] * c + j] += g[static_cast<int64_t>(r) * c + j];
  });
}

Var scatter_rows(Var base, Var rows_value, const std::vector<int64_t>& rows) {
  need_rank2(base, "scatter_rows");
  need_rank2(rows_value, "scatter_rows");
  const auto n = base.dim(0), c = base.dim(1);
  if (rows_value.dim(1) != c || rows_value.dim(0) != static_cast<int64_t>(rows.size()))
    throw ShapeMismatch("scatter_rows: replacement rows do not match");
  Tensor out = base.value();
  std::vector<uint8_t> replaced(static_cast<size_t>(n), 0);
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= n) throw ShapeMismatch("scatter_rows: index out of range");
    replaced[static_cast<size_t>(rows[r])] = 1;
    std::copy_n(rows_value.value().ptr() + static_cast<int64_t>(r) * c, c, out.ptr() + rows[r] * c);
  }
  const auto ib = base.id(), iv = rows_value.id();
  return base.tape()->record(std::move(out), {ib, iv}, [ib, iv, rows, replaced, n, c](Tape& t, const Tensor& g) {
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_ref(ib);
      for (int64_t i = 0; i < n; ++i)
        if (!replaced[static_cast<size_t>(i)])
          for (int64_t j = 0; j < c; ++j) gb[i * c + j] += g[i * c + j];
    }
    if (t.requires_grad(iv)) {
      auto& gv = t.grad_ref(iv);
      for (size_t r = 0; r < rows.size(); ++r)
        for (int64_t j = 0; j < c; ++j) gv[static_cast<int64_t>(r) * c + j] += g[rows[r] * c + j];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const auto ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [ix](Tape& t, const Tensor& g) {
    auto& gx = t.grad_ref(ix);
    for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
  });
}

Var outer_add(Var col, Var row) {
  const auto n = col.value().numel(), m = row.value().numel();
  Tensor out({n, m});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out[i * m + j] = col.value()[i] + row.value()[j];
  const auto ic = col.id(), ir = row.id();
  return col.tape()->record(std::move(out), {ic, ir}, [ic, ir, n, m](Tape& t, const Tensor& g) {
    if (t.requires_grad(ic)) {
      auto& gc = t.grad_ref(ic);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) gc[i] += g[i * m + j];
    }
    if (t.requires_grad(ir)) {
      auto& gr = t.grad_ref(ir);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) gr[j] += g[i * m + j];
    }
  });
}

Var relu_row_normalize(Var s) {
  need_rank2(s, "relu_row_normalize");
  const auto n = s.dim(0), m = s.dim(1);
  const auto& sv = s.value();
  Tensor out({n, m});
  std::vector<double> denom(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (int64_t j = 0; j < m; ++j) d += std::max(0.0, sv[i * m + j]);
    denom[static_cast<size_t>(i)] = d;
    if (d <= 0.0) continue;
    for (int64_t j = 0; j < m; ++j) out[i * m + j] = std::max(0.0, sv[i * m + j]) / d;
  }
  const auto is = s.id();
  Tensor w = out;
  return s.tape()->record(std::move(out), {is},
                          [is, n, m, w = std::move(w), denom = std::move(denom)](Tape& t, const Tensor& g) {
                            const auto& sv = t.value(is);
                            auto& gs = t.grad_ref(is);
                            for (int64_t i = 0; i < n; ++i) {
                              const double d = denom[static_cast<size_t>(i)];
                              if (d <= 0.0) continue;
                              double dot = 0.0;
                              for (int64_t j = 0; j < m; ++j) dot += g[i * m + j] * w[i * m + j];
                              for (int64_t j = 0; j < m; ++j)
                                if (sv[i * m + j] > 0.0) gs[i * m + j] += (g[i * m + j] - dot) / d;
                            }
                          });
}

Var bce_two_way(Var bg, Var fg, const Tensor& target, double tau) {
  const auto p = fg.value().numel();
  if (bg.value().numel() != p || target.numel() != p) throw ShapeMismatch("bce_two_way: sizes differ");
  const auto& b = bg.value();
  const auto& f = fg.value();
  double loss = 0.0;
  std::vector<double> dz(static_cast<size_t>(p));
  for (int64_t i = 0; i < p; ++i) {
    const double z = tau * (f[i] - b[i]);
    const double y = target[i];
    // softplus(z) - y z
    const double sp = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    loss += sp - y * z;
    const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    dz[static_cast<size_t>(i)] = (sig - y) / static_cast<double>(p);
  }
  loss /= static_cast<double>(p);
  const auto ib = bg.id(), iff = fg.id();
  return fg.tape()->record(Tensor::scalar(loss), {ib, iff}, [ib, iff, tau, dz = std::move(dz)](Tape& t, const Tensor& g) {
    const double s = g[0] * tau;
    if (t.requires_grad(iff)) {
      auto& gf = t.grad_ref(iff);
      for (size_t i = 0; i < dz.size(); ++i) gf[static_cast<int64_t>(i)] += s * dz[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_ref(ib);
      for (size_t i = 0; i < dz.size(); ++i) gb[static_cast<int64_t>(i)] -= s * dz[i];
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const auto ix = x.id();
  return x.tape()->record(Tensor::scalar(s), {ix}, [ix](Tape& t, const Tensor& g) {
    auto& gx = t.grad_ref(ix);
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g[0];
  });
}

Var mean(Var x) {
  const auto n = x.value().numel();
  if (n == 0) throw ShapeMismatch("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

}  // namespace agmtr::ad
