#include "agmtr/tensor.hpp"

#include <malloc.h>

#include <atomic>
#include <cmath>
#include <iostream>
#include <sstream>

namespace agmtr {

namespace {
std::atomic<bool> g_checked{true};
std::atomic<bool> g_warnings{true};
std::atomic<long> g_warning_count{0};
}  // namespace

void warn(const std::string& message) {
  ++g_warning_count;
  if (g_warnings) std::cerr << "[agmtr] warning: " << message << '\n';
}
void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
}

void set_warnings_enabled(bool enabled) { g_warnings = enabled; }
long warning_count() { return g_warning_count; }

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeMismatch("negative dimension in " + shape_str(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
    throw ShapeMismatch("data length " + std::to_string(data_.size()) + " does not match shape " +
                        shape_str(shape_));
  if (g_checked && !all_finite()) throw NonFiniteValue("non-finite value in tensor " + shape_str(shape_));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::allow_nonfinite(Shape shape, std::vector<double> data) {
  Tensor t;
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeMismatch("data length does not match shape " + shape_str(shape));
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

Tensor Tensor::identity(int64_t n) {
  Tensor t({n, n});
  for (int64_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

void Tensor::set_checked_mode(bool on) { g_checked = on; }
bool Tensor::checked_mode() { return g_checked; }

int64_t Tensor::dim(int64_t axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw ShapeMismatch("axis out of range for " + shape_str(shape_));
  return shape_[static_cast<size_t>(axis)];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw ShapeMismatch("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::row(int64_t i) const {
  if (rank() != 2 || i < 0 || i >= shape_[0]) throw ShapeMismatch("row index out of range");
  const auto c = shape_[1];
  return Tensor({c}, std::vector<double>(data_.begin() + i * c, data_.begin() + (i + 1) * c));
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    throw ShapeMismatch(std::string(what) + ": expected " + shape_str(expected) + ", got " + shape_str(t.shape()));
}

void require_rank(const Tensor& t, int64_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeMismatch(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                        shape_str(t.shape()));
}

BinaryMask::BinaryMask(int64_t height, int64_t width)
    : height_(height), width_(width), data_(static_cast<size_t>(height * width), 0) {}

BinaryMask::BinaryMask(int64_t height, int64_t width, std::vector<uint8_t> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (static_cast<int64_t>(data_.size()) != height * width) throw ShapeMismatch("mask data does not match H×W");
  for (auto v : data_)
    if (v > 1) throw Error("binary mask values must be 0 or 1");
}

BinaryMask BinaryMask::ones(int64_t height, int64_t width) {
  return BinaryMask(height, width, std::vector<uint8_t>(static_cast<size_t>(height * width), 1));
}

int64_t BinaryMask::count() const {
  int64_t n = 0;
  for (auto v : data_) n += v;
  return n;
}

BinaryMask BinaryMask::complement() const {
  BinaryMask out(height_, width_);
  for (size_t i = 0; i < data_.size(); ++i) out.data_[i] = 1 - data_[i];
  return out;
}

std::vector<int64_t> BinaryMask::active_indices() const {
  std::vector<int64_t> idx;
  for (size_t i = 0; i < data_.size(); ++i)
    if (data_[i]) idx.push_back(static_cast<int64_t>(i));
  return idx;
}

Tensor BinaryMask::as_tensor() const {
  Tensor t({size()});
  for (size_t i = 0; i < data_.size(); ++i) t[static_cast<int64_t>(i)] = data_[i];
  return t;
}

bool BinaryMask::subset_of(const BinaryMask& other) const {
  if (height_ != other.height_ || width_ != other.width_) return false;
  for (size_t i = 0; i < data_.size(); ++i)
    if (data_[i] && !other.data_[i]) return false;
  return true;
}

}  // namespace agmtr
