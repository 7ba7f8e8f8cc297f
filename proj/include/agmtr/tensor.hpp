#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "agmtr/errors.hpp"

namespace agmtr {

/// Keeps large tensor buffers on the heap instead of fresh mmap pages; the
/// training loop allocates and frees the same sizes thousands of times.
void tune_allocator();


using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles with shape metadata.
///
/// Construction from data validates that the data length matches the shape
/// and, while checked mode is on (the default), that every value is finite.
/// Additive attention masks carrying -inf must be built via
/// `Tensor::allow_nonfinite`.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  static Tensor allow_nonfinite(Shape shape, std::vector<double> data);
  static Tensor identity(int64_t n);

  static void set_checked_mode(bool on);
  static bool checked_mode();

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t axis) const;
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const double* ptr() const { return data_.data(); }
  double* ptr() { return data_.data(); }
  const std::vector<double>& vec() const { return data_; }

  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double at(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double& at(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }

  Tensor reshaped(Shape shape) const;
  Tensor row(int64_t i) const;
  bool all_finite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

void require_shape(const Tensor& t, const Shape& expected, const char* what);
void require_rank(const Tensor& t, int64_t rank, const char* what);

/// H×W map with values in {0,1}.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int64_t height, int64_t width);
  BinaryMask(int64_t height, int64_t width, std::vector<uint8_t> data);
  static BinaryMask ones(int64_t height, int64_t width);

  int64_t height() const { return height_; }
  int64_t width() const { return width_; }
  int64_t size() const { return height_ * width_; }
  int64_t count() const;
  bool any() const { return count() > 0; }

  uint8_t operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  uint8_t at(int64_t y, int64_t x) const { return data_[static_cast<size_t>(y * width_ + x)]; }
  void set(int64_t y, int64_t x, bool on) { data_[static_cast<size_t>(y * width_ + x)] = on ? 1 : 0; }
  void set(int64_t i, bool on) { data_[static_cast<size_t>(i)] = on ? 1 : 0; }
  const std::vector<uint8_t>& vec() const { return data_; }

  BinaryMask complement() const;
  /// Indices (row-major) of active pixels.
  std::vector<int64_t> active_indices() const;
  /// 1.0 on active pixels, 0.0 elsewhere, shape {H*W}.
  Tensor as_tensor() const;
  bool subset_of(const BinaryMask& other) const;

  bool operator==(const BinaryMask& other) const = default;

 private:
  int64_t height_ = 0;
  int64_t width_ = 0;
  std::vector<uint8_t> data_;
};

// Portable tensor file: "AGTR", u8 rank, rank × u64 dims, f32 payload, all
// little-endian.
void write_tensor_file(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor_file(const std::filesystem::path& path);
std::vector<uint8_t> encode_tensor(const Tensor& tensor);
Tensor decode_tensor(std::span<const uint8_t> bytes);

}  // namespace agmtr
