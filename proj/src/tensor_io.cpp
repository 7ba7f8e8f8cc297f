#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "agmtr/tensor.hpp"

namespace agmtr {

namespace {

constexpr char kMagic[4] = {'A', 'G', 'T', 'R'};

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<uint8_t>(v >> (8 * b)));
}

void put_f32(std::vector<uint8_t>& out, float f) {
  const auto v = std::bit_cast<uint32_t>(f);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<uint8_t>(v >> (8 * b)));
}

uint64_t get_u64(std::span<const uint8_t> in, size_t pos) {
  uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<uint64_t>(in[pos + b]) << (8 * b);
  return v;
}

float get_f32(std::span<const uint8_t> in, size_t pos) {
  uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<uint32_t>(in[pos + b]) << (8 * b);
  return std::bit_cast<float>(v);
}

}  // namespace

std::vector<uint8_t> encode_tensor(const Tensor& tensor) {
  if (tensor.rank() > 255) throw IoError("tensor rank exceeds 255");
  std::vector<uint8_t> out(kMagic, kMagic + 4);
  out.push_back(static_cast<uint8_t>(tensor.rank()));
  for (auto d : tensor.shape()) put_u64(out, static_cast<uint64_t>(d));
  out.reserve(out.size() + 4 * static_cast<size_t>(tensor.numel()));
  for (double v : tensor.data()) put_f32(out, static_cast<float>(v));
  return out;
}

Tensor decode_tensor(std::span<const uint8_t> bytes) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("bad tensor magic");
  const size_t rank = bytes[4];
  size_t pos = 5;
  if (bytes.size() < pos + 8 * rank) throw IoError("truncated tensor header");
  Shape shape;
  for (size_t i = 0; i < rank; ++i, pos += 8) shape.push_back(static_cast<int64_t>(get_u64(bytes, pos)));
  const auto n = static_cast<size_t>(shape_numel(shape));
  if (bytes.size() != pos + 4 * n) throw IoError("tensor payload size mismatch");
  std::vector<double> data(n);
  for (size_t i = 0; i < n; ++i, pos += 4) data[i] = get_f32(bytes, pos);
  return Tensor(std::move(shape), std::move(data));
}

void write_tensor_file(const std::filesystem::path& path, const Tensor& tensor) {
  const auto bytes = encode_tensor(tensor);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

Tensor read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

}  // namespace agmtr
