#include "agmtr/encoder.hpp"

#include <cmath>
#include <string>

namespace agmtr {

namespace {

std::string block_name(int64_t b, const char* leaf) { return "enc.block" + std::to_string(b) + "." + leaf; }

ad::Var self_attention(ad::Var x, const ParamRegistry& params, const EncoderConfig& cfg, int64_t b) {
  auto& tape = *x.tape();
  const auto c = cfg.dim;
  const auto hd = c / cfg.heads;
  auto qkv = ad::add_bias(ad::matmul(x, params.bind(tape, block_name(b, "attn.wqkv"))),
                          params.bind(tape, block_name(b, "attn.bqkv")));
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<ad::Var> heads;
  for (int64_t h = 0; h < cfg.heads; ++h) {
    auto q = ad::slice_cols(qkv, h * hd, hd);
    auto k = ad::slice_cols(qkv, c + h * hd, hd);
    auto v = ad::slice_cols(qkv, 2 * c + h * hd, hd);
    auto attn = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), scale));
    heads.push_back(ad::matmul(attn, v));
  }
  auto merged = cfg.heads == 1 ? heads.front() : ad::concat_cols(heads);
  return ad::add_bias(ad::matmul(merged, params.bind(tape, block_name(b, "attn.wo"))),
                      params.bind(tape, block_name(b, "attn.bo")));
}

}  // namespace

void EncoderConfig::validate() const {
  if (patch_size < 1 || depth < 0 || dim < 1 || heads < 1 || mlp_ratio < 1)
    throw Error("encoder config: sizes must be positive");
  if (dim % heads != 0) throw Error("encoder config: dim must be divisible by heads");
  if (image_height % patch_size != 0 || image_width % patch_size != 0)
    throw ShapeMismatch("encoder config: image size must be divisible by patch size");
}

void init_encoder_params(ParamRegistry& params, const EncoderConfig& cfg, uint64_t seed) {
  cfg.validate();
  const auto c = cfg.dim;
  const auto in = 3 * cfg.patch_size * cfg.patch_size;
  auto tn = [&](const std::string& name, Shape shape) { params.add(name, trunc_normal(shape, 0.02, name_seed(name, seed))); };
  auto zeros = [&](const std::string& name, Shape shape) { params.add(name, Tensor(std::move(shape))); };
  auto ones = [&](const std::string& name, int64_t n) { params.add(name, Tensor::full({n}, 1.0)); };
  tn("enc.patch.w", {in, c});
  zeros("enc.patch.b", {c});
  tn("enc.pos", {cfg.tokens(), c});
  for (int64_t b = 0; b < cfg.depth; ++b) {
    ones(block_name(b, "ln1.g"), c);
    zeros(block_name(b, "ln1.b"), {c});
    tn(block_name(b, "attn.wqkv"), {c, 3 * c});
    zeros(block_name(b, "attn.bqkv"), {3 * c});
    tn(block_name(b, "attn.wo"), {c, c});
    zeros(block_name(b, "attn.bo"), {c});
    ones(block_name(b, "ln2.g"), c);
    zeros(block_name(b, "ln2.b"), {c});
    tn(block_name(b, "mlp.w1"), {c, cfg.mlp_ratio * c});
    zeros(block_name(b, "mlp.b1"), {cfg.mlp_ratio * c});
    tn(block_name(b, "mlp.w2"), {cfg.mlp_ratio * c, c});
    zeros(block_name(b, "mlp.b2"), {c});
  }
  ones("enc.ln_f.g", c);
  zeros("enc.ln_f.b", {c});
}

Tensor patchify(const Tensor& image, int64_t p) {
  require_rank(image, 3, "patchify");
  const auto h = image.dim(0), w = image.dim(1);
  if (image.dim(2) != 3) throw ShapeMismatch("patchify: expected 3 channels");
  if (h % p != 0 || w % p != 0) throw ShapeMismatch("patchify: image not divisible by patch size");
  const auto gh = h / p, gw = w / p, d = 3 * p * p;
  Tensor out({gh * gw, d});
  for (int64_t gy = 0; gy < gh; ++gy)
    for (int64_t gx = 0; gx < gw; ++gx) {
      double* row = out.ptr() + (gy * gw + gx) * d;
      int64_t k = 0;
      for (int64_t dy = 0; dy < p; ++dy)
        for (int64_t dx = 0; dx < p; ++dx)
          for (int64_t ch = 0; ch < 3; ++ch) row[k++] = (image.at(gy * p + dy, gx * p + dx, ch) - 0.5) * 4.0;
    }
  return out;
}

ad::Var encode(ad::Tape& tape, const ParamRegistry& params, const EncoderConfig& cfg, const Tensor& image) {
  require_rank(image, 3, "encode");
  if (image.dim(0) != cfg.image_height || image.dim(1) != cfg.image_width)
    throw ShapeMismatch("encode: image " + shape_str(image.shape()) + " does not match encoder geometry " +
                        std::to_string(cfg.image_height) + "x" + std::to_string(cfg.image_width));
  auto patches = tape.constant(patchify(image, cfg.patch_size));
  auto x = ad::add_bias(ad::matmul(patches, params.bind(tape, "enc.patch.w")), params.bind(tape, "enc.patch.b"));
  x = ad::add(x, params.bind(tape, "enc.pos"));
  for (int64_t b = 0; b < cfg.depth; ++b) {
    auto h = ad::layer_norm(x, params.bind(tape, block_name(b, "ln1.g")), params.bind(tape, block_name(b, "ln1.b")));
    x = ad::add(x, self_attention(h, params, cfg, b));
    h = ad::layer_norm(x, params.bind(tape, block_name(b, "ln2.g")), params.bind(tape, block_name(b, "ln2.b")));
    h = ad::add_bias(ad::matmul(h, params.bind(tape, block_name(b, "mlp.w1"))), params.bind(tape, block_name(b, "mlp.b1")));
    h = ad::gelu(h);
    h = ad::add_bias(ad::matmul(h, params.bind(tape, block_name(b, "mlp.w2"))), params.bind(tape, block_name(b, "mlp.b2")));
    x = ad::add(x, h);
  }
  return ad::layer_norm(x, params.bind(tape, "enc.ln_f.g"), params.bind(tape, "enc.ln_f.b"));
}

Tensor encode(const Tensor& image, const ParamRegistry& params, const EncoderConfig& cfg) {
  ad::Tape tape;
  auto f = encode(tape, params, cfg, image);
  return f.value().reshaped({cfg.grid_height(), cfg.grid_width(), cfg.dim});
}

}  // namespace agmtr
