#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "dshadow/error.hpp"
#include "dshadow/numerics/patch.hpp"
#include "dshadow/numerics/tensor.hpp"

namespace dshadow::numerics {

struct LayerNorm {
  Vec gamma;
  Vec beta;
  double eps = 1e-6;

  static LayerNorm identity(Eigen::Index d) { return {Vec::Ones(d), Vec::Zero(d), 1e-6}; }
};

// Pre-norm transformer block: x += Attn(LN1 x); x += MLP(LN2 x).
struct Block {
  LayerNorm ln1;
  Mat wq, wk, wv, wo;  // d x d, applied as x * W
  Vec bq, bk, bv, bo;
  LayerNorm ln2;
  Mat w1;  // d x hidden
  Vec b1;
  Mat w2;  // hidden x d
  Vec b2;
};

struct EncoderState {
  int patch_size = 8;
  int num_heads = 1;
  Mat patch_projection;  // (p*p*C) x d
  Vec patch_bias;
  Vec cls_token;
  Mat pos_embedding;  // (N+1) x d, or empty for none
  Vec mask_token;     // replaces masked patch embeddings; zero-size when unused
  std::vector<Block> blocks;
  bool final_norm = true;
  LayerNorm norm;

  Eigen::Index width() const { return patch_projection.cols(); }
};

struct EncoderConfig {
  int patch_size = 8;
  int channels = 3;
  int num_patches = 16;
  int width = 32;
  int layers = 2;
  int heads = 4;
  int mlp_hidden = 64;
  bool final_norm = true;
  bool positional = true;
};

// ---- elementwise helpers -----------------------------------------------------

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double gelu_grad(double x) {
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline Vec layer_norm(const Vec& x, const LayerNorm& ln) {
  const double mu = x.mean();
  const double var = (x.array() - mu).square().mean();
  const Vec xhat = (x.array() - mu) / std::sqrt(var + ln.eps);
  return ln.gamma.cwiseProduct(xhat) + ln.beta;
}

inline Mat layer_norm_rows(const Mat& x, const LayerNorm& ln) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) out.row(r) = layer_norm(x.row(r).transpose(), ln).transpose();
  return out;
}

// d(loss)/dx given d(loss)/dy for y = LN(x).
inline Vec layer_norm_backward(const Vec& x, const LayerNorm& ln, const Vec& gy) {
  const double mu = x.mean();
  const double var = (x.array() - mu).square().mean();
  const double inv_sigma = 1.0 / std::sqrt(var + ln.eps);
  const Vec xhat = (x.array() - mu) * inv_sigma;
  const Vec gxhat = ln.gamma.cwiseProduct(gy);
  const double m1 = gxhat.mean();
  const double m2 = gxhat.cwiseProduct(xhat).mean();
  return inv_sigma * (gxhat.array() - m1 - xhat.array() * m2).matrix();
}

inline void softmax_rows_inplace(Mat& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp();
    s.row(r) /= s.row(r).sum();
  }
}

// ---- blocks ------------------------------------------------------------------

inline Mat attention_sublayer(const Mat& x, const Block& b, int heads) {
  const Eigen::Index d = x.cols();
  require(heads >= 1 && d % heads == 0, ErrorKind::config, "width must be divisible by the head count");
  const Eigen::Index dh = d / heads;
  const Mat a = layer_norm_rows(x, b.ln1);
  const Mat q = (a * b.wq).rowwise() + b.bq.transpose();
  const Mat k = (a * b.wk).rowwise() + b.bk.transpose();
  const Mat v = (a * b.wv).rowwise() + b.bv.transpose();
  Mat o(x.rows(), d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Mat s = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
    softmax_rows_inplace(s);
    o.middleCols(h * dh, dh) = s * v.middleCols(h * dh, dh);
  }
  return x + ((o * b.wo).rowwise() + b.bo.transpose());
}

inline Mat mlp_sublayer(const Mat& x, const Block& b) {
  const Mat a = layer_norm_rows(x, b.ln2);
  Mat u = (a * b.w1).rowwise() + b.b1.transpose();
  u = u.unaryExpr([](double z) { return gelu(z); });
  return x + ((u * b.w2).rowwise() + b.b2.transpose());
}

inline Mat block_forward(const Mat& x, const Block& b, int heads) { return mlp_sublayer(attention_sublayer(x, b, heads), b); }

// ---- encoder -----------------------------------------------------------------

inline void validate(const EncoderState& enc, Eigen::Index num_patches, Eigen::Index patch_dim) {
  const Eigen::Index d = enc.width();
  require(d >= 1, ErrorKind::config, "encoder has zero width");
  require(enc.patch_projection.rows() == patch_dim, ErrorKind::dimension,
          "patch projection expects " + std::to_string(enc.patch_projection.rows()) + " inputs, patches have " +
              std::to_string(patch_dim));
  require(enc.patch_bias.size() == d && enc.cls_token.size() == d, ErrorKind::dimension, "bias/cls width mismatch");
  require(enc.pos_embedding.size() == 0 ||
              (enc.pos_embedding.rows() == num_patches + 1 && enc.pos_embedding.cols() == d),
          ErrorKind::dimension, "positional embedding must be (N+1) x d");
  bool finite = all_finite(enc.patch_projection) && all_finite(enc.patch_bias) && all_finite(enc.cls_token) &&
                all_finite(enc.pos_embedding) && all_finite(enc.mask_token);
  for (const auto& b : enc.blocks)
    finite = finite && all_finite(b.wq) && all_finite(b.wk) && all_finite(b.wv) && all_finite(b.wo) &&
             all_finite(b.w1) && all_finite(b.w2) && all_finite(b.b1) && all_finite(b.b2) && all_finite(b.ln1.gamma) &&
             all_finite(b.ln2.gamma);
  require(finite, ErrorKind::numeric, "encoder weights contain non-finite values");
}

// Initial token matrix: [CLS; Linear(x_1); ...; Linear(x_N)] + positions.
// Rows listed in `masked` (patch indices) use the mask token instead.
inline Mat embed_tokens(const PatchSet& ps, const EncoderState& enc, std::span<const int> masked = {}) {
  validate(enc, ps.count(), ps.patch_dim());
  const Eigen::Index n = ps.count();
  Mat x(n + 1, enc.width());
  x.row(0) = enc.cls_token.transpose();
  x.bottomRows(n) = (ps.patches * enc.patch_projection).rowwise() + enc.patch_bias.transpose();
  for (int i : masked) {
    require(i >= 0 && i < n, ErrorKind::range, "masked index out of range");
    require(enc.mask_token.size() == enc.width(), ErrorKind::config, "encoder has no mask token");
    x.row(i + 1) = enc.mask_token.transpose();
  }
  if (enc.pos_embedding.size() > 0) x += enc.pos_embedding;
  return x;
}

struct VitOutput {
  Mat tokens;       // (N+1) x d final tokens, row 0 is [CLS]
  Mat activations;  // (N+1) x d residual stream right after the last attention sublayer
  Mat patches() const { return tokens.bottomRows(tokens.rows() - 1); }
  Vec cls() const { return tokens.row(0).transpose(); }
};

// What follows the last attention sublayer: that block's MLP sublayer (if any
// blocks) and the final norm (if enabled). Acts on each token independently.
inline Mat tail_forward(const Mat& activations, const EncoderState& enc) {
  Mat x = enc.blocks.empty() ? activations : mlp_sublayer(activations, enc.blocks.back());
  if (enc.final_norm) x = layer_norm_rows(x, enc.norm);
  return x;
}

inline VitOutput vit_forward(const PatchSet& ps, const EncoderState& enc, std::span<const int> masked = {}) {
  Mat x = embed_tokens(ps, enc, masked);
  const int heads = enc.num_heads;
  for (std::size_t i = 0; i + 1 < enc.blocks.size(); ++i) x = block_forward(x, enc.blocks[i], heads);
  if (!enc.blocks.empty()) x = attention_sublayer(x, enc.blocks.back(), heads);
  VitOutput out;
  out.activations = x;
  out.tokens = tail_forward(x, enc);
  require(all_finite(out.tokens), ErrorKind::numeric, "encoder produced non-finite output");
  return out;
}

// d(score)/d(activation row) for one token, given d(score)/d(final token row).
inline Vec tail_backward_row(const Vec& activation, const EncoderState& enc, const Vec& grad_out) {
  Vec g = grad_out;
  if (enc.blocks.empty()) {
    if (enc.final_norm) g = layer_norm_backward(activation, enc.norm, g);
    return g;
  }
  const Block& b = enc.blocks.back();
  const Vec a = layer_norm(activation, b.ln2);
  const Vec u = b.w1.transpose() * a + b.b1;
  const Vec g_act = u.unaryExpr([](double z) { return gelu(z); });
  const Vec x2 = activation + b.w2.transpose() * g_act + b.b2;
  if (enc.final_norm) g = layer_norm_backward(x2, enc.norm, g);
  const Vec g_hidden = (b.w2 * g).cwiseProduct(u.unaryExpr([](double z) { return gelu_grad(z); }));
  const Vec g_a = b.w1 * g_hidden;
  return g + layer_norm_backward(activation, b.ln2, g_a);
}

// Seeded random encoder. Projections use N(0, 1/fan_in).
inline EncoderState init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  require(cfg.width % cfg.heads == 0, ErrorKind::config, "width must be divisible by heads");
  Rng rng(derive_seed(seed, "encoder"));
  const Eigen::Index d = cfg.width;
  const Eigen::Index pd = static_cast<Eigen::Index>(cfg.patch_size) * cfg.patch_size * cfg.channels;
  const auto s = [](Eigen::Index fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  EncoderState e;
  e.patch_size = cfg.patch_size;
  e.num_heads = cfg.heads;
  e.patch_projection = gaussian_matrix(rng, pd, d, s(pd));
  e.patch_bias = Vec::Zero(d);
  e.cls_token = gaussian_vector(rng, d, 0.02);
  e.mask_token = gaussian_vector(rng, d, 0.02);
  e.pos_embedding = cfg.positional ? gaussian_matrix(rng, cfg.num_patches + 1, d, 0.02) : Mat();
  for (int l = 0; l < cfg.layers; ++l) {
    Block b;
    b.ln1 = LayerNorm::identity(d);
    b.ln2 = LayerNorm::identity(d);
    b.wq = gaussian_matrix(rng, d, d, s(d));
    b.wk = gaussian_matrix(rng, d, d, s(d));
    b.wv = gaussian_matrix(rng, d, d, s(d));
    b.wo = gaussian_matrix(rng, d, d, s(d));
    b.bq = b.bk = b.bv = b.bo = Vec::Zero(d);
    b.w1 = gaussian_matrix(rng, d, cfg.mlp_hidden, s(d));
    b.b1 = Vec::Zero(cfg.mlp_hidden);
    b.w2 = gaussian_matrix(rng, cfg.mlp_hidden, d, s(cfg.mlp_hidden));
    b.b2 = Vec::Zero(d);
    e.blocks.push_back(std::move(b));
  }
  e.final_norm = cfg.final_norm;
  e.norm = LayerNorm::identity(d);
  return e;
}

// ---- token decoder (VQ-KD) -----------------------------------------------------

// Maps the sequence of quantized code vectors to teacher-space outputs.
struct DecoderState {
  int num_heads = 1;
  Mat input_projection;  // D x w
  Vec input_bias;
  std::vector<Block> blocks;
  LayerNorm norm;
  Mat output_projection;  // w x d_t
  Vec output_bias;
};

inline DecoderState init_decoder(Eigen::Index code_dim, Eigen::Index width, Eigen::Index teacher_dim, int layers, int heads,
                                 std::uint64_t seed) {
  require(width % heads == 0, ErrorKind::config, "decoder width must be divisible by heads");
  Rng rng(derive_seed(seed, "decoder"));
  const auto s = [](Eigen::Index fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  DecoderState dec;
  dec.num_heads = heads;
  dec.input_projection = gaussian_matrix(rng, code_dim, width, s(code_dim));
  dec.input_bias = Vec::Zero(width);
  for (int l = 0; l < layers; ++l) {
    Block b;
    b.ln1 = LayerNorm::identity(width);
    b.ln2 = LayerNorm::identity(width);
    b.wq = gaussian_matrix(rng, width, width, s(width));
    b.wk = gaussian_matrix(rng, width, width, s(width));
    b.wv = gaussian_matrix(rng, width, width, s(width));
    b.wo = gaussian_matrix(rng, width, width, s(width));
    b.bq = b.bk = b.bv = b.bo = Vec::Zero(width);
    b.w1 = gaussian_matrix(rng, width, 2 * width, s(width));
    b.b1 = Vec::Zero(2 * width);
    b.w2 = gaussian_matrix(rng, 2 * width, width, s(2 * width));
    b.b2 = Vec::Zero(width);
    dec.blocks.push_back(std::move(b));
  }
  dec.norm = LayerNorm::identity(width);
  dec.output_projection = gaussian_matrix(rng, width, teacher_dim, s(width));
  dec.output_bias = Vec::Zero(teacher_dim);
  return dec;
}

// codes: N x D rows v_{z_i}. Returns N x d_t outputs o_i.
inline Mat decode_tokens(const Mat& codes, const DecoderState& dec) {
  Mat x = (codes * dec.input_projection).rowwise() + dec.input_bias.transpose();
  for (const auto& b : dec.blocks) x = block_forward(x, b, dec.num_heads);
  x = layer_norm_rows(x, dec.norm);
  return (x * dec.output_projection).rowwise() + dec.output_bias.transpose();
}

// Synthetic teacher: a fixed seeded linear map of the raw patches.
inline Mat teacher_targets(const PatchSet& ps, Eigen::Index teacher_dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "teacher"));
  return ps.patches * gaussian_matrix(rng, ps.patch_dim(), teacher_dim, 1.0 / std::sqrt(static_cast<double>(ps.patch_dim())));
}

}  // namespace dshadow::numerics
