#pragma once

#include <limits>
#include <vector>

#include "dshadow/error.hpp"
#include "dshadow/numerics/tensor.hpp"

namespace dshadow::numerics {

// K x D code vectors plus the d_enc x D map taking encoder features into code space.
struct Codebook {
  Mat vectors;
  Mat projection;

  Eigen::Index size() const { return vectors.rows(); }
  Eigen::Index code_dim() const { return vectors.cols(); }
  Eigen::Index feature_dim() const { return projection.rows(); }
};

inline void validate(const Codebook& cb) {
  require(cb.size() >= 2, ErrorKind::config, "codebook needs at least 2 entries");
  require(cb.projection.cols() == cb.code_dim(), ErrorKind::dimension, "projection output width != code dimension");
  require(all_finite(cb.vectors) && all_finite(cb.projection), ErrorKind::numeric, "codebook has non-finite values");
}

// Gaussian codes; projection has orthonormal columns.
inline Codebook init_codebook(Eigen::Index k, Eigen::Index code_dim, Eigen::Index feature_dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "codebook"));
  Codebook cb;
  cb.vectors = gaussian_matrix(rng, k, code_dim, 1.0);
  cb.projection = orthonormal_columns(rng, feature_dim, code_dim);
  return cb;
}

struct Quantized {
  int index = -1;
  Vec code;                // unnormalized codebook row v_z
  double distance = 0.0;   // squared distance between the normalized vectors
};

// Nearest code for an already-projected feature. Ties resolve to the smaller index.
inline Quantized quantize_projected(const Vec& projected, const Mat& codes) {
  const Vec u = l2_normalized(projected);
  Quantized q;
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < codes.rows(); ++j) {
    const Vec c = l2_normalized(codes.row(j).transpose());
    const double d = (u - c).squaredNorm();
    if (d < best) {
      best = d;
      q.index = static_cast<int>(j);
    }
  }
  q.code = codes.row(q.index).transpose();
  q.distance = best;
  return q;
}

inline Quantized quantize(const Vec& feature, const Codebook& cb) {
  validate(cb);
  require(feature.size() == cb.feature_dim(), ErrorKind::dimension, "feature width does not match codebook projection");
  require(all_finite(feature), ErrorKind::numeric, "non-finite feature");
  return quantize_projected(cb.projection.transpose() * feature, cb.vectors);
}

struct VqkdGradients {
  Mat features;    // N x d_enc
  Mat outputs;     // N x d_t
  Mat codes;       // K x D
  Mat projection;  // d_enc x D
};

struct VqkdLoss {
  double value = 0.0;
  double cosine_term = 0.0;      // sum of -cos(o_i, t_i)
  double codebook_term = 0.0;    // sum |sg[l2(h_i)] - l2(v_z)|^2
  double commitment_term = 0.0;  // sum |l2(h_i) - sg[l2(v_z)]|^2
  std::vector<int> indices;
  VqkdGradients grad;
};

inline double cosine(const Vec& a, const Vec& b) {
  const double na = a.norm(), nb = b.norm();
  require(na > 0.0 && nb > 0.0, ErrorKind::numeric, "cosine similarity of a zero vector");
  return a.dot(b) / (na * nb);
}

// Minimized form of the tokenizer objective: the cosine term enters with a
// negative sign so lower is better. Codebook term updates only the codes,
// commitment term only the features (and projection).
inline VqkdLoss vqkd_loss(const Mat& features, const Mat& outputs, const Mat& targets, const Codebook& cb) {
  validate(cb);
  const Eigen::Index n = features.rows();
  require(outputs.rows() == n && targets.rows() == n, ErrorKind::dimension, "features/outputs/targets row counts differ");
  require(outputs.cols() == targets.cols(), ErrorKind::dimension, "outputs and targets differ in width");
  require(features.cols() == cb.feature_dim(), ErrorKind::dimension, "feature width does not match codebook projection");

  VqkdLoss loss;
  loss.grad.features = Mat::Zero(n, features.cols());
  loss.grad.outputs = Mat::Zero(n, outputs.cols());
  loss.grad.codes = Mat::Zero(cb.size(), cb.code_dim());
  loss.grad.projection = Mat::Zero(cb.feature_dim(), cb.code_dim());
  loss.indices.resize(static_cast<std::size_t>(n));

  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec o = outputs.row(i).transpose();
    const Vec t = targets.row(i).transpose();
    const double c = cosine(o, t);
    loss.cosine_term -= c;
    const double no = o.norm(), nt = t.norm();
    loss.grad.outputs.row(i) = -(t / (no * nt) - c * o / (no * no)).transpose();

    const Vec h = features.row(i).transpose();
    const Vec hp = cb.projection.transpose() * h;
    const Quantized q = quantize_projected(hp, cb.vectors);
    loss.indices[static_cast<std::size_t>(i)] = q.index;
    const Vec a = l2_normalized(hp);
    const Vec b = l2_normalized(q.code);
    const Vec diff = a - b;
    loss.codebook_term += diff.squaredNorm();
    loss.commitment_term += diff.squaredNorm();

    // codebook term: gradient flows to v_z only
    loss.grad.codes.row(q.index) += l2_normalize_backward(q.code, -2.0 * diff).transpose();
    // commitment term: gradient flows to h (through the projection) only
    const Vec g_hp = l2_normalize_backward(hp, 2.0 * diff);
    loss.grad.features.row(i) = (cb.projection * g_hp).transpose();
    loss.grad.projection += h * g_hp.transpose();
  }
  loss.value = loss.cosine_term + loss.codebook_term + loss.commitment_term;
  return loss;
}

}  // namespace dshadow::numerics
