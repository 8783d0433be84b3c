#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "dshadow/error.hpp"
#include "dshadow/numerics/tensor.hpp"

namespace dshadow::numerics {

struct MaskSpec {
  std::vector<int> masked_indices;  // sorted, unique patch indices
  double ratio = 0.4;
};

inline std::size_t masked_count(std::size_t num_patches, double ratio) {
  return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(num_patches)));
}

inline void validate(const MaskSpec& m, std::size_t num_patches) {
  require(m.ratio >= 0.0 && m.ratio <= 1.0, ErrorKind::config, "mask ratio outside [0,1]");
  require(m.masked_indices.size() == masked_count(num_patches, m.ratio), ErrorKind::config,
          "mask size does not equal round(ratio * N)");
  for (std::size_t i = 0; i < m.masked_indices.size(); ++i) {
    require(m.masked_indices[i] >= 0 && static_cast<std::size_t>(m.masked_indices[i]) < num_patches, ErrorKind::range,
            "masked index out of range");
    require(i == 0 || m.masked_indices[i] > m.masked_indices[i - 1], ErrorKind::config,
            "masked indices must be sorted and unique");
  }
}

inline MaskSpec random_mask(std::size_t num_patches, double ratio, Rng& rng) {
  require(ratio >= 0.0 && ratio <= 1.0, ErrorKind::config, "mask ratio outside [0,1]");
  std::vector<int> all(num_patches);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(masked_count(num_patches, ratio));
  std::sort(all.begin(), all.end());
  return MaskSpec{std::move(all), ratio};
}

struct MimLoss {
  double value = 0.0;
  Mat grad_logits;  // |M| x K, softmax - one_hot per masked patch
};

// logits row r scores masked patch mask.masked_indices[r]; targets holds the
// visual-token index of every patch (length N).
inline MimLoss mim_loss(const Mat& logits, std::span<const int> targets, const MaskSpec& mask) {
  const auto m = static_cast<Eigen::Index>(mask.masked_indices.size());
  require(logits.rows() == m, ErrorKind::dimension, "need one logit row per masked patch");
  const Eigen::Index k = logits.cols();
  require(k >= 1, ErrorKind::dimension, "empty logit rows");
  MimLoss out;
  out.grad_logits = Mat::Zero(m, k);
  for (Eigen::Index r = 0; r < m; ++r) {
    const int patch = mask.masked_indices[static_cast<std::size_t>(r)];
    require(patch >= 0 && static_cast<std::size_t>(patch) < targets.size(), ErrorKind::range, "masked index outside targets");
    const int z = targets[static_cast<std::size_t>(patch)];
    require(z >= 0 && z < k, ErrorKind::range, "target index " + std::to_string(z) + " >= K = " + std::to_string(k));
    const double mx = logits.row(r).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(r).array() - mx).exp();
    const double sum = e.sum();
    out.value += -(logits(r, z) - mx - std::log(sum));
    out.grad_logits.row(r) = e / sum;
    out.grad_logits(r, z) -= 1.0;
  }
  return out;
}

inline double total_loss(double mim, double cls) {
  require(std::isfinite(mim) && std::isfinite(cls), ErrorKind::numeric, "loss terms must be finite");
  return mim + cls;
}

// Linear token-prediction heads. The patch head reads h_i; the [CLS] head
// reads the concatenation [cls; h_i].
struct PretrainHeads {
  Mat patch_weight;  // d x K
  Vec patch_bias;    // K
  Mat cls_weight;    // 2d x K
  Vec cls_bias;      // K
};

inline PretrainHeads init_heads(Eigen::Index width, Eigen::Index k, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "heads"));
  return {gaussian_matrix(rng, width, k, 1.0 / std::sqrt(static_cast<double>(width))), Vec::Zero(k),
          gaussian_matrix(rng, 2 * width, k, 1.0 / std::sqrt(static_cast<double>(2 * width))), Vec::Zero(k)};
}

struct PretrainObjective {
  double mim = 0.0;
  double cls = 0.0;
  double total = 0.0;
  PretrainHeads grad_heads;
  Mat grad_patches;  // N x d
  Vec grad_cls;      // d
};

// patches: N x d encoder outputs (masked positions already replaced at the input).
inline PretrainObjective pretrain_objective(const Mat& patches, const Vec& cls, std::span<const int> targets,
                                            const MaskSpec& mask, const PretrainHeads& heads) {
  const Eigen::Index d = patches.cols();
  require(cls.size() == d, ErrorKind::dimension, "cls width differs from patch width");
  require(heads.patch_weight.rows() == d && heads.cls_weight.rows() == 2 * d, ErrorKind::dimension, "head input widths");
  require(static_cast<Eigen::Index>(targets.size()) == patches.rows(), ErrorKind::dimension, "one target per patch");
  validate(mask, static_cast<std::size_t>(patches.rows()));

  const auto m = static_cast<Eigen::Index>(mask.masked_indices.size());
  Mat inputs(m, d), joint(m, 2 * d);
  for (Eigen::Index r = 0; r < m; ++r) {
    const Eigen::Index i = mask.masked_indices[static_cast<std::size_t>(r)];
    inputs.row(r) = patches.row(i);
    joint.row(r) << cls.transpose(), patches.row(i);
  }
  const Mat patch_logits = (inputs * heads.patch_weight).rowwise() + heads.patch_bias.transpose();
  const Mat cls_logits = (joint * heads.cls_weight).rowwise() + heads.cls_bias.transpose();
  const auto mim = mim_loss(patch_logits, targets, mask);
  const auto aux = mim_loss(cls_logits, targets, mask);

  PretrainObjective out;
  out.mim = mim.value;
  out.cls = aux.value;
  out.total = total_loss(mim.value, aux.value);
  out.grad_heads.patch_weight = inputs.transpose() * mim.grad_logits;
  out.grad_heads.patch_bias = mim.grad_logits.colwise().sum().transpose();
  out.grad_heads.cls_weight = joint.transpose() * aux.grad_logits;
  out.grad_heads.cls_bias = aux.grad_logits.colwise().sum().transpose();
  out.grad_patches = Mat::Zero(patches.rows(), d);
  const Mat g_inputs = mim.grad_logits * heads.patch_weight.transpose();
  const Mat g_joint = aux.grad_logits * heads.cls_weight.transpose();
  for (Eigen::Index r = 0; r < m; ++r) {
    const Eigen::Index i = mask.masked_indices[static_cast<std::size_t>(r)];
    out.grad_patches.row(i) += g_inputs.row(r) + g_joint.row(r).tail(d);
  }
  out.grad_cls = g_joint.leftCols(d).colwise().sum().transpose();
  return out;
}

}  // namespace dshadow::numerics
