#pragma once

// Reference computations used to check the numerics module. Written with
// plain loops and no shared helpers so they fail independently.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "dshadow/numerics/gradcam.hpp"
#include "dshadow/numerics/mim.hpp"
#include "dshadow/numerics/patch.hpp"
#include "dshadow/numerics/vit.hpp"
#include "dshadow/numerics/vqkd.hpp"

namespace dshadow::numerics::oracle {

// Exhaustive nearest code after projecting and normalizing with loops.
inline int brute_force_index(const Vec& feature, const Codebook& cb) {
  const Eigen::Index d = cb.projection.rows(), dc = cb.projection.cols();
  std::vector<double> u(static_cast<std::size_t>(dc), 0.0);
  for (Eigen::Index j = 0; j < dc; ++j)
    for (Eigen::Index i = 0; i < d; ++i) u[static_cast<std::size_t>(j)] += cb.projection(i, j) * feature(i);
  double nu = 0.0;
  for (double x : u) nu += x * x;
  nu = std::sqrt(nu);
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < cb.vectors.rows(); ++k) {
    double nv = 0.0;
    for (Eigen::Index j = 0; j < dc; ++j) nv += cb.vectors(k, j) * cb.vectors(k, j);
    nv = std::sqrt(nv);
    double dist = 0.0;
    for (Eigen::Index j = 0; j < dc; ++j) {
      const double diff = u[static_cast<std::size_t>(j)] / nu - cb.vectors(k, j) / nv;
      dist += diff * diff;
    }
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<int>(k);
    }
  }
  return best;
}

struct VqkdPoint {
  Mat features, outputs, targets, codes, projection;
};

struct VqkdTerms {
  double cosine = 0.0, codebook = 0.0, commitment = 0.0;
  double total() const { return cosine + codebook + commitment; }
};

namespace detail {

inline std::vector<double> unit_row(const Mat& m, Eigen::Index r) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  double n = 0.0;
  for (Eigen::Index j = 0; j < m.cols(); ++j) n += m(r, j) * m(r, j);
  n = std::sqrt(n);
  for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(j)] = m(r, j) / n;
  return out;
}

inline std::vector<double> unit_projected(const Mat& features, Eigen::Index r, const Mat& proj) {
  std::vector<double> out(static_cast<std::size_t>(proj.cols()), 0.0);
  for (Eigen::Index j = 0; j < proj.cols(); ++j)
    for (Eigen::Index i = 0; i < proj.rows(); ++i) out[static_cast<std::size_t>(j)] += proj(i, j) * features(r, i);
  double n = 0.0;
  for (double x : out) n += x * x;
  n = std::sqrt(n);
  for (double& x : out) x /= n;
  return out;
}

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace detail

// Tokenizer objective with explicit stop-gradient copies. Term 2 sees the live
// codes and the frozen features/projection, term 3 the reverse. Indices fixed.
inline VqkdTerms vqkd_terms(const VqkdPoint& live, const VqkdPoint& frozen, const std::vector<int>& indices) {
  VqkdTerms t;
  for (Eigen::Index i = 0; i < live.outputs.rows(); ++i) {
    double dot = 0.0, no = 0.0, nt = 0.0;
    for (Eigen::Index j = 0; j < live.outputs.cols(); ++j) {
      dot += live.outputs(i, j) * live.targets(i, j);
      no += live.outputs(i, j) * live.outputs(i, j);
      nt += live.targets(i, j) * live.targets(i, j);
    }
    t.cosine -= dot / std::sqrt(no * nt);
    const Eigen::Index z = indices[static_cast<std::size_t>(i)];
    t.codebook += detail::sq_dist(detail::unit_projected(frozen.features, i, frozen.projection), detail::unit_row(live.codes, z));
    t.commitment += detail::sq_dist(detail::unit_projected(live.features, i, live.projection), detail::unit_row(frozen.codes, z));
  }
  return t;
}

// Central differences of f with respect to every entry of param (edited in place, restored).
inline Mat fd_gradient(Mat& param, const std::function<double()>& f, double step = 1e-5) {
  Mat g(param.rows(), param.cols());
  for (Eigen::Index r = 0; r < param.rows(); ++r)
    for (Eigen::Index c = 0; c < param.cols(); ++c) {
      const double orig = param(r, c);
      param(r, c) = orig + step;
      const double up = f();
      param(r, c) = orig - step;
      const double down = f();
      param(r, c) = orig;
      g(r, c) = (up - down) / (2.0 * step);
    }
  return g;
}

inline Mat fd_gradient(Vec& param, const std::function<double()>& f, double step = 1e-5) {
  Mat g(param.size(), 1);
  for (Eigen::Index i = 0; i < param.size(); ++i) {
    const double orig = param(i);
    param(i) = orig + step;
    const double up = f();
    param(i) = orig - step;
    const double down = f();
    param(i) = orig;
    g(i, 0) = (up - down) / (2.0 * step);
  }
  return g;
}

// |a - b| / max(|a|, |b|); zero when both are negligible.
inline double relative_error(const Mat& a, const Mat& b, double floor = 1e-10) {
  const double na = a.norm(), nb = b.norm();
  if (na < floor && nb < floor) return 0.0;
  return (a - b).norm() / std::max(na, nb);
}

inline double mim_value(const Mat& logits, std::span<const int> targets, const MaskSpec& mask) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < logits.cols(); ++k) mx = std::max(mx, logits(r, k));
    double s = 0.0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) s += std::exp(logits(r, k) - mx);
    const int z = targets[static_cast<std::size_t>(mask.masked_indices[static_cast<std::size_t>(r)])];
    total += mx + std::log(s) - logits(r, z);
  }
  return total;
}

inline double pretrain_value(const Mat& patches, const Vec& cls, std::span<const int> targets, const MaskSpec& mask,
                             const PretrainHeads& heads) {
  const Eigen::Index d = patches.cols(), k = heads.patch_bias.size();
  const auto m = static_cast<Eigen::Index>(mask.masked_indices.size());
  Mat pl(m, k), cl(m, k);
  for (Eigen::Index r = 0; r < m; ++r) {
    const Eigen::Index i = mask.masked_indices[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < k; ++c) {
      double a = heads.patch_bias(c), b = heads.cls_bias(c);
      for (Eigen::Index j = 0; j < d; ++j) {
        a += patches(i, j) * heads.patch_weight(j, c);
        b += cls(j) * heads.cls_weight(j, c) + patches(i, j) * heads.cls_weight(d + j, c);
      }
      pl(r, c) = a;
      cl(r, c) = b;
    }
  }
  return mim_value(pl, targets, mask) + mim_value(cl, targets, mask);
}

// y^c(original) - y^c(patch p zeroed at the input), for every p.
inline Vec occlusion_drops(const EncoderState& enc, const ClassHead& head, const PatchSet& ps, int c) {
  const double base = class_score(ps, enc, head, c);
  Vec drops(ps.count());
  for (Eigen::Index p = 0; p < ps.count(); ++p) {
    PatchSet occluded = ps;
    occluded.patches.row(p).setZero();
    drops(p) = base - class_score(occluded, enc, head, c);
  }
  return drops;
}

struct PlantedTrial {
  EncoderState enc;
  ClassHead head;
  PatchSet ps;
  int planted = -1;
};

// Random desk-scale encoder without a final norm. Pre-norm blocks make the
// occlusion effect of any patch O(1) regardless of its content, so the planted
// patch needs a strength well past the unit pixel range to dominate. Background pixels are
// uniform in [0, background]; the planted patch adds strength * unit(P u),
// where u is a non-negative direction that the head reads from patch tokens.
// With `concentrated` only the planted patch's row of the head is non-zero.
inline PlantedTrial planted_trial(std::uint64_t seed, double strength = 24.0, bool concentrated = false,
                                  int planted = -1, double background = 1.0) {
  Rng rng(derive_seed(seed, "planted"));
  EncoderConfig cfg;
  cfg.final_norm = false;
  PlantedTrial t;
  t.enc = init_encoder(cfg, derive_seed(seed, "planted-encoder"));
  const int grid = 4;
  ImageTensor img(grid * cfg.patch_size, grid * cfg.patch_size, cfg.channels);
  std::uniform_real_distribution<double> bg(0.0, background);
  for (double& v : img.data) v = bg(rng);
  t.ps = patchify(img, cfg.patch_size);
  const Eigen::Index n = t.ps.count();
  t.planted = planted >= 0 ? planted : static_cast<int>(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));

  const Vec u = gaussian_vector(rng, cfg.width, 1.0).cwiseAbs();
  const Vec dir = (t.enc.patch_projection * u).normalized();
  t.ps.patches.row(t.planted) += strength * dir.transpose();

  Mat w = Mat::Zero(n + 1, cfg.width);
  if (concentrated)
    w.row(t.planted + 1) = u.transpose();
  else
    w.bottomRows(n).rowwise() = u.transpose();
  t.head.weights = {w};
  t.head.bias = Vec::Zero(1);
  return t;
}

}  // namespace dshadow::numerics::oracle
