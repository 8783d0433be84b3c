#pragma once

#include <algorithm>
#include <vector>

#include "dshadow/error.hpp"
#include "dshadow/numerics/vit.hpp"

namespace dshadow::numerics {

// Linear class scores over the final token matrix:
// y^c = sum_{t,j} W_c(t, j) * Z(t, j) + b_c, with t = 0 the [CLS] row.
struct ClassHead {
  std::vector<Mat> weights;  // one (N+1) x d matrix per class
  Vec bias;

  int classes() const { return static_cast<int>(weights.size()); }
};

inline double class_score(const Mat& tokens, const ClassHead& head, int c) {
  require(c >= 0 && c < head.classes(), ErrorKind::range, "class index out of range");
  const Mat& w = head.weights[static_cast<std::size_t>(c)];
  require(w.rows() == tokens.rows() && w.cols() == tokens.cols(), ErrorKind::dimension, "head shape != token shape");
  return w.cwiseProduct(tokens).sum() + (head.bias.size() > c ? head.bias(c) : 0.0);
}

inline double class_score(const PatchSet& ps, const EncoderState& enc, const ClassHead& head, int c) {
  return class_score(vit_forward(ps, enc).tokens, head, c);
}

enum class GradMethod { analytic, finite_difference };

struct GradOptions {
  GradMethod method = GradMethod::analytic;
  double step = 1e-5;  // central-difference step
};

// d y^c / d E for the N patch rows of E, the activations right after the last
// attention sublayer. Returns N x d.
inline Mat grad_wrt_patch_embeddings(const EncoderState& enc, const ClassHead& head, const PatchSet& ps, int c,
                                     const GradOptions& opt = {}) {
  const auto fwd = vit_forward(ps, enc);
  const Mat& act = fwd.activations;
  require(c >= 0 && c < head.classes(), ErrorKind::range, "class index out of range");
  const Mat& w = head.weights[static_cast<std::size_t>(c)];
  require(w.rows() == act.rows() && w.cols() == act.cols(), ErrorKind::dimension, "head shape != token shape");
  const Eigen::Index n = act.rows() - 1;
  Mat grad(n, act.cols());

  if (opt.method == GradMethod::analytic) {
    for (Eigen::Index p = 0; p < n; ++p)
      grad.row(p) = tail_backward_row(act.row(p + 1).transpose(), enc, w.row(p + 1).transpose()).transpose();
  } else {
    require(opt.step > 0.0, ErrorKind::config, "finite-difference step must be positive");
    // The tail acts row-wise, so perturbing E(p, j) only changes token p.
    for (Eigen::Index p = 0; p < n; ++p) {
      Mat row = act.row(p + 1);
      for (Eigen::Index j = 0; j < act.cols(); ++j) {
        const double orig = row(0, j);
        row(0, j) = orig + opt.step;
        const double up = w.row(p + 1).dot(tail_forward(row, enc).row(0));
        row(0, j) = orig - opt.step;
        const double down = w.row(p + 1).dot(tail_forward(row, enc).row(0));
        row(0, j) = orig;
        grad(p, j) = (up - down) / (2.0 * opt.step);
      }
    }
  }
  require(all_finite(grad), ErrorKind::numeric, "non-finite gradient");
  return grad;
}

struct CamMap {
  Vec weights;  // alpha_p: gradient components of patch p summed, divided by N
  Vec raw;      // ReLU(alpha_p * sum_j E(p, j))
  Vec map;      // raw rescaled to [0, 1] (unchanged when all zero)
};

inline CamMap cam_from(const Mat& grad, const Mat& patch_activations) {
  const Eigen::Index n = grad.rows();
  CamMap cam;
  cam.weights = grad.rowwise().sum() / static_cast<double>(n);
  cam.raw = (cam.weights.array() * patch_activations.rowwise().sum().array()).max(0.0).matrix();
  cam.map = cam.raw;
  const double hi = cam.raw.maxCoeff();
  const double lo = cam.raw.minCoeff();
  if (hi > 0.0) {
    if (hi > lo)
      cam.map = ((cam.raw.array() - lo) / (hi - lo)).matrix();
    else
      cam.map = Vec::Ones(n);
  }
  return cam;
}

inline CamMap grad_cam(const EncoderState& enc, const ClassHead& head, const PatchSet& ps, int c,
                       const GradOptions& opt = {}) {
  const Mat grad = grad_wrt_patch_embeddings(enc, head, ps, c, opt);
  const auto fwd = vit_forward(ps, enc);
  return cam_from(grad, fwd.activations.bottomRows(grad.rows()));
}

inline Eigen::Index argmax(const Vec& v) {
  Eigen::Index i = 0;
  v.maxCoeff(&i);
  return i;
}

}  // namespace dshadow::numerics
