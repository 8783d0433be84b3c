#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "dshadow/error.hpp"
#include "dshadow/image.hpp"
#include "dshadow/random.hpp"

namespace dshadow::numerics {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Real-valued H x W x C image, interleaved row-major like dshadow::Image.
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<double> data;

  ImageTensor() = default;
  ImageTensor(int h, int w, int c = 3, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

// Pixels scaled to [0, 1].
inline ImageTensor to_tensor(const Image& img) {
  ImageTensor t(img.height, img.width, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t.data[i] = img.pixels[i] / 255.0;
  return t;
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }
inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline Mat gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

inline Vec gaussian_vector(Rng& rng, Eigen::Index n, double stddev) {
  std::normal_distribution<double> d(0.0, stddev);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

// rows x cols with orthonormal columns (rows >= cols).
inline Mat orthonormal_columns(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  require(rows >= cols, ErrorKind::config, "orthonormal_columns needs rows >= cols");
  Eigen::HouseholderQR<Mat> qr(gaussian_matrix(rng, rows, cols, 1.0));
  return qr.householderQ() * Mat::Identity(rows, cols);
}

// Unit-length copy; throws on a zero or non-finite vector.
inline Vec l2_normalized(const Vec& v) {
  const double n = v.norm();
  require(n > 0.0 && std::isfinite(n), ErrorKind::numeric, "l2 normalization of a zero or non-finite vector");
  return v / n;
}

// Jacobian-transpose product for v -> v/|v|: returns (I - u u^T) g / |v|.
inline Vec l2_normalize_backward(const Vec& v, const Vec& g) {
  const double n = v.norm();
  const Vec u = v / n;
  return (g - u * u.dot(g)) / n;
}

}  // namespace dshadow::numerics
