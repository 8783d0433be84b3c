#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dshadow/error.hpp"

namespace dshadow {

// Pixel box, top-left origin.
struct FaceBox {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;
  double confidence = 1.0;

  friend bool operator==(const FaceBox&, const FaceBox&) = default;
};

inline void validate(const FaceBox& b) {
  require(b.x >= 0 && b.y >= 0, ErrorKind::range, "face box origin must be non-negative");
  require(b.w >= 1 && b.h >= 1, ErrorKind::range, "face box extent must be >= 1");
  require(b.confidence >= 0.0 && b.confidence <= 1.0, ErrorKind::range, "face box confidence outside [0,1]");
}

struct FaceEmbedding {
  std::vector<double> vector;
  bool normalized = false;

  std::size_t dimension() const { return vector.size(); }

  friend bool operator==(const FaceEmbedding&, const FaceEmbedding&) = default;
};

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::dimension,
          "embedding dimensions differ (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline FaceEmbedding normalize(std::vector<double> v) {
  const double n = l2_norm(v);
  require(n > 0.0 && std::isfinite(n), ErrorKind::numeric, "cannot normalize a zero or non-finite embedding");
  for (double& x : v) x /= n;
  return FaceEmbedding{std::move(v), true};
}

}  // namespace dshadow
