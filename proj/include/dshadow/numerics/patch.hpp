#pragma once

#include "dshadow/error.hpp"
#include "dshadow/numerics/tensor.hpp"

namespace dshadow::numerics {

// N x (p*p*C) patch matrix. Patches are ordered row-major over the patch grid;
// within a patch values are flattened in (row, column, channel) order.
struct PatchSet {
  Mat patches;
  int patch_size = 0;
  int grid_rows = 0;
  int grid_cols = 0;
  int channels = 3;

  Eigen::Index count() const { return patches.rows(); }
  Eigen::Index patch_dim() const { return patches.cols(); }
};

inline PatchSet patchify(const ImageTensor& img, int p) {
  require(p >= 1, ErrorKind::config, "patch size must be >= 1");
  require(img.height >= 1 && img.width >= 1, ErrorKind::config, "empty image");
  require(img.height % p == 0 && img.width % p == 0, ErrorKind::config,
          "image " + std::to_string(img.height) + "x" + std::to_string(img.width) + " not divisible by patch size " +
              std::to_string(p));
  PatchSet ps;
  ps.patch_size = p;
  ps.grid_rows = img.height / p;
  ps.grid_cols = img.width / p;
  ps.channels = img.channels;
  ps.patches.resize(static_cast<Eigen::Index>(ps.grid_rows) * ps.grid_cols, static_cast<Eigen::Index>(p) * p * img.channels);
  for (int gr = 0; gr < ps.grid_rows; ++gr)
    for (int gc = 0; gc < ps.grid_cols; ++gc) {
      const Eigen::Index row = static_cast<Eigen::Index>(gr) * ps.grid_cols + gc;
      Eigen::Index k = 0;
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          for (int c = 0; c < img.channels; ++c) ps.patches(row, k++) = img.at(gr * p + y, gc * p + x, c);
    }
  return ps;
}

inline ImageTensor unpatchify(const PatchSet& ps) {
  const int p = ps.patch_size;
  ImageTensor img(ps.grid_rows * p, ps.grid_cols * p, ps.channels);
  for (int gr = 0; gr < ps.grid_rows; ++gr)
    for (int gc = 0; gc < ps.grid_cols; ++gc) {
      const Eigen::Index row = static_cast<Eigen::Index>(gr) * ps.grid_cols + gc;
      Eigen::Index k = 0;
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          for (int c = 0; c < ps.channels; ++c) img.at(gr * p + y, gc * p + x, c) = ps.patches(row, k++);
    }
  return img;
}

}  // namespace dshadow::numerics
