#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "paths/pyramid.hpp"

namespace paths {

// Per-level dense 2D array of patch embeddings. Background patches carry the
// zero vector with foreground=false.
struct FeatureGrid {
  int level_index = 0;
  double magnification = 1.0;
  int grid_w = 0;
  int grid_h = 0;
  int d = 0;
  std::vector<float> data;        // v-major rows: (v*grid_w + u)*d
  std::vector<uint8_t> foreground;

  const float* feature(int u, int v) const {
    return data.data() + (static_cast<size_t>(v) * grid_w + u) * d;
  }
  float* feature(int u, int v) {
    return data.data() + (static_cast<size_t>(v) * grid_w + u) * d;
  }
  bool is_foreground(int u, int v) const {
    return foreground[static_cast<size_t>(v) * grid_w + u] != 0;
  }
  Eigen::VectorXd vector(int u, int v) const {
    Eigen::VectorXd x(d);
    const float* f = feature(u, v);
    for (int i = 0; i < d; ++i) x[i] = f[i];
    return x;
  }
};

// Deterministic stand-in for a pretrained patch encoder: pooled pixel
// statistics through a fixed seeded linear projection and tanh.
class PatchEncoder {
 public:
  static constexpr int kPoolSize = 8;                      // 8x8 downsample
  static constexpr int kStatsDim = kPoolSize * kPoolSize * 3 + 6;

  PatchEncoder(int d, uint64_t seed);

  int d() const { return d_; }
  uint64_t seed() const { return seed_; }
  const Eigen::MatrixXd& projection() const { return projection_; }

  // stats = [8x8x3 box-averaged pixels in [0,1], per-channel mean, variance]
  Eigen::VectorXd stats(const std::vector<uint8_t>& patch, int s) const;
  Eigen::VectorXd embed(const std::vector<uint8_t>& patch, int s) const;

 private:
  int d_;
  uint64_t seed_;
  Eigen::MatrixXd projection_;  // d x kStatsDim
};

inline Eigen::VectorXd embed_patch(const PatchEncoder& enc,
                                   const std::vector<uint8_t>& patch, int s) {
  return enc.embed(patch, s);
}

// One grid per level; only foreground patches are embedded. Output is
// byte-identical for any worker count.
std::vector<FeatureGrid> precompute_feature_grids(
    const PyramidImage& pyramid, const PatchEncoder& enc,
    const std::vector<TissueMask>& masks, int workers = 1);

// features_level_<i>.bin: single-line JSON header, newline, foreground mask
// bytes, then little-endian f32 payload.
void write_feature_grid(const FeatureGrid& grid,
                        const std::filesystem::path& file);
FeatureGrid read_feature_grid(const std::filesystem::path& file);

std::vector<TissueMask> compute_all_masks(const PyramidImage& pyramid,
                                          double min_tissue_fraction);

}  // namespace paths
