#pragma once

// Feature back projection: sample per-view 2D feature maps at the detector
// projection of 3D query points, fuse the samples across views with a
// softmax-weighted MLP, and assemble the downsampled feature volume.

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "cbct/autodiff.hpp"
#include "cbct/geometry.hpp"
#include "cbct/volume.hpp"

namespace cbct {

/// Parameters of the two fusion MLPs. phi1: 3C -> C+1 (GELU on the first C
/// outputs, the last output is the raw view logit). phi2: C -> C with GELU.
struct FusionParams {
  Eigen::MatrixXd phi1_weight;  // (C+1) x 3C
  Eigen::VectorXd phi1_bias;    // C+1
  Eigen::MatrixXd phi2_weight;  // C x C
  Eigen::VectorXd phi2_bias;    // C

  int channels() const { return static_cast<int>(phi2_bias.size()); }
  void validate() const;

  /// Fan-in scaled uniform weights, zero biases.
  static FusionParams random(int channels, std::uint64_t seed);
};

/// One level of a per-view feature pyramid. `stride` is the ratio between
/// detector pixels and feature pixels.
struct FeatureLevel {
  ImageD map;
  int stride = 1;
};

/// Continuous coordinate on a level with the given stride for detector pixel
/// coordinate q; pixel centers of both rasters stay aligned.
inline Eigen::Vector2d level_coordinate(const Eigen::Vector2d& q, int stride) {
  return (q.array() + 0.5) / stride - 0.5;
}

/// Pixel-aligned feature of point `x` in one view: bilinear sample of the map
/// at the point's detector projection. Off-detector projections read zeros.
Eigen::VectorXd gather_view_features(const ImageD& feature_map, const Pose& pose, const Eigen::Vector3d& x);

/// Concatenation over pyramid levels of the level-wise gathers.
Eigen::VectorXd gather_view_features(const std::vector<FeatureLevel>& pyramid, const Pose& pose,
                                     const Eigen::Vector3d& x);

struct ViewStatistics {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;  // population (1/N)
};

ViewStatistics fuse_mean_var(const std::vector<Eigen::VectorXd>& features);

struct FusionResult {
  Eigen::VectorXd fused;
  Eigen::VectorXd weights;  // softmax view weights
};

FusionResult fuse_adaptive(const std::vector<Eigen::VectorXd>& features, const FusionParams& params);

/// Voxel centers of indices {0, S, 2S, ...} along every axis, x fastest.
std::vector<Eigen::Vector3d> sparse_query_points(const GridSpec& grid, int downsample);

/// Coarse grid holding one cell per sparse query point. Its spacing is S
/// times the fine spacing; cell world positions are the fine voxel centers
/// returned by sparse_query_points, not the coarse grid's own centers.
GridSpec downsampled_grid(const GridSpec& grid, int downsample);

struct FeatureVolume {
  GridSpec fine_grid;
  int downsample = 1;
  VolumeD features;  // C channels on downsampled_grid(fine_grid, downsample)
};

FeatureVolume build_feature_volume(const std::vector<std::vector<FeatureLevel>>& pyramids,
                                   const std::vector<Pose>& poses, const GridSpec& grid, int downsample,
                                   const FusionParams& params);

/// Bilinear taps for every (query point, view, level), precomputed once per
/// geometry and reused by the differentiable gather.
struct GatherPlan {
  int points = 0;
  int views = 0;
  std::vector<int> level_channels;
  std::vector<std::pair<int, int>> level_sizes;  // (width, height)
  std::vector<int> level_strides;
  // taps of (point p, view v, level l) live in [offsets[i], offsets[i+1]) for
  // i = (p * views + v) * levels + l.
  std::vector<std::uint32_t> offsets;
  std::vector<std::uint32_t> pixels;
  std::vector<double> weights;

  int levels() const { return static_cast<int>(level_channels.size()); }
  int channels() const;
};

struct LevelLayout {
  int channels;
  int width;
  int height;
  int stride;
};

GatherPlan make_gather_plan(const std::vector<Pose>& poses, const std::vector<Eigen::Vector3d>& points,
                            const std::vector<LevelLayout>& levels);

namespace ad {

/// maps[view][level] is a [C_l, h_l, w_l] feature tensor. Returns [P, N, C]
/// with level channels concatenated in order.
Var gather_features(Tape& tape, const std::vector<std::vector<Var>>& maps, const GatherPlan& plan);

struct FusionVars {
  Var phi1_weight, phi1_bias, phi2_weight, phi2_bias;
};

/// Differentiable fusion of gathered features [P, N, C] -> [P, C].
Var fuse_adaptive(Tape& tape, Var gathered, const FusionVars& params);

}  // namespace ad

}  // namespace cbct
