#pragma once

// Digitally reconstructed radiographs (discrete attenuation line integrals)
// and photon-count physics with flat/dark-field correction.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "cbct/geometry.hpp"
#include "cbct/random.hpp"
#include "cbct/volume.hpp"

namespace cbct {

/// Half the smallest voxel spacing.
inline double default_step(const GridSpec& grid) { return 0.5 * grid.spacing.minCoeff(); }

/// Visits every (voxel index, weight) contribution of the discrete ray
/// integral through `grid`. Samples sit at midpoints of consecutive
/// `step`-long intervals between the box entry and exit; the final partial
/// interval is sampled at its own midpoint and weighted by its true length.
/// Weights are trilinear weight times interval length. Nothing is visited on
/// a miss.
template <typename Visitor>
void trace_ray(const GridSpec& grid, const Ray<double>& ray, double step, Visitor&& visit) {
  if (!(step > 0)) throw InvalidArgument("ray integration step must be positive");
  const double dir_norm = ray.direction.norm();
  if (!(dir_norm > 0)) throw DegenerateGeometry("ray direction has zero length");
  const auto hit = ray_aabb_intersect(ray, grid.bounds());
  if (!hit) return;
  const double length = (hit->t_far - hit->t_near) * dir_norm;
  if (!(length > 0)) return;
  const auto full = static_cast<long>(std::floor(length / step));
  const double tail = length - static_cast<double>(full) * step;
  const Eigen::Vector3d start = grid.continuous_index<double>(ray.at(hit->t_near));
  const Eigen::Vector3d stride = (ray.direction / dir_norm).cwiseQuotient(grid.spacing.matrix());
  for (long j = 0; j < full; ++j) {
    const Eigen::Vector3d ci = start + ((static_cast<double>(j) + 0.5) * step) * stride;
    for_each_trilinear_tap(grid.shape, ci, [&](std::size_t idx, double w) { visit(idx, w * step); });
  }
  if (tail > 1e-12 * step) {
    const Eigen::Vector3d ci = start + (static_cast<double>(full) * step + 0.5 * tail) * stride;
    for_each_trilinear_tap(grid.shape, ci, [&](std::size_t idx, double w) { visit(idx, w * tail); });
  }
}

/// Sparse row of the projection operator for one ray.
struct RayWeights {
  std::vector<std::size_t> voxels;
  std::vector<double> weights;

  double dot(const Eigen::VectorXd& x) const;
  double sum() const;
};

RayWeights ray_weights(const GridSpec& grid, const Ray<double>& ray, double step);

double drr_ray_integral(const VolumeD& vol, const Ray<double>& ray, double step);
double drr_ray_integral(const VolumeD& vol, const Ray<double>& ray);

ImageD render_projection(const VolumeD& vol, const Pose& pose, double step);

struct ProjectionView {
  Pose pose;
  ImageD image;
};

/// Per-view line-integral images sharing one detector shape.
struct ProjectionStack {
  std::vector<ProjectionView> views;

  std::size_t size() const { return views.size(); }
  bool empty() const { return views.empty(); }
  DetectorShape detector() const;
  std::vector<Pose> poses() const;
  /// Throws ShapeMismatch unless every image is single-channel and matches
  /// its pose's detector shape and the first view's shape.
  void validate() const;
};

ProjectionStack render_stack(const VolumeD& vol, const std::vector<Pose>& poses, double step);
ProjectionStack render_stack(const VolumeD& vol, const std::vector<Pose>& poses);

/// Photon counts with flat (I0) and dark (I1) fields. Counts are stored as
/// doubles so the noise-free mean can be represented exactly.
struct PhotonRaster {
  ImageD counts;
  ImageD flat;
  ImageD dark;
};

/// Pixels whose counts fall below the dark field. Such pixels are clamped by
/// flat_dark_correct rather than rejected.
std::size_t count_below_dark(const PhotonRaster& raster);

struct PhotonNoise {
  std::uint64_t seed = 0;
  /// Decorrelates views that share a seed.
  std::uint64_t stream = 0;
};

/// Samples Poisson(mean) with inversion for small means (split into chunks
/// of at most 500 by additivity) and a rounded normal above 1e4.
double sample_poisson(double mean, CounterRng& rng);

/// Beer's law: mean counts (I0 - I1) exp(-P) + I1. With `noise`, the
/// attenuated quanta are Poisson-sampled per pixel from a counter-seeded
/// stream and the dark offset is added back.
PhotonRaster simulate_photon_counts(const ImageD& projection, const ImageD& flat, const ImageD& dark,
                                    std::optional<PhotonNoise> noise);
PhotonRaster simulate_photon_counts(const ImageD& projection, double flat, double dark,
                                    std::optional<PhotonNoise> noise);

inline constexpr double kDefaultLogClamp = 1e-6;

/// P = -ln((I - I1) / (I0 - I1)) with I - I1 clamped below at eps (I0 - I1).
ImageD flat_dark_correct(const PhotonRaster& raster, double epsilon = kDefaultLogClamp);

}  // namespace cbct
