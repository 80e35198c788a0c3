#include "cbct/projector.hpp"

#include <algorithm>
#include <cmath>

namespace cbct {

double RayWeights::dot(const Eigen::VectorXd& x) const {
  double acc = 0.0;
  for (std::size_t n = 0; n < voxels.size(); ++n) acc += weights[n] * x[static_cast<Eigen::Index>(voxels[n])];
  return acc;
}

double RayWeights::sum() const {
  double acc = 0.0;
  for (double w : weights) acc += w;
  return acc;
}

RayWeights ray_weights(const GridSpec& grid, const Ray<double>& ray, double step) {
  RayWeights out;
  trace_ray(grid, ray, step, [&](std::size_t idx, double w) {
    out.voxels.push_back(idx);
    out.weights.push_back(w);
  });
  return out;
}

double drr_ray_integral(const VolumeD& vol, const Ray<double>& ray, double step) {
  const double* data = vol.data().data();
  double acc = 0.0;
  trace_ray(vol.grid(), ray, step, [&](std::size_t idx, double w) { acc += w * data[idx]; });
  return acc;
}

double drr_ray_integral(const VolumeD& vol, const Ray<double>& ray) {
  return drr_ray_integral(vol, ray, default_step(vol.grid()));
}

ImageD render_projection(const VolumeD& vol, const Pose& pose, double step) {
  if (vol.channels() != 1) throw ShapeMismatch("DRR rendering expects a single-channel volume");
  ImageD image(pose.detector.width, pose.detector.height, 1);
  for (int n = 0; n < pose.detector.height; ++n)
    for (int m = 0; m < pose.detector.width; ++m)
      image.at(m, n) = drr_ray_integral(vol, ray_through_pixel(pose, m, n), step);
  return image;
}

DetectorShape ProjectionStack::detector() const {
  if (views.empty()) throw InvalidArgument("projection stack is empty");
  return views.front().pose.detector;
}

std::vector<Pose> ProjectionStack::poses() const {
  std::vector<Pose> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back(v.pose);
  return out;
}

void ProjectionStack::validate() const {
  if (views.empty()) return;
  const DetectorShape shape = detector();
  for (const auto& v : views) {
    if (!(v.pose.detector == shape))
      throw ShapeMismatch("projection views disagree on detector shape");
    if (v.image.width() != shape.width || v.image.height() != shape.height || v.image.channels() != 1)
      throw ShapeMismatch("projection image does not match its detector shape");
  }
}

ProjectionStack render_stack(const VolumeD& vol, const std::vector<Pose>& poses, double step) {
  ProjectionStack stack;
  stack.views.reserve(poses.size());
  for (const auto& pose : poses) stack.views.push_back({pose, render_projection(vol, pose, step)});
  return stack;
}

ProjectionStack render_stack(const VolumeD& vol, const std::vector<Pose>& poses) {
  return render_stack(vol, poses, default_step(vol.grid()));
}

double sample_poisson(double mean, CounterRng& rng) {
  if (!(mean > 0)) return 0.0;
  if (mean > 1e4) return std::max(0.0, std::round(mean + std::sqrt(mean) * rng.normal()));
  constexpr double kChunk = 500.0;
  const int chunks = static_cast<int>(std::ceil(mean / kChunk));
  const double mu = mean / chunks;
  const double cap = mu + 40.0 * std::sqrt(mu) + 100.0;
  double total = 0.0;
  for (int c = 0; c < chunks; ++c) {
    const double u = rng.uniform();
    double p = std::exp(-mu);
    double cdf = p;
    double x = 0.0;
    while (u > cdf && x < cap) {
      x += 1.0;
      p *= mu / x;
      cdf += p;
    }
    total += x;
  }
  return total;
}

PhotonRaster simulate_photon_counts(const ImageD& projection, const ImageD& flat, const ImageD& dark,
                                    std::optional<PhotonNoise> noise) {
  if (!projection.same_shape(flat) || !projection.same_shape(dark))
    throw ShapeMismatch("flat/dark fields must match the projection shape");
  PhotonRaster out{ImageD(projection.width(), projection.height(), projection.channels()), flat, dark};
  const auto n = projection.data().size();
  for (Eigen::Index p = 0; p < n; ++p) {
    const double i0 = flat.data()[p];
    const double i1 = dark.data()[p];
    if (!(i0 > i1 && i1 >= 0)) throw InvalidArgument("flat field must exceed dark field >= 0 at every pixel");
    const double quanta = (i0 - i1) * std::exp(-projection.data()[p]);
    double counts = quanta + i1;
    if (noise) {
      CounterRng rng(noise->seed, noise->stream, static_cast<std::uint64_t>(p));
      counts = sample_poisson(quanta, rng) + i1;
    }
    out.counts.data()[p] = counts;
  }
  return out;
}

PhotonRaster simulate_photon_counts(const ImageD& projection, double flat, double dark,
                                    std::optional<PhotonNoise> noise) {
  ImageD f(projection.width(), projection.height(), projection.channels());
  ImageD d(projection.width(), projection.height(), projection.channels());
  f.data().setConstant(flat);
  d.data().setConstant(dark);
  return simulate_photon_counts(projection, f, d, noise);
}

std::size_t count_below_dark(const PhotonRaster& raster) {
  return static_cast<std::size_t>((raster.counts.data().array() < raster.dark.data().array()).count());
}

ImageD flat_dark_correct(const PhotonRaster& raster, double epsilon) {
  if (!raster.counts.same_shape(raster.flat) || !raster.counts.same_shape(raster.dark))
    throw ShapeMismatch("counts, flat, and dark rasters must share a shape");
  if (!(epsilon > 0 && epsilon < 1)) throw InvalidArgument("log clamp epsilon must lie in (0, 1)");
  ImageD out(raster.counts.width(), raster.counts.height(), raster.counts.channels());
  const auto n = raster.counts.data().size();
  for (Eigen::Index p = 0; p < n; ++p) {
    const double span = raster.flat.data()[p] - raster.dark.data()[p];
    if (!(span > 0)) throw InvalidArgument("flat field must exceed dark field at every pixel");
    const double signal = std::max(raster.counts.data()[p] - raster.dark.data()[p], epsilon * span);
    out.data()[p] = -std::log(signal / span);
  }
  return out;
}

}  // namespace cbct
