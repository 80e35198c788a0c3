#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numbers>

#include "cbct/classical.hpp"

namespace cbct {
namespace {

constexpr double kPi = std::numbers::pi;

bool close(double a, double b, double rel) { return std::abs(a - b) <= rel * std::max({1.0, std::abs(a), std::abs(b)}); }

double wrap_angle(double a) {
  while (a <= -kPi) a += 2 * kPi;
  while (a > kPi) a -= 2 * kPi;
  return a;
}

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

CircularOrbit circular_orbit(const std::vector<Pose>& poses) {
  if (poses.size() < 2) throw InvalidArgument("FDK needs at least 2 views");
  CircularOrbit orbit;
  constexpr double kTol = 1e-9;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Pose& p = poses[i];
    const double lsb = p.source.norm();
    const double lbd = p.detector_center.norm();
    const double theta = std::atan2(p.source.y(), p.source.x());
    const Eigen::Vector3d radial(std::cos(theta), std::sin(theta), 0.0);
    const Eigen::Vector3d tangent(-radial.y(), radial.x(), 0.0);
    const double pu = p.u_basis.norm();
    const double pv = p.v_basis.norm();
    const bool planar = std::abs(p.source.z()) <= kTol * lsb && std::abs(p.detector_center.z()) <= kTol * (1 + lbd);
    const bool opposed = (p.detector_center + lbd * radial).norm() <= kTol * (1 + lbd);
    const bool aligned = (p.u_basis - pu * tangent).norm() <= kTol * pu &&
                         (p.v_basis - Eigen::Vector3d(0, 0, pv)).norm() <= kTol * pv;
    if (!planar || !opposed || !aligned)
      throw InvalidArgument("view " + std::to_string(i) + " is not on a circular orbit about z");
    if (i == 0) {
      orbit.source_to_object = lsb;
      orbit.object_to_detector = lbd;
      orbit.pixel_u = pu;
      orbit.pixel_v = pv;
    } else if (!close(lsb, orbit.source_to_object, kTol) || !close(lbd, orbit.object_to_detector, kTol) ||
               !close(pu, orbit.pixel_u, kTol) || !close(pv, orbit.pixel_v, kTol)) {
      throw InvalidArgument("views disagree on orbit distances or pixel pitch");
    }
    orbit.angles.push_back(theta);
  }
  orbit.delta_theta = wrap_angle(orbit.angles[1] - orbit.angles[0]);
  for (std::size_t i = 2; i < orbit.angles.size(); ++i) {
    const double step = wrap_angle(orbit.angles[i] - orbit.angles[i - 1]);
    if (std::abs(step - orbit.delta_theta) > 1e-7) throw InvalidArgument("FDK needs uniformly spaced view angles");
  }
  if (orbit.delta_theta == 0.0) throw InvalidArgument("FDK needs distinct view angles");
  return orbit;
}

ImageD fdk_filter_projection(const ImageD& projection, const CircularOrbit& orbit, const FdkOptions& opts) {
  if (opts.padding < 1 || (opts.padding & (opts.padding - 1)) != 0)
    throw InvalidArgument("FDK padding must be a power of two >= 1");
  const int w = projection.width();
  const int h = projection.height();
  const double lsb = orbit.source_to_object;
  const double lsd = orbit.source_to_object + orbit.object_to_detector;
  const double tau = orbit.pixel_u * lsb / lsd;
  const double cu = detail::center_offset<double>(w);
  const double cv = detail::center_offset<double>(h);

  const int np = next_pow2(2 * w - 1) * opts.padding;
  std::vector<double> kernel(static_cast<std::size_t>(np), 0.0);
  for (int k = 0; k < w; ++k) {
    double value = 0.0;
    if (opts.filter == RampFilter::RamLak) {
      if (k == 0)
        value = 1.0 / (4.0 * tau * tau);
      else if (k % 2 == 1)
        value = -1.0 / (k * k * kPi * kPi * tau * tau);
    } else {
      value = -2.0 / (kPi * kPi * tau * tau * (4.0 * k * k - 1.0));
    }
    kernel[static_cast<std::size_t>(k)] = value;
    if (k > 0) kernel[static_cast<std::size_t>(np - k)] = value;
  }
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> kernel_hat;
  fft.fwd(kernel_hat, kernel);

  ImageD out(w, h, 1);
  std::vector<double> row(static_cast<std::size_t>(np));
  std::vector<std::complex<double>> row_hat;
  std::vector<double> filtered;
  for (int n = 0; n < h; ++n) {
    std::fill(row.begin(), row.end(), 0.0);
    const double v = (n - cv) * orbit.pixel_v;
    for (int m = 0; m < w; ++m) {
      const double u = (m - cu) * orbit.pixel_u;
      row[static_cast<std::size_t>(m)] = projection.at(m, n) * lsd / std::sqrt(lsd * lsd + u * u + v * v);
    }
    fft.fwd(row_hat, row);
    for (std::size_t f = 0; f < row_hat.size(); ++f) row_hat[f] *= kernel_hat[f];
    fft.inv(filtered, row_hat);
    for (int m = 0; m < w; ++m) out.at(m, n) = tau * filtered[static_cast<std::size_t>(m)];
  }
  return out;
}

VolumeD fdk_reconstruct(const ProjectionStack& stack, const GridSpec& grid, const FdkOptions& opts) {
  stack.validate();
  const std::vector<Pose> poses = stack.poses();
  const CircularOrbit orbit = circular_orbit(poses);
  std::vector<ImageD> filtered;
  filtered.reserve(stack.size());
  for (const auto& view : stack.views) filtered.push_back(fdk_filter_projection(view.image, orbit, opts));

  const double magnification_to_iso = orbit.source_to_object / (orbit.source_to_object + orbit.object_to_detector);
  const double weight = 0.5 * std::abs(orbit.delta_theta);
  VolumeD vol(grid, 1);
  for (int k = 0; k < grid.shape[2]; ++k)
    for (int j = 0; j < grid.shape[1]; ++j)
      for (int i = 0; i < grid.shape[0]; ++i) {
        const Eigen::Vector3d x = grid.voxel_center(i, j, k);
        double acc = 0.0;
        for (std::size_t view = 0; view < poses.size(); ++view) {
          double t = 0.0;
          const Eigen::Vector2d q = project_point_to_pixel(poses[view], x, &t);
          // t * L^sb / L^sd is the source distance ratio L^sb / (L^sb - s).
          const double u_inv = t * magnification_to_iso;
          const ImageD& img = filtered[view];
          double sample = 0.0;
          for_each_bilinear_tap(img.width(), img.height(), q,
                                [&](std::size_t idx, double w) { sample += w * img.data()[static_cast<Eigen::Index>(idx)]; });
          acc += u_inv * u_inv * sample;
        }
        vol.at(i, j, k) = weight * acc;
      }
  return vol;
}

}  // namespace cbct
