#include "cbct/phantom.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cbct/random.hpp"

namespace cbct {

namespace {

struct Ellipsoid {
  Eigen::Vector3d center;
  Eigen::Vector3d semi_axes;
  Eigen::Matrix3d rotation;  // world -> ellipsoid frame is rotation^T
  double value;

  bool contains(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d q = rotation.transpose() * (p - center);
    return (q.array() / semi_axes.array()).square().sum() <= 1.0;
  }
};

Eigen::Matrix3d euler_zxz(double phi, double theta, double psi) {
  using Eigen::AngleAxisd;
  return (AngleAxisd(phi, Eigen::Vector3d::UnitZ()) * AngleAxisd(theta, Eigen::Vector3d::UnitX()) *
          AngleAxisd(psi, Eigen::Vector3d::UnitZ()))
      .toRotationMatrix();
}

template <typename Visit>
void for_each_voxel(const GridSpec& grid, Visit&& visit) {
  for (int k = 0; k < grid.shape[2]; ++k)
    for (int j = 0; j < grid.shape[1]; ++j)
      for (int i = 0; i < grid.shape[0]; ++i) visit(i, j, k, grid.voxel_center(i, j, k));
}

}  // namespace

VolumeD sphere_phantom(const GridSpec& grid, double radius, double mu, const Eigen::Vector3d& center) {
  grid.validate();
  if (!(radius >= 0)) throw InvalidArgument("sphere radius must be non-negative");
  VolumeD v(grid);
  for_each_voxel(grid, [&](int i, int j, int k, const Eigen::Vector3d& p) {
    if ((p - center).norm() <= radius) v.at(i, j, k) = mu;
  });
  return v;
}

VolumeD ellipsoid_phantom(const GridSpec& grid, std::uint64_t seed, int count) {
  grid.validate();
  if (count < 0) throw InvalidArgument("ellipsoid count must be non-negative");
  const Eigen::Array3d half = grid.shape.cast<double>() * grid.spacing / 2;
  const double h = half.minCoeff();
  std::vector<Ellipsoid> shapes;
  for (int e = 0; e < count; ++e) {
    CounterRng rng(seed, 0xE111, static_cast<std::uint64_t>(e));
    Ellipsoid s;
    // The first ellipsoid is a body that fills most of the grid, clipped at
    // its faces; later ones overwrite it.
    const double lo = e == 0 ? 0.9 : 0.15, hi = e == 0 ? 1.25 : 0.4;
    for (int a = 0; a < 3; ++a) s.semi_axes[a] = rng.uniform(lo, hi) * h;
    const double reach = e == 0 ? 0.1 * h : 0.9 * h - s.semi_axes.maxCoeff();
    for (int a = 0; a < 3; ++a) s.center[a] = rng.uniform(-reach, reach);
    const double two_pi = 2 * std::numbers::pi;
    s.rotation = euler_zxz(rng.uniform(0, two_pi), rng.uniform(0, std::numbers::pi), rng.uniform(0, two_pi));
    s.value = rng.uniform(0.005, 0.03);
    shapes.push_back(s);
  }
  VolumeD v(grid);
  for_each_voxel(grid, [&](int i, int j, int k, const Eigen::Vector3d& p) {
    for (const auto& s : shapes)
      if (s.contains(p)) v.at(i, j, k) = s.value;
  });
  return v;
}

VolumeD shepp_logan_phantom(const GridSpec& grid, double mu) {
  grid.validate();
  // intensity, semi-axes (a, b, c), center (x, y, z), Euler angles (deg)
  static constexpr double table[10][10] = {
      {1.0, 0.6900, 0.920, 0.810, 0.00, 0.0000, 0.00, 0, 0, 0},
      {-0.8, 0.6624, 0.874, 0.780, 0.00, -0.0184, 0.00, 0, 0, 0},
      {-0.2, 0.1100, 0.310, 0.220, 0.22, 0.0000, 0.00, -18, 0, 10},
      {-0.2, 0.1600, 0.410, 0.280, -0.22, 0.0000, 0.00, 18, 0, 10},
      {0.1, 0.2100, 0.250, 0.410, 0.00, 0.3500, -0.15, 0, 0, 0},
      {0.1, 0.0460, 0.046, 0.050, 0.00, 0.1000, 0.25, 0, 0, 0},
      {0.1, 0.0460, 0.046, 0.050, 0.00, -0.1000, 0.25, 0, 0, 0},
      {0.1, 0.0460, 0.023, 0.050, -0.08, -0.6050, 0.00, 0, 0, 0},
      {0.1, 0.0230, 0.023, 0.020, 0.00, -0.6060, 0.00, 0, 0, 0},
      {0.1, 0.0230, 0.046, 0.020, 0.06, -0.6050, 0.00, 0, 0, 0},
  };
  const Eigen::Array3d half = grid.shape.cast<double>() * grid.spacing / 2;
  const double deg = std::numbers::pi / 180;
  std::vector<Ellipsoid> shapes;
  for (const auto& r : table)
    shapes.push_back({Eigen::Vector3d(r[4], r[5], r[6]), Eigen::Vector3d(r[1], r[2], r[3]),
                      euler_zxz(r[7] * deg, r[8] * deg, r[9] * deg), r[0]});
  VolumeD v(grid);
  for_each_voxel(grid, [&](int i, int j, int k, const Eigen::Vector3d& p) {
    const Eigen::Vector3d q = (p.array() / half).matrix();
    double value = 0;
    for (const auto& s : shapes)
      if (s.contains(q)) value += s.value;
    v.at(i, j, k) = mu * std::max(value, 0.0);
  });
  return v;
}

}  // namespace cbct
