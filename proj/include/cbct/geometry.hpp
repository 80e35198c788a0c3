#pragma once

// Cone-beam acquisition geometry: circular-orbit poses, detector pixel
// coordinates, rays, slab intersection, and point-to-detector projection.
//
// World frame: isocenter at the origin, rotation about +z. Lengths in mm.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <concepts>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "cbct/error.hpp"

namespace cbct {

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;

struct DetectorShape {
  int width = 1;   // w, pixels along u
  int height = 1;  // h, pixels along v

  bool operator==(const DetectorShape&) const = default;
};

/// Circular-orbit acquisition parameters. Angles in degrees.
struct ScanConfig {
  int n_views = 1;
  double delta_theta = 18.0;
  double start_angle = 0.0;
  double source_to_object = 500.0;   // L^sb
  double object_to_detector = 200.0; // L^bd
  DetectorShape detector;
  Eigen::Vector2d detector_spacing{1.0, 1.0};  // (p_u, p_v) mm/pixel

  void validate() const {
    if (n_views < 1) throw InvalidArgument("n_views must be >= 1");
    if (!(source_to_object > 0)) throw InvalidArgument("source_to_object must be > 0");
    if (!(object_to_detector >= 0)) throw InvalidArgument("object_to_detector must be >= 0");
    if (!(detector_spacing.x() > 0 && detector_spacing.y() > 0))
      throw InvalidArgument("detector spacing must be positive");
    if (detector.width < 1 || detector.height < 1)
      throw InvalidArgument("detector shape must be at least 1x1");
    if (!(start_angle >= 0 && start_angle < 360))
      throw InvalidArgument("start_angle must lie in [0, 360)");
  }

  /// Angular step that closes a full orbit with n views.
  static double full_orbit_step(int n) { return 360.0 / n; }
};

/// Source and detector placement for one view. `u_basis`/`v_basis` carry the
/// pixel pitch (mm per pixel), so they are not unit vectors.
template <typename Scalar>
struct ViewPose {
  Vector3<Scalar> source;
  Vector3<Scalar> detector_center;
  Vector3<Scalar> u_basis;
  Vector3<Scalar> v_basis;
  Vector3<Scalar> normal;               // u x v, unnormalized
  Vector3<Scalar> origin_pixel_center;  // x^00
  DetectorShape detector;

  template <typename Other>
  ViewPose<Other> cast() const {
    return {source.template cast<Other>(),      detector_center.template cast<Other>(),
            u_basis.template cast<Other>(),     v_basis.template cast<Other>(),
            normal.template cast<Other>(),      origin_pixel_center.template cast<Other>(),
            detector};
  }
};

template <typename Scalar>
struct Ray {
  Vector3<Scalar> origin;
  Vector3<Scalar> direction;  // unnormalized

  Vector3<Scalar> at(Scalar t) const { return origin + t * direction; }
};

template <typename Scalar>
struct Aabb {
  Vector3<Scalar> min_corner;
  Vector3<Scalar> max_corner;
};

template <typename Scalar>
struct RayInterval {
  Scalar t_near;
  Scalar t_far;
};

template <typename Scalar>
struct DetectorHit {
  Vector3<Scalar> point;  // x_i on the detector plane
  Scalar t;               // scaling parameter along source + t (x - source)
};

using Pose = ViewPose<double>;

namespace detail {

/// Offset (in pixels) from pixel (0,0) to the detector center; equals (w-1)/2
/// for both parities.
template <typename Scalar>
Scalar center_offset(int extent) {
  return Scalar(extent / 2) + Scalar((extent + 1) / 2) - Scalar(extent + 1) / Scalar(2);
}

}  // namespace detail

/// Builds a pose from explicit source/detector vectors, as recorded by
/// geometry description files. Normal and x^00 are derived.
template <typename Scalar>
ViewPose<Scalar> make_pose(const Vector3<Scalar>& source, const Vector3<Scalar>& detector_center,
                           const Vector3<Scalar>& u, const Vector3<Scalar>& v,
                           DetectorShape detector) {
  if (detector.width < 1 || detector.height < 1)
    throw InvalidArgument("detector shape must be at least 1x1");
  ViewPose<Scalar> pose;
  pose.source = source;
  pose.detector_center = detector_center;
  pose.u_basis = u;
  pose.v_basis = v;
  pose.normal = u.cross(v);
  if (pose.normal.norm() == Scalar(0)) throw DegenerateGeometry("detector basis vectors are parallel");
  pose.origin_pixel_center = detector_center - detail::center_offset<Scalar>(detector.width) * u -
                             detail::center_offset<Scalar>(detector.height) * v;
  pose.detector = detector;
  return pose;
}

/// Pose of view `index` (1-based) on the circular orbit.
template <typename Scalar = double>
ViewPose<Scalar> view_pose(const ScanConfig& cfg, int index) {
  cfg.validate();
  if (index < 1 || index > cfg.n_views)
    throw InvalidArgument("view index " + std::to_string(index) + " outside 1.." +
                          std::to_string(cfg.n_views));
  const double degrees = cfg.start_angle + cfg.delta_theta * (index - 1);
  const Scalar theta = Scalar(degrees * std::numbers::pi / 180.0);
  const Scalar c = std::cos(theta);
  const Scalar s = std::sin(theta);
  const Scalar lsb = Scalar(cfg.source_to_object);
  const Scalar lbd = Scalar(cfg.object_to_detector);
  const Scalar pu = Scalar(cfg.detector_spacing.x());
  const Scalar pv = Scalar(cfg.detector_spacing.y());
  return make_pose<Scalar>(Vector3<Scalar>(lsb * c, lsb * s, 0), Vector3<Scalar>(-lbd * c, -lbd * s, 0),
                           Vector3<Scalar>(-pu * s, pu * c, 0), Vector3<Scalar>(0, 0, pv), cfg.detector);
}

template <typename Scalar = double>
std::vector<ViewPose<Scalar>> circular_poses(const ScanConfig& cfg) {
  std::vector<ViewPose<Scalar>> poses;
  poses.reserve(static_cast<std::size_t>(cfg.n_views));
  for (int i = 1; i <= cfg.n_views; ++i) poses.push_back(view_pose<Scalar>(cfg, i));
  return poses;
}

/// World coordinate of the center of pixel (m, n). Pure affine map; indices
/// are not range-checked.
template <typename Scalar>
Vector3<Scalar> detector_pixel_center(const ViewPose<Scalar>& pose, int m, int n) {
  return pose.origin_pixel_center + Scalar(m) * pose.u_basis + Scalar(n) * pose.v_basis;
}

// Pixel centers exist only at integer indices.
template <typename Scalar, std::floating_point F>
Vector3<Scalar> detector_pixel_center(const ViewPose<Scalar>&, F, F) = delete;

template <typename Scalar>
Ray<Scalar> ray_through_pixel(const ViewPose<Scalar>& pose, int m, int n) {
  return {pose.source, detector_pixel_center(pose, m, n) - pose.source};
}

/// Slab-method intersection. The ray is a half-line (t >= 0), so t_near is
/// clamped to zero. Axes with a zero direction component are handled as
/// interval containment tests.
template <typename Scalar>
std::optional<RayInterval<Scalar>> ray_aabb_intersect(const Ray<Scalar>& ray, const Aabb<Scalar>& box) {
  Scalar t_near = -std::numeric_limits<Scalar>::infinity();
  Scalar t_far = std::numeric_limits<Scalar>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    const Scalar o = ray.origin[axis];
    const Scalar d = ray.direction[axis];
    const Scalar lo = box.min_corner[axis];
    const Scalar hi = box.max_corner[axis];
    if (d == Scalar(0)) {
      if (o < lo || o > hi) return std::nullopt;
      continue;
    }
    Scalar t0 = (lo - o) / d;
    Scalar t1 = (hi - o) / d;
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  t_near = std::max(t_near, Scalar(0));
  if (!(t_far >= t_near)) return std::nullopt;
  return RayInterval<Scalar>{t_near, t_far};
}

/// Perspective projection of `x` onto the detector plane along the ray from
/// the source. Throws DegenerateGeometry when that ray is parallel to the
/// plane (|cos| < 1e-12) or `x` coincides with the source.
template <typename Scalar>
DetectorHit<Scalar> project_point_to_detector(const ViewPose<Scalar>& pose, const Vector3<Scalar>& x) {
  const Vector3<Scalar> d = x - pose.source;
  const Scalar denom = pose.normal.dot(d);
  const Scalar scale = pose.normal.norm() * d.norm();
  if (!(scale > Scalar(0)) || std::abs(denom) < Scalar(1e-12) * scale)
    throw DegenerateGeometry("ray from source through point is parallel to the detector plane");
  const Scalar t = -pose.normal.dot(pose.source - pose.detector_center) / denom;
  return {pose.source + t * d, t};
}

/// Relative tolerance for detector-plane membership.
inline constexpr double kPlaneTolerance = 1e-8;

/// Continuous pixel coordinates (m, n) of a point on the detector plane.
/// The result may lie outside the detector; callers decide what that means.
template <typename Scalar>
Vector2<Scalar> detector_point_to_pixel(const ViewPose<Scalar>& pose, const Vector3<Scalar>& x_det) {
  const Vector3<Scalar> offset = x_det - pose.origin_pixel_center;
  const Scalar off_plane = std::abs(pose.normal.normalized().dot(x_det - pose.detector_center));
  const Scalar reference = Scalar(1) + x_det.norm() + pose.detector_center.norm();
  if (off_plane > Scalar(kPlaneTolerance) * reference)
    throw DegenerateGeometry("point is not on the detector plane");
  return {offset.dot(pose.u_basis) / pose.u_basis.squaredNorm(),
          offset.dot(pose.v_basis) / pose.v_basis.squaredNorm()};
}

/// project_point_to_detector followed by detector_point_to_pixel, skipping
/// the redundant plane check.
template <typename Scalar>
Vector2<Scalar> project_point_to_pixel(const ViewPose<Scalar>& pose, const Vector3<Scalar>& x,
                                       Scalar* t_out = nullptr) {
  const DetectorHit<Scalar> hit = project_point_to_detector(pose, x);
  if (t_out) *t_out = hit.t;
  const Vector3<Scalar> offset = hit.point - pose.origin_pixel_center;
  return {offset.dot(pose.u_basis) / pose.u_basis.squaredNorm(),
          offset.dot(pose.v_basis) / pose.v_basis.squaredNorm()};
}

}  // namespace cbct
