#pragma once

#include <cstdint>

#include "cbct/volume.hpp"

namespace cbct {

/// Voxels whose center lies within `radius` (mm) of `center` take value `mu`.
VolumeD sphere_phantom(const GridSpec& grid, double radius, double mu,
                       const Eigen::Vector3d& center = Eigen::Vector3d::Zero());

/// `count` randomly placed, rotated ellipsoids inside the field of view with
/// attenuation uniform in [0.005, 0.03] per mm. The first is a body whose
/// semi-axes span 0.9 to 1.25 of the half extent, so it fills most of the
/// grid; later ellipsoids lie inside 0.9 of the half extent and overwrite
/// earlier ones.
VolumeD ellipsoid_phantom(const GridSpec& grid, std::uint64_t seed, int count);

/// Modified 3D Shepp-Logan head phantom with its unit-intensity skull scaled
/// to `mu`.
VolumeD shepp_logan_phantom(const GridSpec& grid, double mu = 0.02);

}  // namespace cbct
