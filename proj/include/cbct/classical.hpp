#pragma once

// Baseline reconstructors: FDK filtered back projection for circular
// cone-beam orbits and SART.

#include <cstdint>
#include <optional>
#include <vector>

#include "cbct/projector.hpp"
#include "cbct/volume.hpp"

namespace cbct {

enum class RampFilter { RamLak, SheppLogan };

struct FdkOptions {
  RampFilter filter = RampFilter::RamLak;
  /// Extra power-of-two zero-padding factor on top of the minimum linear
  /// convolution length.
  int padding = 1;
};

/// Circular-orbit parameters recovered from a stack's poses.
struct CircularOrbit {
  double source_to_object = 0;
  double object_to_detector = 0;
  double pixel_u = 0;
  double pixel_v = 0;
  double delta_theta = 0;  // radians, signed
  std::vector<double> angles;  // radians
};

/// Throws InvalidArgument unless the poses lie on one circular orbit with
/// uniform angular spacing.
CircularOrbit circular_orbit(const std::vector<Pose>& poses);

/// Cosine-weights and ramp-filters one projection along u. The filtered
/// values are per virtual-detector length at the isocenter (1/mm).
ImageD fdk_filter_projection(const ImageD& projection, const CircularOrbit& orbit, const FdkOptions& opts);

VolumeD fdk_reconstruct(const ProjectionStack& stack, const GridSpec& grid, const FdkOptions& opts = {});

enum class ViewOrder { Sequential, Shuffled };

struct SartOptions {
  int iterations = 30;
  double relaxation = 0.5;
  ViewOrder view_order = ViewOrder::Sequential;
  std::uint64_t seed = 0;
  bool nonnegativity = true;
  /// Integration step in mm; <= 0 selects half the smallest voxel spacing.
  double step = 0;
  /// Starting estimate; zero volume when empty.
  std::optional<VolumeD> initial;
};

struct SartResult {
  VolumeD volume;
  /// Mean absolute projection residual over all views after each iteration.
  std::vector<double> residual_trace;
  /// Same quantity for the starting estimate.
  double initial_residual = 0;
};

/// Residuals are checked after every iteration; a residual norm 10x above
/// the initial one raises Divergence.
SartResult sart_reconstruct(const ProjectionStack& stack, const GridSpec& grid, const SartOptions& opts = {});

/// Mean absolute difference between the stack and the DRR of `vol`.
double mean_abs_projection_residual(const ProjectionStack& stack, const VolumeD& vol, double step);

}  // namespace cbct
