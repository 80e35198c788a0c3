#pragma once

// JSON acquisition manifest. Geometry is either a circular orbit or an
// explicit list of per-view poses, never both:
//
//   { "detector": {"shape": [w, h], "spacing": [pu, pv]},
//     "volume":   {"shape": [W, H, D], "spacing": [vx, vy, vz]},
//     "circular": {"n_views": N, "delta_theta": deg, "start_angle": deg,
//                  "source_to_object": mm, "object_to_detector": mm},
//     "views":    [{"source": [..], "detector_center": [..], "u": [..], "v": [..]}],
//     "normalization": {"mean": m, "std": s} }

#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "cbct/geometry.hpp"
#include "cbct/network.hpp"
#include "cbct/volume.hpp"

namespace cbct {

struct Manifest {
  DetectorShape detector;
  Eigen::Vector2d detector_spacing{1.0, 1.0};
  GridSpec volume;
  std::optional<ScanConfig> circular;
  /// Resolved poses for either geometry form.
  std::vector<Pose> poses;
  std::optional<Normalization> normalization;
};

/// Throws SchemaError naming the JSON path of the offending field.
Manifest parse_manifest(const std::string& text);
Manifest load_manifest(const std::filesystem::path& path);

std::string manifest_to_json(const Manifest& manifest);

Manifest circular_manifest(const ScanConfig& scan, const GridSpec& volume);

/// Parses whitespace-separated rows of 12 numbers (source, detector center,
/// u, v), one view per row. Blank lines and lines starting with '#' are
/// skipped.
std::vector<Pose> parse_vector_geometry(std::istream& rows, DetectorShape detector);

}  // namespace cbct
