#pragma once

// On-disk formats. Volumes are float32 little-endian raw files (x fastest)
// with a JSON sidecar of the same stem holding shape, spacing and channel
// count. A projection stack is a directory of proj_NNNN.raw images, each with
// a proj_NNNN.json sidecar holding its shape and pose, plus stack.json.

#include <filesystem>
#include <string>
#include <vector>

#include "cbct/metrics.hpp"
#include "cbct/projector.hpp"

namespace cbct {

std::filesystem::path sidecar_path(const std::filesystem::path& raw);

void write_volume(const std::filesystem::path& raw, const VolumeD& volume);
VolumeD read_volume(const std::filesystem::path& raw);

void write_projections(const std::filesystem::path& dir, const ProjectionStack& stack);
ProjectionStack read_projections(const std::filesystem::path& dir);

/// 8-bit PGM of slice `index` along `axis` (0 = x, 1 = y, 2 = z), linearly
/// windowed to [lo, hi].
void write_pgm_slice(const std::filesystem::path& path, const VolumeD& volume, int axis, int index, double lo,
                     double hi);

struct MetricsRow {
  std::string name;
  int views = 0;  // 0 when unknown
  MetricsReport metrics;
};

/// CSV with header case,views,psnr_db,ssim,data_range,ssim_mode. Infinite
/// PSNR is written as "inf"; data_range records the convention used.
std::string metrics_csv(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

}  // namespace cbct
