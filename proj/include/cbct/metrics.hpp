#pragma once

#include <optional>

#include "cbct/volume.hpp"

namespace cbct {

struct PsnrResult {
  double db = 0;
  bool infinite = false;  // identical volumes
};

/// `data_range` defaults to max - min of the reference (1 for a constant
/// reference).
PsnrResult psnr(const VolumeD& reference, const VolumeD& test, std::optional<double> data_range = std::nullopt);

enum class SsimMode { SliceAverage, Volumetric };

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  std::optional<double> data_range;
  SsimMode mode = SsimMode::SliceAverage;
};

/// Gaussian-window SSIM. SliceAverage computes 2D SSIM on every slice along
/// each axis and averages the three axis means; Volumetric filters in 3D.
/// Windows truncated at the border are renormalized over the in-volume taps.
double ssim(const VolumeD& reference, const VolumeD& test, const SsimOptions& options = {});

/// Normalized 1D Gaussian taps of odd length `window`.
Eigen::VectorXd gaussian_window(int window, double sigma);

struct MetricsReport {
  PsnrResult psnr;
  double ssim = 0;
  double data_range = 0;
  SsimMode mode = SsimMode::SliceAverage;
};

/// Explicit `data_range`, or max - min of the reference (1 when constant).
double resolve_data_range(const VolumeD& reference, std::optional<double> data_range);

MetricsReport evaluate_metrics(const VolumeD& reference, const VolumeD& test, const SsimOptions& options = {});

}  // namespace cbct
