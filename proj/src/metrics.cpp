#include "cbct/metrics.hpp"

#include <cmath>
#include <limits>

namespace cbct {

namespace {

void check_pair(const VolumeD& a, const VolumeD& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("metric inputs differ in shape");
  if (a.channels() != 1) throw ShapeMismatch("metrics expect single-channel volumes");
  if (a.data().size() == 0) throw InvalidArgument("metrics need non-empty volumes");
}

/// Zero-padded correlation with `taps` along one axis of an x-fastest array.
Eigen::VectorXd filter_axis(const Eigen::VectorXd& in, const Eigen::Array3i& shape, int axis,
                            const Eigen::VectorXd& taps) {
  const int r = static_cast<int>(taps.size()) / 2;
  const Eigen::Index stride = axis == 0 ? 1 : axis == 1 ? shape[0] : Eigen::Index(shape[0]) * shape[1];
  const int n = shape[axis];
  Eigen::VectorXd out = Eigen::VectorXd::Zero(in.size());
  for (int k = 0; k < shape[2]; ++k)
    for (int j = 0; j < shape[1]; ++j)
      for (int i = 0; i < shape[0]; ++i) {
        const Eigen::Index base = (Eigen::Index(k) * shape[1] + j) * shape[0] + i;
        const int pos = axis == 0 ? i : axis == 1 ? j : k;
        double acc = 0;
        for (int t = -r; t <= r; ++t) {
          const int q = pos + t;
          if (q < 0 || q >= n) continue;
          acc += taps[t + r] * in[base + Eigen::Index(t) * stride];
        }
        out[base] = acc;
      }
  return out;
}

Eigen::VectorXd filter(Eigen::VectorXd x, const Eigen::Array3i& shape, const std::vector<int>& axes,
                       const Eigen::VectorXd& taps) {
  for (int a : axes) x = filter_axis(x, shape, a, taps);
  return x;
}

double ssim_mean(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::Array3i& shape,
                 const std::vector<int>& axes, const Eigen::VectorXd& taps, double c1, double c2) {
  const Eigen::ArrayXd norm = filter(Eigen::VectorXd::Ones(x.size()), shape, axes, taps).array();
  auto local = [&](const Eigen::VectorXd& v) -> Eigen::ArrayXd { return filter(v, shape, axes, taps).array() / norm; };
  const Eigen::ArrayXd mx = local(x), my = local(y);
  const Eigen::ArrayXd sxx = local(x.array().square().matrix()) - mx.square();
  const Eigen::ArrayXd syy = local(y.array().square().matrix()) - my.square();
  const Eigen::ArrayXd sxy = local((x.array() * y.array()).matrix()) - mx * my;
  const Eigen::ArrayXd map =
      ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx.square() + my.square() + c1) * (sxx + syy + c2));
  return map.mean();
}

}  // namespace

double resolve_data_range(const VolumeD& reference, std::optional<double> data_range) {
  if (data_range) {
    if (!(*data_range > 0)) throw InvalidArgument("data range must be positive");
    return *data_range;
  }
  const double r = reference.data().maxCoeff() - reference.data().minCoeff();
  return r > 0 ? r : 1.0;
}

PsnrResult psnr(const VolumeD& reference, const VolumeD& test, std::optional<double> data_range) {
  check_pair(reference, test);
  const double range = resolve_data_range(reference, data_range);
  const double mse = (reference.data() - test.data()).squaredNorm() / static_cast<double>(reference.data().size());
  if (mse == 0) return {std::numeric_limits<double>::infinity(), true};
  return {10.0 * std::log10(range * range / mse), false};
}

Eigen::VectorXd gaussian_window(int window, double sigma) {
  if (window < 1 || window % 2 == 0) throw InvalidArgument("SSIM window must be a positive odd size");
  if (!(sigma > 0)) throw InvalidArgument("SSIM sigma must be positive");
  Eigen::VectorXd g(window);
  const int r = window / 2;
  for (int t = -r; t <= r; ++t) g[t + r] = std::exp(-0.5 * t * t / (sigma * sigma));
  return g / g.sum();
}

double ssim(const VolumeD& reference, const VolumeD& test, const SsimOptions& o) {
  check_pair(reference, test);
  const double range = resolve_data_range(reference, o.data_range);
  const double c1 = (o.k1 * range) * (o.k1 * range), c2 = (o.k2 * range) * (o.k2 * range);
  const Eigen::VectorXd taps = gaussian_window(o.window, o.sigma);
  const Eigen::Array3i& shape = reference.shape();
  if (o.mode == SsimMode::Volumetric) return ssim_mean(reference.data(), test.data(), shape, {0, 1, 2}, taps, c1, c2);
  // Every slice along an axis has the same voxel count, so the mean of slice
  // means equals the mean of the in-plane filtered map.
  double total = 0;
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<int> in_plane;
    for (int a = 0; a < 3; ++a)
      if (a != axis) in_plane.push_back(a);
    total += ssim_mean(reference.data(), test.data(), shape, in_plane, taps, c1, c2);
  }
  return total / 3.0;
}

MetricsReport evaluate_metrics(const VolumeD& reference, const VolumeD& test, const SsimOptions& options) {
  return {psnr(reference, test, options.data_range), ssim(reference, test, options),
          resolve_data_range(reference, options.data_range), options.mode};
}

}  // namespace cbct
