#include <algorithm>
#include <cmath>
#include <numeric>

#include "cbct/classical.hpp"

namespace cbct {
namespace {

struct ResidualStats {
  double mean_abs = 0;
  double norm = 0;
};

ResidualStats projection_residual(const ProjectionStack& stack, const VolumeD& vol, double step) {
  double abs_sum = 0.0, sq_sum = 0.0;
  std::size_t count = 0;
  for (const auto& view : stack.views) {
    for (int n = 0; n < view.image.height(); ++n)
      for (int m = 0; m < view.image.width(); ++m) {
        const double r = view.image.at(m, n) - drr_ray_integral(vol, ray_through_pixel(view.pose, m, n), step);
        abs_sum += std::abs(r);
        sq_sum += r * r;
        ++count;
      }
  }
  return {count ? abs_sum / static_cast<double>(count) : 0.0, std::sqrt(sq_sum)};
}

}  // namespace

double mean_abs_projection_residual(const ProjectionStack& stack, const VolumeD& vol, double step) {
  return projection_residual(stack, vol, step).mean_abs;
}

SartResult sart_reconstruct(const ProjectionStack& stack, const GridSpec& grid, const SartOptions& opts) {
  if (stack.empty()) throw InvalidArgument("SART needs at least one view");
  stack.validate();
  if (!(opts.relaxation > 0 && opts.relaxation < 2)) throw InvalidArgument("SART relaxation must lie in (0, 2)");
  if (opts.iterations < 0) throw InvalidArgument("SART iteration count must be >= 0");
  const double step = opts.step > 0 ? opts.step : default_step(grid);

  SartResult result{VolumeD(grid, 1), {}, 0.0};
  if (opts.initial) {
    if (!(opts.initial->grid() == grid) || opts.initial->channels() != 1)
      throw ShapeMismatch("SART initial volume does not match the grid");
    result.volume = *opts.initial;
  }
  Eigen::VectorXd& x = result.volume.data();

  const ResidualStats initial = projection_residual(stack, result.volume, step);
  result.initial_residual = initial.mean_abs;

  std::vector<std::size_t> order(stack.size());
  Eigen::VectorXd numerator(x.size());
  Eigen::VectorXd denominator(x.size());
  RayWeights row;
  for (int iter = 0; iter < opts.iterations; ++iter) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (opts.view_order == ViewOrder::Shuffled) {
      CounterRng rng(opts.seed, 0x5A47, static_cast<std::uint64_t>(iter));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    for (std::size_t view_index : order) {
      const ProjectionView& view = stack.views[view_index];
      numerator.setZero();
      denominator.setZero();
      for (int n = 0; n < view.image.height(); ++n)
        for (int m = 0; m < view.image.width(); ++m) {
          row.voxels.clear();
          row.weights.clear();
          trace_ray(grid, ray_through_pixel(view.pose, m, n), step, [&](std::size_t idx, double w) {
            row.voxels.push_back(idx);
            row.weights.push_back(w);
          });
          const double length = row.sum();
          if (!(length > 0)) continue;
          const double r = (view.image.at(m, n) - row.dot(x)) / length;
          for (std::size_t e = 0; e < row.voxels.size(); ++e) {
            const auto idx = static_cast<Eigen::Index>(row.voxels[e]);
            numerator[idx] += row.weights[e] * r;
            denominator[idx] += row.weights[e];
          }
        }
      for (Eigen::Index v = 0; v < x.size(); ++v) {
        if (denominator[v] > 0) x[v] += opts.relaxation * numerator[v] / denominator[v];
        if (opts.nonnegativity && x[v] < 0) x[v] = 0;
      }
    }
    const ResidualStats now = projection_residual(stack, result.volume, step);
    if (!std::isfinite(now.norm) || now.norm > 10.0 * initial.norm)
      throw Divergence("SART residual grew beyond 10x its initial norm at iteration " + std::to_string(iter + 1));
    result.residual_trace.push_back(now.mean_abs);
  }
  return result;
}

}  // namespace cbct
