#include "cbct/fusion.hpp"

#include <cmath>

#include "cbct/random.hpp"

namespace cbct {

void FusionParams::validate() const {
  const auto c = phi2_bias.size();
  if (c < 1) throw ShapeMismatch("fusion parameters have no channels");
  if (phi1_weight.rows() != c + 1 || phi1_weight.cols() != 3 * c || phi1_bias.size() != c + 1 ||
      phi2_weight.rows() != c || phi2_weight.cols() != c)
    throw ShapeMismatch("fusion parameter shapes are inconsistent with C = " + std::to_string(c));
  if (!phi1_weight.allFinite() || !phi1_bias.allFinite() || !phi2_weight.allFinite() || !phi2_bias.allFinite())
    throw InvalidArgument("fusion parameters must be finite");
}

FusionParams FusionParams::random(int channels, std::uint64_t seed) {
  if (channels < 1) throw InvalidArgument("fusion needs at least one channel");
  CounterRng rng(seed, 0xF05E);
  auto fill = [&](Eigen::MatrixXd& m, int fan_in) {
    const double bound = std::sqrt(3.0 / fan_in);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  };
  FusionParams p;
  p.phi1_weight.resize(channels + 1, 3 * channels);
  p.phi2_weight.resize(channels, channels);
  fill(p.phi1_weight, 3 * channels);
  fill(p.phi2_weight, channels);
  p.phi1_bias = Eigen::VectorXd::Zero(channels + 1);
  p.phi2_bias = Eigen::VectorXd::Zero(channels);
  return p;
}

Eigen::VectorXd gather_view_features(const ImageD& feature_map, const Pose& pose, const Eigen::Vector3d& x) {
  const DetectorHit<double> hit = project_point_to_detector(pose, x);
  return sample_bilinear(feature_map, detector_point_to_pixel(pose, hit.point));
}

Eigen::VectorXd gather_view_features(const std::vector<FeatureLevel>& pyramid, const Pose& pose,
                                     const Eigen::Vector3d& x) {
  const DetectorHit<double> hit = project_point_to_detector(pose, x);
  const Eigen::Vector2d q = detector_point_to_pixel(pose, hit.point);
  Eigen::Index total = 0;
  for (const auto& level : pyramid) total += level.map.channels();
  Eigen::VectorXd out(total);
  Eigen::Index offset = 0;
  for (const auto& level : pyramid) {
    const int c = level.map.channels();
    out.segment(offset, c) = sample_bilinear(level.map, level_coordinate(q, level.stride));
    offset += c;
  }
  return out;
}

ViewStatistics fuse_mean_var(const std::vector<Eigen::VectorXd>& features) {
  if (features.empty()) throw InvalidArgument("cannot fuse an empty list of view features");
  const Eigen::Index c = features.front().size();
  ViewStatistics s{Eigen::VectorXd::Zero(c), Eigen::VectorXd::Zero(c)};
  for (const auto& f : features) {
    if (f.size() != c) throw ShapeMismatch("view features disagree on channel count");
    s.mean += f;
  }
  const double n = static_cast<double>(features.size());
  s.mean /= n;
  for (const auto& f : features) s.variance.array() += (f - s.mean).array().square();
  s.variance /= n;
  return s;
}

FusionResult fuse_adaptive(const std::vector<Eigen::VectorXd>& features, const FusionParams& params) {
  params.validate();
  const ViewStatistics stats = fuse_mean_var(features);
  const int c = params.channels();
  if (stats.mean.size() != c) throw ShapeMismatch("view features do not match the fusion channel count");
  const auto n = static_cast<Eigen::Index>(features.size());

  Eigen::MatrixXd refined(c, n);
  Eigen::VectorXd logits(n);
  Eigen::VectorXd input(3 * c);
  input.segment(c, c) = stats.mean;
  input.segment(2 * c, c) = stats.variance;
  for (Eigen::Index i = 0; i < n; ++i) {
    input.head(c) = features[static_cast<std::size_t>(i)];
    const Eigen::VectorXd z = params.phi1_weight * input + params.phi1_bias;
    refined.col(i) = z.head(c).unaryExpr([](double v) { return ad::gelu(v); });
    logits[i] = z[c];
  }
  FusionResult out;
  out.weights = (logits.array() - logits.maxCoeff()).exp().matrix();
  out.weights /= out.weights.sum();
  const Eigen::VectorXd pooled = refined * out.weights;
  out.fused = (params.phi2_weight * pooled + params.phi2_bias).unaryExpr([](double v) { return ad::gelu(v); });
  return out;
}

std::vector<Eigen::Vector3d> sparse_query_points(const GridSpec& grid, int downsample) {
  const GridSpec coarse = downsampled_grid(grid, downsample);
  std::vector<Eigen::Vector3d> points;
  points.reserve(coarse.voxel_count());
  for (int k = 0; k < coarse.shape[2]; ++k)
    for (int j = 0; j < coarse.shape[1]; ++j)
      for (int i = 0; i < coarse.shape[0]; ++i)
        points.push_back(grid.voxel_center(i * downsample, j * downsample, k * downsample));
  return points;
}

GridSpec downsampled_grid(const GridSpec& grid, int downsample) {
  if (downsample < 1 || (downsample & (downsample - 1)) != 0)
    throw InvalidArgument("downsampling rate must be a power of two");
  if ((grid.shape.unaryExpr([downsample](int n) { return n % downsample; }) != 0).any())
    throw InvalidArgument("downsampling rate " + std::to_string(downsample) + " does not divide the volume shape");
  return GridSpec(grid.shape / downsample, grid.spacing * downsample);
}

FeatureVolume build_feature_volume(const std::vector<std::vector<FeatureLevel>>& pyramids,
                                   const std::vector<Pose>& poses, const GridSpec& grid, int downsample,
                                   const FusionParams& params) {
  if (pyramids.size() != poses.size()) throw ShapeMismatch("one feature pyramid per view is required");
  if (poses.empty()) throw InvalidArgument("feature volume needs at least one view");
  const std::vector<Eigen::Vector3d> points = sparse_query_points(grid, downsample);
  FeatureVolume fv{grid, downsample, VolumeD(downsampled_grid(grid, downsample), params.channels())};
  const std::size_t cells = fv.features.voxel_count();
  std::vector<Eigen::VectorXd> per_view(poses.size());
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (std::size_t v = 0; v < poses.size(); ++v) per_view[v] = gather_view_features(pyramids[v], poses[v], points[p]);
    const Eigen::VectorXd f = fuse_adaptive(per_view, params).fused;
    for (int c = 0; c < f.size(); ++c) fv.features.data()[static_cast<Eigen::Index>(c * cells + p)] = f[c];
  }
  return fv;
}

int GatherPlan::channels() const {
  int c = 0;
  for (int l : level_channels) c += l;
  return c;
}

GatherPlan make_gather_plan(const std::vector<Pose>& poses, const std::vector<Eigen::Vector3d>& points,
                            const std::vector<LevelLayout>& levels) {
  GatherPlan plan;
  plan.points = static_cast<int>(points.size());
  plan.views = static_cast<int>(poses.size());
  for (const auto& l : levels) {
    plan.level_channels.push_back(l.channels);
    plan.level_sizes.emplace_back(l.width, l.height);
    plan.level_strides.push_back(l.stride);
  }
  plan.offsets.reserve(points.size() * poses.size() * levels.size() + 1);
  plan.offsets.push_back(0);
  for (const auto& x : points)
    for (const auto& pose : poses) {
      const Eigen::Vector2d q = project_point_to_pixel(pose, x);
      for (const auto& l : levels) {
        for_each_bilinear_tap(l.width, l.height, level_coordinate(q, l.stride), [&](std::size_t idx, double w) {
          plan.pixels.push_back(static_cast<std::uint32_t>(idx));
          plan.weights.push_back(w);
        });
        plan.offsets.push_back(static_cast<std::uint32_t>(plan.pixels.size()));
      }
    }
  return plan;
}

namespace ad {

Var gather_features(Tape& tape, const std::vector<std::vector<Var>>& maps, const GatherPlan& plan) {
  const int levels = plan.levels();
  if (static_cast<int>(maps.size()) != plan.views) throw ShapeMismatch("gather: view count differs from plan");
  bool needs = false;
  for (const auto& view : maps) {
    if (static_cast<int>(view.size()) != levels) throw ShapeMismatch("gather: level count differs from plan");
    for (int l = 0; l < levels; ++l) {
      const auto& [w, h] = plan.level_sizes[static_cast<std::size_t>(l)];
      if (tape.shape(view[static_cast<std::size_t>(l)]) != Shape{plan.level_channels[static_cast<std::size_t>(l)], h, w})
        throw ShapeMismatch("gather: feature map shape differs from plan");
      needs = needs || tape.requires_grad(view[static_cast<std::size_t>(l)]);
    }
  }
  const int c_total = plan.channels();
  std::vector<int> channel_offset(static_cast<std::size_t>(levels), 0);
  for (int l = 1; l < levels; ++l)
    channel_offset[static_cast<std::size_t>(l)] =
        channel_offset[static_cast<std::size_t>(l - 1)] + plan.level_channels[static_cast<std::size_t>(l - 1)];

  Tensor out({plan.points, plan.views, c_total});
  for (int p = 0; p < plan.points; ++p)
    for (int v = 0; v < plan.views; ++v)
      for (int l = 0; l < levels; ++l) {
        const std::size_t slot = (static_cast<std::size_t>(p) * plan.views + v) * levels + l;
        const auto& [w, h] = plan.level_sizes[static_cast<std::size_t>(l)];
        const Eigen::Index plane = Eigen::Index(w) * h;
        const Eigen::VectorXd& src = tape.value(maps[static_cast<std::size_t>(v)][static_cast<std::size_t>(l)]).data;
        double* dst = out.data.data() + (Eigen::Index(p) * plan.views + v) * c_total + channel_offset[static_cast<std::size_t>(l)];
        for (std::uint32_t e = plan.offsets[slot]; e < plan.offsets[slot + 1]; ++e)
          for (int c = 0; c < plan.level_channels[static_cast<std::size_t>(l)]; ++c)
            dst[c] += plan.weights[e] * src[c * plane + plan.pixels[e]];
      }
  return tape.record(std::move(out), needs, [maps, plan, channel_offset, c_total](Tape& t, const Eigen::VectorXd& g) {
    const int levels = plan.levels();
    for (int p = 0; p < plan.points; ++p)
      for (int v = 0; v < plan.views; ++v)
        for (int l = 0; l < levels; ++l) {
          const Var map = maps[static_cast<std::size_t>(v)][static_cast<std::size_t>(l)];
          if (!t.requires_grad(map)) continue;
          const std::size_t slot = (static_cast<std::size_t>(p) * plan.views + v) * levels + l;
          const auto& [w, h] = plan.level_sizes[static_cast<std::size_t>(l)];
          const Eigen::Index plane = Eigen::Index(w) * h;
          Eigen::VectorXd& dst = t.grad_buffer(map);
          const double* src = g.data() + (Eigen::Index(p) * plan.views + v) * c_total + channel_offset[static_cast<std::size_t>(l)];
          for (std::uint32_t e = plan.offsets[slot]; e < plan.offsets[slot + 1]; ++e)
            for (int c = 0; c < plan.level_channels[static_cast<std::size_t>(l)]; ++c)
              dst[c * plane + plan.pixels[e]] += plan.weights[e] * src[c];
        }
  });
}

Var fuse_adaptive(Tape& tape, Var gathered, const FusionVars& params) {
  const Shape& shape = tape.shape(gathered);
  if (shape.size() != 3) throw ShapeMismatch("fusion expects [points, views, channels]");
  const int c = shape[2];
  const Var mean = view_mean(tape, gathered);
  const Var variance = view_variance(tape, gathered);
  const Var context = concat_view_context(tape, gathered, mean, variance);
  const Var mixed = linear(tape, context, params.phi1_weight, params.phi1_bias);
  const Var refined = gelu(tape, slice_last(tape, mixed, 0, c));
  const Var weights = softmax_views(tape, slice_last(tape, mixed, c, 1));
  const Var pooled = weighted_view_sum(tape, refined, weights);
  return gelu(tape, linear(tape, pooled, params.phi2_weight, params.phi2_bias));
}

}  // namespace ad

}  // namespace cbct
