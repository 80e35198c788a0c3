#include <doctest.h>

#include <algorithm>

#include "cbct/fusion.hpp"
#include "cbct/random.hpp"

using namespace cbct;
using Eigen::VectorXd;

namespace {

std::vector<VectorXd> random_features(int views, int channels, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<VectorXd> out(static_cast<std::size_t>(views), VectorXd(channels));
  for (auto& f : out)
    for (auto& x : f) x = rng.normal();
  return out;
}

ScanConfig scan(int views) {
  ScanConfig cfg;
  cfg.n_views = views;
  cfg.delta_theta = 360.0 / views;
  cfg.detector = {16, 16};
  cfg.detector_spacing = {2, 2};
  return cfg;
}

}  // namespace

TEST_CASE("mean and population variance across views") {
  std::vector<VectorXd> f(3, VectorXd(2));
  f[0] << 1, 4;
  f[1] << 2, 4;
  f[2] << 6, 4;
  const ViewStatistics s = fuse_mean_var(f);
  CHECK(s.mean[0] == doctest::Approx(3));
  CHECK(s.variance[0] == doctest::Approx((4 + 1 + 9) / 3.0));
  CHECK(s.variance[1] == 0);
  CHECK_THROWS_AS(fuse_mean_var({}), InvalidArgument);
}

TEST_CASE("softmax view weights sum to one") {
  for (int views : {1, 2, 5, 20}) {
    const FusionParams p = FusionParams::random(6, views);
    const FusionResult r = fuse_adaptive(random_features(views, 6, 10 + views), p);
    CHECK(std::abs(r.weights.sum() - 1) < 1e-12);
    CHECK((r.weights.array() > 0).all());
    if (views == 1) CHECK(r.weights[0] == 1.0);
  }
}

TEST_CASE("identical views fuse with uniform weights") {
  const FusionParams p = FusionParams::random(4, 2);
  const std::vector<VectorXd> f(5, random_features(1, 4, 3)[0]);
  const FusionResult r = fuse_adaptive(f, p);
  CHECK((r.weights.array() - 0.2).abs().maxCoeff() < 1e-15);
}

TEST_CASE("fusion is invariant to view order") {
  const FusionParams p = FusionParams::random(5, 8);
  std::vector<VectorXd> f = random_features(6, 5, 4);
  const FusionResult a = fuse_adaptive(f, p);
  std::reverse(f.begin(), f.end());
  std::rotate(f.begin(), f.begin() + 2, f.end());
  const FusionResult b = fuse_adaptive(f, p);
  CHECK((a.fused - b.fused).norm() <= 1e-12 * a.fused.norm());
}

TEST_CASE("fusion parameter validation") {
  FusionParams p = FusionParams::random(3, 1);
  CHECK_NOTHROW(p.validate());
  p.phi1_weight.resize(4, 8);
  CHECK_THROWS_AS(p.validate(), ShapeMismatch);
  CHECK_THROWS_AS(fuse_adaptive(random_features(2, 4, 1), FusionParams::random(3, 1)), ShapeMismatch);
}

TEST_CASE("level coordinates keep pixel centers aligned") {
  CHECK(level_coordinate({-0.5, 7.5}, 2).isApprox(Eigen::Vector2d(-0.5, 3.5)));
  CHECK(level_coordinate({1.5, 1.5}, 4).isApprox(Eigen::Vector2d(0, 0)));
  CHECK(level_coordinate({3.0, 5.0}, 1).isApprox(Eigen::Vector2d(3, 5)));
}

TEST_CASE("gather reads the map at the point's detector pixel") {
  const Pose pose = view_pose(scan(3), 2);
  ImageD map(16, 16, 2);
  for (int n = 0; n < 16; ++n)
    for (int m = 0; m < 16; ++m) {
      map.at(m, n, 0) = m;
      map.at(m, n, 1) = 10 * n;
    }
  const Eigen::Vector3d x(3, -4, 6);
  const Eigen::Vector2d q = project_point_to_pixel(pose, x);
  const VectorXd f = gather_view_features(map, pose, x);
  CHECK(f[0] == doctest::Approx(q.x()));
  CHECK(f[1] == doctest::Approx(10 * q.y()));
  CHECK(gather_view_features(map, pose, Eigen::Vector3d(0, 0, 500)).isZero());
}

TEST_CASE("sparse query points and downsampled grid") {
  const GridSpec g = GridSpec::cube(8, 0.5);
  const auto pts = sparse_query_points(g, 4);
  REQUIRE(pts.size() == 8);
  CHECK(pts[0].isApprox(g.voxel_center(0, 0, 0)));
  CHECK(pts[1].isApprox(g.voxel_center(4, 0, 0)));
  CHECK(pts[2].isApprox(g.voxel_center(0, 4, 0)));
  const GridSpec d = downsampled_grid(g, 4);
  CHECK((d.shape == 2).all());
  CHECK((d.spacing == 2.0).all());
  CHECK_THROWS_AS(downsampled_grid(g, 3), InvalidArgument);
  CHECK_THROWS_AS(downsampled_grid(GridSpec::cube(6, 1), 4), InvalidArgument);
}

TEST_CASE("feature volume assembles one fused vector per query point") {
  const GridSpec g = GridSpec::cube(8, 2);
  const std::vector<Pose> poses = circular_poses(scan(3));
  CounterRng rng(8);
  std::vector<std::vector<FeatureLevel>> pyramids(3);
  for (auto& pyr : pyramids) {
    pyr.push_back({ImageD(16, 16, 2), 1});
    pyr.push_back({ImageD(8, 8, 1), 2});
    for (auto& lvl : pyr)
      for (auto& x : lvl.map.data()) x = rng.normal();
  }
  const FusionParams p = FusionParams::random(3, 6);
  const FeatureVolume fv = build_feature_volume(pyramids, poses, g, 2, p);
  CHECK(fv.features.channels() == 3);
  CHECK((fv.features.shape() == 4).all());
  const auto pts = sparse_query_points(g, 2);
  for (std::size_t idx : {std::size_t{0}, std::size_t{21}, std::size_t{63}}) {
    std::vector<VectorXd> per_view;
    for (int v = 0; v < 3; ++v) per_view.push_back(gather_view_features(pyramids[v], poses[v], pts[idx]));
    const VectorXd expect = fuse_adaptive(per_view, p).fused;
    for (int c = 0; c < 3; ++c)
      CHECK(fv.features.data()[c * 64 + static_cast<Eigen::Index>(idx)] == doctest::Approx(expect[c]));
  }
}
