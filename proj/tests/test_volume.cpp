#include <doctest.h>

#include "cbct/random.hpp"
#include "cbct/volume.hpp"

using namespace cbct;
using Eigen::Vector3d;

TEST_CASE("voxel centers are symmetric about the isocenter") {
  const GridSpec g(Eigen::Array3i(4, 5, 6), Eigen::Array3d(0.5, 1, 2));
  CHECK((g.voxel_center(0, 0, 0) + g.voxel_center(3, 4, 5)).norm() < 1e-12);
  CHECK(g.voxel_center(0, 2, 0).y() == doctest::Approx(0));
  CHECK(g.bounds().max_corner.isApprox(Vector3d(1, 2.5, 6)));
  CHECK_THROWS_AS(g.voxel_center(4, 0, 0), InvalidArgument);
  CHECK_THROWS_AS(GridSpec(Eigen::Array3i(0, 1, 1), Eigen::Array3d::Ones()), InvalidArgument);
}

TEST_CASE("continuous index inverts voxel centers") {
  const GridSpec g(Eigen::Array3i(7, 4, 3), Eigen::Array3d(0.3, 1.1, 2));
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 7; ++i)
        CHECK((g.continuous_index(g.voxel_center(i, j, k)) - Vector3d(i, j, k)).norm() < 1e-12);
}

TEST_CASE("trilinear sampling reproduces affine fields inside the grid") {
  const GridSpec g = GridSpec::cube(6, 1.5);
  VolumeD v(g, 2);
  for (int k = 0; k < 6; ++k)
    for (int j = 0; j < 6; ++j)
      for (int i = 0; i < 6; ++i) {
        const Vector3d c = g.voxel_center(i, j, k);
        v.at(i, j, k, 0) = 1 + 2 * c.x() - c.y() + 0.5 * c.z();
        v.at(i, j, k, 1) = -3;
      }
  CounterRng rng(1);
  for (int s = 0; s < 200; ++s) {
    const Vector3d p(rng.uniform(-3.7, 3.7), rng.uniform(-3.7, 3.7), rng.uniform(-3.7, 3.7));
    const Eigen::VectorXd f = sample_trilinear(v, p);
    CHECK(f[0] == doctest::Approx(1 + 2 * p.x() - p.y() + 0.5 * p.z()).epsilon(1e-12));
    CHECK(f[1] == doctest::Approx(-3));
  }
}

TEST_CASE("sampling is zero padded outside the grid") {
  VolumeD v(GridSpec::cube(4, 1));
  v.data().setOnes();
  CHECK(sample_trilinear(v, Vector3d(100, 0, 0).eval(), 0) == 0);
  // Half a voxel beyond the last center: half of the boundary value survives.
  CHECK(sample_trilinear(v, Vector3d(2.0, 0, 0).eval(), 0) == doctest::Approx(0.5));
  CHECK(sample_trilinear(v, Vector3d(NAN, 0, 0).eval(), 0) == 0);
}

TEST_CASE("bilinear sampling hits pixel values at integer coordinates") {
  ImageD img(3, 2, 2);
  for (Eigen::Index i = 0; i < img.data().size(); ++i) img.data()[i] = static_cast<double>(i);
  for (int n = 0; n < 2; ++n)
    for (int m = 0; m < 3; ++m) {
      const Eigen::VectorXd f = sample_bilinear(img, Eigen::Vector2d(m, n));
      CHECK(f[0] == img.at(m, n, 0));
      CHECK(f[1] == img.at(m, n, 1));
    }
  CHECK(sample_bilinear(img, Eigen::Vector2d(0.5, 0.5))[0] == doctest::Approx((0 + 1 + 3 + 4) / 4.0));
  CHECK(sample_bilinear(img, Eigen::Vector2d(-2, 0))[0] == 0);
}

TEST_CASE("channel-major layout with x fastest") {
  VolumeD v(GridSpec(Eigen::Array3i(2, 3, 4), Eigen::Array3d::Ones()), 2);
  CHECK(v.index(1, 0, 0) == 1);
  CHECK(v.index(0, 1, 0) == 2);
  CHECK(v.index(0, 0, 1) == 6);
  CHECK(v.index(0, 0, 0, 1) == 24);
  CHECK_THROWS_AS(VolumeD(v.grid(), 1, Eigen::VectorXd::Zero(5)), ShapeMismatch);
}
