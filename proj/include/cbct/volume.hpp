#pragma once

// Dense voxel and pixel grids with world-coordinate bookkeeping and
// zero-padded multilinear interpolation.
//
// Layout is channel-major, then x fastest: index = ((c*D + k)*H + j)*W + i.
// The isocenter sits at the middle of the grid.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <string>

#include "cbct/error.hpp"
#include "cbct/geometry.hpp"

namespace cbct {

/// Shape (W, H, D) and voxel spacing (v_x, v_y, v_z) of a voxel lattice.
struct GridSpec {
  Eigen::Array3i shape{1, 1, 1};
  Eigen::Array3d spacing{1.0, 1.0, 1.0};

  GridSpec() = default;
  GridSpec(Eigen::Array3i shape_, Eigen::Array3d spacing_) : shape(shape_), spacing(spacing_) {
    validate();
  }
  static GridSpec cube(int n, double spacing) {
    return GridSpec(Eigen::Array3i::Constant(n), Eigen::Array3d::Constant(spacing));
  }

  void validate() const {
    if ((shape < 1).any()) throw InvalidArgument("grid shape must be positive");
    if (!(spacing > 0).all()) throw InvalidArgument("grid spacing must be positive");
  }

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
  }
  std::size_t linear_index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * shape[1] + j) * shape[0] + i;
  }
  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < shape[0] && j < shape[1] && k < shape[2];
  }

  Eigen::Vector3d voxel_center(int i, int j, int k) const {
    if (!contains(i, j, k)) throw InvalidArgument("voxel index out of range");
    return {(i + 0.5 - shape[0] / 2.0) * spacing[0], (j + 0.5 - shape[1] / 2.0) * spacing[1],
            (k + 0.5 - shape[2] / 2.0) * spacing[2]};
  }

  /// Continuous index coordinates of a world point; voxel centers land on
  /// integers.
  template <typename Scalar>
  Vector3<Scalar> continuous_index(const Vector3<Scalar>& p) const {
    return {p[0] / Scalar(spacing[0]) + Scalar(shape[0]) / 2 - Scalar(0.5),
            p[1] / Scalar(spacing[1]) + Scalar(shape[1]) / 2 - Scalar(0.5),
            p[2] / Scalar(spacing[2]) + Scalar(shape[2]) / 2 - Scalar(0.5)};
  }

  /// Full physical extent, centered on the isocenter.
  Aabb<double> bounds() const {
    const Eigen::Vector3d half = (shape.cast<double>() * spacing / 2.0).matrix();
    return {-half, half};
  }

  bool operator==(const GridSpec& o) const {
    return (shape == o.shape).all() && (spacing == o.spacing).all();
  }
};

template <typename Scalar>
class Volume {
 public:
  using Data = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Volume() = default;
  explicit Volume(GridSpec grid, int channels = 1)
      : grid_(grid), channels_(channels), data_(Data::Zero(size_for(grid, channels))) {}
  Volume(GridSpec grid, int channels, Data data) : grid_(grid), channels_(channels), data_(std::move(data)) {
    if (static_cast<std::size_t>(data_.size()) != size_for(grid_, channels_))
      throw ShapeMismatch("volume data length does not match shape x channels");
  }

  const GridSpec& grid() const { return grid_; }
  const Eigen::Array3i& shape() const { return grid_.shape; }
  const Eigen::Array3d& spacing() const { return grid_.spacing; }
  int channels() const { return channels_; }
  std::size_t voxel_count() const { return grid_.voxel_count(); }

  const Data& data() const { return data_; }
  Data& data() { return data_; }

  Scalar& at(int i, int j, int k, int c = 0) { return data_[index(i, j, k, c)]; }
  Scalar at(int i, int j, int k, int c = 0) const { return data_[index(i, j, k, c)]; }

  std::size_t index(int i, int j, int k, int c = 0) const {
    return static_cast<std::size_t>(c) * grid_.voxel_count() + grid_.linear_index(i, j, k);
  }

  Eigen::Vector3d voxel_center(int i, int j, int k) const { return grid_.voxel_center(i, j, k); }

  template <typename Other>
  Volume<Other> cast() const {
    return Volume<Other>(grid_, channels_, data_.template cast<Other>());
  }

  bool same_shape(const Volume& o) const {
    return (grid_.shape == o.grid_.shape).all() && channels_ == o.channels_;
  }

 private:
  static std::size_t size_for(const GridSpec& g, int c) {
    if (c < 1) throw InvalidArgument("channel count must be positive");
    return g.voxel_count() * static_cast<std::size_t>(c);
  }

  GridSpec grid_;
  int channels_ = 1;
  Data data_;
};

template <typename Scalar>
class ImageGrid {
 public:
  using Data = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  ImageGrid() = default;
  ImageGrid(int width, int height, int channels = 1)
      : width_(width), height_(height), channels_(channels),
        data_(Data::Zero(size_for(width, height, channels))) {}
  ImageGrid(int width, int height, int channels, Data data)
      : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    if (static_cast<std::size_t>(data_.size()) != size_for(width, height, channels))
      throw ShapeMismatch("image data length does not match shape x channels");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  const Data& data() const { return data_; }
  Data& data() { return data_; }

  Scalar& at(int m, int n, int c = 0) { return data_[index(m, n, c)]; }
  Scalar at(int m, int n, int c = 0) const { return data_[index(m, n, c)]; }
  std::size_t index(int m, int n, int c = 0) const {
    return (static_cast<std::size_t>(c) * height_ + n) * width_ + m;
  }

  bool same_shape(const ImageGrid& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

 private:
  static std::size_t size_for(int w, int h, int c) {
    if (w < 1 || h < 1 || c < 1) throw InvalidArgument("image shape must be positive");
    return static_cast<std::size_t>(w) * h * c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  Data data_;
};

using VolumeD = Volume<double>;
using ImageD = ImageGrid<double>;

/// Visits the (at most 8) in-bounds trilinear corners of continuous index
/// coordinate `ci` with their weights. Missing corners are skipped, which is
/// zero padding.
template <typename Scalar, typename Visitor>
void for_each_trilinear_tap(const Eigen::Array3i& shape, const Vector3<Scalar>& ci, Visitor&& visit) {
  const Scalar fx = std::floor(ci[0]), fy = std::floor(ci[1]), fz = std::floor(ci[2]);
  if (!(fx >= -1 && fy >= -1 && fz >= -1 && fx < shape[0] && fy < shape[1] && fz < shape[2])) return;
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
  const Scalar ax = ci[0] - fx, ay = ci[1] - fy, az = ci[2] - fz;
  const Scalar wx[2] = {Scalar(1) - ax, ax};
  const Scalar wy[2] = {Scalar(1) - ay, ay};
  const Scalar wz[2] = {Scalar(1) - az, az};
  for (int dz = 0; dz < 2; ++dz) {
    const int z = z0 + dz;
    if (z < 0 || z >= shape[2]) continue;
    for (int dy = 0; dy < 2; ++dy) {
      const int y = y0 + dy;
      if (y < 0 || y >= shape[1]) continue;
      const Scalar wyz = wy[dy] * wz[dz];
      const std::size_t row = (static_cast<std::size_t>(z) * shape[1] + y) * shape[0];
      for (int dx = 0; dx < 2; ++dx) {
        const int x = x0 + dx;
        if (x < 0 || x >= shape[0]) continue;
        visit(row + static_cast<std::size_t>(x), wx[dx] * wyz);
      }
    }
  }
}

/// 2D analogue of for_each_trilinear_tap over a w x h raster.
template <typename Scalar, typename Visitor>
void for_each_bilinear_tap(int width, int height, const Vector2<Scalar>& q, Visitor&& visit) {
  const Scalar fx = std::floor(q[0]), fy = std::floor(q[1]);
  if (!(fx >= -1 && fy >= -1 && fx < width && fy < height)) return;
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const Scalar ax = q[0] - fx, ay = q[1] - fy;
  const Scalar wx[2] = {Scalar(1) - ax, ax};
  const Scalar wy[2] = {Scalar(1) - ay, ay};
  for (int dy = 0; dy < 2; ++dy) {
    const int y = y0 + dy;
    if (y < 0 || y >= height) continue;
    for (int dx = 0; dx < 2; ++dx) {
      const int x = x0 + dx;
      if (x < 0 || x >= width) continue;
      visit(static_cast<std::size_t>(y) * width + x, wx[dx] * wy[dy]);
    }
  }
}

/// Trilinear sample of channel `c` at world point `p`.
template <typename Scalar>
Scalar sample_trilinear(const Volume<Scalar>& vol, const Vector3<Scalar>& p, int c) {
  const Vector3<Scalar> ci = vol.grid().continuous_index(p);
  if (!ci.allFinite()) return Scalar(0);
  const Scalar* base = vol.data().data() + static_cast<std::size_t>(c) * vol.voxel_count();
  Scalar acc(0);
  for_each_trilinear_tap(vol.shape(), ci, [&](std::size_t idx, Scalar w) { acc += w * base[idx]; });
  return acc;
}

/// Trilinear sample of every channel at world point `p`.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sample_trilinear(const Volume<Scalar>& vol, const Vector3<Scalar>& p) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(vol.channels());
  for (int c = 0; c < vol.channels(); ++c) out[c] = sample_trilinear(vol, p, c);
  return out;
}

/// Bilinear sample of every channel at continuous pixel coordinate `q`.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sample_bilinear(const ImageGrid<Scalar>& img, const Vector2<Scalar>& q) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(img.channels());
  if (!q.allFinite()) return out;
  const std::size_t plane = img.pixel_count();
  for_each_bilinear_tap(img.width(), img.height(), q, [&](std::size_t idx, Scalar w) {
    for (int c = 0; c < img.channels(); ++c) out[c] += w * img.data()[static_cast<std::size_t>(c) * plane + idx];
  });
  return out;
}

}  // namespace cbct
