#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace planecal {

/// Pinhole intrinsics with 5-coefficient radial-tangential distortion
/// (k1, k2, p1, p2, k3).
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  std::array<double, 5> distortion{};
  int width = 1;
  int height = 1;

  /// Throws InvalidArgument when focal lengths or principal point are out of range.
  void validate() const;
  bool has_distortion() const;
};

/// Projection-by-ID parameters: column = fx * atan2(y, x) + cx, row = ring.
struct LidarProjectionParams {
  double azimuth_resolution = 1.0;  // pixels per radian
  double azimuth_offset = 0.0;      // pixels
  int n_rings = 1;
  int width = 1;

  /// Equiangular scan with the forward axis in the middle column.
  static LidarProjectionParams equiangular(int n_rings, int width);
  void validate() const;
};

struct LidarPoint {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  std::optional<int> ring;
  double intensity = 0.0;
};

/// When `ordered` is set, points without a ring id take ring = index / width.
struct PointCloud {
  std::vector<LidarPoint> points;
  bool ordered = false;
};

struct PixelCoord {
  int ring = 0;
  int column = 0;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

struct RangePixel {
  std::optional<std::size_t> point_index;
  double range = 0.0;
  double intensity = 0.0;
};

class RangeImage {
 public:
  RangeImage(int rows, int cols) : rows_(rows), cols_(cols), pixels_(static_cast<std::size_t>(rows) * cols) {}

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  bool in_bounds(PixelCoord px) const noexcept {
    return px.ring >= 0 && px.ring < rows_ && px.column >= 0 && px.column < cols_;
  }

  /// Throws OutOfBounds.
  const RangePixel& at(PixelCoord px) const;
  RangePixel& at(PixelCoord px);

  std::size_t populated() const;

 private:
  int rows_;
  int cols_;
  std::vector<RangePixel> pixels_;
};

/// (fx x/z + cx, fy y/z + cy) of an undistorted ray. Throws BehindCamera for z <= 1e-9.
Eigen::Vector2d pinhole_project(const CameraIntrinsics& intr, const Eigen::Vector3d& p);

/// Applies the radial-tangential model to normalized coordinates.
Eigen::Vector2d distort_normalized(const CameraIntrinsics& intr, const Eigen::Vector2d& xy);

/// Pixel to undistorted normalized ray (x/z, y/z). Throws NonConvergence.
Eigen::Vector2d undistort_pixel(const CameraIntrinsics& intr, const Eigen::Vector2d& pixel);

/// Column of a point under projection by ID, wrapped to [0, width).
int azimuth_column(const LidarProjectionParams& params, const Eigen::Vector3d& p);

RangeImage project_by_id(const PointCloud& cloud, const LidarProjectionParams& params);

std::optional<Eigen::Vector3d> pixel_to_point(const RangeImage& img, const PointCloud& cloud, PixelCoord px);

}  // namespace planecal
