#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "planecal/geometry.hpp"
#include "planecal/projection.hpp"

namespace planecal {

/// Checkerboard with rows x cols interior corners. Corner (r, c) sits at
/// (c * square_size, r * square_size, 0) in the board frame, row-major order.
struct BoardSpec {
  int rows = 6;
  int cols = 8;
  double square_size = 0.2;

  void validate() const;
  std::size_t corner_count() const { return static_cast<std::size_t>(rows) * cols; }
  std::vector<Eigen::Vector3d> corner_model() const;

  /// Physical board rectangle in the board frame: one square of margin around
  /// the interior corners. Returned as (min_x, min_y, max_x, max_y).
  Eigen::Vector4d extent() const;
};

struct CornerSet {
  std::vector<Eigen::Vector2d> corners;  // pixels
  BoardSpec board;

  /// Throws SchemaMismatch when the count does not match the board.
  void validate() const;
};

struct PatchSelection {
  PixelCoord seed;
  double radius = 5.0;  // pixels
};

struct RansacConfig {
  int max_iterations = 500;
  double inlier_threshold = 0.02;  // meters
  double min_inlier_ratio = 0.6;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

enum class PlaneSource { Lidar, Camera };

struct PlaneObservation {
  Plane plane = Plane::canonicalize(Eigen::Vector3d::UnitZ(), 0.0);
  std::size_t inlier_count = 0;
  double rms_residual = 0.0;
  PlaneSource source = PlaneSource::Lidar;
  /// Indices into the fitted point list; empty for camera observations.
  std::vector<std::size_t> inliers;
};

struct Patch {
  std::vector<Eigen::Vector3d> points;
  std::vector<PixelCoord> pixels;  // pixels[i] produced points[i]
};

/// Valid points within Euclidean pixel distance `radius` of the seed, with
/// column distance taken modulo the image width.
Patch collect_patch(const RangeImage& img, const PointCloud& cloud, const PatchSelection& sel);

struct PlaneFit {
  Plane plane;
  double rms_residual;
};

/// Least-squares plane through the centroid along the smallest scatter eigenvector.
PlaneFit fit_plane(std::span<const Eigen::Vector3d> points);

PlaneObservation ransac_plane(std::span<const Eigen::Vector3d> points, const RansacConfig& cfg = {});

struct BoardPose {
  Isometry3 pose;                 // camera_from_board
  double reprojection_rms = 0.0;  // normalized image units, per corner
  int iterations = 0;
};

/// Planar pose from corner detections: homography initialization followed by
/// Gauss-Newton on the reprojection error in undistorted normalized coordinates.
BoardPose board_pose(const CornerSet& corners, const CameraIntrinsics& intr);

/// Board plane z = 0 expressed in the camera frame.
PlaneObservation camera_plane(const Isometry3& pose, const BoardSpec& board, double reprojection_rms = 0.0);

}  // namespace planecal
