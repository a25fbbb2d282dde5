#pragma once

#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <vector>

#include "planecal/geometry.hpp"
#include "planecal/projection.hpp"
#include "planecal/solver.hpp"
#include "planecal/target_plane.hpp"

namespace planecal {

/// Deterministic seed derivation (splitmix64 chain).
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

/// Board placement distribution, relative to a frontoparallel board centered
/// on a random image point.
struct PlacementSpec {
  double range_min = 1.5;                        // meters
  double range_max = 6.0;                        // meters
  double max_angle = 40.0 * std::numbers::pi / 180.0;  // yaw / pitch / roll bound, radians
  int min_lidar_hits = 50;
  int max_resamples = 10000;
};

struct RigSpec {
  Isometry3 ground_truth_extrinsic;  // camera_from_lidar
  LidarProjectionParams lidar;
  double lidar_elevation_min = -22.5 * std::numbers::pi / 180.0;
  double lidar_elevation_max = 22.5 * std::numbers::pi / 180.0;
  CameraIntrinsics camera;
  BoardSpec board;
  PlacementSpec placement;

  /// 64-ring LiDAR (64 x 1024, +-22.5 deg), 1440x1080 camera, 6x8 board of
  /// 0.2 m squares, LiDAR mounted above the camera.
  static RigSpec make_default();
  void validate() const;

  /// Unit ray of beam `ring` at image column `column`. Ring 0 is the top beam.
  Eigen::Vector3d lidar_ray(int ring, int column) const;
};

enum class CameraNoiseUnit {
  Pixels,      // added to the detected corner pixel coordinates
  Normalized,  // added to x/z, y/z before distortion and intrinsics
};

struct NoiseSpec {
  double sigma_lidar = 0.0;   // meters, along the ray
  double sigma_camera = 0.0;  // per corner coordinate, see `camera_unit`
  std::uint64_t rng_seed = 0;
  CameraNoiseUnit camera_unit = CameraNoiseUnit::Pixels;

  void validate() const;
};

/// Number of LiDAR rays hitting the board rectangle for a camera_from_board pose.
int count_lidar_hits(const RigSpec& rig, const Isometry3& board_pose);

/// Both sensors on the same side of the board, every corner imaged, and
/// enough LiDAR returns on the board.
bool placement_valid(const RigSpec& rig, const Isometry3& board_pose);

/// One unvalidated draw from the placement distribution.
Isometry3 propose_board_pose(std::mt19937_64& rng, const RigSpec& rig);

/// camera_from_board pose drawn from the placement distribution until valid.
/// Throws RejectionExhausted.
Isometry3 sample_board_pose(std::mt19937_64& rng, const RigSpec& rig);

/// LiDAR returns on the board only. Throws NoHit when fewer than 3 rays hit.
PointCloud simulate_lidar(const RigSpec& rig, const Isometry3& board_pose, const NoiseSpec& noise);

/// Full scan: board returns plus a ground plane and a distant cylindrical wall.
PointCloud simulate_scan(const RigSpec& rig, const Isometry3& board_pose, const NoiseSpec& noise);

/// Noisy corner detections. Throws OutOfFrustum.
CornerSet simulate_camera(const RigSpec& rig, const Isometry3& board_pose, const NoiseSpec& noise);

struct MeasurementPool {
  std::vector<MeasurementPair> pairs;
  std::vector<Isometry3> board_poses;  // camera_from_board per pair
  Isometry3 ground_truth;
};

/// RANSAC threshold used for simulated LiDAR returns at a given noise level.
RansacConfig pool_ransac_config(const NoiseSpec& noise, std::uint64_t seed);

MeasurementPool generate_pool(const RigSpec& rig, const NoiseSpec& noise, int pool_size, std::uint64_t seed);

struct SweepConfig {
  std::vector<int> measurement_counts{3, 4, 5, 10, 20, 30, 39};
  int trials_per_count = 40;
  std::vector<NoiseSpec> noise_levels{{0.0, 0.0, 0}, {8e-3, 7e-3, 0}, {16e-3, 14e-3, 0}};
  int pool_size = 53;
  std::uint64_t seed = 0;
  SolverConfig solver;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

struct SweepCell {
  double sigma_lidar = 0.0;
  double sigma_camera = 0.0;
  int measurements = 0;
  int trials = 0;
  int failures = 0;  // trials where calibration threw
  double mean_translation = 0.0;  // meters
  double stdev_translation = 0.0;
  double mean_rotation = 0.0;  // radians
  double stdev_rotation = 0.0;
  double best_translation = 0.0;           // smallest e_t over trials
  double best_translation_rotation = 0.0;  // e_r of that trial
};

struct SweepTable {
  std::vector<SweepCell> cells;  // noise-major, then measurement count

  const SweepCell& cell(std::size_t noise_index, std::size_t count_index, std::size_t counts) const {
    return cells.at(noise_index * counts + count_index);
  }
};

/// Translation / rotation error for every trial of one (pool, w_s) cell.
std::vector<ExtrinsicError> run_trials(const MeasurementPool& pool, int measurements, int trials, std::uint64_t seed,
                                       const SolverConfig& solver, int threads, int* failures = nullptr);

SweepTable run_sweep(const SweepConfig& cfg, const RigSpec& rig);

}  // namespace planecal
