#include "planecal/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <thread>

#include "planecal/errors.hpp"

namespace planecal {

namespace {

constexpr double kGroundHeight = -1.8;   // meters below the LiDAR
constexpr double kWallRadius = 20.0;     // meters
constexpr double kWallTop = 4.0;         // meters above the LiDAR
constexpr int kPoolAttemptsPerPair = 50;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Eigen::Matrix3d ypr(double yaw, double pitch, double roll) {
  return (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()) * Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitX()) *
          Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitZ()))
      .toRotationMatrix();
}

struct BoardHit {
  double range;
  double intensity;
};

// Ray from the LiDAR origin against the board rectangle, in the LiDAR frame.
std::optional<BoardHit> intersect_board(const Isometry3& lidar_from_board, const Eigen::Vector4d& extent,
                                        double square, const Eigen::Vector3d& ray) {
  const Eigen::Vector3d n = lidar_from_board.rotation.col(2);
  const double denom = n.dot(ray);
  if (std::abs(denom) < 1e-9) return std::nullopt;
  const double s = n.dot(lidar_from_board.translation) / denom;
  if (!(s > 0.0)) return std::nullopt;
  const Eigen::Vector3d q = lidar_from_board.rotation.transpose() * (s * ray - lidar_from_board.translation);
  if (q.x() < extent(0) || q.x() > extent(2) || q.y() < extent(1) || q.y() > extent(3)) return std::nullopt;
  const auto parity = static_cast<long>(std::floor(q.x() / square)) + static_cast<long>(std::floor(q.y() / square));
  return BoardHit{s, (parity & 1L) ? 0.1 : 0.9};
}

std::optional<double> intersect_background(const Eigen::Vector3d& ray) {
  std::optional<double> best;
  if (ray.z() < -1e-9) best = kGroundHeight / ray.z();
  const double horizontal = ray.head<2>().norm();
  if (horizontal > 1e-9) {
    const double s = kWallRadius / horizontal;
    const double z = s * ray.z();
    if (z >= kGroundHeight && z <= kWallTop && (!best || s < *best)) best = s;
  }
  return best;
}

bool corners_imaged(const RigSpec& rig, const Isometry3& board_pose) {
  for (const auto& corner : rig.board.corner_model()) {
    const Eigen::Vector3d p = board_pose.apply(corner);
    if (!(p.z() > 1e-9)) return false;
    const Eigen::Vector2d xy = distort_normalized(rig.camera, p.head<2>() / p.z());
    const double u = rig.camera.fx * xy.x() + rig.camera.cx;
    const double v = rig.camera.fy * xy.y() + rig.camera.cy;
    if (u < 0.0 || u >= rig.camera.width || v < 0.0 || v >= rig.camera.height) return false;
  }
  return true;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(master);
  for (std::uint64_t p : path) s = splitmix64(s ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
  return s;
}

RigSpec RigSpec::make_default() {
  RigSpec rig;
  // LiDAR x forward / y left / z up into camera x right / y down / z forward,
  // plus a small mounting misalignment.
  Eigen::Matrix3d axes;
  axes << 0.0, -1.0, 0.0,
          0.0, 0.0, -1.0,
          1.0, 0.0, 0.0;
  const double deg = std::numbers::pi / 180.0;
  rig.ground_truth_extrinsic.rotation = ypr(1.5 * deg, -2.0 * deg, 1.0 * deg) * axes;
  rig.ground_truth_extrinsic.translation = Eigen::Vector3d(0.06, -0.12, 0.04);
  rig.lidar = LidarProjectionParams::equiangular(64, 1024);
  rig.camera.fx = 1100.0;
  rig.camera.fy = 1100.0;
  rig.camera.cx = 720.0;
  rig.camera.cy = 540.0;
  rig.camera.width = 1440;
  rig.camera.height = 1080;
  rig.board = BoardSpec{6, 8, 0.2};
  return rig;
}

void RigSpec::validate() const {
  if (!ground_truth_extrinsic.is_valid()) throw Error(ErrorCode::InvalidArgument, "ground-truth extrinsic is not rigid");
  lidar.validate();
  camera.validate();
  board.validate();
  if (!(lidar_elevation_max > lidar_elevation_min)) {
    throw Error(ErrorCode::InvalidArgument, "LiDAR elevation range is empty");
  }
  if (!(placement.range_min > 0.0 && placement.range_max >= placement.range_min)) {
    throw Error(ErrorCode::InvalidArgument, "placement range is invalid");
  }
}

Eigen::Vector3d RigSpec::lidar_ray(int ring, int column) const {
  const double step = lidar.n_rings > 1 ? (lidar_elevation_max - lidar_elevation_min) / (lidar.n_rings - 1) : 0.0;
  const double elevation = lidar_elevation_max - ring * step;
  const double azimuth = (column - lidar.azimuth_offset) / lidar.azimuth_resolution;
  return {std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth), std::sin(elevation)};
}

void NoiseSpec::validate() const {
  if (!(sigma_lidar >= 0.0) || !(sigma_camera >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "noise sigmas must be non-negative");
  }
}

int count_lidar_hits(const RigSpec& rig, const Isometry3& board_pose) {
  const Isometry3 lidar_from_board = rig.ground_truth_extrinsic.inverse() * board_pose;
  const Eigen::Vector4d extent = rig.board.extent();
  int hits = 0;
  for (int ring = 0; ring < rig.lidar.n_rings; ++ring) {
    for (int col = 0; col < rig.lidar.width; ++col) {
      const Eigen::Vector3d ray = rig.lidar_ray(ring, col);
      const auto board = intersect_board(lidar_from_board, extent, rig.board.square_size, ray);
      const auto background = intersect_background(ray);
      if (board && (!background || board->range < *background)) ++hits;
    }
  }
  return hits;
}

namespace {

// A board reaching below the ground would be partly hidden behind ground returns.
bool above_ground(const RigSpec& rig, const Isometry3& board_pose) {
  const Isometry3 lidar_from_board = rig.ground_truth_extrinsic.inverse() * board_pose;
  const Eigen::Vector4d e = rig.board.extent();
  for (const auto& [x, y] : {std::pair{e(0), e(1)}, std::pair{e(2), e(1)}, std::pair{e(0), e(3)}, std::pair{e(2), e(3)}}) {
    if (!(lidar_from_board.apply(Eigen::Vector3d(x, y, 0.0)).z() > kGroundHeight)) return false;
  }
  return true;
}

}  // namespace

bool placement_valid(const RigSpec& rig, const Isometry3& board_pose) {
  // Board plane in the camera frame: n.x - n.t = 0. Both sensor origins on the same side.
  const Eigen::Vector3d n = board_pose.rotation.col(2);
  const double camera_side = -n.dot(board_pose.translation);
  const double lidar_side = n.dot(rig.ground_truth_extrinsic.translation - board_pose.translation);
  if (camera_side == 0.0 || camera_side * lidar_side <= 0.0) return false;
  if (!corners_imaged(rig, board_pose)) return false;
  if (!above_ground(rig, board_pose)) return false;
  return count_lidar_hits(rig, board_pose) >= rig.placement.min_lidar_hits;
}

Isometry3 propose_board_pose(std::mt19937_64& rng, const RigSpec& rig) {
  const PlacementSpec& ps = rig.placement;
  std::uniform_real_distribution<double> range(ps.range_min, ps.range_max);
  std::uniform_real_distribution<double> u(0.0, rig.camera.width);
  std::uniform_real_distribution<double> v(0.0, rig.camera.height);
  std::uniform_real_distribution<double> angle(-ps.max_angle, ps.max_angle);

  const Eigen::Vector3d board_center((rig.board.cols - 1) * rig.board.square_size / 2.0,
                                     (rig.board.rows - 1) * rig.board.square_size / 2.0, 0.0);
  const double r = range(rng);
  const Eigen::Vector3d dir =
      Eigen::Vector3d((u(rng) - rig.camera.cx) / rig.camera.fx, (v(rng) - rig.camera.cy) / rig.camera.fy, 1.0)
          .normalized();
  const double yaw = angle(rng);
  const double pitch = angle(rng);
  const double roll = angle(rng);
  Isometry3 pose;
  pose.rotation = ypr(yaw, pitch, roll);
  pose.translation = r * dir - pose.rotation * board_center;
  return pose;
}

Isometry3 sample_board_pose(std::mt19937_64& rng, const RigSpec& rig) {
  for (int attempt = 0; attempt < rig.placement.max_resamples; ++attempt) {
    const Isometry3 pose = propose_board_pose(rng, rig);
    if (placement_valid(rig, pose)) return pose;
  }
  throw Error(ErrorCode::RejectionExhausted, "no valid board placement found",
              std::to_string(rig.placement.max_resamples) + " samples rejected");
}

PointCloud simulate_lidar(const RigSpec& rig, const Isometry3& board_pose, const NoiseSpec& noise) {
  noise.validate();
  std::mt19937_64 rng(noise.rng_seed);
  std::normal_distribution<double> eps(0.0, 1.0);
  const Isometry3 lidar_from_board = rig.ground_truth_extrinsic.inverse() * board_pose;
  const Eigen::Vector4d extent = rig.board.extent();

  PointCloud cloud;
  for (int ring = 0; ring < rig.lidar.n_rings; ++ring) {
    for (int col = 0; col < rig.lidar.width; ++col) {
      const Eigen::Vector3d ray = rig.lidar_ray(ring, col);
      const auto hit = intersect_board(lidar_from_board, extent, rig.board.square_size, ray);
      if (!hit) continue;
      const double range = hit->range + noise.sigma_lidar * eps(rng);
      cloud.points.push_back({range * ray, ring, hit->intensity});
    }
  }
  if (cloud.points.size() < 3) {
    throw Error(ErrorCode::NoHit, "board is not hit by enough LiDAR rays",
                std::to_string(cloud.points.size()) + " hits");
  }
  return cloud;
}

PointCloud simulate_scan(const RigSpec& rig, const Isometry3& board_pose, const NoiseSpec& noise) {
  noise.validate();
  std::mt19937_64 rng(noise.rng_seed);
  std::normal_distribution<double> eps(0.0, 1.0);
  const Isometry3 lidar_from_board = rig.ground_truth_extrinsic.inverse() * board_pose;
  const Eigen::Vector4d extent = rig.board.extent();

  PointCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(rig.lidar.n_rings) * rig.lidar.width);
  for (int ring = 0; ring < rig.lidar.n_rings; ++ring) {
    for (int col = 0; col < rig.lidar.width; ++col) {
      const Eigen::Vector3d ray = rig.lidar_ray(ring, col);
      const auto board = intersect_board(lidar_from_board, extent, rig.board.square_size, ray);
      const auto background = intersect_background(ray);
      double range = 0.0;
      double intensity = 0.0;
      if (board && (!background || board->range < *background)) {
        range = board->range;
        intensity = board->intensity;
      } else if (background) {
        range = *background;
        intensity = 0.3;
      } else {
        continue;
      }
      range += noise.sigma_lidar * eps(rng);
      cloud.points.push_back({range * ray, ring, intensity});
    }
  }
  if (cloud.points.empty()) throw Error(ErrorCode::NoHit, "scan produced no returns");
  return cloud;
}

CornerSet simulate_camera(const RigSpec& rig, const Isometry3& board_pose, const NoiseSpec& noise) {
  noise.validate();
  std::mt19937_64 rng(noise.rng_seed);
  std::normal_distribution<double> eps(0.0, 1.0);

  CornerSet set;
  set.board = rig.board;
  const auto model = rig.board.corner_model();
  set.corners.reserve(model.size());
  for (std::size_t k = 0; k < model.size(); ++k) {
    const Eigen::Vector3d p = board_pose.apply(model[k]);
    if (!(p.z() > 1e-9)) {
      throw Error(ErrorCode::OutOfFrustum, "board corner behind the camera", "corner " + std::to_string(k));
    }
    const Eigen::Vector2d jitter(noise.sigma_camera * eps(rng), noise.sigma_camera * eps(rng));
    Eigen::Vector2d xy = p.head<2>() / p.z();
    if (noise.camera_unit == CameraNoiseUnit::Normalized) xy += jitter;
    const Eigen::Vector2d d = distort_normalized(rig.camera, xy);
    Eigen::Vector2d px(rig.camera.fx * d.x() + rig.camera.cx, rig.camera.fy * d.y() + rig.camera.cy);
    if (noise.camera_unit == CameraNoiseUnit::Pixels) px += jitter;
    if (px.x() < 0.0 || px.x() >= rig.camera.width || px.y() < 0.0 || px.y() >= rig.camera.height) {
      throw Error(ErrorCode::OutOfFrustum, "board corner outside the image", "corner " + std::to_string(k));
    }
    set.corners.push_back(px);
  }
  return set;
}

RansacConfig pool_ransac_config(const NoiseSpec& noise, std::uint64_t seed) {
  RansacConfig cfg;
  cfg.inlier_threshold = std::max(cfg.inlier_threshold, 3.0 * noise.sigma_lidar);
  cfg.rng_seed = seed;
  return cfg;
}

MeasurementPool generate_pool(const RigSpec& rig, const NoiseSpec& noise, int pool_size, std::uint64_t seed) {
  rig.validate();
  noise.validate();
  if (pool_size < 1) throw Error(ErrorCode::InvalidArgument, "pool size must be positive");

  MeasurementPool pool;
  pool.ground_truth = rig.ground_truth_extrinsic;
  std::mt19937_64 rng(derive_seed(seed, {0}));
  const int max_attempts = kPoolAttemptsPerPair * pool_size;
  for (int attempt = 0; static_cast<int>(pool.pairs.size()) < pool_size; ++attempt) {
    if (attempt >= max_attempts) {
      throw Error(ErrorCode::RejectionExhausted, "could not generate enough valid placements");
    }
    const Isometry3 pose = sample_board_pose(rng, rig);
    const auto index = static_cast<std::uint64_t>(attempt);
    NoiseSpec lidar_noise = noise;
    lidar_noise.rng_seed = derive_seed(seed, {1, index, noise.rng_seed});
    NoiseSpec camera_noise = noise;
    camera_noise.rng_seed = derive_seed(seed, {2, index, noise.rng_seed});
    try {
      const PointCloud hits = simulate_lidar(rig, pose, lidar_noise);
      std::vector<Eigen::Vector3d> pts;
      pts.reserve(hits.points.size());
      for (const auto& p : hits.points) pts.push_back(p.position);
      const PlaneObservation lidar_obs =
          ransac_plane(pts, pool_ransac_config(noise, derive_seed(seed, {3, index})));
      const CornerSet corners = simulate_camera(rig, pose, camera_noise);
      const BoardPose bp = board_pose(corners, rig.camera);
      const PlaneObservation cam_obs = camera_plane(bp.pose, rig.board, bp.reprojection_rms);

      MeasurementPair pair{lidar_obs.plane, cam_obs.plane, "placement-" + std::to_string(pool.pairs.size())};
      pool.pairs.push_back(std::move(pair));
      pool.board_poses.push_back(pose);
    } catch (const Error&) {
      // a placement whose detection fails on either sensor is not a valid measurement
    }
  }
  return pool;
}

void SweepConfig::validate() const {
  if (measurement_counts.empty()) throw Error(ErrorCode::InvalidArgument, "no measurement counts");
  for (int c : measurement_counts) {
    if (c < 3) throw Error(ErrorCode::InvalidArgument, "measurement counts must be at least 3");
  }
  if (trials_per_count < 1) throw Error(ErrorCode::InvalidArgument, "trials_per_count must be at least 1");
  if (noise_levels.empty()) throw Error(ErrorCode::InvalidArgument, "no noise levels");
  for (const auto& n : noise_levels) n.validate();
  if (pool_size < *std::max_element(measurement_counts.begin(), measurement_counts.end())) {
    throw Error(ErrorCode::InvalidArgument, "pool_size smaller than the largest measurement count");
  }
  solver.validate();
}

std::vector<ExtrinsicError> run_trials(const MeasurementPool& pool, int measurements, int trials, std::uint64_t seed,
                                       const SolverConfig& solver, int threads, int* failures) {
  if (measurements > static_cast<int>(pool.pairs.size())) {
    throw Error(ErrorCode::InvalidArgument, "measurement count exceeds pool size");
  }
  std::vector<std::optional<ExtrinsicError>> results(static_cast<std::size_t>(trials));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int t = next++; t < trials; t = next++) {
      std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(t)}));
      std::vector<std::size_t> idx(pool.pairs.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(measurements));
      std::vector<MeasurementPair> subset;
      subset.reserve(idx.size());
      for (std::size_t i : idx) subset.push_back(pool.pairs[i]);
      try {
        const CalibrationReport report = calibrate(subset, solver);
        results[static_cast<std::size_t>(t)] = evaluate_error(report.extrinsic, pool.ground_truth);
      } catch (const Error&) {
      }
    }
  };
  int n_threads = threads > 0 ? threads : static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
  n_threads = std::min(n_threads, trials);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool_threads;
    for (int i = 0; i < n_threads; ++i) pool_threads.emplace_back(worker);
  }

  std::vector<ExtrinsicError> out;
  int failed = 0;
  for (const auto& r : results) {
    if (r) {
      out.push_back(*r);
    } else {
      ++failed;
    }
  }
  if (failures) *failures = failed;
  return out;
}

SweepTable run_sweep(const SweepConfig& cfg, const RigSpec& rig) {
  cfg.validate();
  rig.validate();
  SweepTable table;
  for (std::size_t k = 0; k < cfg.noise_levels.size(); ++k) {
    const NoiseSpec& noise = cfg.noise_levels[k];
    const MeasurementPool pool = generate_pool(rig, noise, cfg.pool_size, derive_seed(cfg.seed, {k}));
    for (int ws : cfg.measurement_counts) {
      SweepCell cell;
      cell.sigma_lidar = noise.sigma_lidar;
      cell.sigma_camera = noise.sigma_camera;
      cell.measurements = ws;
      cell.trials = cfg.trials_per_count;
      const auto errors = run_trials(pool, ws, cfg.trials_per_count,
                                     derive_seed(cfg.seed, {k, static_cast<std::uint64_t>(ws)}), cfg.solver,
                                     cfg.threads, &cell.failures);
      if (!errors.empty()) {
        const double n = static_cast<double>(errors.size());
        for (const auto& e : errors) {
          cell.mean_translation += e.translation / n;
          cell.mean_rotation += e.rotation / n;
        }
        double var_t = 0.0;
        double var_r = 0.0;
        for (const auto& e : errors) {
          var_t += std::pow(e.translation - cell.mean_translation, 2);
          var_r += std::pow(e.rotation - cell.mean_rotation, 2);
        }
        const double dof = errors.size() > 1 ? n - 1.0 : 1.0;
        cell.stdev_translation = std::sqrt(var_t / dof);
        cell.stdev_rotation = std::sqrt(var_r / dof);
        const auto best = std::min_element(errors.begin(), errors.end(), [](const auto& a, const auto& b) {
          return a.translation < b.translation;
        });
        cell.best_translation = best->translation;
        cell.best_translation_rotation = best->rotation;
      }
      table.cells.push_back(cell);
    }
  }
  return table;
}

}  // namespace planecal
