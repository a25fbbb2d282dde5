#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "planecal/io.hpp"
#include "planecal/projection.hpp"
#include "planecal/solver.hpp"
#include "planecal/target_plane.hpp"

namespace planecal {

/// Accepted pair plus where it came from.
struct AcceptedMeasurement {
  MeasurementPair pair;
  std::string frame_id;
  PatchSelection selection;
  std::string corners_file;  // relative to the dataset root
};

struct SessionFrame {
  std::size_t index = 0;
  std::string id;
  PointCloud cloud;
  RangeImage image{1, 1};
  CornerSet corners;
};

struct SeedResult {
  PatchSelection selection;
  PlaneObservation observation;
  std::vector<PixelCoord> inlier_pixels;
  std::size_t patch_size = 0;
};

struct CameraPlaneResult {
  PlaneObservation observation;
  BoardPose pose;
};

struct SessionState {
  std::uint64_t revision = 0;
  std::size_t frame_index = 0;
  std::size_t frame_count = 0;
  std::string frame_id;
  std::size_t accepted = 0;
  bool has_pending = false;
  bool has_report = false;
};

/// Single calibration session over a dataset. Mutations are serialized and
/// each one bumps the revision; a mutation carrying a stale expected revision
/// throws Conflict and leaves the store untouched.
class SessionStore {
 public:
  explicit SessionStore(io::DatasetManifest dataset, SolverConfig solver = {}, RansacConfig ransac = {},
                        std::optional<std::filesystem::path> persist_dir = std::nullopt);

  SessionState state() const;
  std::uint64_t revision() const;
  const io::DatasetManifest& dataset() const noexcept { return dataset_; }
  const SolverConfig& solver_config() const noexcept { return solver_; }

  // Readers optionally return the revision the value was read at.

  /// Current frame; throws NoFrame for an empty dataset.
  std::shared_ptr<const SessionFrame> frame(std::uint64_t* revision = nullptr) const;
  CameraPlaneResult camera_plane(std::uint64_t* revision = nullptr) const;
  std::optional<SeedResult> pending(std::uint64_t* revision = nullptr) const;
  std::vector<AcceptedMeasurement> accepted(std::uint64_t* revision = nullptr) const;
  std::vector<MeasurementPair> measurements(std::uint64_t* revision = nullptr) const;
  /// Throws NoReport before the first calibration.
  CalibrationReport report(std::uint64_t* revision = nullptr) const;

  SeedResult seed(const PatchSelection& selection, std::optional<std::uint64_t> expected_revision = std::nullopt);
  /// Stores the pending LiDAR plane with the current frame's camera plane and advances.
  std::uint64_t accept(std::optional<std::uint64_t> expected_revision);
  std::uint64_t reject(std::optional<std::uint64_t> expected_revision);
  std::uint64_t remove(std::size_t index, std::optional<std::uint64_t> expected_revision);
  std::uint64_t goto_frame(std::size_t index, std::optional<std::uint64_t> expected_revision);
  CalibrationReport calibrate(std::optional<std::uint64_t> expected_revision = std::nullopt);

  /// Writes measurements.json and session.json into `dir`.
  void save(const std::filesystem::path& dir) const;

 private:
  void check_revision(std::optional<std::uint64_t> expected) const;
  void load_frame(std::size_t index);
  void advance();
  void commit();
  void save_locked(const std::filesystem::path& dir) const;
  CameraPlaneResult camera_plane_locked() const;

  io::DatasetManifest dataset_;
  SolverConfig solver_;
  RansacConfig ransac_;
  std::optional<std::filesystem::path> persist_dir_;

  mutable std::shared_mutex mutex_;
  std::uint64_t revision_ = 0;
  std::shared_ptr<const SessionFrame> frame_;
  std::optional<SeedResult> pending_;
  std::vector<AcceptedMeasurement> accepted_;
  std::optional<CalibrationReport> report_;
  std::size_t next_pair_serial_ = 0;
};

}  // namespace planecal
