#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "planecal/geometry.hpp"
#include "planecal/projection.hpp"
#include "planecal/solver.hpp"
#include "planecal/synth.hpp"
#include "planecal/target_plane.hpp"

namespace planecal::io {

using json = nlohmann::json;

/// Format tags written into every file header.
namespace format {
inline constexpr std::string_view kCloudText = "planecal_cloud 1";
inline constexpr std::string_view kCloudBinaryMagic = "PCALCLD1";
inline constexpr std::string_view kCorners = "planecal.corners/1";
inline constexpr std::string_view kMeasurements = "planecal.measurements/1";
inline constexpr std::string_view kSolverConfig = "planecal.solver_config/1";
inline constexpr std::string_view kReport = "planecal.report/1";
inline constexpr std::string_view kSweepConfig = "planecal.sweep_config/1";
inline constexpr std::string_view kSweepTable = "planecal.sweep_table/1";
inline constexpr std::string_view kSimulateConfig = "planecal.simulate_config/1";
inline constexpr std::string_view kDataset = "planecal.dataset/1";
inline constexpr std::string_view kGroundTruth = "planecal.ground_truth/1";
}  // namespace format

// JSON encoders / decoders. Decoders throw SchemaMismatch naming the field path.
json encode(const Plane& p);
json encode(const Isometry3& X);
json encode(const MeasurementPair& m);
json encode(const SolverConfig& c);
json encode(const CalibrationReport& r);
json encode(const CameraIntrinsics& c);
json encode(const LidarProjectionParams& p);
json encode(const BoardSpec& b);
json encode(const CornerSet& c);
json encode(const RansacConfig& c);
json encode(const PatchSelection& s);
json encode(const PlaneObservation& o);
json encode(const NoiseSpec& n);
json encode(const RigSpec& r);
json encode(const SweepConfig& c);
json encode(const SweepTable& t);
json encode(const ExtrinsicError& e);

Plane decode_plane(const json& j, const std::string& path = "");
Isometry3 decode_isometry(const json& j, const std::string& path = "");
MeasurementPair decode_measurement(const json& j, const std::string& path = "");
SolverConfig decode_solver_config(const json& j, const std::string& path = "");
CalibrationReport decode_report(const json& j, const std::string& path = "");
CameraIntrinsics decode_intrinsics(const json& j, const std::string& path = "");
LidarProjectionParams decode_lidar_params(const json& j, const std::string& path = "");
BoardSpec decode_board(const json& j, const std::string& path = "");
CornerSet decode_corners(const json& j, const std::string& path = "");
RansacConfig decode_ransac_config(const json& j, const std::string& path = "");
PatchSelection decode_patch_selection(const json& j, const std::string& path = "");
NoiseSpec decode_noise(const json& j, const std::string& path = "");
RigSpec decode_rig(const json& j, const std::string& path = "");
SweepConfig decode_sweep_config(const json& j, const std::string& path = "");
SweepTable decode_sweep_table(const json& j, const std::string& path = "");

/// Reads a JSON document and checks its "format" tag.
json load_document(const std::filesystem::path& path, std::string_view format_tag);
/// Writes `body` with the "format" tag added.
void save_document(const std::filesystem::path& path, std::string_view format_tag, json body);

enum class CloudEncoding { Text, Binary };

/// Text: header lines then one "x y z [ring] intensity" record per line,
/// numerics at 17 significant digits. Binary: same schema, little-endian.
/// `layout` (when given) records width / n_rings; a width marks the cloud as ordered.
void save_cloud(const std::filesystem::path& path, const PointCloud& cloud,
                const std::optional<LidarProjectionParams>& layout = std::nullopt,
                CloudEncoding encoding = CloudEncoding::Text);

/// Auto-detects the encoding. Rings missing from the records are inferred from
/// the ordered layout; throws MissingRing when that is impossible.
PointCloud load_cloud(const std::filesystem::path& path);

CornerSet load_corners(const std::filesystem::path& path);
void save_corners(const std::filesystem::path& path, const CornerSet& corners);

std::vector<MeasurementPair> load_measurements(const std::filesystem::path& path);
void save_measurements(const std::filesystem::path& path, std::span<const MeasurementPair> measurements);

SolverConfig load_solver_config(const std::filesystem::path& path);
void save_solver_config(const std::filesystem::path& path, const SolverConfig& cfg);

CalibrationReport load_report(const std::filesystem::path& path);
void save_report(const std::filesystem::path& path, const CalibrationReport& report);

SweepTable load_sweep_table(const std::filesystem::path& path);
void save_sweep_table(const std::filesystem::path& path, const SweepTable& table);

struct SweepSetup {
  SweepConfig sweep;
  RigSpec rig = RigSpec::make_default();
};
SweepSetup load_sweep_config(const std::filesystem::path& path);
void save_sweep_config(const std::filesystem::path& path, const SweepSetup& setup);

struct SimulateConfig {
  RigSpec rig = RigSpec::make_default();
  NoiseSpec noise;
  int frames = 10;
  std::uint64_t seed = 0;
  CloudEncoding cloud_encoding = CloudEncoding::Text;
};
SimulateConfig load_simulate_config(const std::filesystem::path& path);
void save_simulate_config(const std::filesystem::path& path, const SimulateConfig& cfg);

struct DatasetFrame {
  std::string id;
  std::filesystem::path cloud;    // relative to the manifest directory
  std::filesystem::path corners;  // relative to the manifest directory
  std::optional<PatchSelection> seed_hint;
};

struct DatasetManifest {
  CameraIntrinsics intrinsics;
  BoardSpec board;
  LidarProjectionParams lidar;
  std::vector<DatasetFrame> frames;
  std::filesystem::path root;  // directory holding the manifest

  const DatasetFrame& frame(std::string_view id) const;
  std::filesystem::path resolve(const std::filesystem::path& p) const { return root / p; }
};

inline constexpr std::string_view kManifestName = "dataset.json";

/// Accepts the manifest file or its directory. Verifies every referenced
/// file exists and parses and that frame ids are unique.
DatasetManifest load_dataset(const std::filesystem::path& path, bool verify_files = true);
void save_dataset_manifest(const DatasetManifest& manifest);

struct GroundTruth {
  Isometry3 extrinsic;
  std::vector<std::pair<std::string, Isometry3>> board_poses;  // camera_from_board per frame id
};
GroundTruth load_ground_truth(const std::filesystem::path& path);
void save_ground_truth(const std::filesystem::path& path, const GroundTruth& gt);

/// Solver and RANSAC settings for extract / calibrate / serve.
struct SessionConfig {
  SolverConfig solver;
  RansacConfig ransac;
};
inline constexpr std::string_view kSessionConfigFormat = "planecal.session_config/1";
SessionConfig load_session_config(const std::filesystem::path& path);
void save_session_config(const std::filesystem::path& path, const SessionConfig& cfg);

struct SimulatedDataset {
  DatasetManifest manifest;
  GroundTruth ground_truth;
};

/// Writes dataset.json, ground_truth.json, session_config.json and one cloud +
/// corner file per frame under `dir`. Every frame carries a seed hint on the board.
SimulatedDataset simulate_dataset(const SimulateConfig& cfg, const std::filesystem::path& dir);

/// Machine-readable error payload {code, message, details}.
json error_payload(const Error& e);

/// Plain-text rendering of a sweep table (translation in mm, rotation in 1e-2 rad).
std::string format_sweep_table(const SweepTable& table);

}  // namespace planecal::io
