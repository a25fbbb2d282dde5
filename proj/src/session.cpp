#include "planecal/session.hpp"

#include <mutex>

#include <fmt/format.h>

namespace planecal {

namespace fs = std::filesystem;

inline constexpr std::string_view kSessionFormat = "planecal.session/1";

SessionStore::SessionStore(io::DatasetManifest dataset, SolverConfig solver, RansacConfig ransac,
                           std::optional<fs::path> persist_dir)
    : dataset_(std::move(dataset)), solver_(solver), ransac_(ransac), persist_dir_(std::move(persist_dir)) {
  solver_.validate();
  ransac_.validate();
  if (!dataset_.frames.empty()) load_frame(0);
}

void SessionStore::check_revision(std::optional<std::uint64_t> expected) const {
  if (expected && *expected != revision_) {
    throw Error(ErrorCode::Conflict,
                fmt::format("stale revision {} (current {})", *expected, revision_),
                std::to_string(revision_));
  }
}

void SessionStore::load_frame(std::size_t index) {
  if (index >= dataset_.frames.size()) {
    throw Error(ErrorCode::NoFrame, fmt::format("frame index {} out of range", index),
                fmt::format("{} frames", dataset_.frames.size()));
  }
  const io::DatasetFrame& f = dataset_.frames[index];
  auto frame = std::make_shared<SessionFrame>();
  frame->index = index;
  frame->id = f.id;
  frame->cloud = io::load_cloud(dataset_.resolve(f.cloud));
  frame->image = project_by_id(frame->cloud, dataset_.lidar);
  frame->corners = io::load_corners(dataset_.resolve(f.corners));
  frame_ = std::move(frame);
}

void SessionStore::advance() {
  pending_.reset();
  if (frame_ && frame_->index + 1 < dataset_.frames.size()) load_frame(frame_->index + 1);
}

void SessionStore::commit() {
  ++revision_;
  if (persist_dir_) save_locked(*persist_dir_);
}

SessionState SessionStore::state() const {
  std::shared_lock lock(mutex_);
  SessionState s;
  s.revision = revision_;
  s.frame_count = dataset_.frames.size();
  if (frame_) {
    s.frame_index = frame_->index;
    s.frame_id = frame_->id;
  }
  s.accepted = accepted_.size();
  s.has_pending = pending_.has_value();
  s.has_report = report_.has_value();
  return s;
}

std::uint64_t SessionStore::revision() const {
  std::shared_lock lock(mutex_);
  return revision_;
}

std::shared_ptr<const SessionFrame> SessionStore::frame(std::uint64_t* revision) const {
  std::shared_lock lock(mutex_);
  if (revision) *revision = revision_;
  if (!frame_) throw Error(ErrorCode::NoFrame, "dataset has no frames");
  return frame_;
}

CameraPlaneResult SessionStore::camera_plane_locked() const {
  if (!frame_) throw Error(ErrorCode::NoFrame, "dataset has no frames");
  CameraPlaneResult r;
  r.pose = board_pose(frame_->corners, dataset_.intrinsics);
  r.observation = planecal::camera_plane(r.pose.pose, frame_->corners.board, r.pose.reprojection_rms);
  return r;
}

CameraPlaneResult SessionStore::camera_plane(std::uint64_t* revision) const {
  std::shared_lock lock(mutex_);
  if (revision) *revision = revision_;
  return camera_plane_locked();
}

std::optional<SeedResult> SessionStore::pending(std::uint64_t* revision) const {
  std::shared_lock lock(mutex_);
  if (revision) *revision = revision_;
  return pending_;
}

std::vector<AcceptedMeasurement> SessionStore::accepted(std::uint64_t* revision) const {
  std::shared_lock lock(mutex_);
  if (revision) *revision = revision_;
  return accepted_;
}

std::vector<MeasurementPair> SessionStore::measurements(std::uint64_t* revision) const {
  std::shared_lock lock(mutex_);
  if (revision) *revision = revision_;
  std::vector<MeasurementPair> out;
  out.reserve(accepted_.size());
  for (const auto& a : accepted_) out.push_back(a.pair);
  return out;
}

CalibrationReport SessionStore::report(std::uint64_t* revision) const {
  std::shared_lock lock(mutex_);
  if (revision) *revision = revision_;
  if (!report_) throw Error(ErrorCode::NoReport, "no calibration has been run");
  return *report_;
}

SeedResult SessionStore::seed(const PatchSelection& selection, std::optional<std::uint64_t> expected_revision) {
  std::unique_lock lock(mutex_);
  check_revision(expected_revision);
  if (!frame_) throw Error(ErrorCode::NoFrame, "dataset has no frames");
  if (!(selection.radius >= 0.0)) throw Error(ErrorCode::InvalidArgument, "radius must be non-negative");
  if (!frame_->image.in_bounds(selection.seed)) {
    throw Error(ErrorCode::OutOfBounds, "seed pixel outside the range image",
                fmt::format("ring {} column {}", selection.seed.ring, selection.seed.column));
  }

  const Patch patch = collect_patch(frame_->image, frame_->cloud, selection);
  SeedResult r;
  r.selection = selection;
  r.patch_size = patch.points.size();
  r.observation = ransac_plane(patch.points, ransac_);
  r.inlier_pixels.reserve(r.observation.inliers.size());
  for (std::size_t i : r.observation.inliers) r.inlier_pixels.push_back(patch.pixels[i]);
  pending_ = r;
  commit();
  return r;
}

std::uint64_t SessionStore::accept(std::optional<std::uint64_t> expected_revision) {
  std::unique_lock lock(mutex_);
  check_revision(expected_revision);
  if (!pending_) throw Error(ErrorCode::NoPending, "no pending LiDAR plane; seed a patch first");
  const CameraPlaneResult cam = camera_plane_locked();

  AcceptedMeasurement a;
  a.frame_id = frame_->id;
  a.selection = pending_->selection;
  a.corners_file = dataset_.frames[frame_->index].corners.generic_string();
  a.pair = MeasurementPair{Plane::from_canonical(pending_->observation.plane.normal(), pending_->observation.plane.dist()),
                           Plane::from_canonical(cam.observation.plane.normal(), cam.observation.plane.dist()),
                           fmt::format("{}#{}", frame_->id, next_pair_serial_)};
  ++next_pair_serial_;
  accepted_.push_back(std::move(a));
  advance();
  commit();
  return revision_;
}

std::uint64_t SessionStore::reject(std::optional<std::uint64_t> expected_revision) {
  std::unique_lock lock(mutex_);
  check_revision(expected_revision);
  if (!frame_) throw Error(ErrorCode::NoFrame, "dataset has no frames");
  advance();
  commit();
  return revision_;
}

std::uint64_t SessionStore::remove(std::size_t index, std::optional<std::uint64_t> expected_revision) {
  std::unique_lock lock(mutex_);
  check_revision(expected_revision);
  if (index >= accepted_.size()) {
    throw Error(ErrorCode::OutOfBounds, fmt::format("no accepted measurement at index {}", index),
                fmt::format("{} accepted", accepted_.size()));
  }
  accepted_.erase(accepted_.begin() + static_cast<std::ptrdiff_t>(index));
  commit();
  return revision_;
}

std::uint64_t SessionStore::goto_frame(std::size_t index, std::optional<std::uint64_t> expected_revision) {
  std::unique_lock lock(mutex_);
  check_revision(expected_revision);
  load_frame(index);
  pending_.reset();
  commit();
  return revision_;
}

CalibrationReport SessionStore::calibrate(std::optional<std::uint64_t> expected_revision) {
  std::unique_lock lock(mutex_);
  check_revision(expected_revision);
  std::vector<MeasurementPair> pairs;
  pairs.reserve(accepted_.size());
  for (const auto& a : accepted_) pairs.push_back(a.pair);
  report_ = planecal::calibrate(pairs, solver_);
  commit();
  return *report_;
}

void SessionStore::save(const fs::path& dir) const {
  std::shared_lock lock(mutex_);
  save_locked(dir);
}

void SessionStore::save_locked(const fs::path& dir) const {
  fs::create_directories(dir);
  std::vector<MeasurementPair> pairs;
  io::json provenance = io::json::array();
  for (const auto& a : accepted_) {
    pairs.push_back(a.pair);
    provenance.push_back({{"id", a.pair.id},
                          {"frame", a.frame_id},
                          {"selection", io::encode(a.selection)},
                          {"corners", a.corners_file}});
  }
  io::save_measurements(dir / "measurements.json", pairs);
  io::save_solver_config(dir / "solver.json", solver_);
  io::json body = {{"revision", revision_},
                   {"dataset", dataset_.root.generic_string()},
                   {"solver", io::encode(solver_)},
                   {"accepted", provenance}};
  if (report_) {
    body["report"] = io::encode(*report_);
    io::save_report(dir / "report.json", *report_);
  }
  io::save_document(dir / "session.json", kSessionFormat, body);
}

}  // namespace planecal
