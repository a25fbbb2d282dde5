#include "doctest.h"

#include <fstream>
#include <limits>
#include <sstream>

#include "planecal/errors.hpp"
#include "planecal/io.hpp"
#include "roundtrip.hpp"
#include "support.hpp"

using namespace planecal;
using namespace planecal::test;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Error error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  FAIL("no error thrown");
  return Error(ErrorCode::InvalidArgument, "unreachable");
}

}  // namespace

TEST_CASE("three-point cloud round trip") {
  const fs::path dir = temp_dir("cloud3");
  PointCloud cloud;
  cloud.points.push_back({{0.1, 0.2, 0.3}, 0, 0.5});
  cloud.points.push_back({{-1.0000000000000002, 1e-300, 4.9406564584124654e-324}, 3, 0.0});
  cloud.points.push_back({{123456.789, -0.0, 2.0 / 3.0}, 7, 1.0});
  for (auto enc : {io::CloudEncoding::Text, io::CloudEncoding::Binary}) {
    const fs::path p = dir / (enc == io::CloudEncoding::Text ? "c.cloud" : "c.bin");
    io::save_cloud(p, cloud, std::nullopt, enc);
    const PointCloud back = io::load_cloud(p);
    CHECK(back.points.size() == 3);
    CHECK(same(back, cloud));
    CHECK_FALSE(back.ordered);
  }
  const std::string text = read_file(dir / "c.cloud");
  CHECK(text.rfind("planecal_cloud 1\n", 0) == 0);
  CHECK(text.find("fields x y z ring intensity") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cloud parse errors") {
  const fs::path dir = temp_dir("cloud_err");
  write_file(dir / "nan.cloud", "planecal_cloud 1\nfields x y z ring intensity\ndata\n1 2 3 0 0\n1 nan 3 0 0\n");
  const Error nan = error_of([&] { io::load_cloud(dir / "nan.cloud"); });
  CHECK(nan.code() == ErrorCode::ParseError);
  CHECK(std::string(nan.what()).find("record 1") != std::string::npos);
  CHECK(std::string(nan.what()).find(":5:") != std::string::npos);

  write_file(dir / "inf.cloud", "planecal_cloud 1\nfields x y z ring intensity\ndata\n1 2 inf 0 0\n");
  CHECK(error_of([&] { io::load_cloud(dir / "inf.cloud"); }).code() == ErrorCode::ParseError);

  write_file(dir / "short.cloud", "planecal_cloud 1\nfields x y z ring intensity\ndata\n1 2 3 0\n");
  CHECK(error_of([&] { io::load_cloud(dir / "short.cloud"); }).code() == ErrorCode::ParseError);

  write_file(dir / "ring.cloud", "planecal_cloud 1\nfields x y z ring intensity\ndata\n1 2 3 1.5 0\n");
  CHECK(error_of([&] { io::load_cloud(dir / "ring.cloud"); }).code() == ErrorCode::ParseError);

  write_file(dir / "empty.cloud", "");
  CHECK(error_of([&] { io::load_cloud(dir / "empty.cloud"); }).code() == ErrorCode::EmptyCloud);

  write_file(dir / "nodata.cloud", "planecal_cloud 1\nfields x y z ring intensity\ndata\n");
  CHECK(error_of([&] { io::load_cloud(dir / "nodata.cloud"); }).code() == ErrorCode::EmptyCloud);

  write_file(dir / "noring.cloud", "planecal_cloud 1\nfields x y z intensity\ndata\n1 2 3 0\n");
  CHECK(error_of([&] { io::load_cloud(dir / "noring.cloud"); }).code() == ErrorCode::MissingRing);

  write_file(dir / "header.cloud", "pcd 7\n");
  CHECK(error_of([&] { io::load_cloud(dir / "header.cloud"); }).code() == ErrorCode::ParseError);

  CHECK(error_of([&] { io::load_cloud(dir / "missing.cloud"); }).code() == ErrorCode::IoError);

  // truncated binary
  PointCloud one;
  one.points.push_back({{1, 2, 3}, 0, 0.0});
  io::save_cloud(dir / "t.bin", one, std::nullopt, io::CloudEncoding::Binary);
  std::string bytes = read_file(dir / "t.bin");
  bytes.resize(bytes.size() - 4);
  write_file(dir / "t.bin", bytes);
  CHECK(error_of([&] { io::load_cloud(dir / "t.bin"); }).code() == ErrorCode::ParseError);
  fs::remove_all(dir);
}

TEST_CASE("ordered clouds infer rings from the layout") {
  const fs::path dir = temp_dir("ordered");
  write_file(dir / "o.cloud",
             "planecal_cloud 1\nwidth 2\nn_rings 2\nfields x y z intensity\ndata\n1 0 0 0\n0 1 0 0\n-1 0 0 0\n0 -1 0 0\n");
  const PointCloud c = io::load_cloud(dir / "o.cloud");
  REQUIRE(c.points.size() == 4);
  CHECK(c.ordered);
  CHECK(c.points[0].ring == 0);
  CHECK(c.points[1].ring == 0);
  CHECK(c.points[2].ring == 1);
  CHECK(c.points[3].ring == 1);

  PointCloud unringed;
  for (int i = 0; i < 6; ++i) unringed.points.push_back({{1.0 * i, 0, 0}, std::nullopt, 0.0});
  const auto layout = LidarProjectionParams::equiangular(3, 2);
  for (auto enc : {io::CloudEncoding::Text, io::CloudEncoding::Binary}) {
    io::save_cloud(dir / "u", unringed, layout, enc);
    const PointCloud back = io::load_cloud(dir / "u");
    CHECK(back.ordered);
    for (int i = 0; i < 6; ++i) CHECK(back.points[static_cast<std::size_t>(i)].ring == i / 2);
  }
  fs::remove_all(dir);
}

TEST_CASE("corner files") {
  const fs::path dir = temp_dir("corners");
  CornerSet set;
  for (int i = 0; i < 48; ++i) set.corners.emplace_back(10.0 + i, 20.0 + 0.5 * i);
  io::save_corners(dir / "c.json", set);
  CHECK(same(io::load_corners(dir / "c.json"), set));

  io::json j = io::load_document(dir / "c.json", io::format::kCorners);
  j["corners"].erase(j["corners"].size() - 1);
  io::save_document(dir / "short.json", io::format::kCorners, j);
  const Error e = error_of([&] { io::load_corners(dir / "short.json"); });
  CHECK(e.code() == ErrorCode::SchemaMismatch);
  CHECK(std::string(e.what()).find("expected 48 corners") != std::string::npos);
  CHECK(std::string(e.what()).find("got 47") != std::string::npos);

  j = io::load_document(dir / "c.json", io::format::kCorners);
  j["corners"][3][1] = "left";
  io::save_document(dir / "bad.json", io::format::kCorners, j);
  const Error bad = error_of([&] { io::load_corners(dir / "bad.json"); });
  CHECK(bad.code() == ErrorCode::SchemaMismatch);
  CHECK(std::string(bad.what()).find("corners[3][1]") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("documents carry a format tag") {
  const fs::path dir = temp_dir("tags");
  io::save_solver_config(dir / "s.json", SolverConfig{});
  CHECK(error_of([&] { io::load_report(dir / "s.json"); }).code() == ErrorCode::SchemaMismatch);
  write_file(dir / "garbage.json", "{not json");
  CHECK(error_of([&] { io::load_solver_config(dir / "garbage.json"); }).code() == ErrorCode::ParseError);
  fs::remove_all(dir);
}

TEST_CASE("schema errors name the field path") {
  std::mt19937_64 rng(3);
  io::json j = io::encode(random_report(rng));
  j["extrinsic"]["rotation"][0][1] = "x";
  const Error e = error_of([&] { io::decode_report(j, "report"); });
  CHECK(e.code() == ErrorCode::SchemaMismatch);
  CHECK(std::string(e.what()).find("report.extrinsic.rotation[0][1]") != std::string::npos);

  io::json p = io::encode(Plane::canonicalize({0, 0, 1}, -2));
  p["dist"] = 2.0;
  CHECK(error_of([&] { io::decode_plane(p, "plane"); }).code() == ErrorCode::SchemaMismatch);

  io::json s = io::encode(SolverConfig{});
  s.erase("huber_delta");
  const Error missing = error_of([&] { io::decode_solver_config(s, "solver"); });
  CHECK(std::string(missing.what()).find("solver.huber_delta") != std::string::npos);
}

TEST_CASE("randomized lossless round trips") {
  std::mt19937_64 rng(71);
  const fs::path dir = temp_dir("roundtrip");
  for (int i = 0; i < 1000; ++i) {
    const Plane pl = random_wild_plane(rng);
    CHECK(same(io::decode_plane(through_text(io::encode(pl))), pl));
    const Isometry3 X = random_isometry(rng, 1e6);
    CHECK(same(io::decode_isometry(through_text(io::encode(X))), X));
    const MeasurementPair m = random_pair(rng);
    CHECK(same(io::decode_measurement(through_text(io::encode(m))), m));
    const SolverConfig c = random_solver_config(rng);
    CHECK(same(io::decode_solver_config(through_text(io::encode(c))), c));
    const CalibrationReport r = random_report(rng);
    CHECK(same(io::decode_report(through_text(io::encode(r))), r));
    const CornerSet cs = random_corners(rng);
    CHECK(same(io::decode_corners(through_text(io::encode(cs))), cs));
    const SweepTable t = random_sweep_table(rng);
    CHECK(same(io::decode_sweep_table(through_text(io::encode(t))), t));
  }
  // files, including the cloud encodings
  for (int i = 0; i < 50; ++i) {
    std::vector<MeasurementPair> ms;
    for (int k = 0; k < 5; ++k) ms.push_back(random_pair(rng));
    io::save_measurements(dir / "m.json", ms);
    const auto back = io::load_measurements(dir / "m.json");
    REQUIRE(back.size() == ms.size());
    for (std::size_t k = 0; k < ms.size(); ++k) CHECK(same(back[k], ms[k]));

    const CalibrationReport r = random_report(rng);
    io::save_report(dir / "r.json", r);
    CHECK(same(io::load_report(dir / "r.json"), r));

    const PointCloud cloud = random_cloud(rng, true, 64);
    io::save_cloud(dir / "c.cloud", cloud);
    CHECK(same(io::load_cloud(dir / "c.cloud"), cloud));
    io::save_cloud(dir / "c.bin", cloud, std::nullopt, io::CloudEncoding::Binary);
    CHECK(same(io::load_cloud(dir / "c.bin"), cloud));

    const SweepTable t = random_sweep_table(rng);
    io::save_sweep_table(dir / "t.json", t);
    CHECK(same(io::load_sweep_table(dir / "t.json"), t));
  }
  fs::remove_all(dir);
}

TEST_CASE("non-finite values survive as strings") {
  CalibrationReport r;
  r.chi2_trace = {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                  std::numeric_limits<double>::quiet_NaN()};
  const io::json j = io::encode(r);
  CHECK(j["chi2_trace"][0] == "inf");
  CHECK(j["chi2_trace"][1] == "-inf");
  CHECK(j["chi2_trace"][2] == "nan");
  CHECK(same(io::decode_report(through_text(j)), r));
}

TEST_CASE("report of the noiseless three-plane example matches the solver exactly") {
  std::mt19937_64 rng(72);
  const Isometry3 X = random_isometry(rng);
  const auto pairs = pairs_from_lidar_planes(X, visible_planes(rng, X, 3));
  const CalibrationReport r = calibrate(pairs);
  const fs::path dir = temp_dir("report3");
  io::save_report(dir / "report.json", r);
  const CalibrationReport back = io::load_report(dir / "report.json");
  CHECK(back.extrinsic.rotation == r.extrinsic.rotation);
  CHECK(back.extrinsic.translation == r.extrinsic.translation);
  CHECK(same(back, r));
  fs::remove_all(dir);
}

TEST_CASE("configs round trip") {
  const fs::path dir = temp_dir("configs");
  io::SweepSetup setup;
  setup.sweep.measurement_counts = {3, 7};
  setup.sweep.trials_per_count = 5;
  setup.sweep.noise_levels = {{0.0, 0.0, 0}, {0.01, 0.2, 4, CameraNoiseUnit::Normalized}};
  setup.sweep.seed = 1234567890123ULL;
  setup.rig.camera.distortion = {0.1, -0.01, 0.001, 0.002, 0.0};
  io::save_sweep_config(dir / "sweep.json", setup);
  const io::SweepSetup back = io::load_sweep_config(dir / "sweep.json");
  CHECK(back.sweep.measurement_counts == setup.sweep.measurement_counts);
  CHECK(back.sweep.trials_per_count == 5);
  CHECK(back.sweep.seed == setup.sweep.seed);
  REQUIRE(back.sweep.noise_levels.size() == 2);
  CHECK(back.sweep.noise_levels[1].camera_unit == CameraNoiseUnit::Normalized);
  CHECK(back.sweep.noise_levels[1].rng_seed == 4);
  CHECK(back.rig.camera.distortion == setup.rig.camera.distortion);
  CHECK(same(back.rig.ground_truth_extrinsic, setup.rig.ground_truth_extrinsic));

  io::SimulateConfig sim;
  sim.frames = 4;
  sim.seed = 99;
  sim.noise = {0.008, 0.007, 2};
  sim.cloud_encoding = io::CloudEncoding::Binary;
  io::save_simulate_config(dir / "sim.json", sim);
  const io::SimulateConfig sb = io::load_simulate_config(dir / "sim.json");
  CHECK(sb.frames == 4);
  CHECK(sb.seed == 99);
  CHECK(sb.noise.sigma_lidar == 0.008);
  CHECK(sb.cloud_encoding == io::CloudEncoding::Binary);

  io::SessionConfig sc;
  sc.solver.huber_delta = 0.02;
  sc.ransac.inlier_threshold = 0.05;
  sc.ransac.rng_seed = 17;
  io::save_session_config(dir / "session.json", sc);
  const io::SessionConfig scb = io::load_session_config(dir / "session.json");
  CHECK(scb.solver == sc.solver);
  CHECK(scb.ransac.inlier_threshold == 0.05);
  CHECK(scb.ransac.rng_seed == 17);
  fs::remove_all(dir);
}

TEST_CASE("simulated dataset manifests") {
  const fs::path dir = temp_dir("dataset");
  io::SimulateConfig cfg;
  cfg.frames = 3;
  cfg.seed = 5;
  const io::SimulatedDataset ds = io::simulate_dataset(cfg, dir);
  CHECK(ds.manifest.frames.size() == 3);
  CHECK(ds.ground_truth.board_poses.size() == 3);
  CHECK(fs::exists(dir / "dataset.json"));
  CHECK(fs::exists(dir / "ground_truth.json"));
  CHECK(fs::exists(dir / "session_config.json"));

  const io::DatasetManifest m = io::load_dataset(dir);
  REQUIRE(m.frames.size() == 3);
  CHECK(m.frames[0].seed_hint.has_value());
  CHECK(m.frame(m.frames[1].id).corners == m.frames[1].corners);
  CHECK(error_of([&] { (void)m.frame("nope"); }).code() == ErrorCode::NoFrame);
  const io::GroundTruth gt = io::load_ground_truth(dir / "ground_truth.json");
  CHECK(same(gt.extrinsic, cfg.rig.ground_truth_extrinsic));

  // same seed, same bytes
  const fs::path again = temp_dir("dataset_again");
  io::simulate_dataset(cfg, again);
  CHECK(read_file(dir / m.frames[2].cloud) == read_file(again / m.frames[2].cloud));
  CHECK(read_file(dir / "dataset.json") == read_file(again / "dataset.json"));
  fs::remove_all(again);

  // duplicate ids
  io::DatasetManifest dup = m;
  dup.frames.push_back(dup.frames[0]);
  io::save_dataset_manifest(dup);
  const Error e = error_of([&] { io::load_dataset(dir); });
  CHECK(e.code() == ErrorCode::SchemaMismatch);
  CHECK(std::string(e.what()).find("duplicate") != std::string::npos);

  // missing file
  io::DatasetManifest gone = m;
  gone.frames[1].cloud = "frames/absent.cloud";
  io::save_dataset_manifest(gone);
  CHECK(error_of([&] { io::load_dataset(dir / "dataset.json"); }).code() == ErrorCode::IoError);
  CHECK_NOTHROW(io::load_dataset(dir, false));
  fs::remove_all(dir);
}

TEST_CASE("error payloads and sweep text") {
  const io::json p = io::error_payload(Error(ErrorCode::InsufficientMeasurements, "need 3", "got 2"));
  CHECK(p["code"] == "insufficient_measurements");
  CHECK(p["message"] == "need 3");
  CHECK(p["details"] == "got 2");

  SweepTable t;
  SweepCell c;
  c.sigma_lidar = 0.008;
  c.sigma_camera = 0.007;
  c.measurements = 39;
  c.trials = 40;
  c.mean_translation = 0.002666;
  t.cells.push_back(c);
  const std::string text = io::format_sweep_table(t);
  CHECK(text.find("2.666") != std::string::npos);
  CHECK(text.find("39") != std::string::npos);
}
