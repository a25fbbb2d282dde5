#include "planecal/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace planecal::io {

namespace fs = std::filesystem;

namespace {

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

std::string index_path(const std::string& path, std::size_t i) { return fmt::format("{}[{}]", path, i); }

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::SchemaMismatch, fmt::format("schema mismatch at '{}': {}", path.empty() ? "$" : path, what),
              path);
}

const json& field(const json& j, std::string_view key, const std::string& path) {
  if (!j.is_object()) schema_error(path, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) schema_error(join(path, key), "missing field");
  return *it;
}

// Non-finite values are stored as strings since JSON has no literal for them.
json encode_double(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

double as_double(const json& j, const std::string& path) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  schema_error(path, "expected a number");
}

double get_double(const json& j, std::string_view key, const std::string& path) {
  return as_double(field(j, key, path), join(path, key));
}

std::int64_t get_int(const json& j, std::string_view key, const std::string& path) {
  const json& v = field(j, key, path);
  if (!v.is_number_integer()) schema_error(join(path, key), "expected an integer");
  return v.get<std::int64_t>();
}

int get_int32(const json& j, std::string_view key, const std::string& path) {
  const std::int64_t v = get_int(j, key, path);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    schema_error(join(path, key), "integer out of range");
  }
  return static_cast<int>(v);
}

std::uint64_t get_u64(const json& j, std::string_view key, const std::string& path) {
  const json& v = field(j, key, path);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  schema_error(join(path, key), "expected an unsigned integer");
}

bool get_bool(const json& j, std::string_view key, const std::string& path) {
  const json& v = field(j, key, path);
  if (!v.is_boolean()) schema_error(join(path, key), "expected a boolean");
  return v.get<bool>();
}

std::string get_string(const json& j, std::string_view key, const std::string& path) {
  const json& v = field(j, key, path);
  if (!v.is_string()) schema_error(join(path, key), "expected a string");
  return v.get<std::string>();
}

const json& get_array(const json& j, std::string_view key, const std::string& path, std::size_t expected = 0) {
  const json& v = field(j, key, path);
  if (!v.is_array()) schema_error(join(path, key), "expected an array");
  if (expected != 0 && v.size() != expected) {
    schema_error(join(path, key), fmt::format("expected {} elements, got {}", expected, v.size()));
  }
  return v;
}

template <int N>
json encode_vec(const Eigen::Matrix<double, N, 1>& v) {
  json a = json::array();
  for (int i = 0; i < N; ++i) a.push_back(encode_double(v(i)));
  return a;
}

template <int N>
Eigen::Matrix<double, N, 1> get_vec(const json& j, std::string_view key, const std::string& path) {
  const json& a = get_array(j, key, path, N);
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v(i) = as_double(a[static_cast<std::size_t>(i)], index_path(join(path, key), i));
  return v;
}

PixelCoord decode_pixel(const json& j, const std::string& path) {
  return {get_int32(j, "ring", path), get_int32(j, "column", path)};
}

std::string_view unit_name(CameraNoiseUnit u) { return u == CameraNoiseUnit::Pixels ? "pixels" : "normalized"; }

std::string_view encoding_name(CloudEncoding e) { return e == CloudEncoding::Text ? "text" : "binary"; }

// ---- cloud -----------------------------------------------------------------

struct CloudHeader {
  std::optional<int> width;
  std::optional<int> n_rings;
  bool has_ring = false;
};

[[noreturn]] void parse_error(const fs::path& file, std::size_t line, const std::string& what) {
  throw Error(ErrorCode::ParseError, fmt::format("{}:{}: {}", file.string(), line, what),
              fmt::format("line {}", line));
}

int parse_header_int(const fs::path& file, std::size_t line, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size() || v <= 0) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    parse_error(file, line, fmt::format("invalid header value '{}'", value));
  }
}

void finish_cloud(PointCloud& cloud, const CloudHeader& h, const fs::path& file) {
  if (cloud.points.empty()) {
    throw Error(ErrorCode::EmptyCloud, fmt::format("{}: cloud has no points", file.string()));
  }
  cloud.ordered = h.width.has_value();
  if (h.has_ring) return;
  if (!h.width) {
    throw Error(ErrorCode::MissingRing,
                fmt::format("{}: records carry no ring ids and the layout is unordered", file.string()));
  }
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    cloud.points[i].ring = static_cast<int>(i / static_cast<std::size_t>(*h.width));
  }
}

PointCloud load_cloud_text(const fs::path& file, std::istream& in) {
  CloudHeader h;
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  bool have_version = false;
  bool have_fields = false;
  bool in_data = false;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    if (!in_data) {
      std::string key;
      ss >> key;
      if (!have_version) {
        std::string ver;
        ss >> ver;
        if (key + " " + ver != format::kCloudText) {
          parse_error(file, lineno, fmt::format("expected header '{}'", format::kCloudText));
        }
        have_version = true;
        continue;
      }
      if (key == "width" || key == "n_rings") {
        std::string value;
        ss >> value;
        (key == "width" ? h.width : h.n_rings) = parse_header_int(file, lineno, value);
        continue;
      }
      if (key == "fields") {
        std::vector<std::string> names;
        for (std::string f; ss >> f;) names.push_back(f);
        const std::vector<std::string> with_ring{"x", "y", "z", "ring", "intensity"};
        const std::vector<std::string> without_ring{"x", "y", "z", "intensity"};
        if (names == with_ring) {
          h.has_ring = true;
        } else if (names != without_ring) {
          parse_error(file, lineno, "fields must be 'x y z ring intensity' or 'x y z intensity'");
        }
        have_fields = true;
        continue;
      }
      if (key == "data") {
        if (!have_fields) parse_error(file, lineno, "'data' before 'fields'");
        in_data = true;
        continue;
      }
      parse_error(file, lineno, fmt::format("unknown header key '{}'", key));
    }

    const std::size_t record = cloud.points.size();
    std::vector<std::string> tokens;
    for (std::string t; ss >> t;) tokens.push_back(t);
    const std::size_t expected = h.has_ring ? 5 : 4;
    if (tokens.size() != expected) {
      parse_error(file, lineno, fmt::format("record {}: expected {} values, got {}", record, expected, tokens.size()));
    }
    auto number = [&](std::size_t k) {
      double v = 0.0;
      const std::string& t = tokens[k];
      const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      if (ec != std::errc() || end != t.data() + t.size()) {
        parse_error(file, lineno, fmt::format("record {}: malformed value '{}'", record, t));
      }
      if (!std::isfinite(v)) parse_error(file, lineno, fmt::format("record {}: non-finite value '{}'", record, tokens[k]));
      return v;
    };
    LidarPoint p;
    p.position = {number(0), number(1), number(2)};
    if (h.has_ring) {
      const double r = number(3);
      if (r != std::floor(r) || r < 0 || r > std::numeric_limits<int>::max()) {
        parse_error(file, lineno, fmt::format("record {}: ring must be a non-negative integer", record));
      }
      p.ring = static_cast<int>(r);
    }
    p.intensity = number(expected - 1);
    cloud.points.push_back(p);
  }
  if (!have_version) throw Error(ErrorCode::EmptyCloud, fmt::format("{}: file is empty", file.string()));
  if (!in_data) parse_error(file, lineno, "missing 'data' line");
  finish_cloud(cloud, h, file);
  return cloud;
}

// Binary: magic(8) flags(u32: bit0 ring, bit1 width, bit2 n_rings) width(i32) n_rings(i32)
// count(u64) then per record x y z (f64) [ring (i32)] intensity (f64), little-endian.
static_assert(std::endian::native == std::endian::little, "binary cloud I/O assumes a little-endian host");

template <typename T>
void write_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in, const fs::path& file, std::size_t record) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw Error(ErrorCode::ParseError, fmt::format("{}: truncated at record {}", file.string(), record),
                fmt::format("offset {}", static_cast<long long>(in.gcount())));
  }
  return v;
}

PointCloud load_cloud_binary(const fs::path& file, std::istream& in) {
  CloudHeader h;
  const auto flags = read_raw<std::uint32_t>(in, file, 0);
  const auto width = read_raw<std::int32_t>(in, file, 0);
  const auto n_rings = read_raw<std::int32_t>(in, file, 0);
  const auto count = read_raw<std::uint64_t>(in, file, 0);
  h.has_ring = flags & 1u;
  if (flags & 2u) h.width = width;
  if (flags & 4u) h.n_rings = n_rings;
  if ((h.width && *h.width <= 0) || (h.n_rings && *h.n_rings <= 0)) {
    throw Error(ErrorCode::ParseError, fmt::format("{}: invalid layout header", file.string()), "offset 8");
  }
  PointCloud cloud;
  const std::size_t record_size = 32 + (h.has_ring ? 4 : 0);
  for (std::uint64_t i = 0; i < count; ++i) {
    LidarPoint p;
    const auto offset = 28 + i * record_size;
    for (int k = 0; k < 3; ++k) p.position(k) = read_raw<double>(in, file, i);
    if (h.has_ring) {
      const auto r = read_raw<std::int32_t>(in, file, i);
      if (r < 0) {
        throw Error(ErrorCode::ParseError, fmt::format("{}: record {}: negative ring", file.string(), i),
                    fmt::format("offset {}", offset));
      }
      p.ring = r;
    }
    p.intensity = read_raw<double>(in, file, i);
    if (!p.position.allFinite() || !std::isfinite(p.intensity)) {
      throw Error(ErrorCode::ParseError, fmt::format("{}: record {}: non-finite value", file.string(), i),
                  fmt::format("offset {}", offset));
    }
    cloud.points.push_back(p);
  }
  finish_cloud(cloud, h, file);
  return cloud;
}

}  // namespace

// ---- encoders ----------------------------------------------------------------

json encode(const Plane& p) { return {{"normal", encode_vec<3>(p.normal())}, {"dist", encode_double(p.dist())}}; }

json encode(const Isometry3& X) {
  json R = json::array();
  for (int r = 0; r < 3; ++r) {
    json row = json::array();
    for (int c = 0; c < 3; ++c) row.push_back(encode_double(X.rotation(r, c)));
    R.push_back(row);
  }
  return {{"rotation", R}, {"translation", encode_vec<3>(X.translation)}};
}

json encode(const MeasurementPair& m) {
  return {{"id", m.id}, {"lidar_plane", encode(m.lidar_plane)}, {"camera_plane", encode(m.camera_plane)}};
}

json encode(const SolverConfig& c) {
  return {{"max_iterations", c.max_iterations},
          {"update_tolerance", encode_double(c.update_tolerance)},
          {"huber_delta", encode_double(c.huber_delta)},
          {"normal_weight", encode_double(c.normal_weight)},
          {"dist_weight", encode_double(c.dist_weight)},
          {"conditioning_threshold", encode_double(c.conditioning_threshold)}};
}

json encode(const CalibrationReport& r) {
  json per = json::array();
  for (const auto& m : r.per_measurement) {
    per.push_back({{"id", m.id}, {"residual_norm", encode_double(m.residual_norm)}, {"weight", encode_double(m.weight)}});
  }
  json trace = json::array();
  for (double c : r.chi2_trace) trace.push_back(encode_double(c));
  return {{"extrinsic", encode(r.extrinsic)},
          {"per_measurement", per},
          {"chi2_trace", trace},
          {"hessian_spectrum", encode_vec<6>(r.hessian_spectrum)},
          {"converged", r.converged},
          {"condition_warning", r.condition_warning},
          {"iterations", r.iterations}};
}

json encode(const CameraIntrinsics& c) {
  json dist = json::array();
  for (double k : c.distortion) dist.push_back(encode_double(k));
  return {{"fx", encode_double(c.fx)}, {"fy", encode_double(c.fy)},   {"cx", encode_double(c.cx)},
          {"cy", encode_double(c.cy)}, {"distortion", dist},          {"width", c.width},
          {"height", c.height}};
}

json encode(const LidarProjectionParams& p) {
  return {{"azimuth_resolution", encode_double(p.azimuth_resolution)},
          {"azimuth_offset", encode_double(p.azimuth_offset)},
          {"n_rings", p.n_rings},
          {"width", p.width}};
}

json encode(const BoardSpec& b) {
  return {{"rows", b.rows}, {"cols", b.cols}, {"square_size", encode_double(b.square_size)}};
}

json encode(const CornerSet& c) {
  json corners = json::array();
  for (const auto& p : c.corners) corners.push_back(encode_vec<2>(p));
  return {{"board", encode(c.board)}, {"corners", corners}};
}

json encode(const RansacConfig& c) {
  return {{"max_iterations", c.max_iterations},
          {"inlier_threshold", encode_double(c.inlier_threshold)},
          {"min_inlier_ratio", encode_double(c.min_inlier_ratio)},
          {"rng_seed", c.rng_seed}};
}

json encode(const PatchSelection& s) {
  return {{"ring", s.seed.ring}, {"column", s.seed.column}, {"radius", encode_double(s.radius)}};
}

json encode(const PlaneObservation& o) {
  return {{"plane", encode(o.plane)},
          {"inlier_count", o.inlier_count},
          {"rms_residual", encode_double(o.rms_residual)},
          {"source", o.source == PlaneSource::Lidar ? "lidar" : "camera"}};
}

json encode(const NoiseSpec& n) {
  return {{"sigma_lidar", encode_double(n.sigma_lidar)},
          {"sigma_camera", encode_double(n.sigma_camera)},
          {"rng_seed", n.rng_seed},
          {"camera_unit", unit_name(n.camera_unit)}};
}

json encode(const RigSpec& r) {
  return {{"ground_truth_extrinsic", encode(r.ground_truth_extrinsic)},
          {"lidar", encode(r.lidar)},
          {"lidar_elevation_min", encode_double(r.lidar_elevation_min)},
          {"lidar_elevation_max", encode_double(r.lidar_elevation_max)},
          {"camera", encode(r.camera)},
          {"board", encode(r.board)},
          {"placement",
           {{"range_min", encode_double(r.placement.range_min)},
            {"range_max", encode_double(r.placement.range_max)},
            {"max_angle", encode_double(r.placement.max_angle)},
            {"min_lidar_hits", r.placement.min_lidar_hits},
            {"max_resamples", r.placement.max_resamples}}}};
}

json encode(const SweepConfig& c) {
  json noise = json::array();
  for (const auto& n : c.noise_levels) noise.push_back(encode(n));
  return {{"measurement_counts", c.measurement_counts},
          {"trials_per_count", c.trials_per_count},
          {"noise_levels", noise},
          {"pool_size", c.pool_size},
          {"seed", c.seed},
          {"solver", encode(c.solver)},
          {"threads", c.threads}};
}

json encode(const SweepTable& t) {
  json cells = json::array();
  for (const auto& c : t.cells) {
    cells.push_back({{"sigma_lidar", encode_double(c.sigma_lidar)},
                     {"sigma_camera", encode_double(c.sigma_camera)},
                     {"measurements", c.measurements},
                     {"trials", c.trials},
                     {"failures", c.failures},
                     {"mean_translation", encode_double(c.mean_translation)},
                     {"stdev_translation", encode_double(c.stdev_translation)},
                     {"mean_rotation", encode_double(c.mean_rotation)},
                     {"stdev_rotation", encode_double(c.stdev_rotation)},
                     {"best_translation", encode_double(c.best_translation)},
                     {"best_translation_rotation", encode_double(c.best_translation_rotation)}});
  }
  return {{"cells", cells}};
}

json encode(const ExtrinsicError& e) {
  return {{"translation", encode_double(e.translation)}, {"rotation", encode_double(e.rotation)}};
}

// ---- decoders ----------------------------------------------------------------

Plane decode_plane(const json& j, const std::string& path) {
  const Eigen::Vector3d n = get_vec<3>(j, "normal", path);
  const double d = get_double(j, "dist", path);
  try {
    return Plane::from_canonical(n, d);
  } catch (const Error& e) {
    schema_error(path, e.what());
  }
}

Isometry3 decode_isometry(const json& j, const std::string& path) {
  const json& R = get_array(j, "rotation", path, 3);
  Isometry3 X;
  for (std::size_t r = 0; r < 3; ++r) {
    const std::string rp = index_path(join(path, "rotation"), r);
    if (!R[r].is_array() || R[r].size() != 3) schema_error(rp, "expected 3 elements");
    for (std::size_t c = 0; c < 3; ++c) {
      X.rotation(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = as_double(R[r][c], index_path(rp, c));
    }
  }
  X.translation = get_vec<3>(j, "translation", path);
  if (!X.is_valid(1e-9)) schema_error(join(path, "rotation"), "not a proper rotation matrix");
  return X;
}

MeasurementPair decode_measurement(const json& j, const std::string& path) {
  MeasurementPair m;
  m.id = get_string(j, "id", path);
  m.lidar_plane = decode_plane(field(j, "lidar_plane", path), join(path, "lidar_plane"));
  m.camera_plane = decode_plane(field(j, "camera_plane", path), join(path, "camera_plane"));
  return m;
}

SolverConfig decode_solver_config(const json& j, const std::string& path) {
  SolverConfig c;
  c.max_iterations = get_int32(j, "max_iterations", path);
  c.update_tolerance = get_double(j, "update_tolerance", path);
  c.huber_delta = get_double(j, "huber_delta", path);
  c.normal_weight = get_double(j, "normal_weight", path);
  c.dist_weight = get_double(j, "dist_weight", path);
  c.conditioning_threshold = get_double(j, "conditioning_threshold", path);
  try {
    c.validate();
  } catch (const Error& e) {
    schema_error(path, e.what());
  }
  return c;
}

CalibrationReport decode_report(const json& j, const std::string& path) {
  CalibrationReport r;
  r.extrinsic = decode_isometry(field(j, "extrinsic", path), join(path, "extrinsic"));
  const json& per = get_array(j, "per_measurement", path);
  for (std::size_t i = 0; i < per.size(); ++i) {
    const std::string p = index_path(join(path, "per_measurement"), i);
    r.per_measurement.push_back(
        {get_string(per[i], "id", p), get_double(per[i], "residual_norm", p), get_double(per[i], "weight", p)});
  }
  const json& trace = get_array(j, "chi2_trace", path);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    r.chi2_trace.push_back(as_double(trace[i], index_path(join(path, "chi2_trace"), i)));
  }
  r.hessian_spectrum = get_vec<6>(j, "hessian_spectrum", path);
  r.converged = get_bool(j, "converged", path);
  r.condition_warning = get_bool(j, "condition_warning", path);
  r.iterations = get_int32(j, "iterations", path);
  return r;
}

CameraIntrinsics decode_intrinsics(const json& j, const std::string& path) {
  CameraIntrinsics c;
  c.fx = get_double(j, "fx", path);
  c.fy = get_double(j, "fy", path);
  c.cx = get_double(j, "cx", path);
  c.cy = get_double(j, "cy", path);
  const json& dist = get_array(j, "distortion", path, 5);
  for (std::size_t k = 0; k < 5; ++k) c.distortion[k] = as_double(dist[k], index_path(join(path, "distortion"), k));
  c.width = get_int32(j, "width", path);
  c.height = get_int32(j, "height", path);
  try {
    c.validate();
  } catch (const Error& e) {
    schema_error(path, e.what());
  }
  return c;
}

LidarProjectionParams decode_lidar_params(const json& j, const std::string& path) {
  LidarProjectionParams p;
  p.azimuth_resolution = get_double(j, "azimuth_resolution", path);
  p.azimuth_offset = get_double(j, "azimuth_offset", path);
  p.n_rings = get_int32(j, "n_rings", path);
  p.width = get_int32(j, "width", path);
  try {
    p.validate();
  } catch (const Error& e) {
    schema_error(path, e.what());
  }
  return p;
}

BoardSpec decode_board(const json& j, const std::string& path) {
  BoardSpec b;
  b.rows = get_int32(j, "rows", path);
  b.cols = get_int32(j, "cols", path);
  b.square_size = get_double(j, "square_size", path);
  try {
    b.validate();
  } catch (const Error& e) {
    schema_error(path, e.what());
  }
  return b;
}

CornerSet decode_corners(const json& j, const std::string& path) {
  CornerSet c;
  c.board = decode_board(field(j, "board", path), join(path, "board"));
  const json& arr = get_array(j, "corners", path);
  if (arr.size() != c.board.corner_count()) {
    schema_error(join(path, "corners"), fmt::format("expected {} corners for a {}x{} board, got {}",
                                                    c.board.corner_count(), c.board.rows, c.board.cols, arr.size()));
  }
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string p = index_path(join(path, "corners"), i);
    if (!arr[i].is_array() || arr[i].size() != 2) schema_error(p, "expected 2 elements");
    c.corners.emplace_back(as_double(arr[i][0], index_path(p, 0)), as_double(arr[i][1], index_path(p, 1)));
  }
  return c;
}

RansacConfig decode_ransac_config(const json& j, const std::string& path) {
  RansacConfig c;
  c.max_iterations = get_int32(j, "max_iterations", path);
  c.inlier_threshold = get_double(j, "inlier_threshold", path);
  c.min_inlier_ratio = get_double(j, "min_inlier_ratio", path);
  c.rng_seed = get_u64(j, "rng_seed", path);
  try {
    c.validate();
  } catch (const Error& e) {
    schema_error(path, e.what());
  }
  return c;
}

PatchSelection decode_patch_selection(const json& j, const std::string& path) {
  PatchSelection s;
  s.seed = decode_pixel(j, path);
  s.radius = get_double(j, "radius", path);
  if (!(s.radius >= 0.0) || !std::isfinite(s.radius)) schema_error(join(path, "radius"), "must be finite and >= 0");
  return s;
}

NoiseSpec decode_noise(const json& j, const std::string& path) {
  NoiseSpec n;
  n.sigma_lidar = get_double(j, "sigma_lidar", path);
  n.sigma_camera = get_double(j, "sigma_camera", path);
  n.rng_seed = get_u64(j, "rng_seed", path);
  if (j.contains("camera_unit")) {
    const std::string u = get_string(j, "camera_unit", path);
    if (u == "pixels") {
      n.camera_unit = CameraNoiseUnit::Pixels;
    } else if (u == "normalized") {
      n.camera_unit = CameraNoiseUnit::Normalized;
    } else {
      schema_error(join(path, "camera_unit"), "expected 'pixels' or 'normalized'");
    }
  }
  try {
    n.validate();
  } catch (const Error& e) {
    schema_error(path, e.what());
  }
  return n;
}

RigSpec decode_rig(const json& j, const std::string& path) {
  RigSpec r = RigSpec::make_default();
  r.ground_truth_extrinsic =
      decode_isometry(field(j, "ground_truth_extrinsic", path), join(path, "ground_truth_extrinsic"));
  r.lidar = decode_lidar_params(field(j, "lidar", path), join(path, "lidar"));
  r.lidar_elevation_min = get_double(j, "lidar_elevation_min", path);
  r.lidar_elevation_max = get_double(j, "lidar_elevation_max", path);
  r.camera = decode_intrinsics(field(j, "camera", path), join(path, "camera"));
  r.board = decode_board(field(j, "board", path), join(path, "board"));
  const std::string pp = join(path, "placement");
  const json& pl = field(j, "placement", path);
  r.placement.range_min = get_double(pl, "range_min", pp);
  r.placement.range_max = get_double(pl, "range_max", pp);
  r.placement.max_angle = get_double(pl, "max_angle", pp);
  r.placement.min_lidar_hits = get_int32(pl, "min_lidar_hits", pp);
  r.placement.max_resamples = get_int32(pl, "max_resamples", pp);
  try {
    r.validate();
  } catch (const Error& e) {
    schema_error(path, e.what());
  }
  return r;
}

SweepConfig decode_sweep_config(const json& j, const std::string& path) {
  SweepConfig c;
  const json& counts = get_array(j, "measurement_counts", path);
  c.measurement_counts.clear();
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (!counts[i].is_number_integer()) schema_error(index_path(join(path, "measurement_counts"), i), "expected an integer");
    c.measurement_counts.push_back(counts[i].get<int>());
  }
  c.trials_per_count = get_int32(j, "trials_per_count", path);
  const json& noise = get_array(j, "noise_levels", path);
  c.noise_levels.clear();
  for (std::size_t i = 0; i < noise.size(); ++i) {
    c.noise_levels.push_back(decode_noise(noise[i], index_path(join(path, "noise_levels"), i)));
  }
  c.pool_size = get_int32(j, "pool_size", path);
  c.seed = get_u64(j, "seed", path);
  c.solver = decode_solver_config(field(j, "solver", path), join(path, "solver"));
  c.threads = get_int32(j, "threads", path);
  try {
    c.validate();
  } catch (const Error& e) {
    schema_error(path, e.what());
  }
  return c;
}

SweepTable decode_sweep_table(const json& j, const std::string& path) {
  SweepTable t;
  const json& cells = get_array(j, "cells", path);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string p = index_path(join(path, "cells"), i);
    const json& c = cells[i];
    SweepCell s;
    s.sigma_lidar = get_double(c, "sigma_lidar", p);
    s.sigma_camera = get_double(c, "sigma_camera", p);
    s.measurements = get_int32(c, "measurements", p);
    s.trials = get_int32(c, "trials", p);
    s.failures = get_int32(c, "failures", p);
    s.mean_translation = get_double(c, "mean_translation", p);
    s.stdev_translation = get_double(c, "stdev_translation", p);
    s.mean_rotation = get_double(c, "mean_rotation", p);
    s.stdev_rotation = get_double(c, "stdev_rotation", p);
    s.best_translation = get_double(c, "best_translation", p);
    s.best_translation_rotation = get_double(c, "best_translation_rotation", p);
    t.cells.push_back(s);
  }
  return t;
}

// ---- documents ----------------------------------------------------------------

json load_document(const fs::path& path, std::string_view format_tag) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot open '{}'", path.string()), path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, fmt::format("{}: {}", path.string(), e.what()),
                fmt::format("offset {}", e.byte));
  }
  const std::string tag = get_string(j, "format", "");
  if (tag != format_tag) {
    schema_error("format", fmt::format("expected '{}', got '{}'", format_tag, tag));
  }
  return j;
}

void save_document(const fs::path& path, std::string_view format_tag, json body) {
  body["format"] = std::string(format_tag);
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write '{}'", path.string()), path.string());
  out << body.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, fmt::format("write failed for '{}'", path.string()), path.string());
}

void save_cloud(const fs::path& path, const PointCloud& cloud, const std::optional<LidarProjectionParams>& layout,
                CloudEncoding encoding) {
  bool has_ring = !cloud.points.empty();
  for (const auto& p : cloud.points) has_ring = has_ring && p.ring.has_value();

  if (encoding == CloudEncoding::Binary) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write '{}'", path.string()), path.string());
    out.write(format::kCloudBinaryMagic.data(), static_cast<std::streamsize>(format::kCloudBinaryMagic.size()));
    const std::uint32_t flags = (has_ring ? 1u : 0u) | (layout ? 6u : 0u);
    write_raw<std::uint32_t>(out, flags);
    write_raw<std::int32_t>(out, layout ? layout->width : 0);
    write_raw<std::int32_t>(out, layout ? layout->n_rings : 0);
    write_raw<std::uint64_t>(out, cloud.points.size());
    for (const auto& p : cloud.points) {
      for (int k = 0; k < 3; ++k) write_raw<double>(out, p.position(k));
      if (has_ring) write_raw<std::int32_t>(out, *p.ring);
      write_raw<double>(out, p.intensity);
    }
    if (!out) throw Error(ErrorCode::IoError, fmt::format("write failed for '{}'", path.string()), path.string());
    return;
  }

  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write '{}'", path.string()), path.string());
  std::string buf;
  buf += fmt::format("{}\n", format::kCloudText);
  if (layout) buf += fmt::format("width {}\nn_rings {}\n", layout->width, layout->n_rings);
  buf += has_ring ? "fields x y z ring intensity\n" : "fields x y z intensity\n";
  buf += "data\n";
  for (const auto& p : cloud.points) {
    if (has_ring) {
      buf += fmt::format("{:.17g} {:.17g} {:.17g} {} {:.17g}\n", p.position.x(), p.position.y(), p.position.z(),
                         *p.ring, p.intensity);
    } else {
      buf += fmt::format("{:.17g} {:.17g} {:.17g} {:.17g}\n", p.position.x(), p.position.y(), p.position.z(),
                         p.intensity);
    }
  }
  out << buf;
  if (!out) throw Error(ErrorCode::IoError, fmt::format("write failed for '{}'", path.string()), path.string());
}

PointCloud load_cloud(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot open '{}'", path.string()), path.string());
  char magic[8] = {};
  in.read(magic, sizeof magic);
  if (in.gcount() == 0) throw Error(ErrorCode::EmptyCloud, fmt::format("{}: file is empty", path.string()));
  if (in.gcount() == 8 && std::string_view(magic, 8) == format::kCloudBinaryMagic) {
    return load_cloud_binary(path, in);
  }
  in.clear();
  in.seekg(0);
  return load_cloud_text(path, in);
}

CornerSet load_corners(const fs::path& path) { return decode_corners(load_document(path, format::kCorners)); }

void save_corners(const fs::path& path, const CornerSet& corners) {
  save_document(path, format::kCorners, encode(corners));
}

std::vector<MeasurementPair> load_measurements(const fs::path& path) {
  const json j = load_document(path, format::kMeasurements);
  const json& arr = get_array(j, "measurements", "");
  std::vector<MeasurementPair> out;
  for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(decode_measurement(arr[i], index_path("measurements", i)));
  return out;
}

void save_measurements(const fs::path& path, std::span<const MeasurementPair> measurements) {
  json arr = json::array();
  for (const auto& m : measurements) arr.push_back(encode(m));
  save_document(path, format::kMeasurements, {{"measurements", arr}});
}

SolverConfig load_solver_config(const fs::path& path) {
  return decode_solver_config(field(load_document(path, format::kSolverConfig), "solver", ""), "solver");
}

void save_solver_config(const fs::path& path, const SolverConfig& cfg) {
  save_document(path, format::kSolverConfig, {{"solver", encode(cfg)}});
}

CalibrationReport load_report(const fs::path& path) {
  return decode_report(field(load_document(path, format::kReport), "report", ""), "report");
}

void save_report(const fs::path& path, const CalibrationReport& report) {
  save_document(path, format::kReport, {{"report", encode(report)}});
}

SweepTable load_sweep_table(const fs::path& path) {
  return decode_sweep_table(field(load_document(path, format::kSweepTable), "table", ""), "table");
}

void save_sweep_table(const fs::path& path, const SweepTable& table) {
  save_document(path, format::kSweepTable, {{"table", encode(table)}, {"text", format_sweep_table(table)}});
}

SweepSetup load_sweep_config(const fs::path& path) {
  const json j = load_document(path, format::kSweepConfig);
  SweepSetup s;
  s.sweep = decode_sweep_config(field(j, "sweep", ""), "sweep");
  if (j.contains("rig")) s.rig = decode_rig(j["rig"], "rig");
  return s;
}

void save_sweep_config(const fs::path& path, const SweepSetup& setup) {
  save_document(path, format::kSweepConfig, {{"sweep", encode(setup.sweep)}, {"rig", encode(setup.rig)}});
}

SimulateConfig load_simulate_config(const fs::path& path) {
  const json j = load_document(path, format::kSimulateConfig);
  SimulateConfig c;
  if (j.contains("rig")) c.rig = decode_rig(j["rig"], "rig");
  c.noise = decode_noise(field(j, "noise", ""), "noise");
  c.frames = get_int32(j, "frames", "");
  if (c.frames < 1) schema_error("frames", "must be at least 1");
  c.seed = get_u64(j, "seed", "");
  if (j.contains("cloud_encoding")) {
    const std::string e = get_string(j, "cloud_encoding", "");
    if (e == "text") {
      c.cloud_encoding = CloudEncoding::Text;
    } else if (e == "binary") {
      c.cloud_encoding = CloudEncoding::Binary;
    } else {
      schema_error("cloud_encoding", "expected 'text' or 'binary'");
    }
  }
  return c;
}

void save_simulate_config(const fs::path& path, const SimulateConfig& cfg) {
  save_document(path, format::kSimulateConfig,
                {{"rig", encode(cfg.rig)},
                 {"noise", encode(cfg.noise)},
                 {"frames", cfg.frames},
                 {"seed", cfg.seed},
                 {"cloud_encoding", encoding_name(cfg.cloud_encoding)}});
}

const DatasetFrame& DatasetManifest::frame(std::string_view id) const {
  for (const auto& f : frames) {
    if (f.id == id) return f;
  }
  throw Error(ErrorCode::NoFrame, fmt::format("no frame with id '{}'", id), std::string(id));
}

DatasetManifest load_dataset(const fs::path& path, bool verify_files) {
  const fs::path manifest_path = fs::is_directory(path) ? path / kManifestName : path;
  const json j = load_document(manifest_path, format::kDataset);
  DatasetManifest m;
  m.root = manifest_path.parent_path();
  m.intrinsics = decode_intrinsics(field(j, "intrinsics", ""), "intrinsics");
  m.board = decode_board(field(j, "board", ""), "board");
  m.lidar = decode_lidar_params(field(j, "lidar", ""), "lidar");
  const json& frames = get_array(j, "frames", "");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string p = index_path("frames", i);
    DatasetFrame f;
    f.id = get_string(frames[i], "id", p);
    f.cloud = get_string(frames[i], "cloud", p);
    f.corners = get_string(frames[i], "corners", p);
    if (frames[i].contains("seed_hint")) {
      f.seed_hint = decode_patch_selection(frames[i]["seed_hint"], join(p, "seed_hint"));
    }
    if (!ids.insert(f.id).second) schema_error(join(p, "id"), fmt::format("duplicate frame id '{}'", f.id));
    m.frames.push_back(std::move(f));
  }
  if (verify_files) {
    for (const auto& f : m.frames) {
      for (const fs::path& rel : {f.cloud, f.corners}) {
        if (!fs::exists(m.resolve(rel))) {
          throw Error(ErrorCode::IoError, fmt::format("frame '{}' references missing file '{}'", f.id, rel.string()),
                      m.resolve(rel).string());
        }
      }
      (void)load_cloud(m.resolve(f.cloud));
      const CornerSet cs = load_corners(m.resolve(f.corners));
      if (cs.board.rows != m.board.rows || cs.board.cols != m.board.cols) {
        schema_error(f.corners.string() + ".board", "board does not match the manifest");
      }
    }
  }
  return m;
}

void save_dataset_manifest(const DatasetManifest& manifest) {
  json frames = json::array();
  for (const auto& f : manifest.frames) {
    json jf = {{"id", f.id}, {"cloud", f.cloud.generic_string()}, {"corners", f.corners.generic_string()}};
    if (f.seed_hint) jf["seed_hint"] = encode(*f.seed_hint);
    frames.push_back(jf);
  }
  save_document(manifest.root / kManifestName, format::kDataset,
                {{"intrinsics", encode(manifest.intrinsics)},
                 {"board", encode(manifest.board)},
                 {"lidar", encode(manifest.lidar)},
                 {"frames", frames}});
}

GroundTruth load_ground_truth(const fs::path& path) {
  const json j = load_document(path, format::kGroundTruth);
  GroundTruth gt;
  gt.extrinsic = decode_isometry(field(j, "extrinsic", ""), "extrinsic");
  const json& poses = get_array(j, "board_poses", "");
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const std::string p = index_path("board_poses", i);
    gt.board_poses.emplace_back(get_string(poses[i], "frame", p),
                                decode_isometry(field(poses[i], "pose", p), join(p, "pose")));
  }
  return gt;
}

void save_ground_truth(const fs::path& path, const GroundTruth& gt) {
  json poses = json::array();
  for (const auto& [id, pose] : gt.board_poses) poses.push_back({{"frame", id}, {"pose", encode(pose)}});
  save_document(path, format::kGroundTruth, {{"extrinsic", encode(gt.extrinsic)}, {"board_poses", poses}});
}

SessionConfig load_session_config(const fs::path& path) {
  const json j = load_document(path, kSessionConfigFormat);
  SessionConfig c;
  if (j.contains("solver")) c.solver = decode_solver_config(j["solver"], "solver");
  if (j.contains("ransac")) c.ransac = decode_ransac_config(j["ransac"], "ransac");
  return c;
}

void save_session_config(const fs::path& path, const SessionConfig& cfg) {
  save_document(path, kSessionConfigFormat, {{"solver", encode(cfg.solver)}, {"ransac", encode(cfg.ransac)}});
}

namespace {

constexpr int kSeedHintMaxRadius = 12;

// Board pixel farthest from any non-board pixel, with the largest radius whose
// disk stays on the board.
PatchSelection board_seed_hint(const RigSpec& rig, const Isometry3& pose) {
  const PointCloud hits = simulate_lidar(rig, pose, NoiseSpec{});
  const int rows = rig.lidar.n_rings;
  const int cols = rig.lidar.width;
  std::vector<char> board(static_cast<std::size_t>(rows) * cols, 0);
  std::vector<PixelCoord> pixels;
  for (const auto& p : hits.points) {
    const PixelCoord px{*p.ring, azimuth_column(rig.lidar, p.position)};
    board[static_cast<std::size_t>(px.ring) * cols + px.column] = 1;
    pixels.push_back(px);
  }
  auto on_board = [&](int r, int c) {
    if (r < 0 || r >= rows) return false;
    c = ((c % cols) + cols) % cols;
    return board[static_cast<std::size_t>(r) * cols + c] != 0;
  };
  PatchSelection best{pixels.front(), 0.0};
  double best_clearance = -1.0;
  for (const auto& px : pixels) {
    double clearance = kSeedHintMaxRadius + 1.0;
    for (int dr = -kSeedHintMaxRadius - 1; dr <= kSeedHintMaxRadius + 1; ++dr) {
      for (int dc = -kSeedHintMaxRadius - 1; dc <= kSeedHintMaxRadius + 1; ++dc) {
        const double dist = std::hypot(dr, dc);
        if (dist < clearance && !on_board(px.ring + dr, px.column + dc)) clearance = dist;
      }
    }
    if (clearance > best_clearance) {
      best_clearance = clearance;
      best.seed = px;
    }
  }
  // every pixel strictly closer than the clearance is a board hit
  best.radius = std::clamp(best_clearance - 1e-6, 1.0, static_cast<double>(kSeedHintMaxRadius));
  return best;
}

}  // namespace

SimulatedDataset simulate_dataset(const SimulateConfig& cfg, const fs::path& dir) {
  cfg.rig.validate();
  cfg.noise.validate();
  if (cfg.frames < 1) throw Error(ErrorCode::InvalidArgument, "frames must be at least 1");
  fs::create_directories(dir / "frames");

  SimulatedDataset out;
  out.manifest.root = dir;
  out.manifest.intrinsics = cfg.rig.camera;
  out.manifest.board = cfg.rig.board;
  out.manifest.lidar = cfg.rig.lidar;
  out.ground_truth.extrinsic = cfg.rig.ground_truth_extrinsic;

  std::mt19937_64 rng(derive_seed(cfg.seed, {0}));
  const std::string cloud_ext = cfg.cloud_encoding == CloudEncoding::Text ? "cloud" : "bin";
  for (int k = 0; k < cfg.frames; ++k) {
    const Isometry3 pose = sample_board_pose(rng, cfg.rig);
    const auto index = static_cast<std::uint64_t>(k);
    NoiseSpec lidar_noise = cfg.noise;
    lidar_noise.rng_seed = derive_seed(cfg.seed, {1, index, cfg.noise.rng_seed});
    NoiseSpec camera_noise = cfg.noise;
    camera_noise.rng_seed = derive_seed(cfg.seed, {2, index, cfg.noise.rng_seed});

    DatasetFrame f;
    f.id = fmt::format("frame-{:03}", k);
    f.cloud = fs::path("frames") / (f.id + "." + cloud_ext);
    f.corners = fs::path("frames") / (f.id + ".corners.json");
    f.seed_hint = board_seed_hint(cfg.rig, pose);
    save_cloud(dir / f.cloud, simulate_scan(cfg.rig, pose, lidar_noise), std::nullopt, cfg.cloud_encoding);
    save_corners(dir / f.corners, simulate_camera(cfg.rig, pose, camera_noise));
    out.ground_truth.board_poses.emplace_back(f.id, pose);
    out.manifest.frames.push_back(std::move(f));
  }
  save_dataset_manifest(out.manifest);
  save_ground_truth(dir / "ground_truth.json", out.ground_truth);
  save_session_config(dir / "session_config.json",
                      {SolverConfig{}, pool_ransac_config(cfg.noise, derive_seed(cfg.seed, {3}))});
  return out;
}

json error_payload(const Error& e) {
  return {{"code", std::string(to_string(e.code()))}, {"message", e.what()}, {"details", e.details()}};
}

std::string format_sweep_table(const SweepTable& table) {
  std::string out;
  double sl = std::numeric_limits<double>::quiet_NaN();
  double sc = sl;
  for (const auto& c : table.cells) {
    if (c.sigma_lidar != sl || c.sigma_camera != sc) {
      sl = c.sigma_lidar;
      sc = c.sigma_camera;
      out += fmt::format("sigma_lidar={:g} sigma_camera={:g}\n", sl, sc);
      out += fmt::format("{:>5} {:>12} {:>12} {:>12} {:>12} {:>8}\n", "w_s", "e_t mean mm", "e_t std mm",
                         "e_r mean", "e_r std", "failed");
    }
    out += fmt::format("{:>5} {:>12.4f} {:>12.4f} {:>12.5f} {:>12.5f} {:>8}\n", c.measurements,
                       c.mean_translation * 1e3, c.stdev_translation * 1e3, c.mean_rotation * 1e2,
                       c.stdev_rotation * 1e2, c.failures);
  }
  out += "e_r in 1e-2 rad\n";
  return out;
}

}  // namespace planecal::io
