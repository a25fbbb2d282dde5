#include "planecal/server.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <thread>

#include <fmt/format.h>

#include "httplib.h"

namespace planecal {

using io::json;

int http_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Conflict:
      return 409;
    case ErrorCode::NoFrame:
    case ErrorCode::NoReport:
      return 404;
    case ErrorCode::ParseError:
    case ErrorCode::SchemaMismatch:
    case ErrorCode::InvalidArgument:
    case ErrorCode::OutOfBounds:
    case ErrorCode::NoPending:
      return 400;
    case ErrorCode::EmptyPatch:
    case ErrorCode::InsufficientPoints:
    case ErrorCode::NoConsensus:
    case ErrorCode::DegenerateNormal:
    case ErrorCode::HomographyDegenerate:
    case ErrorCode::Divergence:
    case ErrorCode::NonConvergence:
    case ErrorCode::BehindCamera:
    case ErrorCode::InsufficientMeasurements:
    case ErrorCode::SingularSystem:
      return 422;
    default:
      return 500;
  }
}

namespace {

json pixel_json(PixelCoord px) { return json::array({px.ring, px.column}); }

json observation_json(const PlaneObservation& o) { return io::encode(o); }

json state_json(const SessionState& s) {
  return {{"revision", s.revision},     {"frame_index", s.frame_index}, {"frame_count", s.frame_count},
          {"frame_id", s.frame_id},     {"accepted", s.accepted},       {"has_pending", s.has_pending},
          {"has_report", s.has_report}};
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e, std::uint64_t revision) {
  json body = io::error_payload(e);
  body["revision"] = revision;
  if (const auto* singular = dynamic_cast<const SingularSystemError*>(&e)) {
    body["partial_report"] = io::encode(singular->partial_report());
  }
  send_json(res, body, http_status(e.code()));
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw Error(ErrorCode::SchemaMismatch, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, fmt::format("malformed request body: {}", e.what()),
                fmt::format("offset {}", e.byte));
  }
}

std::optional<std::uint64_t> revision_field(const json& body, bool required) {
  const auto it = body.find("revision");
  if (it == body.end()) {
    if (required) throw Error(ErrorCode::SchemaMismatch, "missing field 'revision'", "revision");
    return std::nullopt;
  }
  if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0)) {
    throw Error(ErrorCode::SchemaMismatch, "'revision' must be a non-negative integer", "revision");
  }
  return it->get<std::uint64_t>();
}

std::size_t index_field(const json& body) {
  const auto it = body.find("index");
  if (it == body.end()) throw Error(ErrorCode::SchemaMismatch, "missing field 'index'", "index");
  if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0)) {
    throw Error(ErrorCode::SchemaMismatch, "'index' must be a non-negative integer", "index");
  }
  return it->get<std::size_t>();
}

json frame_sidecar(const SessionFrame& f, const io::DatasetManifest& dataset) {
  double rmin = std::numeric_limits<double>::infinity();
  double rmax = -rmin;
  double imin = rmin;
  double imax = -rmin;
  for (int r = 0; r < f.image.rows(); ++r) {
    for (int c = 0; c < f.image.cols(); ++c) {
      const RangePixel& px = f.image.at({r, c});
      if (!px.point_index) continue;
      rmin = std::min(rmin, px.range);
      rmax = std::max(rmax, px.range);
      imin = std::min(imin, px.intensity);
      imax = std::max(imax, px.intensity);
    }
  }
  const bool any = f.image.populated() > 0;
  json j = {{"frame_index", f.index},
            {"frame_id", f.id},
            {"frame_count", dataset.frames.size()},
            {"rows", f.image.rows()},
            {"cols", f.image.cols()},
            {"populated", f.image.populated()},
            {"point_count", f.cloud.points.size()},
            {"min_range", any ? json(rmin) : json(nullptr)},
            {"max_range", any ? json(rmax) : json(nullptr)},
            {"min_intensity", any ? json(imin) : json(nullptr)},
            {"max_intensity", any ? json(imax) : json(nullptr)},
            {"raster",
             {{"path", "/api/frame/raster"},
              {"dtype", "float64"},
              {"byte_order", "little"},
              {"planes", json::array({"range", "intensity"})},
              {"layout", "row_major"},
              {"empty", "nan"}}}};
  const auto& hint = dataset.frames[f.index].seed_hint;
  j["seed_hint"] = hint ? io::encode(*hint) : json(nullptr);
  return j;
}

std::string frame_raster(const SessionFrame& f) {
  const auto n = static_cast<std::size_t>(f.image.rows()) * static_cast<std::size_t>(f.image.cols());
  std::vector<double> values(2 * n, std::numeric_limits<double>::quiet_NaN());
  for (int r = 0; r < f.image.rows(); ++r) {
    for (int c = 0; c < f.image.cols(); ++c) {
      const RangePixel& px = f.image.at({r, c});
      if (!px.point_index) continue;
      const auto k = static_cast<std::size_t>(r) * static_cast<std::size_t>(f.image.cols()) + static_cast<std::size_t>(c);
      values[k] = px.range;
      values[n + k] = px.intensity;
    }
  }
  std::string out(values.size() * sizeof(double), '\0');
  std::memcpy(out.data(), values.data(), out.size());
  return out;
}

}  // namespace

struct SessionServer::Impl {
  SessionStore& store;
  httplib::Server http;
  std::thread worker;

  explicit Impl(SessionStore& s) : store(s) { routes(); }

  template <typename F>
  auto guarded(F f) {
    return [this, f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_error(res, e, store.revision());
      } catch (const std::exception& e) {
        send_error(res, Error(ErrorCode::InvalidArgument, e.what()), store.revision());
      }
    };
  }

  void routes() {
    http.Get("/api/state", guarded([this](const httplib::Request&, httplib::Response& res) {
               send_json(res, state_json(store.state()));
             }));

    http.Get("/api/frame", guarded([this](const httplib::Request&, httplib::Response& res) {
               std::uint64_t rev = 0;
               const auto f = store.frame(&rev);
               json j = frame_sidecar(*f, store.dataset());
               j["revision"] = rev;
               send_json(res, j);
             }));

    http.Get("/api/frame/raster", guarded([this](const httplib::Request&, httplib::Response& res) {
               std::uint64_t rev = 0;
               const auto f = store.frame(&rev);
               res.set_header("X-Planecal-Revision", std::to_string(rev));
               res.set_header("X-Planecal-Rows", std::to_string(f->image.rows()));
               res.set_header("X-Planecal-Cols", std::to_string(f->image.cols()));
               res.set_header("X-Planecal-Frame", f->id);
               res.set_content(frame_raster(*f), "application/octet-stream");
             }));

    http.Post("/api/seed", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                const PatchSelection sel = io::decode_patch_selection(body, "");
                const SeedResult r = store.seed(sel, revision_field(body, false));
                json pixels = json::array();
                for (const auto& px : r.inlier_pixels) pixels.push_back(pixel_json(px));
                send_json(res, {{"revision", store.revision()},
                                {"selection", io::encode(r.selection)},
                                {"observation", observation_json(r.observation)},
                                {"patch_size", r.patch_size},
                                {"inlier_pixels", pixels}});
              }));

    http.Get("/api/camera_plane", guarded([this](const httplib::Request&, httplib::Response& res) {
               std::uint64_t rev = 0;
               const CameraPlaneResult r = store.camera_plane(&rev);
               const auto f = store.frame();
               json corners = json::array();
               for (const auto& c : f->corners.corners) corners.push_back(json::array({c.x(), c.y()}));
               send_json(res, {{"revision", rev},
                               {"frame_id", f->id},
                               {"observation", observation_json(r.observation)},
                               {"board_pose", io::encode(r.pose.pose)},
                               {"reprojection_rms", r.pose.reprojection_rms},
                               {"corners", corners}});
             }));

    http.Post("/api/accept", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                const std::uint64_t rev = store.accept(revision_field(body, true));
                json j = state_json(store.state());
                j["revision"] = rev;
                send_json(res, j);
              }));

    http.Post("/api/reject", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                const std::uint64_t rev = store.reject(revision_field(body, true));
                json j = state_json(store.state());
                j["revision"] = rev;
                send_json(res, j);
              }));

    http.Post("/api/remove", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                const std::uint64_t rev = store.remove(index_field(body), revision_field(body, true));
                json j = state_json(store.state());
                j["revision"] = rev;
                send_json(res, j);
              }));

    http.Post("/api/goto", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                const std::uint64_t rev = store.goto_frame(index_field(body), revision_field(body, true));
                json j = state_json(store.state());
                j["revision"] = rev;
                send_json(res, j);
              }));

    http.Post("/api/calibrate", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                const CalibrationReport r = store.calibrate(revision_field(body, false));
                send_json(res, {{"revision", store.revision()}, {"report", io::encode(r)}});
              }));

    http.Get("/api/report", guarded([this](const httplib::Request&, httplib::Response& res) {
               std::uint64_t rev = 0;
               const CalibrationReport r = store.report(&rev);
               send_json(res, {{"revision", rev}, {"report", io::encode(r)}});
             }));

    http.Get("/api/measurements", guarded([this](const httplib::Request&, httplib::Response& res) {
               std::uint64_t rev = 0;
               const auto accepted = store.accepted(&rev);
               json arr = json::array();
               for (const auto& a : accepted) {
                 json m = io::encode(a.pair);
                 m["frame_id"] = a.frame_id;
                 m["selection"] = io::encode(a.selection);
                 m["corners"] = a.corners_file;
                 arr.push_back(m);
               }
               send_json(res, {{"revision", rev}, {"measurements", arr}});
             }));

    http.set_error_handler([this](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      json body = {{"code", res.status == 404 ? "not_found" : "http_error"},
                   {"message", fmt::format("HTTP {}", res.status)},
                   {"details", ""},
                   {"revision", store.revision()}};
      res.set_content(body.dump(), "application/json");
    });
  }
};

SessionServer::SessionServer(SessionStore& store) : impl_(std::make_unique<Impl>(store)) {}

SessionServer::~SessionServer() { stop(); }

int SessionServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->http.bind_to_any_port(host) : (impl_->http.bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    throw Error(ErrorCode::IoError, fmt::format("cannot bind {}:{}", host, port));
  }
  return bound;
}

void SessionServer::serve() { impl_->http.listen_after_bind(); }

int SessionServer::start(const std::string& host, int port) {
  const int bound = bind(host, port);
  impl_->worker = std::thread([this] { serve(); });
  impl_->http.wait_until_ready();
  return bound;
}

void SessionServer::stop() {
  if (!impl_) return;
  impl_->http.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

}  // namespace planecal
