#pragma once

#include <memory>
#include <string>

#include "planecal/session.hpp"

namespace planecal {

/// HTTP status used for an error code in API responses.
int http_status(ErrorCode code) noexcept;

/// Local HTTP/JSON service over one SessionStore.
///
///   GET  /api/state          revision and counts
///   GET  /api/frame          range image metadata (sidecar)
///   GET  /api/frame/raster   float64 little-endian, range plane then intensity plane, NaN = empty
///   POST /api/seed           {ring, column, radius[, revision]}
///   GET  /api/camera_plane
///   POST /api/accept         {revision}
///   POST /api/reject         {revision}
///   POST /api/remove         {revision, index}
///   POST /api/goto           {revision, index}
///   POST /api/calibrate      {[revision]}
///   GET  /api/report
///   GET  /api/measurements
///
/// Every response carries "revision"; errors are {code, message, details}.
class SessionServer {
 public:
  explicit SessionServer(SessionStore& store);
  ~SessionServer();
  SessionServer(const SessionServer&) = delete;
  SessionServer& operator=(const SessionServer&) = delete;

  /// Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); requires bind().
  void serve();
  /// bind() then serve() on a background thread.
  int start(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace planecal
