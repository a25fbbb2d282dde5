#include "cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "CLI11.hpp"

#include "planecal/io.hpp"
#include "planecal/server.hpp"
#include "planecal/session.hpp"

namespace planecal::cli {

namespace fs = std::filesystem;
using io::json;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

// Accepts either a solver config or a session config.
io::SessionConfig load_any_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'", path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  const std::string tag = j.is_object() && j.contains("format") && j["format"].is_string() ? j["format"].get<std::string>() : "";
  if (tag == io::format::kSolverConfig) return {io::load_solver_config(path), RansacConfig{}};
  return io::load_session_config(path);
}

io::SessionConfig dataset_config(const std::optional<fs::path>& config, const fs::path& dataset_root) {
  if (config) return load_any_config(*config);
  const fs::path fallback = dataset_root / "session_config.json";
  if (fs::exists(fallback)) return io::load_session_config(fallback);
  return {};
}

fs::path dataset_root(const fs::path& p) { return fs::is_directory(p) ? p : p.parent_path(); }

json isometry_summary(const Isometry3& X) { return io::encode(X); }

struct Options {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> output;
  std::optional<fs::path> measurements;
  std::optional<fs::path> dataset;
  std::optional<fs::path> report;
  std::optional<fs::path> ground_truth;
  std::optional<std::string> frame;
  std::optional<int> ring;
  std::optional<int> column;
  std::optional<double> radius;
  std::optional<int> frames;
  std::optional<double> sigma_lidar;
  std::optional<double> sigma_camera;
  std::optional<int> trials;
  std::optional<int> threads;
  std::optional<std::string> cloud_encoding;
  std::uint16_t port = 8765;
  std::string host = "127.0.0.1";
};

int cmd_simulate(const Options& o, std::ostream& out) {
  io::SimulateConfig cfg = o.config ? io::load_simulate_config(*o.config) : io::SimulateConfig{};
  if (o.seed) cfg.seed = *o.seed;
  if (o.frames) cfg.frames = *o.frames;
  if (o.sigma_lidar) cfg.noise.sigma_lidar = *o.sigma_lidar;
  if (o.sigma_camera) cfg.noise.sigma_camera = *o.sigma_camera;
  if (o.cloud_encoding) cfg.cloud_encoding = *o.cloud_encoding == "binary" ? io::CloudEncoding::Binary : io::CloudEncoding::Text;
  const io::SimulatedDataset ds = io::simulate_dataset(cfg, *o.output);
  out << json{{"dataset", (*o.output / io::kManifestName).generic_string()},
              {"frames", ds.manifest.frames.size()},
              {"ground_truth", isometry_summary(ds.ground_truth.extrinsic)}}
             .dump(2)
      << '\n';
  return kExitOk;
}

int cmd_sweep(const Options& o, std::ostream& out) {
  io::SweepSetup setup = o.config ? io::load_sweep_config(*o.config) : io::SweepSetup{};
  if (o.seed) setup.sweep.seed = *o.seed;
  if (o.trials) setup.sweep.trials_per_count = *o.trials;
  if (o.threads) setup.sweep.threads = *o.threads;
  const SweepTable table = run_sweep(setup.sweep, setup.rig);
  if (o.output) io::save_sweep_table(*o.output, table);
  out << io::format_sweep_table(table);
  return kExitOk;
}

int cmd_extract(const Options& o, std::ostream& out) {
  const io::DatasetManifest ds = io::load_dataset(*o.dataset);
  const io::SessionConfig cfg = dataset_config(o.config, ds.root);
  SessionStore store(ds, cfg.solver, cfg.ransac);

  std::vector<std::size_t> frames;
  if (o.frame) {
    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
      if (ds.frames[i].id == *o.frame) frames.push_back(i);
    }
    if (frames.empty()) throw Error(ErrorCode::NoFrame, "no frame with id '" + *o.frame + "'", *o.frame);
  } else {
    for (std::size_t i = 0; i < ds.frames.size(); ++i) frames.push_back(i);
  }

  for (std::size_t i : frames) {
    store.goto_frame(i, std::nullopt);
    PatchSelection sel;
    if (o.ring && o.column) {
      sel.seed = {*o.ring, *o.column};
    } else if (ds.frames[i].seed_hint) {
      sel = *ds.frames[i].seed_hint;
    } else {
      throw Error(ErrorCode::InvalidArgument, "frame '" + ds.frames[i].id + "' has no seed hint; pass --ring and --column",
                  ds.frames[i].id);
    }
    if (o.radius) sel.radius = *o.radius;
    store.seed(sel);
    store.accept(std::nullopt);
  }

  const auto pairs = store.measurements();
  if (o.output) {
    io::save_measurements(*o.output, pairs);
  }
  json arr = json::array();
  for (const auto& p : pairs) arr.push_back(io::encode(p));
  out << json{{"measurements", arr}}.dump(2) << '\n';
  return kExitOk;
}

int cmd_calibrate(const Options& o, std::ostream& out) {
  const auto pairs = io::load_measurements(*o.measurements);
  const SolverConfig solver = o.config ? load_any_config(*o.config).solver : SolverConfig{};
  const CalibrationReport report = calibrate(pairs, solver);
  if (o.output) io::save_report(*o.output, report);
  out << json{{"extrinsic", io::encode(report.extrinsic)},
              {"converged", report.converged},
              {"condition_warning", report.condition_warning},
              {"iterations", report.iterations},
              {"measurements", pairs.size()}}
             .dump(2)
      << '\n';
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  const CalibrationReport report = io::load_report(*o.report);
  fs::path gt_path;
  if (o.ground_truth) {
    gt_path = *o.ground_truth;
  } else if (o.dataset) {
    gt_path = dataset_root(*o.dataset) / "ground_truth.json";
  } else {
    throw Error(ErrorCode::InvalidArgument, "evaluate needs --ground-truth or --dataset");
  }
  const io::GroundTruth gt = io::load_ground_truth(gt_path);
  const ExtrinsicError e = evaluate_error(report.extrinsic, gt.extrinsic);
  const json result = {{"translation_error_m", e.translation}, {"rotation_error_rad", e.rotation}};
  if (o.output) io::save_document(*o.output, "planecal.evaluation/1", result);
  out << result.dump(2) << '\n';
  return kExitOk;
}

int cmd_serve(const Options& o, std::ostream& out) {
  const io::DatasetManifest ds = io::load_dataset(*o.dataset);
  const io::SessionConfig cfg = dataset_config(o.config, ds.root);
  SessionStore store(ds, cfg.solver, cfg.ransac, o.output);
  SessionServer server(store);
  const int port = server.bind(o.host, o.port);
  out << json{{"listening", "http://" + o.host + ":" + std::to_string(port)}, {"port", port}}.dump() << std::endl;

  g_interrupted = false;
  auto prev_int = std::signal(SIGINT, on_signal);
  auto prev_term = std::signal(SIGTERM, on_signal);
  std::jthread watcher([&server](std::stop_token st) {
    while (!st.stop_requested() && !g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
  });
  server.serve();
  watcher.request_stop();
  watcher.join();
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"planecal: LiDAR-camera extrinsic calibration from planar targets", "planecal"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* c) { c->add_option("--config", o.config, "Configuration file"); };
  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Master seed (overrides the config)"); };

  auto* simulate = app.add_subcommand("simulate", "Write a synthetic dataset with ground truth");
  add_config(simulate);
  add_seed(simulate);
  simulate->add_option("--output", o.output, "Dataset directory")->required();
  simulate->add_option("--frames", o.frames, "Number of board placements")->check(CLI::PositiveNumber);
  simulate->add_option("--sigma-lidar", o.sigma_lidar, "LiDAR range noise (m)")->check(CLI::NonNegativeNumber);
  simulate->add_option("--sigma-camera", o.sigma_camera, "Corner noise")->check(CLI::NonNegativeNumber);
  simulate->add_option("--cloud-encoding", o.cloud_encoding, "text or binary")->check(CLI::IsMember({"text", "binary"}));

  auto* sweep = app.add_subcommand("sweep", "Run the noise / measurement-count sweep");
  add_config(sweep);
  add_seed(sweep);
  sweep->add_option("--output", o.output, "Sweep table file");
  sweep->add_option("--trials", o.trials, "Trials per cell")->check(CLI::PositiveNumber);
  sweep->add_option("--threads", o.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

  auto* extract = app.add_subcommand("extract", "Fit LiDAR and camera planes for dataset frames");
  add_config(extract);
  extract->add_option("--dataset", o.dataset, "Dataset directory or manifest")->required();
  extract->add_option("--output", o.output, "Measurement list file");
  extract->add_option("--frame", o.frame, "Frame id (default: every frame, using its seed hint)");
  auto* ring = extract->add_option("--ring", o.ring, "Seed ring");
  auto* column = extract->add_option("--column", o.column, "Seed column");
  ring->needs(column);
  column->needs(ring);
  extract->add_option("--radius", o.radius, "Patch radius in pixels")->check(CLI::NonNegativeNumber);

  auto* cal = app.add_subcommand("calibrate", "Estimate the extrinsic from a measurement list");
  add_config(cal);
  cal->add_option("--measurements", o.measurements, "Measurement list file")->required();
  cal->add_option("--output", o.output, "Report file");

  auto* evaluate = app.add_subcommand("evaluate", "Compare a report with ground truth");
  evaluate->add_option("--report", o.report, "Report file")->required();
  evaluate->add_option("--dataset", o.dataset, "Dataset holding ground_truth.json");
  evaluate->add_option("--ground-truth", o.ground_truth, "Ground truth file");
  evaluate->add_option("--output", o.output, "Evaluation file");

  auto* serve = app.add_subcommand("serve", "Serve the interactive session API");
  add_config(serve);
  serve->add_option("--dataset", o.dataset, "Dataset directory or manifest")->required();
  serve->add_option("--port", o.port, "TCP port (0 picks a free one)");
  serve->add_option("--host", o.host, "Bind address");
  serve->add_option("--output", o.output, "Directory the session is saved to after every change");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << json{{"code", "usage_error"}, {"message", e.what()}, {"details", ""}}.dump() << '\n';
    return kExitUsage;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(o, out);
    if (sweep->parsed()) return cmd_sweep(o, out);
    if (extract->parsed()) return cmd_extract(o, out);
    if (cal->parsed()) return cmd_calibrate(o, out);
    if (evaluate->parsed()) return cmd_evaluate(o, out);
    if (serve->parsed()) return cmd_serve(o, out);
  } catch (const SingularSystemError& e) {
    json payload = io::error_payload(e);
    payload["partial_report"] = io::encode(e.partial_report());
    err << payload.dump() << '\n';
    return kExitDataError;
  } catch (const Error& e) {
    err << io::error_payload(e).dump() << '\n';
    return kExitDataError;
  } catch (const std::exception& e) {
    err << json{{"code", "io_error"}, {"message", e.what()}, {"details", ""}}.dump() << '\n';
    return kExitDataError;
  }
  return kExitUsage;
}

}  // namespace planecal::cli
