#pragma once

// Command-line front end: decompose, recolor, filter, inspect, serve.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "chromalayer/image_io.hpp"
#include "chromalayer/layers.hpp"
#include "chromalayer/pipeline.hpp"
#include "chromalayer/service.hpp"

namespace chromalayer::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Raised for bad invocations; maps to exit status 2.
class UsageError : public Error {
public:
  using Error::Error;
};

struct RunConfig {
  std::string command;
  std::string input;
  std::string kind = "image";
  std::string output;
  std::string report;
  std::string layers;
  std::string palette;
  std::string constraints;
  std::string reconstruction;
  std::string boundaries;
  std::string kernel = "gaussian";
  std::string host = "127.0.0.1";
  long long num_layers = static_cast<long long>(kDefaultLayers);
  long long superpixels = 0;
  long long layer = 0;
  long long k_s = static_cast<long long>(kDefaultSuperpixelNeighbors);
  long long k_p = static_cast<long long>(kDefaultPixelNeighbors);
  std::uint64_t seed = 0;
  SolverParams solver;
  double tau = kDefaultAutoConstraintTau;
  bool no_auto_constraints = false;
  double sigma = 1.0;
  double length = 9.0;
  double angle = 0.0;
  int port = 8080;
};

namespace detail {

inline void require_file(const std::string& flag, const std::string& path) {
  if (!std::filesystem::exists(path)) throw UsageError(flag + ": no such file or directory: " + path);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

inline DecomposeOptions decompose_options(const RunConfig& c) {
  if (c.num_layers < 1) throw UsageError("num-layers must be ≥ 1");
  if (c.superpixels < 0) throw UsageError("--superpixels must be >= 0");
  if (c.k_s < 1) throw UsageError("--k-s must be >= 1");
  if (c.k_p < 1) throw UsageError("--k-p must be >= 1");
  DecomposeOptions o;
  o.num_layers = static_cast<std::size_t>(c.num_layers);
  o.superpixels = static_cast<std::size_t>(c.superpixels);
  o.seed = c.seed;
  o.k_s = static_cast<std::size_t>(c.k_s);
  o.k_p = static_cast<std::size_t>(c.k_p);
  o.solver = c.solver;
  o.tau = c.tau;
  o.auto_constraints = !c.no_auto_constraints;
  if (!c.palette.empty()) {
    require_file("--palette", c.palette);
    o.palette = parse_palette(c.palette);
    o.num_layers = o.palette->size();
  }
  if (!c.constraints.empty()) {
    require_file("--constraints", c.constraints);
    o.strokes = parse_strokes(c.constraints);
  }
  try {
    o.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  return o;
}

} // namespace detail

inline int run_decompose(const RunConfig& c, std::ostream& out) {
  detail::require_file("--input", c.input);
  const DecomposeOptions options = detail::decompose_options(c);
  const PixelVolume volume = load_volume(c.input, parse_volume_kind(c.kind));
  DecomposeResult result = decompose(volume, options);
  save_layers(result.layers, c.output);
  const std::string report = result.report().dump(2);
  if (c.report.empty()) {
    out << report << "\n";
  } else {
    detail::write_text(c.report, report + "\n");
  }
  if (!c.reconstruction.empty()) save_volume(compose(result.layers), c.reconstruction);
  if (!c.boundaries.empty()) {
    chromalayer::detail::write_file_bytes(c.boundaries, encode_png(render_boundaries(volume, result.segmentation, 0)));
  }
  return kExitOk;
}

inline int run_recolor(const RunConfig& c, std::ostream& out) {
  detail::require_file("--layers", c.layers);
  const LayerSet layers = load_layers(c.layers);
  Palette palette = layers.palette;
  if (!c.palette.empty()) {
    detail::require_file("--palette", c.palette);
    palette = parse_palette(c.palette, false);
  }
  if (palette.size() != layers.layer_count()) {
    throw UsageError("palette has " + std::to_string(palette.size()) + " colors but the layer file has " +
                     std::to_string(layers.layer_count()) + " layers");
  }
  const std::size_t fp = layers.width * layers.height;
  std::vector<float> data(fp * 3 * layers.frames);
  for (std::size_t t = 0; t < layers.frames; ++t) {
    const auto start = std::chrono::steady_clock::now();
    compose_frame(layers, palette, t, std::span<float>(data).subspan(t * fp * 3, fp * 3));
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    char line[64];
    std::snprintf(line, sizeof line, "frame %zu: %.3f ms\n", t, ms);
    out << line;
  }
  save_volume(PixelVolume(layers.width, layers.height, layers.frames, std::move(data)), c.output);
  return kExitOk;
}

inline int run_filter(const RunConfig& c, std::ostream& out) {
  detail::require_file("--layers", c.layers);
  const LayerSet layers = load_layers(c.layers);
  if (c.layer < 0 || static_cast<std::size_t>(c.layer) >= layers.layer_count()) {
    throw UsageError("--layer " + std::to_string(c.layer) + " out of range for " +
                     std::to_string(layers.layer_count()) + " layers");
  }
  FilterKernel kernel;
  if (c.kernel == "gaussian") {
    if (!(c.sigma > 0.0)) throw UsageError("--sigma must be > 0");
    kernel = GaussianKernel{c.sigma};
  } else if (c.kernel == "emboss") {
    kernel = EmbossKernel{};
  } else if (c.kernel == "motion-blur" || c.kernel == "motion") {
    if (!(c.length > 0.0)) throw UsageError("--length must be > 0");
    kernel = MotionBlurKernel{c.length, c.angle};
  } else {
    throw UsageError("--kernel must be gaussian, emboss or motion-blur");
  }
  const LayerSet filtered = filter_layer(layers, static_cast<std::size_t>(c.layer), kernel);
  save_layers(filtered, c.output);
  if (!c.reconstruction.empty()) save_volume(compose(filtered), c.reconstruction);
  out << "filtered layer " << c.layer << " with " << c.kernel << "\n";
  return kExitOk;
}

inline nlohmann::json inspect_json(const LayerSet& layers) {
  nlohmann::json planes = nlohmann::json::array();
  for (const auto& p : layers.planes) {
    double lo = 0.0, hi = 0.0, sum = 0.0;
    std::size_t negative = 0;
    if (!p.empty()) lo = hi = p[0];
    for (float v : p) {
      lo = std::min(lo, static_cast<double>(v));
      hi = std::max(hi, static_cast<double>(v));
      sum += v;
      if (v < 0.0f) ++negative;
    }
    planes.push_back({{"min", lo},
                      {"max", hi},
                      {"mean", p.empty() ? 0.0 : sum / static_cast<double>(p.size())},
                      {"negative", negative}});
  }
  return {{"width", layers.width},
          {"height", layers.height},
          {"frames", layers.frames},
          {"num_layers", layers.layer_count()},
          {"palette", palette_to_json(layers.palette)["colors"]},
          {"planes", planes}};
}

inline int run_inspect(const RunConfig& c, std::ostream& out) {
  detail::require_file("--layers", c.layers);
  out << inspect_json(load_layers(c.layers)).dump(2) << "\n";
  return kExitOk;
}

inline int run_serve(const RunConfig& c, std::ostream& out, std::ostream& err) {
  if (c.port < 0 || c.port > 65535) throw UsageError("--port must be in [0, 65535]");
  ServiceOptions so;
  so.defaults = detail::decompose_options(c);
  LayerService service(so);
  int port = c.port;
  if (port == 0) {
    port = service.bind_any(c.host);
    if (port < 0) {
      err << "error: --port: cannot bind any port on " << c.host << "\n";
      return kExitUsage;
    }
  } else if (!service.bind(c.host, port)) {
    err << "error: --port: port " << port << " is busy or unavailable\n";
    return kExitUsage;
  }
  out << "listening on http://" << c.host << ":" << port << "\n" << std::flush;
  service.serve();
  return kExitOk;
}

inline void add_decompose_flags(CLI::App& sub, RunConfig& c) {
  sub.add_option("--num-layers", c.num_layers, "Number of layers N (palette size)");
  sub.add_option("--superpixels", c.superpixels, "Superpixel count S (0: 2000 still, 4000 video)");
  sub.add_option("--seed", c.seed, "Random seed");
  sub.add_option("--palette", c.palette, "Palette JSON overriding extraction");
  sub.add_option("--constraints", c.constraints, "Constraint strokes JSON");
  sub.add_option("--lambda-m", c.solver.lambda_m, "Manifold consistency weight");
  sub.add_option("--lambda-r", c.solver.lambda_r, "Reconstruction weight");
  sub.add_option("--lambda-u", c.solver.lambda_u, "Unity weight");
  sub.add_option("--lambda-e", c.solver.lambda_e, "Explicit constraint weight");
  sub.add_option("--lambda-n", c.solver.lambda_n, "Negative suppression weight");
  sub.add_option("--suppression-iters", c.solver.suppression_iters, "Negative suppression iterations");
  sub.add_option("--tau", c.tau, "Automatic constraint distance threshold");
  sub.add_flag("--no-auto-constraints", c.no_auto_constraints, "Disable automatic constraints");
  sub.add_option("--k-s", c.k_s, "Superpixel neighbors for LLE");
  sub.add_option("--k-p", c.k_p, "Superpixel neighbors per pixel");
}

/// Runs the tool; returns the process exit status.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Decompose images and video into additive color layers"};
  app.require_subcommand(1);
  RunConfig c;

  auto* dec = app.add_subcommand("decompose", "Decompose an image, frame directory or PPM stream");
  dec->add_option("--input", c.input, "Input PNG, frame directory, or PPM stream")->required();
  dec->add_option("--kind", c.kind, "image | image-sequence | raw-video");
  dec->add_option("--out", c.output, "Output .lbld layer file")->required();
  dec->add_option("--report", c.report, "Write the JSON report here instead of stdout");
  dec->add_option("--reconstruction", c.reconstruction, "Write the composed reconstruction");
  dec->add_option("--boundaries", c.boundaries, "Write a superpixel boundary PNG of frame 0");
  add_decompose_flags(*dec, c);

  auto* rec = app.add_subcommand("recolor", "Compose layers with a palette");
  rec->add_option("--layers", c.layers, "Input .lbld file")->required();
  rec->add_option("--palette", c.palette, "Palette JSON (default: stored palette)");
  rec->add_option("--out", c.output, "Output PNG (or directory for video)")->required();

  auto* fil = app.add_subcommand("filter", "Filter one layer plane");
  fil->add_option("--layers", c.layers, "Input .lbld file")->required();
  fil->add_option("--layer", c.layer, "Layer index")->required();
  fil->add_option("--kernel", c.kernel, "gaussian | emboss | motion-blur");
  fil->add_option("--sigma", c.sigma, "Gaussian standard deviation in pixels");
  fil->add_option("--length", c.length, "Motion blur length in pixels");
  fil->add_option("--angle", c.angle, "Motion blur angle in degrees");
  fil->add_option("--out", c.output, "Output .lbld file")->required();
  fil->add_option("--reconstruction", c.reconstruction, "Write the composed result");

  auto* ins = app.add_subcommand("inspect", "Print layer file metadata");
  ins->add_option("--layers", c.layers, "Input .lbld file")->required();

  auto* srv = app.add_subcommand("serve", "Run the HTTP service");
  srv->add_option("--port", c.port, "TCP port (0 picks a free one)");
  srv->add_option("--host", c.host, "Bind address");
  add_decompose_flags(*srv, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (dec->parsed()) return run_decompose(c, out);
    if (rec->parsed()) return run_recolor(c, out);
    if (fil->parsed()) return run_filter(c, out);
    if (ins->parsed()) return run_inspect(c, out);
    if (srv->parsed()) return run_serve(c, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

} // namespace chromalayer::cli
