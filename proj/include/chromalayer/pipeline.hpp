#pragma once

// End-to-end decomposition: palette -> superpixels -> manifold -> solve ->
// per-pixel projection, with per-stage timing.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chromalayer/error.hpp"
#include "chromalayer/layers.hpp"
#include "chromalayer/manifold.hpp"
#include "chromalayer/palette.hpp"
#include "chromalayer/pixel_volume.hpp"
#include "chromalayer/solver.hpp"
#include "chromalayer/superpixel.hpp"

namespace chromalayer {

inline constexpr std::size_t kDefaultLayers = 5;
inline constexpr std::size_t kDefaultStillSuperpixels = 2000;
inline constexpr std::size_t kDefaultVideoSuperpixels = 4000;

struct DecomposeOptions {
  std::size_t num_layers = kDefaultLayers;
  std::size_t superpixels = 0; // 0 picks the still/video default
  std::uint64_t seed = 0;
  std::size_t k_s = kDefaultSuperpixelNeighbors;
  std::size_t k_p = kDefaultPixelNeighbors;
  SolverParams solver;
  double tau = kDefaultAutoConstraintTau;
  bool auto_constraints = true;
  std::optional<Palette> palette;
  std::vector<Stroke> strokes;
  PaletteOptions palette_options;

  void validate() const {
    if (num_layers < 1) throw InvalidArgument("num-layers must be ≥ 1");
    if (k_s < 1) throw InvalidArgument("k-s must be >= 1");
    if (k_p < 1) throw InvalidArgument("k-p must be >= 1");
    if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");
    solver.validate();
    if (palette) validate_palette(*palette);
  }
};

/// Error raised inside a pipeline stage, tagged with the stage name.
class StageError : public Error {
public:
  StageError(std::string stage, const std::string& what) : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

private:
  std::string stage_;
};

struct StageTiming {
  std::string stage;
  double milliseconds = 0.0;
};

struct DecomposeResult {
  LayerSet layers;
  Segmentation segmentation;
  SolveResult solve;
  double rmse = 0.0;
  std::size_t superpixels = 0;
  std::uint64_t seed = 0;
  std::vector<StageTiming> timings;
  double total_ms = 0.0;
  std::vector<std::string> warnings;

  nlohmann::json report() const {
    nlohmann::json stages = nlohmann::json::object();
    for (const auto& t : timings) stages[t.stage] = t.milliseconds;
    nlohmann::json neg = nlohmann::json::array();
    nlohmann::json strong = nlohmann::json::array();
    nlohmann::json cg = nlohmann::json::array();
    for (const auto& it : solve.iterations) {
      neg.push_back(it.negative_fraction);
      strong.push_back(it.strongly_negative);
      cg.push_back({{"iterations", it.cg.iterations}, {"relative_residual", it.cg.relative_residual},
                    {"converged", it.cg.converged}});
    }
    return {{"stage_ms", stages},
            {"total_ms", total_ms},
            {"rmse", rmse},
            {"negative_fraction", neg},
            {"below_minus_0_05", strong},
            {"cg", cg},
            {"converged", solve.converged},
            {"S", superpixels},
            {"N", layers.layer_count()},
            {"seed", seed},
            {"width", layers.width},
            {"height", layers.height},
            {"frames", layers.frames},
            {"palette", palette_to_json(layers.palette)["colors"]},
            {"warnings", warnings}};
  }
};

namespace detail {

class StageClock {
public:
  explicit StageClock(std::vector<StageTiming>& sink) : sink_(sink) {}

  template <typename Fn>
  auto run(const std::string& stage, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    auto record = [&] {
      const auto end = std::chrono::steady_clock::now();
      sink_.push_back({stage, std::chrono::duration<double, std::milli>(end - start).count()});
    };
    try {
      if constexpr (std::is_void_v<decltype(fn())>) {
        fn();
        record();
      } else {
        auto out = fn();
        record();
        return out;
      }
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage, e.what());
    }
  }

private:
  std::vector<StageTiming>& sink_;
};

inline Palette to_float_precision(const Palette& p) {
  Palette out;
  out.colors.reserve(p.colors.size());
  for (const Rgb& c : p.colors) {
    out.colors.push_back({static_cast<float>(c[0]), static_cast<float>(c[1]), static_cast<float>(c[2])});
  }
  return out;
}

} // namespace detail

/// Runs the whole decomposition on `volume`.
inline DecomposeResult decompose(const PixelVolume& volume, const DecomposeOptions& options) {
  options.validate();
  if (volume.empty()) throw InvalidArgument("empty input volume");
  const auto start = std::chrono::steady_clock::now();
  DecomposeResult result;
  result.seed = options.seed;
  detail::StageClock clock(result.timings);

  std::size_t s = options.superpixels;
  if (s == 0) s = volume.frames() > 1 ? kDefaultVideoSuperpixels : kDefaultStillSuperpixels;
  if (s > volume.pixel_count()) {
    result.warnings.push_back("superpixel count reduced from " + std::to_string(s) + " to pixel count " +
                              std::to_string(volume.pixel_count()));
    s = volume.pixel_count();
  }
  result.superpixels = s;

  const Palette palette = clock.run("palette", [&] {
    Palette p = options.palette ? *options.palette
                                : extract_palette(volume, options.num_layers, options.seed, options.palette_options);
    return detail::to_float_precision(p);
  });
  if (options.palette && palette.size() != options.num_layers) {
    result.warnings.push_back("palette file has " + std::to_string(palette.size()) + " colors; using that as N");
  }

  result.segmentation = clock.run("superpixels", [&] { return segment(volume, s, options.seed); });
  const Segmentation& seg = result.segmentation;

  const SparseRowMatrix w = clock.run("manifold", [&] { return build_w(seg, options.k_s, &result.warnings); });

  result.solve = clock.run("solve", [&] {
    ConstraintSet user = constraints_from_strokes(options.strokes, seg, palette.size());
    ConstraintSet automatic;
    if (options.auto_constraints) automatic = auto_constraints(seg, palette, options.tau);
    return solve_layers(seg, w, palette, merge_constraints(user, automatic), options.solver);
  });
  if (!result.solve.converged) {
    result.warnings.push_back("conjugate gradient did not reach tolerance (relative residual " +
                              std::to_string(result.solve.relative_residual) + ")");
  }

  clock.run("projection", [&] {
    std::size_t k_p = options.k_p;
    if (k_p > s) {
      result.warnings.push_back("pixel neighbor count reduced from " + std::to_string(k_p) + " to " +
                                std::to_string(s));
      k_p = s;
    }
    LayerSet& layers = result.layers;
    layers.width = volume.width();
    layers.height = volume.height();
    layers.frames = volume.frames();
    layers.palette = palette;
    const std::size_t n = palette.size();
    layers.planes.assign(n, std::vector<float>(volume.pixel_count()));
    const SuperpixelLayers& sl = result.solve.layers;
    for_each_projection_row(volume, seg, k_p,
                            [&](std::size_t p, std::span<const std::uint32_t> cols, std::span<const double> vals) {
                              for (std::size_t j = 0; j < n; ++j) {
                                const double* lj = sl.values.data() + j * sl.superpixels;
                                double acc = 0.0;
                                for (std::size_t k = 0; k < cols.size(); ++k) acc += vals[k] * lj[cols[k]];
                                layers.planes[j][p] = static_cast<float>(acc);
                              }
                            });
  });

  result.rmse = clock.run("reconstruction", [&] { return rmse(compose(result.layers), volume); });
  result.total_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return result;
}

} // namespace chromalayer
