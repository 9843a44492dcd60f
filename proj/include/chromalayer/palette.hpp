#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "chromalayer/error.hpp"
#include "chromalayer/pixel_volume.hpp"

namespace chromalayer {

/// Ordered list of layer colors.
struct Palette {
  std::vector<Rgb> colors;

  std::size_t size() const { return colors.size(); }
  bool empty() const { return colors.empty(); }
  const Rgb& operator[](std::size_t i) const { return colors[i]; }

  friend bool operator==(const Palette&, const Palette&) = default;
};

/// Throws if the palette is empty, has a channel outside [0,1], or (when
/// `require_distinct`) holds two colors closer than 1e-6. Recolor palettes may
/// repeat colors.
inline void validate_palette(const Palette& palette, bool require_distinct = true) {
  if (palette.empty()) throw InvalidArgument("empty palette");
  for (const Rgb& c : palette.colors) {
    for (double v : c) {
      if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("channel out of range");
    }
  }
  if (!require_distinct) return;
  for (std::size_t i = 0; i < palette.size(); ++i) {
    for (std::size_t j = i + 1; j < palette.size(); ++j) {
      if (distance(palette[i], palette[j]) <= 1e-6) throw InvalidArgument("duplicate colors");
    }
  }
}

inline nlohmann::json palette_to_json(const Palette& palette) {
  nlohmann::json colors = nlohmann::json::array();
  for (const Rgb& c : palette.colors) colors.push_back({c[0], c[1], c[2]});
  return {{"colors", colors}};
}

inline Palette palette_from_json(const nlohmann::json& doc, bool require_distinct = true) {
  if (!doc.is_object() || !doc.contains("colors") || !doc["colors"].is_array()) {
    throw FormatError("palette JSON must be an object with a \"colors\" array");
  }
  Palette palette;
  for (const auto& entry : doc["colors"]) {
    if (!entry.is_array() || entry.size() != 3) throw FormatError("palette color must be an [r,g,b] array");
    Rgb c{};
    for (std::size_t k = 0; k < 3; ++k) {
      if (!entry[k].is_number()) throw FormatError("palette channel must be a number");
      c[k] = entry[k].get<double>();
    }
    palette.colors.push_back(c);
  }
  validate_palette(palette, require_distinct);
  return palette;
}

inline Palette parse_palette(const std::filesystem::path& path, bool require_distinct = true) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read palette file: " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("malformed palette JSON: ") + e.what());
  }
  return palette_from_json(doc, require_distinct);
}

namespace detail {

/// Euclidean projection of v onto the probability simplex.
inline void project_to_simplex(std::span<double> v) {
  const std::size_t n = v.size();
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    cumulative += u[k];
    const double t = (cumulative - 1.0) / static_cast<double>(k + 1);
    if (u[k] - t > 0.0) theta = t;
  }
  for (double& x : v) x = std::max(x - theta, 0.0);
}

} // namespace detail

/// Distance from colors to the convex hull of a fixed palette.
///
/// One- and two-color palettes are projected in closed form. Larger palettes
/// minimize |x - C w|^2 over the simplex with accelerated projected gradient
/// (adaptive restart), stopping when an iterate moves less than `tolerance`.
/// Degenerate palettes need no special casing.
class HullProjector {
public:
  explicit HullProjector(const Palette& palette, double tolerance = 1e-9, int max_iterations = 100000)
      : colors_(palette.colors), tolerance_(tolerance), max_iterations_(max_iterations) {
    if (colors_.empty()) throw InvalidArgument("empty palette");
    const std::size_t n = colors_.size();
    gram_.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        gram_[i * n + j] = colors_[i][0] * colors_[j][0] + colors_[i][1] * colors_[j][1] + colors_[i][2] * colors_[j][2];
      }
    }
    lipschitz_ = largest_eigenvalue();
  }

  std::size_t size() const { return colors_.size(); }

  /// Convex weights of the nearest hull point.
  std::vector<double> weights(const Rgb& x) const {
    const std::size_t n = colors_.size();
    if (n == 1) return {1.0};
    if (n == 2) {
      const Rgb& a = colors_[0];
      const Rgb& b = colors_[1];
      const double len2 = squared_distance(a, b);
      double s = 0.0;
      if (len2 > 0.0) {
        s = ((x[0] - a[0]) * (b[0] - a[0]) + (x[1] - a[1]) * (b[1] - a[1]) + (x[2] - a[2]) * (b[2] - a[2])) / len2;
        s = std::clamp(s, 0.0, 1.0);
      }
      return {1.0 - s, s};
    }
    return projected_gradient(x);
  }

  Rgb nearest_point(const Rgb& x) const {
    const std::vector<double> w = weights(x);
    Rgb p{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < colors_.size(); ++i) {
      for (int k = 0; k < 3; ++k) p[k] += w[i] * colors_[i][k];
    }
    return p;
  }

  double distance_to(const Rgb& x) const { return distance(x, nearest_point(x)); }

private:
  double largest_eigenvalue() const {
    const std::size_t n = colors_.size();
    std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
    std::vector<double> y(n);
    double lambda = 0.0;
    for (int it = 0; it < 200; ++it) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += gram_[i * n + j] * v[j];
        y[i] = s;
      }
      const double norm = std::sqrt(std::inner_product(y.begin(), y.end(), y.begin(), 0.0));
      if (norm == 0.0) return 1.0;
      for (std::size_t i = 0; i < n; ++i) v[i] = y[i] / norm;
      if (std::abs(norm - lambda) <= 1e-12 * norm) {
        lambda = norm;
        break;
      }
      lambda = norm;
    }
    // power iteration approaches from below; pad so 1/L stays a safe step
    return lambda * 1.01 + 1e-12;
  }

  double objective(std::span<const double> w, const Rgb& x) const {
    Rgb r = x;
    for (std::size_t i = 0; i < colors_.size(); ++i) {
      for (int k = 0; k < 3; ++k) r[k] -= w[i] * colors_[i][k];
    }
    return 0.5 * (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
  }

  std::vector<double> projected_gradient(const Rgb& x) const {
    const std::size_t n = colors_.size();
    std::vector<double> ctx(n);
    for (std::size_t i = 0; i < n; ++i) ctx[i] = colors_[i][0] * x[0] + colors_[i][1] * x[1] + colors_[i][2] * x[2];

    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    std::vector<double> y = w;
    std::vector<double> next(n);
    double momentum = 1.0;
    double f_prev = objective(w, x);
    const double step = 1.0 / lipschitz_;
    for (int it = 0; it < max_iterations_; ++it) {
      for (std::size_t i = 0; i < n; ++i) {
        double g = -ctx[i];
        for (std::size_t j = 0; j < n; ++j) g += gram_[i * n + j] * y[j];
        next[i] = y[i] - step * g;
      }
      detail::project_to_simplex(next);
      double move = 0.0;
      for (std::size_t i = 0; i < n; ++i) move = std::max(move, std::abs(next[i] - y[i]));
      const double f = objective(next, x);
      if (f > f_prev && momentum > 1.0) {
        // restart momentum from the last accepted iterate
        momentum = 1.0;
        y = w;
        continue;
      }
      const double momentum_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
      const double beta = (momentum - 1.0) / momentum_next;
      for (std::size_t i = 0; i < n; ++i) y[i] = next[i] + beta * (next[i] - w[i]);
      w.swap(next);
      momentum = momentum_next;
      f_prev = f;
      if (move <= tolerance_) break;
    }
    return w;
  }

  std::vector<Rgb> colors_;
  std::vector<double> gram_;
  double lipschitz_ = 1.0;
  double tolerance_;
  int max_iterations_;
};

/// Euclidean RGB distance from `color` to the convex hull of `palette`.
inline double hull_distance(const Rgb& color, const Palette& palette) {
  return HullProjector(palette).distance_to(color);
}

struct PaletteOptions {
  std::size_t samples = 10000;
  int restarts = 8;
  int max_iterations = 50;
  double convergence = 1e-6;
  double hull_weight = 5.0;
};

struct PaletteCandidate {
  Palette palette;
  std::vector<std::size_t> populations;
  double coverage = 0.0;     // negative mean distance to nearest palette color
  double hull_penalty = 0.0; // mean hull distance
  double score = 0.0;
};

namespace detail {

inline std::vector<Rgb> sample_colors(const PixelVolume& volume, std::size_t count, std::mt19937_64& rng) {
  const std::size_t total = volume.pixel_count();
  std::vector<Rgb> out;
  if (total <= count) {
    out.reserve(total);
    for (std::size_t p = 0; p < total; ++p) out.push_back(volume.color(p));
    return out;
  }
  // Floyd's algorithm: `count` distinct indices, then sorted for a stable order
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(count * 2);
  std::vector<std::size_t> picks;
  picks.reserve(count);
  for (std::size_t j = total - count; j < total; ++j) {
    std::uniform_int_distribution<std::size_t> dist(0, j);
    const std::size_t t = dist(rng);
    const std::size_t pick = chosen.insert(t).second ? t : j;
    if (pick == j) chosen.insert(j);
    picks.push_back(pick);
  }
  std::sort(picks.begin(), picks.end());
  out.reserve(count);
  for (std::size_t p : picks) out.push_back(volume.color(p));
  return out;
}

inline std::size_t count_distinct(const std::vector<Rgb>& colors, std::size_t stop_at) {
  std::vector<Rgb> sorted = colors;
  std::sort(sorted.begin(), sorted.end());
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < sorted.size() && distinct < stop_at; ++i) {
    if (i == 0 || sorted[i] != sorted[i - 1]) ++distinct;
  }
  return distinct;
}

inline std::size_t nearest_center(const Rgb& x, const std::vector<Rgb>& centers, double* d2_out = nullptr) {
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d2 = squared_distance(x, centers[c]);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = c;
    }
  }
  if (d2_out) *d2_out = best_d2;
  return best;
}

/// Lloyd's k-means with k-means++ seeding. Returns centers sorted by
/// descending population (ties by center index) together with populations.
inline std::pair<std::vector<Rgb>, std::vector<std::size_t>> kmeans(const std::vector<Rgb>& points, std::size_t k,
                                                                    std::mt19937_64& rng, const PaletteOptions& opt) {
  std::vector<Rgb> centers;
  centers.reserve(k);
  std::uniform_int_distribution<std::size_t> first(0, points.size() - 1);
  centers.push_back(points[first(rng)]);
  std::vector<double> d2(points.size(), std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      d2[i] = std::min(d2[i], squared_distance(points[i], centers.back()));
      total += d2[i];
    }
    std::uniform_real_distribution<double> u(0.0, total);
    const double target = u(rng);
    double acc = 0.0;
    std::size_t pick = points.size();
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (d2[i] <= 0.0) continue;
      acc += d2[i];
      pick = i;
      if (acc >= target) break;
    }
    centers.push_back(points[pick]);
  }

  std::vector<std::size_t> assignment(points.size(), 0);
  std::vector<std::size_t> counts(k, 0);
  for (int it = 0; it < opt.max_iterations; ++it) {
    std::vector<Rgb> sums(k, Rgb{0.0, 0.0, 0.0});
    std::fill(counts.begin(), counts.end(), 0);
    std::vector<double> dist2(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      assignment[i] = nearest_center(points[i], centers, &dist2[i]);
      ++counts[assignment[i]];
      for (int c = 0; c < 3; ++c) sums[assignment[i]][c] += points[i][c];
    }
    double motion = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      Rgb updated = centers[c];
      if (counts[c] == 0) {
        // move an empty cluster onto the worst-fit point
        const auto worst = std::max_element(dist2.begin(), dist2.end()) - dist2.begin();
        updated = points[static_cast<std::size_t>(worst)];
        dist2[static_cast<std::size_t>(worst)] = 0.0;
      } else {
        for (int ch = 0; ch < 3; ++ch) updated[ch] = sums[c][ch] / static_cast<double>(counts[c]);
      }
      motion = std::max(motion, distance(updated, centers[c]));
      centers[c] = updated;
    }
    if (motion <= opt.convergence) break;
  }
  std::fill(counts.begin(), counts.end(), 0);
  for (const Rgb& p : points) ++counts[nearest_center(p, centers)];

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  std::vector<Rgb> sorted_centers;
  std::vector<std::size_t> sorted_counts;
  for (std::size_t i : order) {
    Rgb c = centers[i];
    for (double& v : c) v = std::clamp(v, 0.0, 1.0);
    sorted_centers.push_back(c);
    sorted_counts.push_back(counts[i]);
  }
  return {sorted_centers, sorted_counts};
}

inline bool colors_distinct(const std::vector<Rgb>& colors) {
  for (std::size_t i = 0; i < colors.size(); ++i) {
    for (std::size_t j = i + 1; j < colors.size(); ++j) {
      if (distance(colors[i], colors[j]) <= 1e-6) return false;
    }
  }
  return true;
}

} // namespace detail

/// Scores a palette on sampled colors: coverage minus the weighted mean hull
/// distance. Higher is better.
inline PaletteCandidate score_palette(const Palette& palette, const std::vector<Rgb>& samples, double hull_weight) {
  PaletteCandidate cand;
  cand.palette = palette;
  const HullProjector hull(palette);
  double nearest_sum = 0.0;
  double hull_sum = 0.0;
  for (const Rgb& x : samples) {
    double d2 = 0.0;
    detail::nearest_center(x, palette.colors, &d2);
    nearest_sum += std::sqrt(d2);
    hull_sum += hull.distance_to(x);
  }
  const double n = static_cast<double>(samples.size());
  cand.coverage = -nearest_sum / n;
  cand.hull_penalty = hull_sum / n;
  cand.score = cand.coverage - hull_weight * cand.hull_penalty;
  return cand;
}

/// Picks `n` layer colors from the volume. Candidates come from seeded
/// k-means restarts on a pixel sample; the best-scoring candidate wins with
/// the lowest restart index breaking ties. Colors are ordered by descending
/// cluster population.
inline Palette extract_palette(const PixelVolume& volume, std::size_t n, std::uint64_t seed,
                               const PaletteOptions& opt = {}) {
  if (n < 1) throw InvalidArgument("num-layers must be >= 1");
  if (volume.empty()) throw InvalidArgument("empty volume");
  std::mt19937_64 sample_rng(seed);
  const std::vector<Rgb> samples = detail::sample_colors(volume, opt.samples, sample_rng);
  if (detail::count_distinct(samples, n) < n) {
    throw InvalidArgument("requested " + std::to_string(n) + " colors exceeds count of distinct sampled colors");
  }
  bool have_best = false;
  PaletteCandidate best;
  for (int r = 0; r < opt.restarts; ++r) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(r) + 1);
    auto [centers, counts] = detail::kmeans(samples, n, rng, opt);
    if (!detail::colors_distinct(centers)) continue;
    PaletteCandidate cand = score_palette(Palette{centers}, samples, opt.hull_weight);
    cand.populations = counts;
    if (!have_best || cand.score > best.score) {
      best = std::move(cand);
      have_best = true;
    }
  }
  if (!have_best) throw InvalidArgument("could not find " + std::to_string(n) + " distinct palette colors");
  return best.palette;
}

} // namespace chromalayer
