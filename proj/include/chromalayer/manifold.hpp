#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "chromalayer/knn.hpp"
#include "chromalayer/lle.hpp"
#include "chromalayer/pixel_volume.hpp"
#include "chromalayer/sparse.hpp"
#include "chromalayer/superpixel.hpp"

namespace chromalayer {

inline constexpr std::size_t kDefaultSuperpixelNeighbors = 30;
inline constexpr std::size_t kDefaultPixelNeighbors = 10;

namespace detail {

/// Sorts (column, weight) pairs by column and appends them as a row.
inline void append_sorted_row(SparseRowMatrix& m, std::vector<std::uint32_t>& cols, std::vector<double>& vals,
                              std::vector<std::size_t>& perm) {
  perm.resize(cols.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return cols[a] < cols[b]; });
  std::vector<std::uint32_t> c(cols.size());
  std::vector<double> v(cols.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    c[i] = cols[perm[i]];
    v[i] = vals[perm[i]];
  }
  m.append_row(c, v);
}

} // namespace detail

/// Superpixel manifold matrix: row i reconstructs superpixel i's mean color
/// from its `k_s` nearest other superpixels in feature space.
///
/// If there are too few superpixels, `k_s` shrinks to S-1 and a note is
/// appended to `warnings`. A single superpixel yields an all-zero row.
inline SparseRowMatrix build_w(std::span<const Feature> features, std::span<const Rgb> colors, std::size_t k_s,
                               std::vector<std::string>* warnings = nullptr) {
  const std::size_t s = features.size();
  if (colors.size() != s) throw InvalidArgument("feature and color counts differ");
  SparseRowMatrix w(s, s);
  if (s == 0) return w;
  if (s <= k_s) {
    if (warnings) {
      warnings->push_back("superpixel neighbor count reduced from " + std::to_string(k_s) + " to " +
                          std::to_string(s - 1) + " (only " + std::to_string(s) + " superpixels)");
    }
    k_s = s - 1;
  }
  if (k_s == 0) {
    for (std::size_t i = 0; i < s; ++i) w.append_empty_row();
    return w;
  }
  const NeighborList nbrs = knn(features, features, k_s, true);
  LleSolver solver;
  std::vector<double> stacked;
  std::vector<std::uint32_t> cols;
  std::vector<double> vals;
  std::vector<std::size_t> perm;
  for (std::size_t i = 0; i < s; ++i) {
    stacked.clear();
    cols.clear();
    for (const Neighbor& n : nbrs[i]) {
      stacked.insert(stacked.end(), colors[n.index].begin(), colors[n.index].end());
      cols.push_back(n.index);
    }
    auto weights = solver.solve(colors[i], stacked);
    vals.assign(weights.begin(), weights.end());
    detail::append_sorted_row(w, cols, vals, perm);
  }
  return w;
}

inline SparseRowMatrix build_w(const Segmentation& seg, std::size_t k_s, std::vector<std::string>* warnings = nullptr) {
  std::vector<Feature> feats;
  std::vector<Rgb> colors;
  for (const auto& sp : seg.superpixels) {
    feats.push_back(sp.feature);
    colors.push_back(sp.mean_color);
  }
  return build_w(feats, colors, k_s, warnings);
}

namespace detail {

/// Exact k-NN of every pixel feature against the superpixel features,
/// amortized over pixel rectangles: the k-NN of a rectangle's feature-box
/// center bounds every member's k-th distance, so only superpixels within
/// that bound of the box need to be scanned. Rectangles with too many
/// candidates are split.
class PixelNeighborSearch {
public:
  PixelNeighborSearch(const PixelVolume& volume, const KdTree<6>& tree, std::size_t k)
      : volume_(volume), tree_(tree), k_(k), max_candidates_(std::max<std::size_t>(4 * k, 32)) {}

  /// Calls emit(x, y, neighbors) for every pixel of frame t in [x0,x1)x[y0,y1)
  /// with neighbors ordered by (squared distance, index).
  template <typename Emit>
  void run(std::size_t t, std::size_t x0, std::size_t x1, std::size_t y0, std::size_t y1, Emit&& emit) {
    feats_.clear();
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = x0; x < x1; ++x) feats_.push_back(pixel_feature(volume_, volume_.index(x, y, t)));
    }
    rect(x0, x1, y0, y1, x1 - x0, x0, y0, emit);
  }

private:
  template <typename Emit>
  void rect(std::size_t x0, std::size_t x1, std::size_t y0, std::size_t y1, std::size_t stride, std::size_t ox,
            std::size_t oy, Emit& emit) {
    Feature lo, hi;
    lo.fill(std::numeric_limits<double>::infinity());
    hi.fill(-std::numeric_limits<double>::infinity());
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = x0; x < x1; ++x) {
        const Feature& f = feats_[(y - oy) * stride + (x - ox)];
        for (std::size_t d = 0; d < 6; ++d) {
          lo[d] = std::min(lo[d], f[d]);
          hi[d] = std::max(hi[d], f[d]);
        }
      }
    }
    Feature center;
    for (std::size_t d = 0; d < 6; ++d) center[d] = 0.5 * (lo[d] + hi[d]);
    tree_.nearest(center, k_, found_);
    double limit = 0.0;
    for (const auto& [d2, idx] : found_) limit = std::max(limit, box_squared_reach(tree_.point(idx), lo, hi));
    limit = limit * (1.0 + 1e-9) + 1e-300;
    tree_.within_box(lo, hi, limit, candidates_);

    const std::size_t w = x1 - x0;
    const std::size_t h = y1 - y0;
    if (candidates_.size() > max_candidates_ && w * h > 1) {
      if (w >= h) {
        const std::size_t xm = x0 + w / 2;
        rect(x0, xm, y0, y1, stride, ox, oy, emit);
        rect(xm, x1, y0, y1, stride, ox, oy, emit);
      } else {
        const std::size_t ym = y0 + h / 2;
        rect(x0, x1, y0, ym, stride, ox, oy, emit);
        rect(x0, x1, ym, y1, stride, ox, oy, emit);
      }
      return;
    }
    std::sort(candidates_.begin(), candidates_.end());
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = x0; x < x1; ++x) {
        const Feature& f = feats_[(y - oy) * stride + (x - ox)];
        scored_.clear();
        for (std::uint32_t idx : candidates_) scored_.emplace_back(squared_distance(f, tree_.point(idx)), idx);
        std::partial_sort(scored_.begin(), scored_.begin() + static_cast<std::ptrdiff_t>(k_), scored_.end());
        emit(x, y, std::span<const std::pair<double, std::uint32_t>>(scored_.data(), k_));
      }
    }
  }

  const PixelVolume& volume_;
  const KdTree<6>& tree_;
  std::size_t k_;
  std::size_t max_candidates_;
  std::vector<Feature> feats_;
  std::vector<std::pair<double, std::uint32_t>> found_;
  std::vector<std::uint32_t> candidates_;
  std::vector<std::pair<double, std::uint32_t>> scored_;
};

inline constexpr std::size_t kProjectionTile = 8;

} // namespace detail

/// Streams the rows of the pixel projection matrix in pixel order. Each row
/// reconstructs the pixel's color from the mean colors of its `k_p` nearest
/// superpixels, neighbors chosen by the pixel's own 6-D feature. `fn` receives
/// (pixel, columns in ascending order, weights).
template <typename Fn>
inline void for_each_projection_row(const PixelVolume& volume, const Segmentation& seg, std::size_t k_p, Fn&& fn) {
  const std::size_t s = seg.size();
  if (k_p < 1 || k_p > s) {
    throw InvalidArgument("pixel neighbor count " + std::to_string(k_p) + " must be in [1, " + std::to_string(s) + "]");
  }
  if (seg.labels.size() != volume.pixel_count()) throw InvalidArgument("segmentation does not match volume");
  std::vector<Feature> feats;
  feats.reserve(s);
  for (const auto& sp : seg.superpixels) feats.push_back(sp.feature);
  const KdTree<6> tree(feats);
  detail::PixelNeighborSearch search(volume, tree, k_p);

  const std::size_t width = volume.width();
  const std::size_t height = volume.height();
  const std::size_t tile = detail::kProjectionTile;
  std::vector<std::uint32_t> strip(tile * width * k_p);
  LleSolver solver;
  std::vector<double> stacked(k_p * 3);
  std::vector<std::uint32_t> cols(k_p);
  std::vector<double> vals(k_p);
  std::vector<std::size_t> perm(k_p);
  for (std::size_t t = 0; t < volume.frames(); ++t) {
    for (std::size_t y0 = 0; y0 < height; y0 += tile) {
      const std::size_t y1 = std::min(height, y0 + tile);
      for (std::size_t x0 = 0; x0 < width; x0 += tile) {
        search.run(t, x0, std::min(width, x0 + tile), y0, y1,
                   [&](std::size_t x, std::size_t y, std::span<const std::pair<double, std::uint32_t>> nbrs) {
                     std::uint32_t* out = strip.data() + ((y - y0) * width + x) * k_p;
                     for (std::size_t j = 0; j < k_p; ++j) out[j] = nbrs[j].second;
                   });
      }
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const std::size_t p = volume.index(x, y, t);
          const std::uint32_t* nb = strip.data() + ((y - y0) * width + x) * k_p;
          for (std::size_t j = 0; j < k_p; ++j) {
            const Rgb& c = seg.superpixels[nb[j]].mean_color;
            stacked[3 * j] = c[0];
            stacked[3 * j + 1] = c[1];
            stacked[3 * j + 2] = c[2];
          }
          const Rgb color = volume.color(p);
          auto weights = solver.solve(color, stacked);
          std::iota(perm.begin(), perm.end(), 0);
          std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return nb[a] < nb[b]; });
          for (std::size_t j = 0; j < k_p; ++j) {
            cols[j] = nb[perm[j]];
            vals[j] = weights[perm[j]];
          }
          fn(p, std::span<const std::uint32_t>(cols), std::span<const double>(vals));
        }
      }
    }
  }
}

/// Materialized P x S pixel projection matrix.
inline SparseRowMatrix build_q(const PixelVolume& volume, const Segmentation& seg, std::size_t k_p) {
  SparseRowMatrix q(volume.pixel_count(), seg.size());
  for_each_projection_row(volume, seg, k_p,
                          [&](std::size_t, std::span<const std::uint32_t> c, std::span<const double> v) {
                            q.append_row(c, v);
                          });
  return q;
}

} // namespace chromalayer
