#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <span>
#include <vector>

#include "chromalayer/error.hpp"
#include "chromalayer/pixel_volume.hpp"

namespace chromalayer {

/// (r, g, b, x, y, t) with the spatial axes down-weighted.
using Feature = std::array<double, 6>;

inline constexpr double kSpatialFeatureWeight = 0.5;

namespace detail {
inline double normalized_axis(double v, std::size_t extent) {
  return extent > 1 ? v / static_cast<double>(extent - 1) : 0.0;
}
} // namespace detail

/// Builds the 6-D feature for a color at spatiotemporal position (x, y, t)
/// inside a width x height x frames volume.
inline Feature make_feature(const Rgb& color, double x, double y, double t, std::size_t width, std::size_t height,
                            std::size_t frames) {
  return {color[0],
          color[1],
          color[2],
          kSpatialFeatureWeight * detail::normalized_axis(x, width),
          kSpatialFeatureWeight * detail::normalized_axis(y, height),
          detail::normalized_axis(t, frames)};
}

inline Feature pixel_feature(const PixelVolume& volume, std::size_t p) {
  const PixelCoord c = volume.coord(p);
  return make_feature(volume.color(p), static_cast<double>(c.x), static_cast<double>(c.y), static_cast<double>(c.t),
                      volume.width(), volume.height(), volume.frames());
}

struct SuperpixelStat {
  Rgb mean_color{};
  std::array<double, 3> centroid{}; // x, y, t in pixel units
  Feature feature{};
  std::size_t pixel_count = 0;
};

struct Segmentation {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t frames = 0;
  std::vector<std::uint32_t> labels;
  std::vector<SuperpixelStat> superpixels;

  std::size_t size() const { return superpixels.size(); }
  std::size_t pixel_count() const { return labels.size(); }

  std::vector<Rgb> mean_colors() const {
    std::vector<Rgb> out;
    out.reserve(superpixels.size());
    for (const auto& s : superpixels) out.push_back(s.mean_color);
    return out;
  }
};

struct SegmentOptions {
  int passes = 5;
};

namespace detail {

/// Visits the 4 spatial neighbors plus, for video, the 2 temporal ones.
template <typename Fn>
inline void for_each_neighbor(std::size_t p, std::size_t width, std::size_t height, std::size_t frames, Fn&& fn) {
  const std::size_t plane = width * height;
  const std::size_t x = p % width;
  const std::size_t y = (p / width) % height;
  const std::size_t t = p / plane;
  if (x > 0) fn(p - 1);
  if (x + 1 < width) fn(p + 1);
  if (y > 0) fn(p - width);
  if (y + 1 < height) fn(p + width);
  if (t > 0) fn(p - plane);
  if (t + 1 < frames) fn(p + plane);
}

struct GrowEntry {
  float priority;
  std::uint32_t order;
  std::uint32_t pixel;
  std::uint32_t label;
};

struct GrowLater {
  bool operator()(const GrowEntry& a, const GrowEntry& b) const {
    if (a.priority != b.priority) return a.priority > b.priority;
    return a.order > b.order;
  }
};

/// Min-queue on (priority, order) for priorities in [0, 3]. Entries go to
/// fine linear buckets; a bucket stays a FIFO run while its priorities arrive
/// non-decreasing (always true when colors are 8-bit) and falls back to a
/// binary heap otherwise, so the pop order matches one global heap exactly.
class GrowQueue {
public:
  void clear() {
    for (std::size_t w = 0; w < summary_.size(); ++w) {
      for (std::uint64_t bits = summary_[w]; bits != 0; bits &= bits - 1) {
        const std::size_t word = (w << 6) + static_cast<std::size_t>(std::countr_zero(bits));
        for (std::uint64_t b = occupied_[word]; b != 0; b &= b - 1) {
          buckets_[(word << 6) + static_cast<std::size_t>(std::countr_zero(b))].reset();
        }
        occupied_[word] = 0;
      }
      summary_[w] = 0;
    }
    lowest_ = kBuckets;
    size_ = 0;
  }

  bool empty() const { return size_ == 0; }

  void push(const GrowEntry& e) {
    const std::size_t b = bucket_of(e.priority);
    Bucket& bucket = buckets_[b];
    if (bucket.size() == 0) mark(b);
    bucket.push(e);
    lowest_ = std::min(lowest_, b);
    ++size_;
  }

  GrowEntry pop() {
    Bucket& bucket = buckets_[lowest_];
    const GrowEntry e = bucket.pop();
    --size_;
    if (bucket.size() == 0) {
      unmark(lowest_);
      lowest_ = next_occupied(lowest_);
    }
    return e;
  }

private:
  static constexpr float kScale = 262144.0f; // 2^18 buckets per unit
  static constexpr std::size_t kBuckets = 3 * 262144 + 1;
  static constexpr std::size_t kWords = (kBuckets + 63) / 64;

  class Bucket {
  public:
    std::size_t size() const { return items_.size() - head_; }

    void push(const GrowEntry& e) {
      if (!heap_ && size() > 0 && items_.back().priority > e.priority) {
        items_.erase(items_.begin(), items_.begin() + static_cast<std::ptrdiff_t>(head_));
        head_ = 0;
        heap_ = true; // a sorted run is already a valid min-heap
      }
      items_.push_back(e);
      if (heap_) std::push_heap(items_.begin(), items_.end(), GrowLater{});
    }

    GrowEntry pop() {
      GrowEntry e;
      if (heap_) {
        std::pop_heap(items_.begin(), items_.end(), GrowLater{});
        e = items_.back();
        items_.pop_back();
      } else {
        e = items_[head_++];
        if (head_ >= 1024 && 2 * head_ >= items_.size()) {
          items_.erase(items_.begin(), items_.begin() + static_cast<std::ptrdiff_t>(head_));
          head_ = 0;
        }
      }
      if (size() == 0) reset();
      return e;
    }

    void reset() {
      items_.clear();
      head_ = 0;
      heap_ = false;
    }

  private:
    std::vector<GrowEntry> items_;
    std::size_t head_ = 0;
    bool heap_ = false;
  };

  static std::size_t bucket_of(float priority) {
    return std::min(static_cast<std::size_t>(priority * kScale), kBuckets - 1);
  }

  void mark(std::size_t b) {
    occupied_[b >> 6] |= std::uint64_t{1} << (b & 63);
    summary_[b >> 12] |= std::uint64_t{1} << ((b >> 6) & 63);
  }

  void unmark(std::size_t b) {
    occupied_[b >> 6] &= ~(std::uint64_t{1} << (b & 63));
    if (occupied_[b >> 6] == 0) summary_[b >> 12] &= ~(std::uint64_t{1} << ((b >> 6) & 63));
  }

  std::size_t next_occupied(std::size_t from) const {
    std::size_t word = from >> 6;
    const std::uint64_t rest = occupied_[word] & (~std::uint64_t{0} << (from & 63));
    if (rest != 0) return (word << 6) + static_cast<std::size_t>(std::countr_zero(rest));
    ++word;
    if (word >= kWords) return kBuckets;
    std::size_t group = word >> 6;
    std::uint64_t mask = summary_[group] & (~std::uint64_t{0} << (word & 63));
    while (mask == 0) {
      if (++group >= summary_.size()) return kBuckets;
      mask = summary_[group];
    }
    word = (group << 6) + static_cast<std::size_t>(std::countr_zero(mask));
    return (word << 6) + static_cast<std::size_t>(std::countr_zero(occupied_[word]));
  }

  std::vector<Bucket> buckets_ = std::vector<Bucket>(kBuckets);
  std::vector<std::uint64_t> occupied_ = std::vector<std::uint64_t>(kWords, 0);
  std::vector<std::uint64_t> summary_ = std::vector<std::uint64_t>((kWords + 63) / 64, 0);
  std::size_t lowest_ = kBuckets;
  std::size_t size_ = 0;
};

inline float color_gap2(const float* px, const Rgb& seed) {
  const float dr = px[0] - static_cast<float>(seed[0]);
  const float dg = px[1] - static_cast<float>(seed[1]);
  const float db = px[2] - static_cast<float>(seed[2]);
  return dr * dr + dg * dg + db * db;
}

inline GrowQueue& grow_queue() {
  thread_local GrowQueue queue;
  return queue;
}

inline constexpr std::uint32_t kUnlabeled = std::numeric_limits<std::uint32_t>::max();

/// Per-pixel growth state packed next to the color. `state` holds the bit
/// pattern of the best pending priority while unlabeled, or kLabeledBit|label.
struct GrowCell {
  float color[3];
  std::uint32_t state;
};

inline constexpr std::uint32_t kLabeledBit = 0x80000000u;

inline void load_cells(const PixelVolume& volume, std::vector<GrowCell>& cells) {
  const float* data = volume.data().data();
  cells.resize(volume.pixel_count());
  for (std::size_t p = 0; p < cells.size(); ++p) {
    cells[p].color[0] = data[3 * p];
    cells[p].color[1] = data[3 * p + 1];
    cells[p].color[2] = data[3 * p + 2];
  }
}

/// One seeded-region-growing pass over cells filled by load_cells. Each
/// region starts at its seed pixel and claims unlabeled neighbors in order of
/// squared RGB distance to the region's seed color; equal priorities resolve
/// first-pushed-first.
inline void grow_regions(std::size_t w, std::size_t h, std::size_t f, std::vector<GrowCell>& cells,
                         std::span<const std::uint32_t> seeds, std::span<const Rgb> seed_colors,
                         std::vector<std::uint32_t>& labels) {
  const std::uint32_t unreached = std::bit_cast<std::uint32_t>(std::numeric_limits<float>::infinity());
  for (GrowCell& c : cells) c.state = unreached;
  std::vector<std::array<float, 3>> targets(seed_colors.size());
  for (std::size_t r = 0; r < seed_colors.size(); ++r) {
    for (int k = 0; k < 3; ++k) targets[r][k] = static_cast<float>(seed_colors[r][k]);
  }

  GrowQueue& queue = grow_queue();
  queue.clear();
  std::uint32_t order = 0;

  auto push_neighbors = [&](std::uint32_t p, std::uint32_t label) {
    const auto& seed = targets[label];
    for_each_neighbor(p, w, h, f, [&](std::size_t q) {
      GrowCell& c = cells[q];
      if (c.state & kLabeledBit) return;
      const float dr = c.color[0] - seed[0];
      const float dg = c.color[1] - seed[1];
      const float db = c.color[2] - seed[2];
      const float d = dr * dr + dg * dg + db * db;
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(d);
      if (bits < c.state) {
        c.state = bits;
        queue.push({d, order++, static_cast<std::uint32_t>(q), label});
      }
    });
  };

  for (std::uint32_t r = 0; r < seeds.size(); ++r) cells[seeds[r]].state = kLabeledBit | r;
  for (std::uint32_t r = 0; r < seeds.size(); ++r) push_neighbors(seeds[r], r);
  while (!queue.empty()) {
    const GrowEntry e = queue.pop();
    GrowCell& c = cells[e.pixel];
    if (c.state & kLabeledBit) continue;
    c.state = kLabeledBit | e.label;
    push_neighbors(e.pixel, e.label);
  }
  labels.resize(cells.size());
  for (std::size_t p = 0; p < cells.size(); ++p) labels[p] = cells[p].state & ~kLabeledBit;
}

inline std::vector<SuperpixelStat> region_stats(const PixelVolume& volume, std::span<const std::uint32_t> labels,
                                                std::size_t count) {
  std::vector<SuperpixelStat> stats(count);
  std::vector<std::array<double, 6>> sums(count, std::array<double, 6>{});
  const std::size_t w = volume.width();
  const std::size_t plane = w * volume.height();
  const float* data = volume.data().data();
  for (std::size_t p = 0; p < labels.size(); ++p) {
    auto& s = sums[labels[p]];
    s[0] += data[3 * p];
    s[1] += data[3 * p + 1];
    s[2] += data[3 * p + 2];
    s[3] += static_cast<double>(p % w);
    s[4] += static_cast<double>((p % plane) / w);
    s[5] += static_cast<double>(p / plane);
    ++stats[labels[p]].pixel_count;
  }
  for (std::size_t r = 0; r < count; ++r) {
    auto& st = stats[r];
    if (st.pixel_count == 0) continue;
    const double n = static_cast<double>(st.pixel_count);
    for (int k = 0; k < 3; ++k) st.mean_color[k] = std::clamp(sums[r][k] / n, 0.0, 1.0);
    for (int k = 0; k < 3; ++k) st.centroid[k] = sums[r][3 + k] / n;
    st.feature = make_feature(st.mean_color, st.centroid[0], st.centroid[1], st.centroid[2], volume.width(),
                              volume.height(), volume.frames());
  }
  return stats;
}

/// Owned pixel nearest to each region's centroid (lowest index on ties).
inline std::vector<std::uint32_t> snap_centroids(const PixelVolume& volume, std::span<const std::uint32_t> labels,
                                                 const std::vector<SuperpixelStat>& stats) {
  const std::size_t w = volume.width();
  const std::size_t plane = w * volume.height();
  std::vector<std::uint32_t> seeds(stats.size(), kUnlabeled);
  std::vector<double> best(stats.size(), std::numeric_limits<double>::infinity());
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const std::uint32_t r = labels[p];
    const auto& c = stats[r].centroid;
    const double dx = static_cast<double>(p % w) - c[0];
    const double dy = static_cast<double>((p % plane) / w) - c[1];
    const double dt = static_cast<double>(p / plane) - c[2];
    const double d = dx * dx + dy * dy + dt * dt;
    if (d < best[r]) {
      best[r] = d;
      seeds[r] = static_cast<std::uint32_t>(p);
    }
  }
  return seeds;
}

inline std::vector<std::uint32_t> random_distinct_pixels(std::size_t total, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::uint32_t> out;
  out.reserve(count);
  if (count * 2 > total) {
    std::vector<std::uint32_t> all(total);
    std::iota(all.begin(), all.end(), 0u);
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, total - 1);
      std::swap(all[i], all[pick(rng)]);
      out.push_back(all[i]);
    }
    return out;
  }
  std::vector<bool> taken(total, false);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  while (out.size() < count) {
    const std::size_t p = pick(rng);
    if (taken[p]) continue;
    taken[p] = true;
    out.push_back(static_cast<std::uint32_t>(p));
  }
  return out;
}

} // namespace detail

/// Splits the volume into `s` connected superpixels (supervoxels for video).
///
/// Seeded region growing from random distinct seed pixels, followed by
/// k-means style re-centering: every later pass is seeded at the previous
/// pass's centroids (snapped onto an owned pixel) with the previous mean
/// colors as seed colors. Deterministic for a fixed `seed`.
inline Segmentation segment(const PixelVolume& volume, std::size_t s, std::uint64_t seed,
                            const SegmentOptions& options = {}) {
  const std::size_t total = volume.pixel_count();
  if (s < 1) throw InvalidArgument("superpixel count must be >= 1");
  if (s > total) {
    throw InvalidArgument("superpixel count " + std::to_string(s) + " exceeds pixel count " + std::to_string(total));
  }
  if (total >= detail::kLabeledBit) throw InvalidArgument("volume too large to label");

  std::mt19937_64 rng(seed);
  std::vector<std::uint32_t> seeds = detail::random_distinct_pixels(total, s, rng);
  std::vector<Rgb> seed_colors;
  seed_colors.reserve(s);
  for (std::uint32_t p : seeds) seed_colors.push_back(volume.color(p));

  Segmentation seg;
  seg.width = volume.width();
  seg.height = volume.height();
  seg.frames = volume.frames();
  std::vector<detail::GrowCell> cells;
  detail::load_cells(volume, cells);
  const int passes = std::max(1, options.passes);
  for (int pass = 0;; ++pass) {
    detail::grow_regions(volume.width(), volume.height(), volume.frames(), cells, seeds, seed_colors, seg.labels);
    seg.superpixels = detail::region_stats(volume, seg.labels, s);

    // A region owns at least its seed, so this only triggers if growth was
    // handed a duplicated seed; reseed at the worst-represented pixel.
    bool repaired = false;
    for (std::size_t r = 0; r < s; ++r) {
      if (seg.superpixels[r].pixel_count != 0) continue;
      std::size_t worst = 0;
      float worst_gap = -1.0f;
      for (std::size_t p = 0; p < total; ++p) {
        if (std::find(seeds.begin(), seeds.end(), p) != seeds.end()) continue;
        const float g = detail::color_gap2(volume.data().data() + 3 * p, seed_colors[seg.labels[p]]);
        if (g > worst_gap) {
          worst_gap = g;
          worst = p;
        }
      }
      seeds[r] = static_cast<std::uint32_t>(worst);
      seed_colors[r] = volume.color(worst);
      repaired = true;
    }
    if (repaired) continue;
    if (pass + 1 >= passes) break;

    const std::vector<std::uint32_t> snapped = detail::snap_centroids(volume, seg.labels, seg.superpixels);
    seeds = snapped;
    for (std::size_t r = 0; r < s; ++r) seed_colors[r] = seg.superpixels[r].mean_color;
  }
  return seg;
}

/// Feature vectors of every superpixel, in label order.
inline std::vector<Feature> features(const Segmentation& seg, const PixelVolume& volume) {
  if (seg.width != volume.width() || seg.height != volume.height() || seg.frames != volume.frames() ||
      seg.labels.size() != volume.pixel_count()) {
    throw InvalidArgument("segmentation does not match volume dimensions");
  }
  std::vector<Feature> out;
  out.reserve(seg.size());
  for (const auto& s : seg.superpixels) {
    out.push_back(make_feature(s.mean_color, s.centroid[0], s.centroid[1], s.centroid[2], volume.width(),
                               volume.height(), volume.frames()));
  }
  return out;
}

/// Frame `t` with superpixel boundaries painted black, for debugging.
inline PixelVolume render_boundaries(const PixelVolume& volume, const Segmentation& seg, std::size_t t = 0) {
  PixelVolume out = volume.frame_volume(t);
  const std::size_t w = volume.width();
  const std::size_t h = volume.height();
  const std::size_t offset = t * w * h;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      const std::uint32_t l = seg.labels[offset + p];
      const bool edge = (x + 1 < w && seg.labels[offset + p + 1] != l) || (y + 1 < h && seg.labels[offset + p + w] != l);
      if (edge) out.set_color(p, {0.0, 0.0, 0.0});
    }
  }
  return out;
}

} // namespace chromalayer
