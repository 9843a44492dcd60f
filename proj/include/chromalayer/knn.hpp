#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "chromalayer/error.hpp"

namespace chromalayer {

struct Neighbor {
  std::uint32_t index = 0;
  double distance = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// One ordered neighbor list per query.
using NeighborList = std::vector<std::vector<Neighbor>>;

template <std::size_t D>
inline double squared_distance(const std::array<double, D>& a, const std::array<double, D>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < D; ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

/// Squared distance from `p` to the nearest point of the box [lo, hi].
template <std::size_t D>
inline double box_squared_distance(const std::array<double, D>& p, const std::array<double, D>& lo,
                                   const std::array<double, D>& hi) {
  double s = 0.0;
  for (std::size_t k = 0; k < D; ++k) {
    const double d = std::max({lo[k] - p[k], p[k] - hi[k], 0.0});
    s += d * d;
  }
  return s;
}

/// Squared distance from `p` to the farthest corner of the box [lo, hi].
template <std::size_t D>
inline double box_squared_reach(const std::array<double, D>& p, const std::array<double, D>& lo,
                                const std::array<double, D>& hi) {
  double s = 0.0;
  for (std::size_t k = 0; k < D; ++k) {
    const double d = std::max(std::abs(p[k] - lo[k]), std::abs(p[k] - hi[k]));
    s += d * d;
  }
  return s;
}

/// Exact k-nearest-neighbor index over a fixed point set.
///
/// Ordering is by (squared distance, corpus index), so equal distances list
/// the lower index first and results match a brute-force scan exactly.
template <std::size_t D>
class KdTree {
public:
  using Point = std::array<double, D>;

  explicit KdTree(std::span<const Point> points, std::size_t leaf_size = 8)
      : points_(points.begin(), points.end()), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    if (!points_.empty()) {
      nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
      build(0, points_.size());
    }
  }

  std::size_t size() const { return points_.size(); }
  const Point& point(std::size_t i) const { return points_[i]; }

  /// Writes the k nearest points to `query` into `out` as (squared distance,
  /// index) pairs in ascending order. `skip` is excluded when in range.
  /// `bound` must be at least the true k-th smallest squared distance (for
  /// instance the k-th smallest over any k candidate points); it only prunes.
  void nearest(const Point& query, std::size_t k, std::vector<std::pair<double, std::uint32_t>>& out,
               std::size_t skip = std::numeric_limits<std::size_t>::max(),
               double bound = std::numeric_limits<double>::infinity()) const {
    out.clear();
    if (k == 0 || points_.empty()) return;
    Search s{query, k, skip, bound, out, {}};
    s.offsets.fill(0.0);
    descend(0, 0.0, s);
    std::sort_heap(out.begin(), out.end());
  }

  /// Appends to `out` every point whose squared distance to the box
  /// [lo, hi] is at most `limit`, in no particular order.
  void within_box(const Point& lo, const Point& hi, double limit, std::vector<std::uint32_t>& out) const {
    out.clear();
    if (points_.empty()) return;
    BoxSearch s{lo, hi, limit, out, {}, {}};
    s.cell_lo.fill(-std::numeric_limits<double>::infinity());
    s.cell_hi.fill(std::numeric_limits<double>::infinity());
    descend_box(0, 0.0, s);
  }

private:
  struct BoxSearch {
    const Point& lo;
    const Point& hi;
    double limit;
    std::vector<std::uint32_t>& out;
    std::array<double, D> cell_lo;
    std::array<double, D> cell_hi;
  };

  static double gap(double cell_lo, double cell_hi, double lo, double hi) {
    return std::max({cell_lo - hi, lo - cell_hi, 0.0});
  }

  void descend_box(std::int32_t id, double bound, BoxSearch& s) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.left < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const std::uint32_t idx = order_[i];
        if (box_squared_distance(points_[idx], s.lo, s.hi) <= s.limit) s.out.push_back(idx);
      }
      return;
    }
    const std::uint32_t d = node.dim;
    const double old_lo = s.cell_lo[d];
    const double old_hi = s.cell_hi[d];
    const double g_old = gap(old_lo, old_hi, s.lo[d], s.hi[d]);
    const double base = bound - g_old * g_old;
    {
      s.cell_hi[d] = std::min(old_hi, node.split);
      const double g = gap(old_lo, s.cell_hi[d], s.lo[d], s.hi[d]);
      if (base + g * g <= s.limit) descend_box(node.left, base + g * g, s);
      s.cell_hi[d] = old_hi;
    }
    {
      s.cell_lo[d] = std::max(old_lo, node.split);
      const double g = gap(s.cell_lo[d], old_hi, s.lo[d], s.hi[d]);
      if (base + g * g <= s.limit) descend_box(node.right, base + g * g, s);
      s.cell_lo[d] = old_lo;
    }
  }

  struct Node {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::uint32_t dim = 0;
    double split = 0.0;
  };

  struct Search {
    const Point& query;
    std::size_t k;
    std::size_t skip;
    double limit;
    std::vector<std::pair<double, std::uint32_t>>& heap; // max-heap on (d2, index)
    std::array<double, D> offsets;
  };

  std::int32_t build(std::size_t begin, std::size_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({static_cast<std::uint32_t>(begin), static_cast<std::uint32_t>(end), -1, -1, 0, 0.0});
    if (end - begin <= leaf_size_) return id;
    Point lo, hi;
    lo.fill(std::numeric_limits<double>::infinity());
    hi.fill(-std::numeric_limits<double>::infinity());
    for (std::size_t i = begin; i < end; ++i) {
      const Point& p = points_[order_[i]];
      for (std::size_t d = 0; d < D; ++d) {
        lo[d] = std::min(lo[d], p[d]);
        hi[d] = std::max(hi[d], p[d]);
      }
    }
    std::uint32_t dim = 0;
    for (std::uint32_t d = 1; d < D; ++d) {
      if (hi[d] - lo[d] > hi[dim] - lo[dim]) dim = d;
    }
    if (!(hi[dim] > lo[dim])) return id; // all points coincide
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) { return points_[a][dim] < points_[b][dim]; });
    const double split = points_[order_[mid]][dim];
    nodes_[id].dim = dim;
    nodes_[id].split = split;
    const std::int32_t left = build(begin, mid);
    const std::int32_t right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void offer(Search& s, double d2, std::uint32_t index) const {
    auto& heap = s.heap;
    if (heap.size() < s.k) {
      heap.emplace_back(d2, index);
      std::push_heap(heap.begin(), heap.end());
    } else if (std::make_pair(d2, index) < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = {d2, index};
      std::push_heap(heap.begin(), heap.end());
    }
  }

  // `bound` is a lower bound on the squared distance from the query to any
  // point in this node's cell.
  void descend(std::int32_t id, double bound, Search& s) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.left < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const std::uint32_t idx = order_[i];
        if (idx == s.skip) continue;
        offer(s, squared_distance(s.query, points_[idx]), idx);
      }
      return;
    }
    const double diff = s.query[node.dim] - node.split;
    // points equal to the split value may sit on either side, so the near
    // side is chosen by sign but the far side bound treats diff == 0 as 0
    const std::int32_t near = diff < 0.0 ? node.left : node.right;
    const std::int32_t far = diff < 0.0 ? node.right : node.left;
    descend(near, bound, s);
    const double old = s.offsets[node.dim];
    const double far_bound = bound - old * old + diff * diff;
    if (far_bound <= (s.heap.size() < s.k ? s.limit : s.heap.front().first)) {
      s.offsets[node.dim] = diff;
      descend(far, far_bound, s);
      s.offsets[node.dim] = old;
    }
  }

  std::vector<Point> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

/// Exact Euclidean k-NN of every query against `corpus`. With `exclude_self`,
/// query i is taken to be corpus element i and never lists itself.
template <std::size_t D>
inline NeighborList knn(std::span<const std::array<double, D>> queries, std::span<const std::array<double, D>> corpus,
                        std::size_t k, bool exclude_self) {
  const std::size_t available = corpus.size() - (exclude_self && !corpus.empty() ? 1 : 0);
  if (k < 1 || k > available) {
    throw InvalidArgument("k=" + std::to_string(k) + " out of range for corpus of " + std::to_string(corpus.size()));
  }
  if (exclude_self && queries.size() > corpus.size()) {
    throw InvalidArgument("exclude_self requires each query to be a corpus element");
  }
  const KdTree<D> tree(corpus);
  NeighborList out(queries.size());
  std::vector<std::pair<double, std::uint32_t>> found;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    tree.nearest(queries[q], k, found, exclude_self ? q : std::numeric_limits<std::size_t>::max());
    out[q].reserve(found.size());
    for (const auto& [d2, idx] : found) out[q].push_back({idx, std::sqrt(d2)});
  }
  return out;
}

} // namespace chromalayer
