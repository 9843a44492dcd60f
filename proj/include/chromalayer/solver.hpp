#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "chromalayer/error.hpp"
#include "chromalayer/palette.hpp"
#include "chromalayer/sparse.hpp"
#include "chromalayer/superpixel.hpp"

namespace chromalayer {

/// Weights of the four energy terms plus the negative-suppression schedule.
struct SolverParams {
  double lambda_m = 1.0;  // manifold consistency
  double lambda_r = 0.5;  // image reconstruction
  double lambda_u = 0.1;  // unity
  double lambda_e = 0.1;  // explicit (user and automatic) constraints
  double lambda_n = 1.0;  // suppression constraints
  int suppression_iters = 4;
  double cg_tolerance = 1e-8;
  std::size_t cg_max_iters = 0; // 0 selects 10 * S * N

  void validate() const {
    for (double v : {lambda_m, lambda_r, lambda_u, lambda_e, lambda_n}) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("energy weights must be finite and >= 0");
    }
    if (suppression_iters < 1) throw InvalidArgument("suppression-iters must be >= 1");
    if (!(cg_tolerance > 0.0)) throw InvalidArgument("cg tolerance must be > 0");
  }
};

enum class ConstraintSource { user, automatic, suppression };

inline const char* to_string(ConstraintSource s) {
  switch (s) {
  case ConstraintSource::user: return "user";
  case ConstraintSource::automatic: return "auto";
  case ConstraintSource::suppression: return "suppression";
  }
  return "?";
}

struct Constraint {
  std::uint32_t superpixel = 0;
  std::uint32_t layer = 0;
  double target = 0.0;
  ConstraintSource source = ConstraintSource::user;

  friend bool operator==(const Constraint&, const Constraint&) = default;
};

/// Soft targets on individual (superpixel, layer) values. A pair appears at
/// most once per source; re-adding it overwrites the earlier target.
class ConstraintSet {
public:
  void add(std::uint32_t superpixel, std::uint32_t layer, double target, ConstraintSource source) {
    if (!(target >= 0.0 && target <= 1.0)) throw InvalidArgument("constraint value out of range");
    const Key key{superpixel, layer, static_cast<int>(source)};
    auto it = index_.find(key);
    if (it != index_.end()) {
      entries_[it->second].target = target;
      return;
    }
    index_.emplace(key, entries_.size());
    entries_.push_back({superpixel, layer, target, source});
  }

  bool contains(std::uint32_t superpixel, std::uint32_t layer, ConstraintSource source) const {
    return index_.count(Key{superpixel, layer, static_cast<int>(source)}) != 0;
  }

  std::span<const Constraint> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::size_t count(ConstraintSource source) const {
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [&](const Constraint& c) { return c.source == source; }));
  }

  void check_bounds(std::size_t superpixels, std::size_t layers) const {
    for (const Constraint& c : entries_) {
      if (c.superpixel >= superpixels || c.layer >= layers) {
        throw InvalidArgument("constraint references superpixel " + std::to_string(c.superpixel) + " / layer " +
                              std::to_string(c.layer) + " outside " + std::to_string(superpixels) + "x" +
                              std::to_string(layers));
      }
    }
  }

private:
  using Key = std::tuple<std::uint32_t, std::uint32_t, int>;
  std::vector<Constraint> entries_;
  std::map<Key, std::size_t> index_;
};

/// S x N superpixel layer values, layer-major: value(i, j) = values[j * S + i].
struct SuperpixelLayers {
  std::size_t superpixels = 0;
  std::size_t layers = 0;
  std::vector<double> values;

  double at(std::size_t superpixel, std::size_t layer) const { return values[layer * superpixels + superpixel]; }
  std::span<const double> layer(std::size_t j) const {
    return std::span<const double>(values).subspan(j * superpixels, superpixels);
  }
};

inline constexpr double kDefaultAutoConstraintTau = 0.05;

/// Pins superpixels whose mean color is within `tau` of exactly one palette
/// color: 1 on that layer, 0 on all others. Ambiguous superpixels are left free.
inline ConstraintSet auto_constraints(std::span<const Rgb> superpixel_colors, const Palette& palette, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");
  ConstraintSet out;
  for (std::size_t i = 0; i < superpixel_colors.size(); ++i) {
    std::size_t hits = 0;
    std::size_t match = 0;
    for (std::size_t j = 0; j < palette.size(); ++j) {
      if (distance(superpixel_colors[i], palette[j]) < tau) {
        ++hits;
        match = j;
      }
    }
    if (hits != 1) continue;
    for (std::size_t j = 0; j < palette.size(); ++j) {
      out.add(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), j == match ? 1.0 : 0.0,
              ConstraintSource::automatic);
    }
  }
  return out;
}

inline ConstraintSet auto_constraints(const Segmentation& seg, const Palette& palette, double tau) {
  return auto_constraints(seg.mean_colors(), palette, tau);
}

/// User entries shadow automatic entries: a superpixel carrying any user
/// constraint keeps none of its automatic ones.
inline ConstraintSet merge_constraints(const ConstraintSet& user, const ConstraintSet& automatic) {
  ConstraintSet out;
  std::vector<std::uint32_t> user_superpixels;
  for (const Constraint& c : user.entries()) {
    out.add(c.superpixel, c.layer, c.target, c.source);
    user_superpixels.push_back(c.superpixel);
  }
  std::sort(user_superpixels.begin(), user_superpixels.end());
  for (const Constraint& c : automatic.entries()) {
    if (std::binary_search(user_superpixels.begin(), user_superpixels.end(), c.superpixel)) continue;
    out.add(c.superpixel, c.layer, c.target, c.source);
  }
  return out;
}

/// One scribble point in pixel space.
struct Stroke {
  long long x = 0;
  long long y = 0;
  long long t = 0;
  long long layer = 0;
  double value = 1.0;
};

inline std::vector<Stroke> strokes_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("strokes") || !doc["strokes"].is_array()) {
    throw FormatError("constraints JSON must be an object with a \"strokes\" array");
  }
  std::vector<Stroke> out;
  for (const auto& s : doc["strokes"]) {
    if (!s.is_object()) throw FormatError("stroke must be an object");
    for (const char* key : {"x", "y", "layer", "value"}) {
      if (!s.contains(key) || !s[key].is_number()) throw FormatError(std::string("stroke missing numeric \"") + key + "\"");
    }
    Stroke st;
    st.x = s["x"].get<long long>();
    st.y = s["y"].get<long long>();
    st.t = s.contains("t") ? s["t"].get<long long>() : 0;
    st.layer = s["layer"].get<long long>();
    st.value = s["value"].get<double>();
    out.push_back(st);
  }
  return out;
}

inline nlohmann::json strokes_to_json(std::span<const Stroke> strokes) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Stroke& s : strokes) {
    arr.push_back({{"x", s.x}, {"y", s.y}, {"t", s.t}, {"layer", s.layer}, {"value", s.value}});
  }
  return {{"strokes", arr}};
}

inline std::vector<Stroke> parse_strokes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read constraints file: " + path.string());
  try {
    return strokes_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed constraints JSON: ") + e.what());
  }
}

/// Maps scribble points onto the superpixels containing them. Later points
/// overwrite earlier ones on the same (superpixel, layer).
inline ConstraintSet constraints_from_strokes(std::span<const Stroke> strokes, const Segmentation& seg,
                                              std::size_t num_layers) {
  ConstraintSet out;
  for (const Stroke& s : strokes) {
    if (s.x < 0 || s.y < 0 || s.t < 0 || static_cast<std::size_t>(s.x) >= seg.width ||
        static_cast<std::size_t>(s.y) >= seg.height || static_cast<std::size_t>(s.t) >= seg.frames) {
      throw InvalidArgument("stroke coordinate (" + std::to_string(s.x) + ", " + std::to_string(s.y) + ", " +
                            std::to_string(s.t) + ") out of bounds");
    }
    if (s.layer < 0 || static_cast<std::size_t>(s.layer) >= num_layers) {
      throw InvalidArgument("layer id " + std::to_string(s.layer) + " out of range for " + std::to_string(num_layers) +
                            " layers");
    }
    if (!(s.value >= 0.0 && s.value <= 1.0)) throw InvalidArgument("constraint value out of range");
    const std::size_t p = (static_cast<std::size_t>(s.t) * seg.height + static_cast<std::size_t>(s.y)) * seg.width +
                          static_cast<std::size_t>(s.x);
    out.add(seg.labels[p], static_cast<std::uint32_t>(s.layer), s.value, ConstraintSource::user);
  }
  return out;
}

inline ConstraintSet parse_constraints(const std::filesystem::path& path, const Segmentation& seg,
                                       std::size_t num_layers) {
  const std::vector<Stroke> strokes = parse_strokes(path);
  return constraints_from_strokes(strokes, seg, num_layers);
}

namespace detail {

inline std::vector<double> palette_gram(const Palette& palette) {
  const std::size_t n = palette.size();
  std::vector<double> g(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      g[j * n + k] = palette[j][0] * palette[k][0] + palette[j][1] * palette[k][1] + palette[j][2] * palette[k][2];
    }
  }
  return g;
}

inline void check_system_inputs(const SparseRowMatrix& w, const Palette& palette, std::span<const Rgb> colors,
                                const ConstraintSet& constraints) {
  if (w.rows() != w.cols()) throw InvalidArgument("manifold matrix must be square");
  if (colors.size() != w.rows()) throw InvalidArgument("dimension mismatch: superpixel colors vs manifold matrix");
  if (palette.empty()) throw InvalidArgument("empty palette");
  constraints.check_bounds(w.rows(), palette.size());
}

/// Per-entry constraint weight: lambda_e per explicit entry, lambda_n per
/// suppression entry. Also accumulates weight * target into `rhs`.
inline std::vector<double> constraint_diagonal(const ConstraintSet& constraints, std::size_t s, std::size_t n,
                                               const SolverParams& params, std::vector<double>* rhs) {
  std::vector<double> diag(s * n, 0.0);
  for (const Constraint& c : constraints.entries()) {
    const double weight = c.source == ConstraintSource::suppression ? params.lambda_n : params.lambda_e;
    const std::size_t idx = static_cast<std::size_t>(c.layer) * s + c.superpixel;
    diag[idx] += weight;
    if (rhs) (*rhs)[idx] += weight * c.target;
  }
  return diag;
}

} // namespace detail

/// Right-hand side lambda_r R^T B + lambda_u U^T 1 + constraint targets.
inline std::vector<double> normal_rhs(const Palette& palette, std::span<const Rgb> colors,
                                      const ConstraintSet& constraints, const SolverParams& params) {
  const std::size_t s = colors.size();
  const std::size_t n = palette.size();
  std::vector<double> b(s * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < s; ++i) {
      const Rgb& c = colors[i];
      b[j * s + i] = params.lambda_r * (palette[j][0] * c[0] + palette[j][1] * c[1] + palette[j][2] * c[2]) +
                     params.lambda_u;
    }
  }
  detail::constraint_diagonal(constraints, s, n, params, &b);
  return b;
}

/// Applies the normal matrix
///   A = lm (I-M)^T (I-M) + lr R^T R + lu U^T U + E^T diag(le|ln) E
/// without forming it.
class NormalOperator {
public:
  NormalOperator(const SparseRowMatrix& w, const Palette& palette, const ConstraintSet& constraints,
                 const SolverParams& params)
      : w_(w), wt_(w.transposed()), s_(w.rows()), n_(palette.size()), params_(params),
        gram_(detail::palette_gram(palette)),
        diag_(detail::constraint_diagonal(constraints, w.rows(), palette.size(), params, nullptr)),
        scratch_(w.rows()), scratch2_(w.rows()) {}

  std::size_t size() const { return s_ * n_; }

  void apply(std::span<const double> x, std::span<double> y) const {
    const std::size_t s = s_;
    for (std::size_t j = 0; j < n_; ++j) {
      auto xj = x.subspan(j * s, s);
      auto yj = y.subspan(j * s, s);
      // r = (I - W) x_j ; y_j = lm (I - W)^T r
      w_.multiply(xj, scratch_);
      for (std::size_t i = 0; i < s; ++i) scratch_[i] = xj[i] - scratch_[i];
      wt_.multiply(scratch_, scratch2_);
      for (std::size_t i = 0; i < s; ++i) yj[i] = params_.lambda_m * (scratch_[i] - scratch2_[i]);
    }
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < n_; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n_; ++k) {
          acc += (params_.lambda_r * gram_[j * n_ + k] + params_.lambda_u) * x[k * s + i];
        }
        y[j * s + i] += acc + diag_[j * s + i] * x[j * s + i];
      }
    }
  }

  /// Inverse of the N x N diagonal block belonging to each superpixel, used
  /// as a block-Jacobi preconditioner. Stored row-major per superpixel.
  std::vector<double> block_inverses() const {
    const std::size_t s = s_;
    const std::size_t n = n_;
    std::vector<double> manifold_diag(s, 0.0); // ((I-W)^T (I-W))_ii
    for (std::size_t r = 0; r < s; ++r) {
      auto cols = w_.row_columns(r);
      auto vals = w_.row_values(r);
      double self = 0.0;
      for (std::size_t k = 0; k < cols.size(); ++k) {
        if (cols[k] == r) {
          self = vals[k];
        } else {
          manifold_diag[cols[k]] += vals[k] * vals[k];
        }
      }
      manifold_diag[r] += (1.0 - self) * (1.0 - self);
    }
    std::vector<double> out(s * n * n);
    std::vector<double> block(n * n);
    std::vector<double> inv(n * n);
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < n; ++k) {
          block[j * n + k] = params_.lambda_r * gram_[j * n + k] + params_.lambda_u;
        }
        block[j * n + j] += params_.lambda_m * manifold_diag[i] + diag_[j * s + i];
      }
      invert_spd(block, inv, n);
      std::copy(inv.begin(), inv.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n * n));
    }
    return out;
  }

private:
  // Gauss-Jordan with partial pivoting; a singular block falls back to the
  // reciprocal diagonal (or identity).
  static void invert_spd(std::vector<double> a, std::vector<double>& inv, std::size_t n) {
    const std::vector<double> original = a;
    std::fill(inv.begin(), inv.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) inv[i * n + i] = 1.0;
    double scale = 0.0;
    for (double v : a) scale = std::max(scale, std::abs(v));
    for (std::size_t c = 0; c < n; ++c) {
      std::size_t piv = c;
      for (std::size_t r = c + 1; r < n; ++r) {
        if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
      }
      if (std::abs(a[piv * n + c]) <= 1e-14 * std::max(scale, 1e-300)) {
        std::fill(inv.begin(), inv.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          const double d = original[i * n + i];
          inv[i * n + i] = d > 0.0 ? 1.0 / d : 1.0;
        }
        return;
      }
      if (piv != c) {
        for (std::size_t k = 0; k < n; ++k) {
          std::swap(a[c * n + k], a[piv * n + k]);
          std::swap(inv[c * n + k], inv[piv * n + k]);
        }
      }
      const double d = a[c * n + c];
      for (std::size_t k = 0; k < n; ++k) {
        a[c * n + k] /= d;
        inv[c * n + k] /= d;
      }
      for (std::size_t r = 0; r < n; ++r) {
        if (r == c) continue;
        const double f = a[r * n + c];
        if (f == 0.0) continue;
        for (std::size_t k = 0; k < n; ++k) {
          a[r * n + k] -= f * a[c * n + k];
          inv[r * n + k] -= f * inv[c * n + k];
        }
      }
    }
  }

  const SparseRowMatrix& w_;
  SparseRowMatrix wt_;
  std::size_t s_;
  std::size_t n_;
  SolverParams params_;
  std::vector<double> gram_;
  std::vector<double> diag_;
  mutable std::vector<double> scratch_;
  mutable std::vector<double> scratch2_;
};

struct NormalSystem {
  SparseRowMatrix a;
  std::vector<double> b;
};

/// Explicit sparse normal matrix and right-hand side. Unknowns are ordered
/// layer-major (index j * S + i).
inline NormalSystem assemble_normal_system(const SparseRowMatrix& w, const Palette& palette,
                                           std::span<const Rgb> colors, const ConstraintSet& constraints,
                                           const SolverParams& params) {
  detail::check_system_inputs(w, palette, colors, constraints);
  const std::size_t s = w.rows();
  const std::size_t n = palette.size();
  const SparseRowMatrix wt = w.transposed();
  const std::vector<double> gram = detail::palette_gram(palette);
  const std::vector<double> diag = detail::constraint_diagonal(constraints, s, n, params, nullptr);

  // rows of (I-W)^T (I-W): row a = sum over r of (I-W)_{r,a} * (I-W)_{r,:}
  std::vector<double> dense(s * n, 0.0);
  std::vector<char> touched(s * n, 0);
  std::vector<std::uint32_t> touched_list;
  std::vector<std::vector<std::pair<std::uint32_t, double>>> mtm(s);
  {
    std::vector<double> acc(s, 0.0);
    std::vector<char> mark(s, 0);
    std::vector<std::uint32_t> list;
    auto add_row_of_i_minus_w = [&](std::size_t r, double scale) {
      // (I - W) row r
      auto cols = w.row_columns(r);
      auto vals = w.row_values(r);
      auto bump = [&](std::uint32_t c, double v) {
        if (!mark[c]) {
          mark[c] = 1;
          list.push_back(c);
        }
        acc[c] += scale * v;
      };
      bump(static_cast<std::uint32_t>(r), 1.0);
      for (std::size_t k = 0; k < cols.size(); ++k) bump(cols[k], -vals[k]);
    };
    for (std::size_t a = 0; a < s; ++a) {
      list.clear();
      // column a of (I - W): identity entry at row a, then -W_{r,a}
      double self = 0.0;
      auto tcols = wt.row_columns(a);
      auto tvals = wt.row_values(a);
      for (std::size_t k = 0; k < tcols.size(); ++k) {
        if (tcols[k] == a) {
          self = tvals[k];
          continue;
        }
        add_row_of_i_minus_w(tcols[k], -tvals[k]);
      }
      add_row_of_i_minus_w(a, 1.0 - self);
      std::sort(list.begin(), list.end());
      for (std::uint32_t c : list) {
        mtm[a].emplace_back(c, acc[c]);
        acc[c] = 0.0;
        mark[c] = 0;
      }
    }
  }

  NormalSystem sys{SparseRowMatrix(s * n, s * n), normal_rhs(palette, colors, constraints, params)};
  std::vector<std::uint32_t> cols;
  std::vector<double> vals;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < s; ++i) {
      touched_list.clear();
      auto bump = [&](std::size_t c, double v) {
        if (!touched[c]) {
          touched[c] = 1;
          touched_list.push_back(static_cast<std::uint32_t>(c));
        }
        dense[c] += v;
      };
      for (const auto& [c, v] : mtm[i]) bump(j * s + c, params.lambda_m * v);
      for (std::size_t k = 0; k < n; ++k) bump(k * s + i, params.lambda_r * gram[j * n + k] + params.lambda_u);
      bump(j * s + i, diag[j * s + i]);
      std::sort(touched_list.begin(), touched_list.end());
      cols.clear();
      vals.clear();
      for (std::uint32_t c : touched_list) {
        cols.push_back(c);
        vals.push_back(dense[c]);
        dense[c] = 0.0;
        touched[c] = 0;
      }
      sys.a.append_row(cols, vals);
    }
  }
  return sys;
}

struct CgResult {
  std::size_t iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

/// Preconditioned conjugate gradient on an SPD operator, warm-started from
/// `x`. Convergence is judged on the true relative residual |b - Ax| / |b|.
/// `precondition(r, z)` writes z = M^-1 r.
template <typename Apply, typename Precondition>
inline CgResult conjugate_gradient(Apply&& apply, Precondition&& precondition, std::span<const double> b,
                                   std::span<double> x, double tolerance, std::size_t max_iterations) {
  const std::size_t n = b.size();
  CgResult result;
  const double b_norm = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
  if (b_norm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    result.converged = true;
    return result;
  }
  std::vector<double> r(n), z(n), p(n), ap(n);
  auto true_residual = [&] {
    apply(std::span<const double>(x), std::span<double>(ap));
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = b[i] - ap[i];
      s += r[i] * r[i];
    }
    return std::sqrt(s) / b_norm;
  };
  result.relative_residual = true_residual();
  // restarts guard against drift between the recursive and true residuals
  for (int restart = 0; restart < 8; ++restart) {
    if (result.relative_residual <= tolerance) {
      result.converged = true;
      return result;
    }
    if (result.iterations >= max_iterations) break;
    precondition(std::span<const double>(r), std::span<double>(z));
    p = z;
    double rz = std::inner_product(r.begin(), r.end(), z.begin(), 0.0);
    while (result.iterations < max_iterations) {
      apply(std::span<const double>(p), std::span<double>(ap));
      const double pap = std::inner_product(p.begin(), p.end(), ap.begin(), 0.0);
      if (!(pap > 0.0)) break;
      const double alpha = rz / pap;
      double rr = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        x[i] += alpha * p[i];
        r[i] -= alpha * ap[i];
        rr += r[i] * r[i];
      }
      ++result.iterations;
      if (std::sqrt(rr) / b_norm <= tolerance) break;
      precondition(std::span<const double>(r), std::span<double>(z));
      const double rz_next = std::inner_product(r.begin(), r.end(), z.begin(), 0.0);
      const double beta = rz_next / rz;
      rz = rz_next;
      for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    result.relative_residual = true_residual();
  }
  result.converged = result.relative_residual <= tolerance;
  return result;
}

/// Theta(L): the weighted energy, with suppression entries weighted by lambda_n.
inline double energy(std::span<const double> layers, const SparseRowMatrix& w, const Palette& palette,
                     std::span<const Rgb> colors, const ConstraintSet& constraints, const SolverParams& params) {
  const std::size_t s = w.rows();
  const std::size_t n = palette.size();
  if (layers.size() != s * n) throw InvalidArgument("dimension mismatch: layer vector");
  double manifold = 0.0;
  std::vector<double> tmp(s);
  for (std::size_t j = 0; j < n; ++j) {
    auto lj = layers.subspan(j * s, s);
    w.multiply(lj, tmp);
    for (std::size_t i = 0; i < s; ++i) manifold += (lj[i] - tmp[i]) * (lj[i] - tmp[i]);
  }
  double recon = 0.0;
  double unity = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    Rgb sum{0.0, 0.0, 0.0};
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = layers[j * s + i];
      for (int d = 0; d < 3; ++d) sum[d] += palette[j][d] * v;
      total += v;
    }
    recon += squared_distance(sum, colors[i]);
    unity += (total - 1.0) * (total - 1.0);
  }
  double explicit_term = 0.0;
  for (const Constraint& c : constraints.entries()) {
    const double weight = c.source == ConstraintSource::suppression ? params.lambda_n : params.lambda_e;
    const double d = layers[static_cast<std::size_t>(c.layer) * s + c.superpixel] - c.target;
    explicit_term += weight * d * d;
  }
  return params.lambda_m * manifold + params.lambda_r * recon + params.lambda_u * unity + explicit_term;
}

inline constexpr double kNegativeReportThreshold = -0.05;

struct SuppressionIteration {
  std::size_t negative_count = 0;        // entries < 0
  std::size_t strongly_negative = 0;     // entries < -0.05
  double negative_fraction = 0.0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> added; // (superpixel, layer) suppressed next
  CgResult cg;
};

struct SolveResult {
  SuperpixelLayers layers;
  std::vector<SuppressionIteration> iterations;
  ConstraintSet constraints; // final set, including suppression entries
  bool converged = true;
  double relative_residual = 0.0;
};

/// Minimizes the layer energy with iterative negative suppression. Every
/// solve after the first adds a zero target (weight lambda_n) for each entry
/// that came out strictly negative; suppression entries accumulate. The final
/// values are not clamped.
inline SolveResult solve_layers(const SparseRowMatrix& w, const Palette& palette, std::span<const Rgb> colors,
                                const ConstraintSet& constraints, const SolverParams& params) {
  params.validate();
  detail::check_system_inputs(w, palette, colors, constraints);
  const std::size_t s = w.rows();
  const std::size_t n = palette.size();
  const std::size_t max_iters = params.cg_max_iters ? params.cg_max_iters : 10 * s * n;

  SolveResult result;
  result.constraints = constraints;
  result.layers.superpixels = s;
  result.layers.layers = n;
  result.layers.values.assign(s * n, 0.0);
  std::vector<double>& x = result.layers.values;

  for (int it = 0; it < params.suppression_iters; ++it) {
    const NormalOperator op(w, palette, result.constraints, params);
    const std::vector<double> b = normal_rhs(palette, colors, result.constraints, params);
    const std::vector<double> blocks = op.block_inverses();
    auto apply = [&](std::span<const double> in, std::span<double> out) { op.apply(in, out); };
    auto precondition = [&](std::span<const double> r, std::span<double> z) {
      for (std::size_t i = 0; i < s; ++i) {
        const double* blk = &blocks[i * n * n];
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t k = 0; k < n; ++k) acc += blk[j * n + k] * r[k * s + i];
          z[j * s + i] = acc;
        }
      }
    };
    SuppressionIteration report;
    report.cg = conjugate_gradient(apply, precondition, b, x, params.cg_tolerance, max_iters);
    result.converged = result.converged && report.cg.converged;
    result.relative_residual = report.cg.relative_residual;
    for (std::size_t idx = 0; idx < s * n; ++idx) {
      if (x[idx] < 0.0) ++report.negative_count;
      if (x[idx] < kNegativeReportThreshold) ++report.strongly_negative;
    }
    report.negative_fraction = s * n != 0 ? static_cast<double>(report.negative_count) / static_cast<double>(s * n) : 0.0;
    if (it + 1 < params.suppression_iters) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < s; ++i) {
          if (!(x[j * s + i] < 0.0)) continue;
          const auto sp = static_cast<std::uint32_t>(i);
          const auto layer = static_cast<std::uint32_t>(j);
          if (result.constraints.contains(sp, layer, ConstraintSource::suppression)) continue;
          result.constraints.add(sp, layer, 0.0, ConstraintSource::suppression);
          report.added.emplace_back(sp, layer);
        }
      }
    }
    result.iterations.push_back(std::move(report));
  }
  return result;
}

inline SolveResult solve_layers(const Segmentation& seg, const SparseRowMatrix& w, const Palette& palette,
                                const ConstraintSet& constraints, const SolverParams& params) {
  const std::vector<Rgb> colors = seg.mean_colors();
  return solve_layers(w, palette, colors, constraints, params);
}

} // namespace chromalayer
