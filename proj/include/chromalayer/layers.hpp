#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "chromalayer/error.hpp"
#include "chromalayer/image_io.hpp"
#include "chromalayer/palette.hpp"
#include "chromalayer/pixel_volume.hpp"
#include "chromalayer/solver.hpp"
#include "chromalayer/sparse.hpp"

namespace chromalayer {

/// Per-pixel weight planes X_j, one per palette color. Weights are stored
/// unclamped; clamping happens only when composing colors.
struct LayerSet {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t frames = 0;
  Palette palette;
  std::vector<std::vector<float>> planes;

  std::size_t pixel_count() const { return width * height * frames; }
  std::size_t layer_count() const { return planes.size(); }

  std::span<const float> plane_frame(std::size_t j, std::size_t t) const {
    return std::span<const float>(planes[j]).subspan(t * width * height, width * height);
  }

  void validate() const {
    if (planes.size() != palette.size()) throw InvalidArgument("plane count does not match palette size");
    for (const auto& p : planes) {
      if (p.size() != pixel_count()) throw InvalidArgument("plane length does not match dimensions");
      for (float v : p) {
        if (!std::isfinite(v)) throw InvalidArgument("non-finite layer weight");
      }
    }
  }

  friend bool operator==(const LayerSet&, const LayerSet&) = default;
};

/// X_j = Q L_j for every layer.
inline std::vector<std::vector<float>> project(const SparseRowMatrix& q, const SuperpixelLayers& layers) {
  if (q.cols() != layers.superpixels) {
    throw InvalidArgument("dimension mismatch: Q has " + std::to_string(q.cols()) + " columns, layers have " +
                          std::to_string(layers.superpixels) + " superpixels");
  }
  std::vector<std::vector<float>> planes(layers.layers, std::vector<float>(q.rows()));
  for (std::size_t p = 0; p < q.rows(); ++p) {
    auto cols = q.row_columns(p);
    auto vals = q.row_values(p);
    for (std::size_t j = 0; j < layers.layers; ++j) {
      const double* lj = layers.values.data() + j * layers.superpixels;
      double acc = 0.0;
      for (std::size_t k = 0; k < cols.size(); ++k) acc += vals[k] * lj[cols[k]];
      planes[j][p] = static_cast<float>(acc);
    }
  }
  return planes;
}

namespace detail {
inline void check_palette_matches(const LayerSet& layers, const Palette& palette) {
  if (palette.size() != layers.layer_count()) {
    throw InvalidArgument("palette size " + std::to_string(palette.size()) + " does not match layer count " +
                          std::to_string(layers.layer_count()));
  }
}
} // namespace detail

/// Unclamped sum_j X_j[p] * c_j for frame t, written as interleaved RGB.
inline void compose_frame_linear(const LayerSet& layers, const Palette& palette, std::size_t t, std::span<float> out) {
  detail::check_palette_matches(layers, palette);
  const std::size_t n = layers.layer_count();
  const std::size_t count = layers.width * layers.height;
  if (out.size() != count * 3) throw InvalidArgument("output buffer size mismatch");
  std::vector<const float*> planes(n);
  std::vector<std::array<float, 3>> colors(n);
  for (std::size_t j = 0; j < n; ++j) {
    planes[j] = layers.planes[j].data() + t * count;
    for (int k = 0; k < 3; ++k) colors[j][k] = static_cast<float>(palette[j][k]);
  }
  float* dst = out.data();
  for (std::size_t p = 0; p < count; ++p) {
    float r = 0.0f, g = 0.0f, b = 0.0f;
    for (std::size_t j = 0; j < n; ++j) {
      const float x = planes[j][p];
      r += x * colors[j][0];
      g += x * colors[j][1];
      b += x * colors[j][2];
    }
    dst[3 * p] = r;
    dst[3 * p + 1] = g;
    dst[3 * p + 2] = b;
  }
}

/// Clamped composite of frame t into `out` (interleaved RGB, width*height*3).
inline void compose_frame(const LayerSet& layers, const Palette& palette, std::size_t t, std::span<float> out) {
  compose_frame_linear(layers, palette, t, out);
  for (float& v : out) v = std::clamp(v, 0.0f, 1.0f);
}

/// Recolors (or, with the original palette, reconstructs) every frame.
inline PixelVolume compose(const LayerSet& layers, const Palette& palette) {
  detail::check_palette_matches(layers, palette);
  const std::size_t frame_floats = layers.width * layers.height * 3;
  std::vector<float> data(frame_floats * layers.frames);
  for (std::size_t t = 0; t < layers.frames; ++t) {
    compose_frame(layers, palette, t, std::span<float>(data).subspan(t * frame_floats, frame_floats));
  }
  return PixelVolume(layers.width, layers.height, layers.frames, std::move(data));
}

inline PixelVolume compose(const LayerSet& layers) { return compose(layers, layers.palette); }

/// Root-mean-square per-channel difference between two equally sized volumes.
inline double rmse(const PixelVolume& a, const PixelVolume& b) {
  if (a.width() != b.width() || a.height() != b.height() || a.frames() != b.frames()) {
    throw InvalidArgument("rmse of volumes with different dimensions");
  }
  auto da = a.data();
  auto db = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = static_cast<double>(da[i]) - static_cast<double>(db[i]);
    s += d * d;
  }
  return da.empty() ? 0.0 : std::sqrt(s / static_cast<double>(da.size()));
}

struct GaussianKernel {
  double sigma = 1.0;
};
/// Fixed 3x3 emboss [[-2,-1,0],[-1,1,1],[0,1,2]] plus a 0.5 bias.
struct EmbossKernel {};
/// Trailing blur: each output averages `length` samples stepping back along
/// the direction `angle_degrees` (0 = +x, 90 = +y).
struct MotionBlurKernel {
  double length = 5.0;
  double angle_degrees = 0.0;
};

using FilterKernel = std::variant<GaussianKernel, EmbossKernel, MotionBlurKernel>;

namespace detail {

struct PlaneView {
  const float* data;
  std::size_t width;
  std::size_t height;

  float at(long long x, long long y) const {
    x = std::clamp<long long>(x, 0, static_cast<long long>(width) - 1);
    y = std::clamp<long long>(y, 0, static_cast<long long>(height) - 1);
    return data[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)];
  }

  float bilinear(double x, double y) const {
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const double ax = x - fx;
    const double ay = y - fy;
    const auto ix = static_cast<long long>(fx);
    const auto iy = static_cast<long long>(fy);
    const double top = (1.0 - ax) * at(ix, iy) + ax * at(ix + 1, iy);
    const double bottom = (1.0 - ax) * at(ix, iy + 1) + ax * at(ix + 1, iy + 1);
    return static_cast<float>((1.0 - ay) * top + ay * bottom);
  }
};

inline void gaussian_filter(const PlaneView& in, float* out, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    taps[k + radius] = std::exp(-0.5 * (k * k) / (sigma * sigma));
    total += taps[k + radius];
  }
  for (double& t : taps) t /= total;
  const std::size_t w = in.width;
  const std::size_t h = in.height;
  std::vector<float> tmp(w * h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * in.at(static_cast<long long>(x) + k, y);
      tmp[y * w + x] = static_cast<float>(acc);
    }
  }
  const PlaneView mid{tmp.data(), w, h};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * mid.at(x, static_cast<long long>(y) + k);
      out[y * w + x] = static_cast<float>(acc);
    }
  }
}

inline void emboss_filter(const PlaneView& in, float* out) {
  static constexpr double kernel[3][3] = {{-2, -1, 0}, {-1, 1, 1}, {0, 1, 2}};
  for (std::size_t y = 0; y < in.height; ++y) {
    for (std::size_t x = 0; x < in.width; ++x) {
      double acc = 0.5;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          acc += kernel[dy + 1][dx + 1] * in.at(static_cast<long long>(x) + dx, static_cast<long long>(y) + dy);
        }
      }
      out[y * in.width + x] = static_cast<float>(acc);
    }
  }
}

inline void motion_blur_filter(const PlaneView& in, float* out, double length, double angle_degrees) {
  const long samples = std::max(1L, std::lround(length));
  const double theta = angle_degrees * std::numbers::pi / 180.0;
  double dx = std::cos(theta);
  double dy = std::sin(theta);
  // snap axis-aligned directions so integer offsets stay exact
  if (std::abs(dx) < 1e-12) dx = 0.0;
  if (std::abs(dy) < 1e-12) dy = 0.0;
  for (std::size_t y = 0; y < in.height; ++y) {
    for (std::size_t x = 0; x < in.width; ++x) {
      double acc = 0.0;
      for (long k = 0; k < samples; ++k) {
        acc += in.bilinear(static_cast<double>(x) - k * dx, static_cast<double>(y) - k * dy);
      }
      out[y * in.width + x] = static_cast<float>(acc / static_cast<double>(samples));
    }
  }
}

} // namespace detail

/// Returns a copy of `layers` with plane `layer` convolved frame by frame
/// (edge-clamped). Other planes are untouched.
inline LayerSet filter_layer(const LayerSet& layers, std::size_t layer, const FilterKernel& kernel) {
  if (layer >= layers.layer_count()) {
    throw InvalidArgument("invalid layer id " + std::to_string(layer) + " (have " +
                          std::to_string(layers.layer_count()) + ")");
  }
  if (const auto* g = std::get_if<GaussianKernel>(&kernel); g && !(g->sigma > 0.0)) {
    throw InvalidArgument("gaussian sigma must be > 0");
  }
  if (const auto* m = std::get_if<MotionBlurKernel>(&kernel); m && !(m->length > 0.0)) {
    throw InvalidArgument("motion blur length must be > 0");
  }
  LayerSet out = layers;
  const std::size_t count = layers.width * layers.height;
  for (std::size_t t = 0; t < layers.frames; ++t) {
    const detail::PlaneView in{layers.planes[layer].data() + t * count, layers.width, layers.height};
    float* dst = out.planes[layer].data() + t * count;
    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, GaussianKernel>) {
            detail::gaussian_filter(in, dst, k.sigma);
          } else if constexpr (std::is_same_v<K, EmbossKernel>) {
            detail::emboss_filter(in, dst);
          } else {
            detail::motion_blur_filter(in, dst, k.length, k.angle_degrees);
          }
        },
        kernel);
  }
  return out;
}

// ---------------------------------------------------------------------------
// .lbld container: "LBLD", u32 version, u32 width/height/frames/N,
// N x 3 float32 palette, N planes of P float32, u32 CRC32 of all prior bytes.
// All integers and floats little-endian.

inline constexpr std::uint32_t kLayerFileVersion = 1;

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<unsigned char>((v >> (8 * k)) & 0xffu));
}

inline void put_f32(std::vector<unsigned char>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t size) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

} // namespace detail

inline std::vector<unsigned char> serialize_layers(const LayerSet& layers) {
  layers.validate();
  const std::size_t n = layers.layer_count();
  std::vector<unsigned char> out;
  out.reserve(28 + n * 12 + n * layers.pixel_count() * 4);
  out.insert(out.end(), {'L', 'B', 'L', 'D'});
  detail::put_u32(out, kLayerFileVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(layers.width));
  detail::put_u32(out, static_cast<std::uint32_t>(layers.height));
  detail::put_u32(out, static_cast<std::uint32_t>(layers.frames));
  detail::put_u32(out, static_cast<std::uint32_t>(n));
  for (const Rgb& c : layers.palette.colors) {
    for (double v : c) detail::put_f32(out, static_cast<float>(v));
  }
  for (const auto& plane : layers.planes) {
    for (float v : plane) detail::put_f32(out, v);
  }
  detail::put_u32(out, detail::crc32_of(out.data(), out.size()));
  return out;
}

inline LayerSet deserialize_layers(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "LBLD", 4) != 0) throw FormatError("bad magic");
  if (bytes.size() < 8) throw FormatError("truncated payload");
  if (detail::get_u32(bytes.data() + 4) != kLayerFileVersion) {
    throw FormatError("version mismatch: expected " + std::to_string(kLayerFileVersion) + ", got " +
                      std::to_string(detail::get_u32(bytes.data() + 4)));
  }
  constexpr std::size_t header = 24;
  if (bytes.size() < header) throw FormatError("truncated payload");
  LayerSet layers;
  layers.width = detail::get_u32(bytes.data() + 8);
  layers.height = detail::get_u32(bytes.data() + 12);
  layers.frames = detail::get_u32(bytes.data() + 16);
  const std::size_t n = detail::get_u32(bytes.data() + 20);
  const std::size_t p = layers.pixel_count();
  const std::size_t expected = header + n * 12 + n * p * 4 + 4;
  if (bytes.size() < expected) throw FormatError("truncated payload");
  if (bytes.size() > expected) throw FormatError("unexpected trailing bytes");
  const std::uint32_t stored = detail::get_u32(bytes.data() + expected - 4);
  if (detail::crc32_of(bytes.data(), expected - 4) != stored) throw FormatError("checksum failure");

  const unsigned char* cur = bytes.data() + header;
  for (std::size_t j = 0; j < n; ++j) {
    Rgb c{};
    for (int k = 0; k < 3; ++k, cur += 4) c[k] = detail::get_f32(cur);
    layers.palette.colors.push_back(c);
  }
  layers.planes.assign(n, std::vector<float>(p));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < p; ++i, cur += 4) layers.planes[j][i] = detail::get_f32(cur);
  }
  return layers;
}

inline void save_layers(const LayerSet& layers, const std::filesystem::path& path) {
  detail::write_file_bytes(path, serialize_layers(layers));
}

inline LayerSet load_layers(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = detail::read_file_bytes(path);
  return deserialize_layers(bytes);
}

} // namespace chromalayer
