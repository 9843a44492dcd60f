#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "chromalayer/error.hpp"

namespace chromalayer {

/// RGB triplet, channels nominally in [0,1].
using Rgb = std::array<double, 3>;

inline double squared_distance(const Rgb& a, const Rgb& b) {
  const double dr = a[0] - b[0];
  const double dg = a[1] - b[1];
  const double db = a[2] - b[2];
  return dr * dr + dg * dg + db * db;
}

inline double distance(const Rgb& a, const Rgb& b) { return std::sqrt(squared_distance(a, b)); }

struct PixelCoord {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t t = 0;
};

/// Width x height x frames RGB volume stored as interleaved float triplets,
/// frame-major then row-major. A still image has a single frame.
///
/// Channels are clamped into [0,1] whenever values enter through the public
/// constructors or setters, so every volume satisfies that range.
class PixelVolume {
public:
  PixelVolume() = default;

  PixelVolume(std::size_t width, std::size_t height, std::size_t frames = 1)
      : width_(width), height_(height), frames_(frames), data_(width * height * frames * 3, 0.0f) {}

  PixelVolume(std::size_t width, std::size_t height, std::size_t frames, std::vector<float> data)
      : width_(width), height_(height), frames_(frames), data_(std::move(data)) {
    if (data_.size() != width_ * height_ * frames_ * 3) {
      throw InvalidArgument("pixel data length " + std::to_string(data_.size()) +
                            " does not match dimensions");
    }
    for (float& v : data_) v = clamp_channel(v);
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t frames() const { return frames_; }
  std::size_t frame_pixels() const { return width_ * height_; }
  std::size_t pixel_count() const { return width_ * height_ * frames_; }
  bool empty() const { return pixel_count() == 0; }

  std::size_t index(std::size_t x, std::size_t y, std::size_t t = 0) const {
    return (t * height_ + y) * width_ + x;
  }
  std::size_t index(const PixelCoord& c) const { return index(c.x, c.y, c.t); }

  PixelCoord coord(std::size_t p) const {
    PixelCoord c;
    c.x = p % width_;
    c.y = (p / width_) % height_;
    c.t = p / (width_ * height_);
    return c;
  }

  bool contains(const PixelCoord& c) const { return c.x < width_ && c.y < height_ && c.t < frames_; }

  Rgb color(std::size_t p) const {
    const float* px = &data_[p * 3];
    return {px[0], px[1], px[2]};
  }

  void set_color(std::size_t p, const Rgb& c) {
    float* px = &data_[p * 3];
    for (int k = 0; k < 3; ++k) px[k] = clamp_channel(static_cast<float>(c[k]));
  }

  std::span<const float> data() const { return data_; }

  /// One frame as a contiguous span of interleaved RGB floats.
  std::span<const float> frame(std::size_t t) const {
    return std::span<const float>(data_).subspan(t * frame_pixels() * 3, frame_pixels() * 3);
  }

  /// Copies a single frame into a standalone still.
  PixelVolume frame_volume(std::size_t t) const {
    auto f = frame(t);
    return PixelVolume(width_, height_, 1, std::vector<float>(f.begin(), f.end()));
  }

  friend bool operator==(const PixelVolume&, const PixelVolume&) = default;

private:
  static float clamp_channel(float v) {
    if (!(v >= 0.0f)) return 0.0f; // also maps NaN to 0
    return v > 1.0f ? 1.0f : v;
  }

  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::size_t frames_ = 0;
  std::vector<float> data_;
};

/// Concatenates equally sized stills into one multi-frame volume.
inline PixelVolume stack_frames(std::span<const PixelVolume> stills) {
  if (stills.empty()) throw InvalidArgument("zero frames");
  const std::size_t w = stills.front().width();
  const std::size_t h = stills.front().height();
  std::vector<float> data;
  data.reserve(w * h * 3 * stills.size());
  std::size_t frames = 0;
  for (const PixelVolume& s : stills) {
    if (s.width() != w || s.height() != h) {
      throw FormatError("frames of mismatched dimensions: " + std::to_string(w) + "x" + std::to_string(h) +
                        " vs " + std::to_string(s.width()) + "x" + std::to_string(s.height()));
    }
    data.insert(data.end(), s.data().begin(), s.data().end());
    frames += s.frames();
  }
  return PixelVolume(w, h, frames, std::move(data));
}

} // namespace chromalayer
