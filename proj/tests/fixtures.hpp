#pragma once

// Procedural test inputs. All generators are deterministic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "chromalayer/palette.hpp"
#include "chromalayer/pixel_volume.hpp"

namespace fixtures {

using chromalayer::Palette;
using chromalayer::PixelVolume;
using chromalayer::Rgb;

inline float quantize(double v) {
  return static_cast<float>(std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0);
}

inline PixelVolume filled(std::size_t w, std::size_t h, const Rgb& c, std::size_t frames = 1) {
  PixelVolume v(w, h, frames);
  for (std::size_t p = 0; p < v.pixel_count(); ++p) v.set_color(p, c);
  return v;
}

/// Four well separated colors; every pair is more than 1.0 apart, which is
/// farther than any two spatial feature positions can be.
inline Palette indicator_palette(std::size_t n = 4) {
  Palette p;
  const std::vector<Rgb> all{{0.9, 0.1, 0.1}, {0.1, 0.85, 0.2}, {0.1, 0.15, 0.9}, {0.95, 0.95, 0.9}};
  p.colors.assign(all.begin(), all.begin() + static_cast<long>(std::min<std::size_t>(n, all.size())));
  return p;
}

/// A grid x grid board of block-pixel squares whose colors cycle through the
/// palette in a Latin pattern.
inline PixelVolume block_board(const Palette& palette, std::size_t block, std::size_t grid) {
  const std::size_t side = block * grid;
  PixelVolume v(side, side);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t cell = (x / block + y / block) % palette.size();
      v.set_color(v.index(x, y), palette[cell]);
    }
  }
  return v;
}

/// Flat bands of each primary joined by narrow linear ramps.
inline PixelVolume band_blend(const std::vector<Rgb>& primaries, std::size_t band, std::size_t ramp,
                              std::size_t height) {
  const std::size_t k = primaries.size();
  const std::size_t width = k * band + (k - 1) * ramp;
  PixelVolume v(width, height);
  for (std::size_t x = 0; x < width; ++x) {
    const std::size_t seg = x / (band + ramp);
    const std::size_t off = x % (band + ramp);
    Rgb c = primaries[std::min(seg, k - 1)];
    if (off >= band && seg + 1 < k) {
      const double a = static_cast<double>(off - band + 1) / static_cast<double>(ramp + 1);
      for (int d = 0; d < 3; ++d) c[d] = (1.0 - a) * primaries[seg][d] + a * primaries[seg + 1][d];
    }
    for (std::size_t y = 0; y < height; ++y) v.set_color(v.index(x, y), c);
  }
  return v;
}

/// Palette mixtures, one color per weight vector.
inline std::vector<Rgb> mix(const Palette& palette, const std::vector<std::vector<double>>& weights) {
  std::vector<Rgb> out;
  for (const auto& w : weights) {
    Rgb c{0.0, 0.0, 0.0};
    for (std::size_t j = 0; j < palette.size(); ++j) {
      for (int d = 0; d < 3; ++d) c[d] += w[j] * palette[j][d];
    }
    out.push_back(c);
  }
  return out;
}

namespace detail {

struct Scene {
  std::size_t w;
  std::size_t h;
  std::vector<double> rgb;

  void blend(std::size_t x, std::size_t y, const Rgb& c, double alpha) {
    double* p = &rgb[3 * (y * w + x)];
    for (int d = 0; d < 3; ++d) p[d] = (1.0 - alpha) * p[d] + alpha * c[d];
  }
};

// Fraction of a pixel covered by a shape, from a 4x4 supersample.
template <typename Inside>
double coverage(std::size_t x, std::size_t y, Inside&& inside) {
  int hits = 0;
  for (int sy = 0; sy < 4; ++sy) {
    for (int sx = 0; sx < 4; ++sx) {
      if (inside(static_cast<double>(x) + (sx + 0.5) / 4.0, static_cast<double>(y) + (sy + 0.5) / 4.0)) ++hits;
    }
  }
  return hits / 16.0;
}

inline Rgb jitter(const Rgb& c, std::mt19937_64& rng, double amount) {
  std::uniform_real_distribution<double> u(-amount, amount);
  Rgb out = c;
  for (double& v : out) v = std::clamp(v + u(rng), 0.0, 1.0);
  return out;
}

} // namespace detail

inline constexpr std::size_t kDeskCorpusSize = 10;

/// One image of the pinned desk corpus: a lit wall over a desk top, with
/// books, a mug, a lamp shade and paper sheets, anti-aliased edges, soft
/// shadows and mild sensor noise.
inline PixelVolume desk_scene(std::size_t index, std::size_t width = 320, std::size_t height = 240) {
  std::mt19937_64 rng(0x5eed0000ull + index);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  detail::Scene sc{width, height, std::vector<double>(width * height * 3)};
  const double wd = static_cast<double>(width);
  const double ht = static_cast<double>(height);

  const Rgb wall = detail::jitter({0.78, 0.74, 0.66}, rng, 0.12);
  const Rgb desk = detail::jitter({0.55, 0.36, 0.22}, rng, 0.12);
  const double horizon = ht * (0.45 + 0.15 * u(rng));
  const double light_x = wd * u(rng);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = static_cast<double>(x);
      const double fy = static_cast<double>(y);
      const double falloff = 1.0 - 0.35 * std::abs(fx - light_x) / wd;
      Rgb c{};
      if (fy < horizon) {
        for (int d = 0; d < 3; ++d) c[d] = wall[d] * (0.75 + 0.25 * falloff) * (0.9 + 0.1 * fy / horizon);
      } else {
        const double grain = 0.03 * std::sin(fx * 0.11 + 3.0 * std::sin(fy * 0.05));
        for (int d = 0; d < 3; ++d) c[d] = desk[d] * (0.8 + 0.2 * falloff) + grain;
      }
      double* p = &sc.rgb[3 * (y * width + x)];
      for (int d = 0; d < 3; ++d) p[d] = c[d];
    }
  }

  const std::vector<Rgb> book_colors{{0.75, 0.12, 0.10}, {0.12, 0.30, 0.65}, {0.15, 0.55, 0.25},
                                     {0.90, 0.75, 0.15}, {0.30, 0.20, 0.45}, {0.10, 0.10, 0.12}};
  auto shadow = [&](double x0, double x1, double y0, double y1) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double fx = static_cast<double>(x);
        const double fy = static_cast<double>(y);
        const double dx = std::max({x0 - fx, 0.0, fx - x1});
        const double dy = std::max({y0 - fy, 0.0, fy - y1});
        const double d = std::sqrt(dx * dx + dy * dy);
        if (d < 12.0) sc.blend(x, y, {0.0, 0.0, 0.0}, 0.25 * (1.0 - d / 12.0));
      }
    }
  };
  auto rect = [&](double x0, double x1, double y0, double y1, const Rgb& c, bool shade) {
    for (std::size_t y = static_cast<std::size_t>(std::max(0.0, y0 - 1)); y < height && y <= y1 + 1; ++y) {
      for (std::size_t x = static_cast<std::size_t>(std::max(0.0, x0 - 1)); x < width && x <= x1 + 1; ++x) {
        const double a = detail::coverage(x, y, [&](double px, double py) {
          return px >= x0 && px <= x1 && py >= y0 && py <= y1;
        });
        if (a <= 0.0) continue;
        Rgb cc = c;
        if (shade) {
          const double s = 0.85 + 0.15 * (static_cast<double>(x) - x0) / std::max(1.0, x1 - x0);
          for (double& v : cc) v *= s;
        }
        sc.blend(x, y, cc, a);
      }
    }
  };
  auto ellipse = [&](double cx, double cy, double rx, double ry, const Rgb& c) {
    for (std::size_t y = static_cast<std::size_t>(std::max(0.0, cy - ry - 1)); y < height && y <= cy + ry + 1; ++y) {
      for (std::size_t x = static_cast<std::size_t>(std::max(0.0, cx - rx - 1)); x < width && x <= cx + rx + 1; ++x) {
        const double a = detail::coverage(x, y, [&](double px, double py) {
          const double ex = (px - cx) / rx;
          const double ey = (py - cy) / ry;
          return ex * ex + ey * ey <= 1.0;
        });
        if (a <= 0.0) continue;
        const double light = 0.75 + 0.25 * std::clamp((cx - static_cast<double>(x)) / rx, -1.0, 1.0);
        Rgb cc{c[0] * light, c[1] * light, c[2] * light};
        sc.blend(x, y, cc, a);
      }
    }
  };

  // paper sheets on the desk
  const std::size_t sheets = 1 + index % 2;
  for (std::size_t s = 0; s < sheets; ++s) {
    const double x0 = wd * (0.05 + 0.5 * u(rng));
    const double y0 = horizon + (ht - horizon) * (0.3 + 0.3 * u(rng));
    rect(x0, x0 + wd * 0.22, y0, std::min(ht - 2.0, y0 + ht * 0.18), detail::jitter({0.95, 0.95, 0.93}, rng, 0.03),
         false);
  }
  // a stack of books standing on the desk line
  const std::size_t books = 2 + index % 4;
  double bx = wd * (0.05 + 0.4 * u(rng));
  for (std::size_t b = 0; b < books; ++b) {
    const double bw = wd * (0.03 + 0.03 * u(rng));
    const double bh = ht * (0.18 + 0.15 * u(rng));
    const Rgb c = detail::jitter(book_colors[(index + b) % book_colors.size()], rng, 0.05);
    shadow(bx + 4, bx + bw + 6, horizon + 8 - bh, horizon + 8);
    rect(bx, bx + bw, horizon + 6 - bh, horizon + 6, c, true);
    bx += bw + 1.0;
  }
  // a mug
  const double mx = wd * (0.55 + 0.3 * u(rng));
  const double my = horizon + (ht - horizon) * 0.35;
  const Rgb mug = detail::jitter(book_colors[(index + 3) % book_colors.size()], rng, 0.1);
  shadow(mx - 14, mx + 20, my - 10, my + 26);
  rect(mx - 16, mx + 16, my - 22, my + 18, mug, true);
  ellipse(mx, my - 22, 16, 5, {mug[0] * 0.5, mug[1] * 0.5, mug[2] * 0.5});
  // a lamp shade against the wall
  if (index % 3 != 2) {
    const double lx = wd * (0.15 + 0.7 * u(rng));
    ellipse(lx, horizon * 0.45, wd * 0.07, ht * 0.09, detail::jitter({0.98, 0.88, 0.55}, rng, 0.05));
  }

  std::normal_distribution<double> noise(0.0, 0.006);
  std::vector<float> data(width * height * 3);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = quantize(sc.rgb[i] + noise(rng));
  return PixelVolume(width, height, 1, std::move(data));
}

/// Smooth moving sinusoid color field, quantized to 8 bits.
inline PixelVolume sinusoid_video(std::size_t width, std::size_t height, std::size_t frames) {
  std::vector<float> data(width * height * frames * 3);
  const double wd = static_cast<double>(width);
  const double ht = static_cast<double>(height);
  std::size_t i = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    const double ft = static_cast<double>(t);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double uu = (static_cast<double>(x) + 3.0 * ft) / wd;
        const double vv = static_cast<double>(y) / ht;
        data[i++] = quantize(0.5 + 0.4 * std::sin(6.0 * uu + 2.0 * vv));
        data[i++] = quantize(0.5 + 0.4 * std::cos(4.0 * vv - 3.0 * uu + 0.05 * ft));
        data[i++] = quantize(0.5 + 0.3 * std::sin(5.0 * (uu + vv)));
      }
    }
  }
  return PixelVolume(width, height, frames, std::move(data));
}

/// A fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("chromalayer_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace fixtures
