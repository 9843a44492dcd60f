#pragma once

// PNG (8/16-bit) and binary PPM stream I/O for PixelVolume.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "chromalayer/error.hpp"
#include "chromalayer/pixel_volume.hpp"

namespace chromalayer {

enum class VolumeKind { image, image_sequence, raw_video };

inline VolumeKind parse_volume_kind(const std::string& s) {
  if (s == "image") return VolumeKind::image;
  if (s == "image-sequence" || s == "sequence") return VolumeKind::image_sequence;
  if (s == "raw-video") return VolumeKind::raw_video;
  throw InvalidArgument("unknown input kind '" + s + "' (expected image, image-sequence or raw-video)");
}

namespace detail {

struct PngReadState {
  const unsigned char* data = nullptr;
  std::size_t size = 0;
  std::size_t offset = 0;
  char error[256] = {};
};

inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* err = static_cast<char*>(png_get_error_ptr(png));
  std::snprintf(err, 256, "%s", msg);
  png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

inline void png_read_fn(png_structp png, png_bytep out, png_size_t count) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->offset + count > st->size) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, st->data + st->offset, count);
  st->offset += count;
}

struct DecodedPng {
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int bit_depth = 8;
  std::vector<unsigned char> rows; // RGB, 1 or 2 bytes per channel (big-endian for 16-bit)
};

// No objects with non-trivial destructors are constructed inside the setjmp
// frame; `out` and `st` live in the caller.
inline bool decode_png_impl(PngReadState& st, DecodedPng& out) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, st.error, png_error_fn, png_warning_fn);
  if (!png) {
    std::snprintf(st.error, sizeof st.error, "out of memory");
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    std::snprintf(st.error, sizeof st.error, "out of memory");
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, &st, png_read_fn);
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.bit_depth = depth;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  const std::size_t expected = static_cast<std::size_t>(out.width) * 3 * (depth == 16 ? 2 : 1);
  if (rowbytes != expected) png_error(png, "unsupported PNG channel layout");
  out.rows.resize(rowbytes * out.height);
  for (png_uint_32 y = 0; y < out.height; ++y) {
    png_read_row(png, out.rows.data() + y * rowbytes, nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

inline void png_write_fn(png_structp png, png_bytep data, png_size_t length) {
  auto* buf = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  buf->insert(buf->end(), data, data + length);
}

inline void png_flush_fn(png_structp) {}

inline bool encode_png_impl(const unsigned char* pixels, png_uint_32 width, png_uint_32 height, int channels,
                            std::vector<unsigned char>& out, char* error) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, error, png_error_fn, png_warning_fn);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, &out, png_write_fn, png_flush_fn);
  png_set_IHDR(png, info, width, height, 8, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 3);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  for (png_uint_32 y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels + y * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read file: " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline unsigned char quantize8(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

} // namespace detail

/// Decodes an in-memory PNG. 16-bit channels scale by 1/65535, 8-bit by 1/255.
inline PixelVolume decode_png(const unsigned char* bytes, std::size_t size) {
  detail::PngReadState st;
  st.data = bytes;
  st.size = size;
  detail::DecodedPng png;
  if (size < 8 || png_sig_cmp(bytes, 0, 8) != 0) throw FormatError("not a PNG file");
  if (!detail::decode_png_impl(st, png)) throw FormatError(std::string("PNG decode failed: ") + st.error);
  const std::size_t n = static_cast<std::size_t>(png.width) * png.height * 3;
  std::vector<float> data(n);
  if (png.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned v = (unsigned(png.rows[2 * i]) << 8) | png.rows[2 * i + 1];
      data[i] = static_cast<float>(static_cast<double>(v) / 65535.0);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(png.rows[i] / 255.0);
  }
  return PixelVolume(png.width, png.height, 1, std::move(data));
}

inline PixelVolume decode_png(const std::vector<unsigned char>& bytes) { return decode_png(bytes.data(), bytes.size()); }

/// Encodes frame `t` as an 8-bit RGB PNG with round-to-nearest quantization.
inline std::vector<unsigned char> encode_png(const PixelVolume& volume, std::size_t t = 0) {
  auto frame = volume.frame(t);
  std::vector<unsigned char> pixels(frame.size());
  std::transform(frame.begin(), frame.end(), pixels.begin(), detail::quantize8);
  std::vector<unsigned char> out;
  char error[256] = {};
  if (!detail::encode_png_impl(pixels.data(), static_cast<png_uint_32>(volume.width()),
                               static_cast<png_uint_32>(volume.height()), 3, out, error)) {
    throw FormatError(std::string("PNG encode failed: ") + error);
  }
  return out;
}

/// Encodes a single-channel plane as 8-bit grayscale, clamping to [0,1].
inline std::vector<unsigned char> encode_gray_png(std::span<const float> plane, std::size_t width,
                                                  std::size_t height) {
  if (plane.size() != width * height) throw InvalidArgument("plane size does not match dimensions");
  std::vector<unsigned char> pixels(plane.size());
  std::transform(plane.begin(), plane.end(), pixels.begin(), detail::quantize8);
  std::vector<unsigned char> out;
  char error[256] = {};
  if (!detail::encode_png_impl(pixels.data(), static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 1,
                               out, error)) {
    throw FormatError(std::string("PNG encode failed: ") + error);
  }
  return out;
}

/// Parses a stream of concatenated binary PPM (P6) frames, e.g. the output of
/// `ffmpeg -i clip.mp4 -f image2pipe -vcodec ppm -`.
inline PixelVolume decode_ppm_stream(const std::vector<unsigned char>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::size_t {
    skip_space();
    std::size_t v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
    }
    if (!any) throw FormatError("malformed PPM header");
    return v;
  };
  std::vector<PixelVolume> frames;
  for (;;) {
    skip_space();
    if (pos >= bytes.size()) break;
    if (pos + 2 > bytes.size() || bytes[pos] != 'P' || bytes[pos + 1] != '6') throw FormatError("expected P6 frame");
    pos += 2;
    const std::size_t w = read_int();
    const std::size_t h = read_int();
    const std::size_t maxval = read_int();
    if (maxval == 0 || maxval > 65535) throw FormatError("bad PPM maxval");
    ++pos; // single whitespace before raster
    const std::size_t bpc = maxval > 255 ? 2 : 1;
    const std::size_t n = w * h * 3;
    if (pos + n * bpc > bytes.size()) throw FormatError("truncated PPM frame");
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned v = bpc == 2 ? (unsigned(bytes[pos + 2 * i]) << 8) | bytes[pos + 2 * i + 1] : bytes[pos + i];
      data[i] = static_cast<float>(static_cast<double>(v) / static_cast<double>(maxval));
    }
    pos += n * bpc;
    frames.emplace_back(w, h, 1, std::move(data));
  }
  if (frames.empty()) throw FormatError("zero frames");
  return stack_frames(frames);
}

/// Loads a still PNG, a directory of PNG frames (lexicographic filename
/// order), or a PPM frame stream.
inline PixelVolume load_volume(const std::filesystem::path& path, VolumeKind kind = VolumeKind::image) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::exists(path, ec)) throw IoError("no such file or directory: " + path.string());
  switch (kind) {
  case VolumeKind::image: {
    if (fs::is_directory(path)) return load_volume(path, VolumeKind::image_sequence);
    return decode_png(detail::read_file_bytes(path));
  }
  case VolumeKind::image_sequence: {
    if (!fs::is_directory(path)) throw IoError("not a directory: " + path.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (!entry.is_regular_file()) continue;
      std::string ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext == ".png") files.push_back(entry.path());
    }
    if (files.empty()) throw FormatError("zero frames in " + path.string());
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    std::vector<PixelVolume> frames;
    frames.reserve(files.size());
    for (const auto& f : files) frames.push_back(decode_png(detail::read_file_bytes(f)));
    return stack_frames(frames);
  }
  case VolumeKind::raw_video:
    return decode_ppm_stream(detail::read_file_bytes(path));
  }
  throw InvalidArgument("unknown volume kind");
}

inline std::string frame_filename(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03zu.png", t);
  return buf;
}

/// Writes a still as one 8-bit PNG at `path`; a multi-frame volume becomes
/// `path/frame_000.png`, `path/frame_001.png`, ...
inline void save_volume(const PixelVolume& volume, const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (volume.frames() == 1) {
    detail::write_file_bytes(path, encode_png(volume, 0));
    return;
  }
  std::error_code ec;
  fs::create_directory(path, ec);
  if (!fs::is_directory(path)) throw IoError("cannot create directory: " + path.string());
  for (std::size_t t = 0; t < volume.frames(); ++t) {
    detail::write_file_bytes(path / frame_filename(t), encode_png(volume, t));
  }
}

} // namespace chromalayer
