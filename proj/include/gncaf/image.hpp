#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gncaf/common.hpp"

namespace gncaf {

// Interleaved 8-bit RGB raster.
struct ImageU8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // height*width*3, row-major

  ImageU8() = default;
  ImageU8(int h, int w, std::uint8_t fill = 0) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

  std::uint8_t* pixel(int y, int x) { return &data[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* pixel(int y, int x) const { return &data[(static_cast<std::size_t>(y) * width + x) * 3]; }

  void set_pixel(int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto* p = pixel(y, x);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  bool operator==(const ImageU8& o) const { return height == o.height && width == o.width && data == o.data; }
};

// Single-channel 8-bit label raster; values in 0..c-1, 0 = background.
struct LabelMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;  // height*width, row-major

  LabelMask() = default;
  LabelMask(int h, int w, std::uint8_t fill = 0) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const LabelMask& o) const { return height == o.height && width == o.width && labels == o.labels; }
};

namespace detail {

inline void skip_pnm_whitespace(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

inline int read_pnm_int(std::istream& in) {
  skip_pnm_whitespace(in);
  int v = -1;
  in >> v;
  if (!in) throw DataError("malformed PNM header");
  return v;
}

}  // namespace detail

// Binary PPM (P6). Used for slides, patches and overlays.
inline void write_ppm(const std::string& path, const ImageU8& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!out) throw DataError("write failed: " + path);
}

inline ImageU8 read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw DataError("not a binary PPM (P6): " + path);
  int w = detail::read_pnm_int(in);
  int h = detail::read_pnm_int(in);
  int maxval = detail::read_pnm_int(in);
  if (maxval != 255) throw DataError("unsupported PPM maxval: " + path);
  in.get();  // single whitespace byte after header
  ImageU8 img(h, w);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.data.size())) throw DataError("truncated PPM: " + path);
  return img;
}

// Binary PGM (P5). Used for label masks.
inline void write_pgm(const std::string& path, const LabelMask& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(mask.labels.data()), static_cast<std::streamsize>(mask.labels.size()));
  if (!out) throw DataError("write failed: " + path);
}

inline LabelMask read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5") throw DataError("not a binary PGM (P5): " + path);
  int w = detail::read_pnm_int(in);
  int h = detail::read_pnm_int(in);
  int maxval = detail::read_pnm_int(in);
  if (maxval != 255) throw DataError("unsupported PGM maxval: " + path);
  in.get();
  LabelMask mask(h, w);
  in.read(reinterpret_cast<char*>(mask.labels.data()), static_cast<std::streamsize>(mask.labels.size()));
  if (in.gcount() != static_cast<std::streamsize>(mask.labels.size())) throw DataError("truncated PGM: " + path);
  return mask;
}

// Class palette for overlays: background transparent, then
// e-TLS light blue, pel-TLS blue, sel-TLS green.
inline std::array<std::uint8_t, 3> class_color(int cls) {
  switch (cls) {
    case 1: return {120, 200, 255};
    case 2: return {20, 60, 230};
    case 3: return {40, 180, 70};
    default: return {0, 0, 0};
  }
}

// Blend slide and per-class palette at fixed alpha 0.5; background keeps
// the slide pixel.
inline ImageU8 blend_overlay(const ImageU8& slide, const LabelMask& mask, double alpha = 0.5) {
  require(slide.height == mask.height && slide.width == mask.width, "overlay: slide/mask dimension mismatch");
  ImageU8 out = slide;
  for (int y = 0; y < slide.height; ++y) {
    for (int x = 0; x < slide.width; ++x) {
      int cls = mask.at(y, x);
      if (cls == 0) continue;
      auto color = class_color(cls);
      auto* p = out.pixel(y, x);
      for (int ch = 0; ch < 3; ++ch) {
        p[ch] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * p[ch] + alpha * color[ch]));
      }
    }
  }
  return out;
}

}  // namespace gncaf
