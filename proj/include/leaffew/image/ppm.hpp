/* Copyright 2026 The Leaffew Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "leaffew/core/error.hpp"

namespace leaffew::image {

// 8-bit RGB, row-major interleaved. The corpus format is binary PPM (P6):
// self-contained, exactly decodable, and trivial to generate.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // height*width*3

  std::uint8_t& at(int y, int x, int c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const {
    return rgb[(y * width + x) * 3 + c];
  }
};

namespace detail {
inline int read_ppm_token(std::istream& in) {
  // skips whitespace and '#' comments per the PPM grammar
  while (true) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int value = -1;
  in >> value;
  return value;
}
}  // namespace detail

inline bool ppm_readable(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '6') return false;
  const int w = detail::read_ppm_token(in);
  const int h = detail::read_ppm_token(in);
  const int maxval = detail::read_ppm_token(in);
  return in.good() && w > 0 && h > 0 && maxval == 255;
}

inline Image load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '6')
    throw IoError("not a binary PPM (P6): " + path);
  Image img;
  img.width = detail::read_ppm_token(in);
  img.height = detail::read_ppm_token(in);
  const int maxval = detail::read_ppm_token(in);
  if (img.width <= 0 || img.height <= 0 || maxval != 255)
    throw IoError("unsupported PPM header in " + path);
  in.get();  // single whitespace after maxval
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()),
          static_cast<std::streamsize>(img.rgb.size()));
  if (!in) throw IoError("truncated PPM payload in " + path);
  return img;
}

inline void save_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw IoError("short image write: " + path);
}

// Bilinear resize with half-pixel centers (align_corners=false convention).
inline Image resize(const Image& src, int out_w, int out_h) {
  Image dst;
  dst.width = out_w;
  dst.height = out_h;
  dst.rgb.resize(static_cast<std::size_t>(out_w) * out_h * 3);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double v00 = src.at(y0, x0, c), v01 = src.at(y0, x1, c);
        const double v10 = src.at(y1, x0, c), v11 = src.at(y1, x1, c);
        const double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                         wy * ((1 - wx) * v10 + wx * v11);
        dst.at(y, x, c) = static_cast<std::uint8_t>(std::lround(
            std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return dst;
}

// Shorter side scaled to `side`, aspect preserved.
inline Image resize_shorter_side(const Image& src, int side) {
  if (src.width <= src.height) {
    const int h = static_cast<int>(std::lround(
        static_cast<double>(src.height) * side / src.width));
    return resize(src, side, std::max(h, side));
  }
  const int w = static_cast<int>(std::lround(
      static_cast<double>(src.width) * side / src.height));
  return resize(src, std::max(w, side), side);
}

inline Image crop(const Image& src, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || x0 + w > src.width || y0 + h > src.height)
    throw IoError("crop window outside image bounds");
  Image dst;
  dst.width = w;
  dst.height = h;
  dst.rgb.resize(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) dst.at(y, x, c) = src.at(y0 + y, x0 + x, c);
  return dst;
}

inline Image center_crop(const Image& src, int size) {
  const int x0 = (src.width - size) / 2;
  const int y0 = (src.height - size) / 2;
  return crop(src, x0, y0, size, size);
}

inline Image hflip(const Image& src) {
  Image dst = src;
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c)
        dst.at(y, x, c) = src.at(y, src.width - 1 - x, c);
  return dst;
}

// CHW float tensor ready for a network: value/255, then channelwise
// (v - mean)/std.
template <class Scalar>
inline std::vector<Scalar> normalize_chw(const Image& img,
                                         const std::array<double, 3>& mean,
                                         const std::array<double, 3>& stddev) {
  std::vector<Scalar> out(static_cast<std::size_t>(3) * img.height * img.width);
  for (int c = 0; c < 3; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * img.height * img.width;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out[base + static_cast<std::size_t>(y) * img.width + x] =
            static_cast<Scalar>((img.at(y, x, c) / 255.0 - mean[c]) / stddev[c]);
  }
  return out;
}

}  // namespace leaffew::image
