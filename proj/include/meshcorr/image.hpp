/*
 * Copyright 2026 The meshcorr Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "meshcorr/errors.hpp"

namespace meshcorr {

/// Row-major, top-down, channel-interleaved image.
template <class T>
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, int c = 1, T fill = T{})
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  T& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  const T& at(int x, int y, int c = 0) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool same_size(int w, int h) const { return width == w && height == h; }

  /// Rectangular window starting at (x0, y0).
  Image crop(int x0, int y0, int w, int h) const {
    if (x0 < 0 || y0 < 0 || x0 + w > width || y0 + h > height) throw ShapeError("crop window outside image");
    Image out(w, h, channels);
    for (int y = 0; y < h; ++y) {
      const T* src = &at(x0, y0 + y);
      std::copy(src, src + static_cast<std::size_t>(w) * channels, &out.at(0, y));
    }
    return out;
  }

  bool operator==(const Image&) const = default;
};

using FloatImage = Image<double>;
/// 1 = valid / covered, 0 = not.
using Mask = Image<std::uint8_t>;

inline std::size_t count(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.data.begin(), m.data.end(), [](std::uint8_t v) { return v != 0; }));
}

inline Mask mask_and(const Mask& a, const Mask& b) {
  if (!a.same_size(b.width, b.height)) throw ShapeError("mask size mismatch");
  Mask out(a.width, a.height);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = (a.data[i] != 0 && b.data[i] != 0) ? 1 : 0;
  return out;
}

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

template <class T>
T read_pnm_token(std::istream& in, const std::string& source) {
  skip_pnm_space(in);
  T v{};
  if (!(in >> v)) throw FormatError("malformed header in " + source);
  return v;
}

}  // namespace detail

/// PFM: "Pf" (1 channel) or "PF" (3 channels), negative scale = little
/// endian, float32 rows stored bottom-to-top. Values are narrowed to float.
inline void save_pfm(const std::filesystem::path& path, const FloatImage& img) {
  if (img.channels != 1 && img.channels != 3) throw ShapeError("PFM holds 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << (img.channels == 3 ? "PF" : "Pf") << '\n' << img.width << ' ' << img.height << "\n-1.0\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * img.channels * 4);
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        const float f = static_cast<float>(img.at(x, y, c));
        std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
        unsigned char* dst = &row[(static_cast<std::size_t>(x) * img.channels + c) * 4];
        for (int b = 0; b < 4; ++b) dst[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFFu);
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline FloatImage load_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const auto magic = detail::read_pnm_token<std::string>(in, path.string());
  if (magic != "Pf" && magic != "PF") throw FormatError(path.string() + ": not a PFM file");
  const int w = detail::read_pnm_token<int>(in, path.string());
  const int h = detail::read_pnm_token<int>(in, path.string());
  const double scale = detail::read_pnm_token<double>(in, path.string());
  if (w <= 0 || h <= 0 || scale == 0.0) throw FormatError(path.string() + ": bad PFM header");
  in.get();  // single whitespace before the raster
  const bool little = scale < 0.0;
  FloatImage img(w, h, magic == "PF" ? 3 : 1);
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * img.channels * 4);
  for (int y = h - 1; y >= 0; --y) {
    if (!in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()))) {
      throw FormatError(path.string() + ": truncated PFM raster");
    }
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        const unsigned char* src = &row[(static_cast<std::size_t>(x) * img.channels + c) * 4];
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
          const int shift = little ? 8 * b : 8 * (3 - b);
          bits |= static_cast<std::uint32_t>(src[b]) << shift;
        }
        img.at(x, y, c) = static_cast<double>(std::bit_cast<float>(bits));
      }
    }
  }
  return img;
}

/// 8-bit binary PPM (P6) of a 3-channel image with values in [0, 1].
inline void save_ppm(const std::filesystem::path& path, const FloatImage& img) {
  if (img.channels != 3) throw ShapeError("PPM needs 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

/// Masks as 8-bit PGM (P5): 255 = valid, 0 = invalid.
inline void save_pgm(const std::filesystem::path& path, const Mask& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  std::vector<unsigned char> bytes(mask.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.data[i] != 0 ? 255 : 0;
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline Mask load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  if (detail::read_pnm_token<std::string>(in, path.string()) != "P5") throw FormatError(path.string() + ": not a P5 PGM");
  const int w = detail::read_pnm_token<int>(in, path.string());
  const int h = detail::read_pnm_token<int>(in, path.string());
  const int maxval = detail::read_pnm_token<int>(in, path.string());
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw FormatError(path.string() + ": bad PGM header");
  in.get();
  Mask mask(w, h);
  std::vector<unsigned char> bytes(mask.data.size());
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw FormatError(path.string() + ": truncated PGM raster");
  }
  for (std::size_t i = 0; i < bytes.size(); ++i) mask.data[i] = bytes[i] != 0 ? 1 : 0;
  return mask;
}

}  // namespace meshcorr
