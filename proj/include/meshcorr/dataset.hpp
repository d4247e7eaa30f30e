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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "meshcorr/groundtruth.hpp"
#include "meshcorr/image.hpp"
#include "meshcorr/network.hpp"
#include "meshcorr/rasterizer.hpp"

namespace meshcorr {

/// On-disk layout of a frame set: one `frame_NNNNNN` directory per frame,
/// each holding PFM channels, a PGM mask and a JSON sidecar.
inline std::string frame_directory_name(int frame) {
  char name[32];
  std::snprintf(name, sizeof(name), "frame_%06d", frame);
  return name;
}

/// Frame directories under `root`, ordered by frame index.
inline std::vector<std::pair<int, std::filesystem::path>> list_frames(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw FormatError(root.string() + " is not a directory");
  std::vector<std::pair<int, std::filesystem::path>> out;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || name.rfind("frame_", 0) != 0) continue;
    try {
      std::size_t used = 0;
      const int frame = std::stoi(name.substr(6), &used);
      if (used != name.size() - 6 || frame < 0) throw std::invalid_argument(name);
      out.emplace_back(frame, entry.path());
    } catch (const std::exception&) {
      throw FormatError(entry.path().string() + ": frame directory name must be frame_<index>");
    }
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw FormatError(root.string() + " contains no frame_* directories");
  return out;
}

namespace detail {

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline void expect_size(const std::filesystem::path& path, int w, int h, int channels, int width, int height) {
  if (w != width || h != height) throw FormatError(path.string() + ": size differs from the sidecar");
  if (channels < 1) throw FormatError(path.string() + ": no channels");
}

}  // namespace detail

/// Writes every channel of `f` to `dir` (created if needed), plus an RGB
/// preview and `features.json`.
inline void save_features(const std::filesystem::path& dir, const FeatureImageSet& f, int frame) {
  std::filesystem::create_directories(dir);
  nlohmann::json channels = nlohmann::json::array();
  for (Feature feat : kAllFeatures) {
    const std::string name(feature_name(feat));
    save_pfm(dir / (name + ".pfm"), f.channel(feat));
    channels.push_back({{"name", name}, {"file", name + ".pfm"}, {"channels", f.channel(feat).channels}});
  }
  save_pgm(dir / "mask.pgm", f.mask);
  save_ppm(dir / "rgb.ppm", f.rgb);
  detail::write_json(dir / "features.json", {{"frame", frame},
                                             {"width", f.width},
                                             {"height", f.height},
                                             {"channels", channels},
                                             {"mask", "mask.pgm"}});
}

inline FeatureImageSet load_features(const std::filesystem::path& dir) {
  const auto meta = detail::read_json(dir / "features.json");
  try {
    FeatureImageSet f = FeatureImageSet::blank(meta.at("width").get<int>(), meta.at("height").get<int>());
    for (const auto& ch : meta.at("channels")) {
      const Feature feat = parse_feature(ch.at("name").get<std::string>());
      const auto path = dir / ch.at("file").get<std::string>();
      FloatImage img = load_pfm(path);
      detail::expect_size(path, img.width, img.height, img.channels, f.width, f.height);
      if (img.channels != f.channel(feat).channels) throw FormatError(path.string() + ": wrong channel count");
      f.channel(feat) = std::move(img);
    }
    const auto mask_path = dir / meta.at("mask").get<std::string>();
    f.mask = load_pgm(mask_path);
    detail::expect_size(mask_path, f.mask.width, f.mask.height, 1, f.width, f.height);
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "features.json").string() + ": " + e.what());
  }
}

inline void save_errors(const std::filesystem::path& dir, const ErrorImage& e, int frame) {
  std::filesystem::create_directories(dir);
  save_pfm(dir / "delta.pfm", e.delta);
  save_pgm(dir / "mask.pgm", e.mask);
  detail::write_json(dir / "error.json", {{"frame", frame},
                                          {"width", e.width()},
                                          {"height", e.height()},
                                          {"scale", e.scale},
                                          {"delta", "delta.pfm"},
                                          {"mask", "mask.pgm"}});
}

inline ErrorImage load_errors(const std::filesystem::path& dir) {
  const auto meta = detail::read_json(dir / "error.json");
  try {
    ErrorImage e;
    e.scale = meta.at("scale").get<double>();
    const auto delta_path = dir / meta.at("delta").get<std::string>();
    e.delta = load_pfm(delta_path);
    if (e.delta.channels != 1) throw FormatError(delta_path.string() + ": expected one channel");
    const auto mask_path = dir / meta.at("mask").get<std::string>();
    e.mask = load_pgm(mask_path);
    const int w = meta.at("width").get<int>();
    const int h = meta.at("height").get<int>();
    detail::expect_size(delta_path, e.delta.width, e.delta.height, 1, w, h);
    detail::expect_size(mask_path, e.mask.width, e.mask.height, 1, w, h);
    if (!(e.scale > 0.0)) throw FormatError((dir / "error.json").string() + ": scale must be positive");
    return e;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "error.json").string() + ": " + e.what());
  }
}

}  // namespace meshcorr
