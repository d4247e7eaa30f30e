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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "meshcorr/network.hpp"

namespace meshcorr {

/// Checkpoint layout (all integers little endian):
///
///   8 bytes   "MESHCORR"
///   u32       format version (1)
///   u32       manifest length L
///   L bytes   UTF-8 JSON manifest: dtype, feature selection, input
///             normaliser, ordered parameter names and shapes, metadata
///   ...       float32 little-endian values of each parameter, in
///             manifest order, NHWC / (k, k, C_in, C_out) layout
inline constexpr char kCheckpointMagic[8] = {'M', 'E', 'S', 'H', 'C', 'O', 'R', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& source) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(source + ": truncated checkpoint header");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace detail

template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const nlohmann::json& metadata = {}) {
  nlohmann::json manifest;
  manifest["format"] = "meshcorr-checkpoint";
  manifest["dtype"] = "float32";
  manifest["features"] = model.selection().str();
  manifest["normalizer"] = {{"mean", model.normalizer().mean}, {"scale", model.normalizer().scale}};
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : model.parameters()) {
    const auto& s = p.value.shape();
    params.push_back({{"name", p.name}, {"shape", {s.n, s.h, s.w, s.c}}});
  }
  manifest["parameters"] = std::move(params);
  manifest["metadata"] = metadata.is_null() ? nlohmann::json::object() : metadata;
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<unsigned char> buffer;
  for (const auto& p : model.parameters()) {
    buffer.resize(p.value.size() * 4);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(p.value[i]));
      for (int b = 0; b < 4; ++b) buffer[i * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

/// Manifest of a checkpoint without its weights.
inline nlohmann::json read_checkpoint_manifest(std::istream& in, const std::string& source) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw FormatError(source + ": not a meshcorr checkpoint");
  }
  const std::uint32_t version = detail::get_u32(in, source);
  if (version != kCheckpointVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t length = detail::get_u32(in, source);
  std::string text(length, '\0');
  if (!in.read(text.data(), length)) throw FormatError(source + ": truncated checkpoint manifest");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": bad checkpoint manifest: " + e.what());
  }
}

template <std::floating_point T>
Model<T> load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata = nullptr) {
  const std::string source = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + source);
  const nlohmann::json manifest = read_checkpoint_manifest(in, source);
  try {
    if (manifest.at("dtype") != "float32") throw FormatError(source + ": unsupported dtype");
    Model<T> model = Model<T>::build(FeatureSelection::parse(manifest.at("features").get<std::string>()), 0);
    const auto& norm = manifest.at("normalizer");
    model.normalizer().mean = norm.at("mean").get<std::vector<double>>();
    model.normalizer().scale = norm.at("scale").get<std::vector<double>>();
    if (model.normalizer().mean.size() != static_cast<std::size_t>(model.input_channels()) ||
        model.normalizer().scale.size() != model.normalizer().mean.size()) {
      throw FormatError(source + ": normaliser does not match the feature selection");
    }
    const auto& params = manifest.at("parameters");
    if (params.size() != model.parameters().size()) throw FormatError(source + ": parameter count mismatch");
    std::vector<unsigned char> buffer;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = model.parameters()[i];
      const auto shape = params[i].at("shape").get<std::vector<int>>();
      if (params[i].at("name") != p.name || shape.size() != 4 ||
          !(autodiff::Shape{shape[0], shape[1], shape[2], shape[3]} == p.value.shape())) {
        throw FormatError(source + ": parameter " + std::to_string(i) + " does not match the architecture (" +
                          p.name + ")");
      }
      buffer.resize(p.value.size() * 4);
      if (!in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()))) {
        throw FormatError(source + ": truncated weights for " + p.name);
      }
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buffer[j * 4 + b]) << (8 * b);
        p.value[j] = static_cast<T>(std::bit_cast<float>(bits));
      }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError(source + ": trailing bytes after weights");
    if (metadata != nullptr) *metadata = manifest.value("metadata", nlohmann::json::object());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": bad checkpoint manifest: " + e.what());
  }
}

}  // namespace meshcorr
