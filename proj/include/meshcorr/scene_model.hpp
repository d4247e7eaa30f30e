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

#include <Eigen/Core>
#include <Eigen/SVD>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "meshcorr/errors.hpp"

namespace meshcorr {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Indexed triangle soup with per-vertex colour. Positions in metres,
/// world frame; colours in [0, 1].
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> colors;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  static constexpr double kDefaultGray = 0.5;

  /// Throws FormatError if an index is out of range, a triangle repeats a
  /// vertex, a coordinate is non-finite, or colours are missing/out of range.
  void validate() const {
    if (colors.size() != vertices.size()) throw FormatError("mesh: colour count differs from vertex count");
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      if (!vertices[i].allFinite()) throw FormatError("mesh: vertex " + std::to_string(i) + " is not finite");
      if (!colors[i].allFinite() || colors[i].minCoeff() < 0.0 || colors[i].maxCoeff() > 1.0) {
        throw FormatError("mesh: colour of vertex " + std::to_string(i) + " outside [0, 1]");
      }
    }
    for (std::size_t t = 0; t < triangles.size(); ++t) {
      const auto& tri = triangles[t];
      for (std::uint32_t idx : tri) {
        if (idx >= vertices.size()) {
          throw FormatError("mesh: triangle " + std::to_string(t) + " references vertex " + std::to_string(idx) +
                            " but only " + std::to_string(vertices.size()) + " exist");
        }
      }
      if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) {
        throw FormatError("mesh: triangle " + std::to_string(t) + " repeats a vertex index");
      }
    }
  }

  bool operator==(const Mesh&) const = default;
};

/// Pinhole intrinsics. Pixel (col, row) has its centre at u = col, v = row.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw FormatError("intrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw FormatError("intrinsics: image size must be positive");
    if (!std::isfinite(cx) || !std::isfinite(cy)) throw FormatError("intrinsics: principal point must be finite");
  }
};

/// Rigid world-to-camera transform: x_cam = rotation * x_world + translation.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& world) const { return rotation * world + translation; }

  CameraPose inverse() const {
    CameraPose inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  CameraPose compose(const CameraPose& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }

  /// Camera centre in world coordinates.
  Vec3 center() const { return -(rotation.transpose() * translation); }

  /// Max-abs deviation of R R^T from identity.
  static double orthonormality_error(const Mat3& r) { return (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(); }

  void validate(double tolerance = 1e-6) const {
    if (!rotation.allFinite() || !translation.allFinite()) throw FormatError("pose: non-finite entry");
    if (orthonormality_error(rotation) > tolerance || rotation.determinant() <= 0.0) {
      throw FormatError("pose: rotation is not a proper orthonormal matrix");
    }
  }
};

/// Nearest rotation (Frobenius) via SVD.
inline Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

struct Trajectory {
  std::vector<CameraPose> poses;
  std::vector<int> frames;  // strictly increasing

  std::size_t size() const { return poses.size(); }

  void validate() const {
    if (poses.empty()) throw FormatError("trajectory is empty");
    if (frames.size() != poses.size()) throw FormatError("trajectory: frame index count differs from pose count");
    for (std::size_t i = 1; i < frames.size(); ++i) {
      if (frames[i] <= frames[i - 1]) throw FormatError("trajectory: frame indices must increase strictly");
    }
    for (const auto& p : poses) p.validate();
  }
};

namespace detail {

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

}  // namespace detail

/// Reads the ASCII PLY subset documented in docs/formats.md:
/// vertex x/y/z (float or double), optional uchar red/green/blue, and
/// triangular faces only.
inline Mesh parse_ply(std::istream& in, const std::string& source = "<ply>") {
  std::size_t line_no = 0;
  std::string line;
  auto next_line = [&](const char* what) -> std::string {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") != std::string::npos) return line;
    }
    throw FormatError(source, line_no, std::string("unexpected end of file, expected ") + what);
  };
  auto fail = [&](const std::string& msg) -> FormatError { return FormatError(source, line_no, msg); };

  if (next_line("'ply'") != "ply") throw fail("missing 'ply' magic");
  if (next_line("format line") != "format ascii 1.0") throw fail("only 'format ascii 1.0' is supported");

  std::size_t vertex_count = 0;
  std::size_t face_count = 0;
  bool have_vertex = false;
  bool have_face = false;
  std::vector<std::string> vertex_props;
  enum class Section { none, vertex, face } section = Section::none;
  for (;;) {
    std::istringstream tok(next_line("end_header"));
    std::string kw;
    tok >> kw;
    if (kw == "end_header") break;
    if (kw == "comment" || kw == "obj_info") continue;
    if (kw == "element") {
      std::string name;
      long long count = -1;
      tok >> name >> count;
      if (!tok || count < 0) throw fail("malformed element line");
      if (name == "vertex" && !have_vertex && !have_face) {
        vertex_count = static_cast<std::size_t>(count);
        have_vertex = true;
        section = Section::vertex;
      } else if (name == "face" && have_vertex && !have_face) {
        face_count = static_cast<std::size_t>(count);
        have_face = true;
        section = Section::face;
      } else {
        throw fail("unsupported element '" + name + "' (expected vertex then face)");
      }
      continue;
    }
    if (kw == "property") {
      std::string type;
      tok >> type;
      if (section == Section::vertex) {
        std::string name;
        tok >> name;
        const bool coord = (name == "x" || name == "y" || name == "z") && (type == "float" || type == "double" ||
                                                                            type == "float32" || type == "float64");
        const bool color = (name == "red" || name == "green" || name == "blue") && (type == "uchar" || type == "uint8");
        if (!coord && !color) throw fail("unsupported vertex property '" + type + " " + name + "'");
        vertex_props.push_back(name);
      } else if (section == Section::face) {
        std::string count_type, index_type, name;
        tok >> count_type >> index_type >> name;
        if (type != "list" || (name != "vertex_indices" && name != "vertex_index")) {
          throw fail("face element must be 'property list <uchar> <int> vertex_indices'");
        }
      } else {
        throw fail("property outside of an element");
      }
      continue;
    }
    throw fail("unexpected header keyword '" + kw + "'");
  }
  if (!have_vertex) throw fail("no vertex element");
  const std::vector<std::string> xyz = {"x", "y", "z"};
  const std::vector<std::string> xyzrgb = {"x", "y", "z", "red", "green", "blue"};
  if (vertex_props != xyz && vertex_props != xyzrgb) throw fail("vertex properties must be x y z [red green blue]");
  const bool has_color = vertex_props.size() == 6;

  Mesh mesh;
  mesh.vertices.reserve(vertex_count);
  mesh.colors.reserve(vertex_count);
  for (std::size_t i = 0; i < vertex_count; ++i) {
    std::istringstream tok(next_line("vertex line"));
    Vec3 p;
    tok >> p.x() >> p.y() >> p.z();
    if (!tok) throw fail("malformed vertex line");
    if (!p.allFinite()) throw fail("non-finite vertex coordinate");
    Vec3 c = Vec3::Constant(Mesh::kDefaultGray);
    if (has_color) {
      int r = -1, g = -1, b = -1;
      tok >> r >> g >> b;
      if (!tok || r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255) throw fail("malformed vertex colour");
      c = Vec3(r, g, b) / 255.0;
    }
    std::string extra;
    if (tok >> extra) throw fail("trailing data on vertex line");
    mesh.vertices.push_back(p);
    mesh.colors.push_back(c);
  }
  mesh.triangles.reserve(face_count);
  for (std::size_t i = 0; i < face_count; ++i) {
    std::istringstream tok(next_line("face line"));
    long long n = 0;
    tok >> n;
    if (!tok) throw fail("malformed face line");
    if (n != 3) throw fail("only triangular faces are supported, got " + std::to_string(n) + " vertices");
    std::array<std::uint32_t, 3> tri{};
    for (auto& idx : tri) {
      long long v = -1;
      tok >> v;
      if (!tok) throw fail("malformed face line");
      if (v < 0 || static_cast<std::size_t>(v) >= vertex_count) {
        throw fail("vertex index " + std::to_string(v) + " out of range (" + std::to_string(vertex_count) +
                   " vertices)");
      }
      idx = static_cast<std::uint32_t>(v);
    }
    std::string extra;
    if (tok >> extra) throw fail("trailing data on face line");
    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) throw fail("face repeats a vertex index");
    mesh.triangles.push_back(tri);
  }
  return mesh;
}

inline Mesh load_mesh(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_ply(in, path.string());
}

/// Writes positions at full double precision so parse_ply(write_ply(m))
/// reproduces them bit-exactly; colours are quantised to 8 bits.
inline void write_ply(std::ostream& out, const Mesh& mesh) {
  mesh.validate();
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << mesh.vertices.size() << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "element face " << mesh.triangles.size() << "\n";
  out << "property list uchar int vertex_indices\nend_header\n";
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& p = mesh.vertices[i];
    const Vec3& c = mesh.colors[i];
    out << p.x() << ' ' << p.y() << ' ' << p.z();
    for (int k = 0; k < 3; ++k) out << ' ' << static_cast<int>(std::lround(c[k] * 255.0));
    out << '\n';
  }
  for (const auto& t : mesh.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

inline void save_mesh(const std::filesystem::path& path, const Mesh& mesh) {
  auto out = detail::open_output(path);
  write_ply(out, mesh);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

/// Reads KITTI-style pose lines (row-major 3x4 camera-to-world [R|t]) and
/// returns world-to-camera poses. Rotations within 1e-3 of orthonormal are
/// projected onto the nearest rotation; anything further is rejected.
inline Trajectory parse_trajectory(std::istream& in, const std::string& source = "<poses>") {
  Trajectory traj;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream tok(line);
    std::array<double, 12> v{};
    for (double& x : v) {
      if (!(tok >> x)) throw FormatError(source, line_no, "expected 12 numbers");
      if (!std::isfinite(x)) throw FormatError(source, line_no, "non-finite pose entry");
    }
    std::string extra;
    if (tok >> extra) throw FormatError(source, line_no, "more than 12 values");
    Mat3 r;
    r << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    const Vec3 t(v[3], v[7], v[11]);
    if (CameraPose::orthonormality_error(r) > 1e-3 || r.determinant() <= 0.0) {
      throw FormatError(source, line_no, "rotation is not within 1e-3 of a proper rotation");
    }
    const CameraPose cam_to_world{nearest_rotation(r), t};
    traj.frames.push_back(static_cast<int>(traj.poses.size()));
    traj.poses.push_back(cam_to_world.inverse());
  }
  if (traj.poses.empty()) throw FormatError(source, line_no, "no poses");
  return traj;
}

inline Trajectory load_trajectory(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_trajectory(in, path.string());
}

inline void write_trajectory(std::ostream& out, const Trajectory& traj) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& pose : traj.poses) {
    const CameraPose c2w = pose.inverse();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out << c2w.rotation(r, c) << ' ';
      out << c2w.translation[r] << (r == 2 ? '\n' : ' ');
    }
  }
}

inline void save_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  auto out = detail::open_output(path);
  write_trajectory(out, traj);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace meshcorr
