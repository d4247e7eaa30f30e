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

#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>
#include <sstream>

#include "meshcorr/random.hpp"
#include "meshcorr/scene_model.hpp"
#include "meshcorr/synthetic.hpp"

namespace meshcorr {
namespace {

constexpr const char* kTriangle =
    "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
    "element face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 1\n1 0 1\n0 1 1\n3 0 1 2\n";

Mesh parse(const std::string& text) {
  std::istringstream in(text);
  return parse_ply(in, "test.ply");
}

std::size_t error_line(const std::string& text) {
  try {
    parse(text);
  } catch (const FormatError& e) {
    return e.line();
  }
  ADD_FAILURE() << "expected a FormatError";
  return 0;
}

Mat3 random_rotation(Rng& rng) {
  const Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized().toRotationMatrix();
}

CameraPose random_pose(Rng& rng) {
  return {random_rotation(rng), Vec3(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50))};
}

Mesh random_mesh(Rng& rng) {
  Mesh m;
  const std::size_t nv = 3 + rng.index(40);
  for (std::size_t i = 0; i < nv; ++i) {
    m.vertices.emplace_back(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-100, 100));
    m.colors.emplace_back(rng.index(256) / 255.0, rng.index(256) / 255.0, rng.index(256) / 255.0);
  }
  const std::size_t nt = rng.index(60);
  for (std::size_t t = 0; t < nt; ++t) {
    std::array<std::uint32_t, 3> tri{};
    do {
      for (auto& i : tri) i = static_cast<std::uint32_t>(rng.index(nv));
    } while (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]);
    m.triangles.push_back(tri);
  }
  return m;
}

TEST(LoadMesh, MinimalTriangle) {
  const Mesh m = parse(kTriangle);
  ASSERT_EQ(m.vertices.size(), 3u);
  ASSERT_EQ(m.triangles.size(), 1u);
  EXPECT_EQ(m.vertices[1], Vec3(1, 0, 1));
  for (const auto& c : m.colors) EXPECT_EQ(c, Vec3::Constant(Mesh::kDefaultGray));
}

TEST(LoadMesh, ReadsVertexColors) {
  const Mesh m = parse(
      "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 3\nproperty double x\nproperty double y\n"
      "property double z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\n"
      "property list uchar int vertex_indices\nend_header\n0 0 1 255 0 0\n1 0 1 0 255 0\n0 1 1 0 0 51\n3 2 1 0\n");
  EXPECT_EQ(m.colors[0], Vec3(1, 0, 0));
  EXPECT_EQ(m.colors[2], Vec3(0, 0, 0.2));
  EXPECT_EQ(m.triangles[0], (std::array<std::uint32_t, 3>{2, 1, 0}));
}

TEST(LoadMesh, OutOfRangeIndexIsRejected) {
  std::string text = kTriangle;
  text.replace(text.rfind("3 0 1 2"), 7, "3 0 1 5");
  EXPECT_THROW(parse(text), FormatError);
}

TEST(LoadMesh, RepeatedIndexIsRejected) {
  std::string text = kTriangle;
  text.replace(text.rfind("3 0 1 2"), 7, "3 0 1 1");
  EXPECT_THROW(parse(text), FormatError);
}

TEST(LoadMesh, NonFiniteCoordinateIsRejectedWithLine) {
  std::string text = kTriangle;
  text.replace(text.find("1 0 1\n"), 5, "nan 0 1");
  EXPECT_EQ(error_line(text), 11u);
}

TEST(LoadMesh, QuadIsRejectedWithLine) {
  std::string text = kTriangle;
  text.replace(text.rfind("3 0 1 2"), 7, "4 0 1 2 0");
  EXPECT_EQ(error_line(text), 13u);
}

TEST(LoadMesh, MalformedHeadersAreRejected) {
  EXPECT_EQ(error_line("plx\n"), 1u);
  EXPECT_EQ(error_line("ply\nformat binary_little_endian 1.0\n"), 2u);
  std::string text = kTriangle;
  text.replace(text.find("property float z"), 16, "property float w");
  EXPECT_EQ(error_line(text), 6u);
}

TEST(LoadMesh, TruncatedBodyIsRejected) {
  std::string text = kTriangle;
  text.erase(text.rfind("3 0 1 2"));
  EXPECT_THROW(parse(text), FormatError);
}

TEST(LoadMesh, MissingFileIsFormatError) {
  EXPECT_THROW(load_mesh("/nonexistent/mesh.ply"), FormatError);
}

TEST(LoadMesh, RandomMeshesRoundTrip) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const Mesh m = random_mesh(rng);
    std::ostringstream out;
    write_ply(out, m);
    EXPECT_EQ(parse(out.str()), m) << "mesh " << i;
  }
}

TEST(LoadMesh, GeneratorOutputRoundTripsThroughFiles) {
  const auto scene = generate(depth_bias_task(3));
  const auto dir = std::filesystem::temp_directory_path() / "meshcorr_scene_model_test";
  std::filesystem::create_directories(dir);
  save_mesh(dir / "laser.ply", scene.laser);
  save_mesh(dir / "camera.ply", scene.camera);
  EXPECT_EQ(load_mesh(dir / "laser.ply"), scene.laser);
  EXPECT_EQ(load_mesh(dir / "camera.ply"), scene.camera);
  std::filesystem::remove_all(dir);
}

Trajectory parse_poses(const std::string& text) {
  std::istringstream in(text);
  return parse_trajectory(in, "poses.txt");
}

TEST(LoadTrajectory, IdentityLine) {
  const Trajectory t = parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n");
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t.poses[0].rotation, Mat3::Identity());
  EXPECT_EQ(t.poses[0].translation, Vec3::Zero());
}

TEST(LoadTrajectory, TwoLinesGetIndicesZeroAndOne) {
  const Trajectory t = parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1 0\n");
  EXPECT_EQ(t.frames, (std::vector<int>{0, 1}));
  EXPECT_NO_THROW(t.validate());
}

TEST(LoadTrajectory, FileHoldsCameraToWorld) {
  const Trajectory t = parse_poses("1 0 0 1 0 1 0 2 0 0 1 3\n");
  EXPECT_EQ(t.poses[0].center(), Vec3(1, 2, 3));
  EXPECT_EQ(t.poses[0].apply(Vec3(1, 2, 3)), Vec3::Zero());
}

TEST(LoadTrajectory, SlightlyOffRotationIsReorthonormalised) {
  const Trajectory t = parse_poses("1.0004 0 0 0 0 1 0 0 0 0 0.9996 0\n");
  EXPECT_LT(CameraPose::orthonormality_error(t.poses[0].rotation), 1e-12);
}

TEST(LoadTrajectory, BadLinesAreRejectedWithLineNumbers) {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_poses(text);
    } catch (const FormatError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n"), 2u);
  EXPECT_EQ(line_of("1 0 0 0 0 1 0 0 0 0 1 0 7\n"), 1u);
  EXPECT_EQ(line_of("1 0 0 0 0 1 0 0 0 0 x 0\n"), 1u);
  EXPECT_EQ(line_of("1 0 0 0\n"), 1u);
  EXPECT_EQ(line_of("1.01 0 0 0 0 1 0 0 0 0 1 0\n"), 1u);
  EXPECT_EQ(line_of("-1 0 0 0 0 1 0 0 0 0 1 0\n"), 1u);
  EXPECT_THROW(parse_poses(""), FormatError);
}

TEST(LoadTrajectory, RandomRigidTransformsRoundTrip) {
  Rng rng(5);
  Trajectory t;
  for (int i = 0; i < 200; ++i) {
    t.poses.push_back(random_pose(rng));
    t.frames.push_back(i);
  }
  std::stringstream io;
  write_trajectory(io, t);
  const Trajectory back = parse_trajectory(io);
  ASSERT_EQ(back.size(), t.size());
  EXPECT_EQ(back.frames, t.frames);
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_LT((back.poses[i].rotation - t.poses[i].rotation).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((back.poses[i].translation - t.poses[i].translation).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(LoadTrajectory, PoseComposedWithInverseIsIdentity) {
  Rng rng(6);
  std::stringstream io;
  Trajectory t;
  for (int i = 0; i < 100; ++i) {
    t.poses.push_back(random_pose(rng));
    t.frames.push_back(i);
  }
  write_trajectory(io, t);
  for (const auto& p : parse_trajectory(io).poses) {
    for (const CameraPose& id : {p.compose(p.inverse()), p.inverse().compose(p)}) {
      EXPECT_LT((id.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_LT(id.translation.cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(CameraIntrinsics, Validation) {
  EXPECT_NO_THROW((CameraIntrinsics{50, 50, 10, 10, 20, 20}.validate()));
  EXPECT_THROW((CameraIntrinsics{0, 50, 10, 10, 20, 20}.validate()), FormatError);
  EXPECT_THROW((CameraIntrinsics{50, -1, 10, 10, 20, 20}.validate()), FormatError);
  EXPECT_THROW((CameraIntrinsics{50, 50, 10, 10, 0, 20}.validate()), FormatError);
}

TEST(Trajectory, ValidationRejectsNonIncreasingFrames) {
  Trajectory t;
  t.poses.resize(2);
  t.frames = {3, 3};
  EXPECT_THROW(t.validate(), FormatError);
  t.frames = {3, 4};
  EXPECT_NO_THROW(t.validate());
  EXPECT_THROW(Trajectory{}.validate(), FormatError);
}

TEST(CameraPose, RejectsImproperRotation) {
  CameraPose p;
  p.rotation = -Mat3::Identity();
  EXPECT_THROW(p.validate(), FormatError);
}

}  // namespace
}  // namespace meshcorr
