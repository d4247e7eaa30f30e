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

#include <bit>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "meshcorr/image.hpp"
#include "meshcorr/random.hpp"

namespace meshcorr {
namespace {

class ImageIo : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("meshcorr_image_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  std::string bytes(const std::filesystem::path& p) const {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
  }

  std::filesystem::path dir_;
};

FloatImage random_image(Rng& rng, int w, int h, int c) {
  FloatImage img(w, h, c);
  for (auto& v : img.data) v = static_cast<float>(rng.normal() * 10.0);
  return img;
}

TEST_F(ImageIo, PfmRoundTripsFloatValues) {
  Rng rng(1);
  for (int c : {1, 3}) {
    const FloatImage img = random_image(rng, 7, 5, c);
    save_pfm(dir_ / "a.pfm", img);
    EXPECT_EQ(load_pfm(dir_ / "a.pfm"), img);
  }
}

TEST_F(ImageIo, PfmIsLittleEndianBottomUp) {
  FloatImage img(2, 2);
  img.at(0, 0) = 1.0;  // top-left
  img.at(0, 1) = 2.0;  // bottom-left
  save_pfm(dir_ / "a.pfm", img);
  const std::string raw = bytes(dir_ / "a.pfm");
  const std::string header = "Pf\n2 2\n-1.0\n";
  ASSERT_EQ(raw.substr(0, header.size()), header);
  ASSERT_EQ(raw.size(), header.size() + 16);
  auto value_at = [&](std::size_t k) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t(static_cast<unsigned char>(raw[header.size() + 4 * k + b])) << (8 * b);
    return std::bit_cast<float>(bits);
  };
  EXPECT_EQ(value_at(0), 2.0f);
  EXPECT_EQ(value_at(2), 1.0f);
}

TEST_F(ImageIo, PfmReadsBigEndian) {
  std::string raw = "Pf\n1 1\n1.0\n";
  const auto bits = std::bit_cast<std::uint32_t>(3.5f);
  for (int b = 3; b >= 0; --b) raw.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
  std::ofstream(dir_ / "b.pfm", std::ios::binary) << raw;
  EXPECT_EQ(load_pfm(dir_ / "b.pfm").data[0], 3.5);
}

TEST_F(ImageIo, MalformedPfmIsFormatError) {
  std::ofstream(dir_ / "bad.pfm", std::ios::binary) << "P6\n1 1\n-1.0\n";
  EXPECT_THROW(load_pfm(dir_ / "bad.pfm"), FormatError);
  std::ofstream(dir_ / "short.pfm", std::ios::binary) << "Pf\n4 4\n-1.0\nabc";
  EXPECT_THROW(load_pfm(dir_ / "short.pfm"), FormatError);
  EXPECT_THROW(load_pfm(dir_ / "missing.pfm"), FormatError);
}

TEST_F(ImageIo, PgmRoundTripAndEncoding) {
  Mask m(3, 2);
  m.data = {1, 0, 1, 0, 0, 1};
  save_pgm(dir_ / "m.pgm", m);
  EXPECT_EQ(load_pgm(dir_ / "m.pgm"), m);
  EXPECT_EQ(bytes(dir_ / "m.pgm"), std::string("P5\n3 2\n255\n\xff\x00\xff\x00\x00\xff", 17));
}

TEST_F(ImageIo, PpmEncoding) {
  FloatImage img(1, 1, 3);
  img.data = {1.0, 0.5, -2.0};
  save_ppm(dir_ / "c.ppm", img);
  EXPECT_EQ(bytes(dir_ / "c.ppm"), std::string("P6\n1 1\n255\n\xff\x80\x00", 14));
  EXPECT_THROW(save_ppm(dir_ / "d.ppm", FloatImage(1, 1, 1)), ShapeError);
}

TEST(Image, CropAndMaskHelpers) {
  FloatImage img(4, 3);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 4; ++x) img.at(x, y) = 10 * y + x;
  }
  const FloatImage c = img.crop(1, 1, 2, 2);
  EXPECT_EQ(c.data, (std::vector<double>{11, 12, 21, 22}));
  EXPECT_THROW(img.crop(3, 0, 2, 1), ShapeError);
  Mask a(2, 1), b(2, 1);
  a.data = {1, 1};
  b.data = {0, 1};
  EXPECT_EQ(count(mask_and(a, b)), 1u);
  EXPECT_THROW(mask_and(a, Mask(1, 1)), ShapeError);
}

}  // namespace
}  // namespace meshcorr
