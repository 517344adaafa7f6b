#include <gtest/gtest.h>

#include <filesystem>

#include "bdl/burst.hpp"

using namespace bdl;

namespace {

Tensor block_constant_hr(std::size_t size, std::size_t block, RngStream& rng) {
  Tensor hr = Tensor::image(3, size, size);
  for (std::size_t by = 0; by < size / block; ++by)
    for (std::size_t bx = 0; bx < size / block; ++bx)
      for (std::size_t c = 0; c < 3; ++c) {
        const auto v = static_cast<float>(rng.uniform(0.1, 0.9));
        for (std::size_t y = 0; y < block; ++y)
          for (std::size_t x = 0; x < block; ++x) hr.at(c, by * block + y, bx * block + x) = v;
      }
  return hr;
}

}  // namespace

TEST(Mosaic, ConstantColourGivesRGGBPlanes) {
  Tensor rgb = Tensor::image(3, 4, 6);
  for (std::size_t i = 0; i < 24; ++i) {
    rgb[i] = 0.2f;
    rgb[24 + i] = 0.5f;
    rgb[48 + i] = 0.7f;
  }
  const Tensor raw = mosaic_rggb(rgb);
  ASSERT_EQ(raw.dims(), (Dims{4, 2, 3}));
  const float expect[4] = {0.2f, 0.5f, 0.5f, 0.7f};
  for (std::size_t p = 0; p < 4; ++p)
    for (float v : raw.plane(p)) EXPECT_EQ(v, expect[p]);
}

TEST(Mosaic, TwoByTwoPicksSampledPositions) {
  Tensor rgb = Tensor::image(3, 2, 2);
  for (std::size_t i = 0; i < 12; ++i) rgb[i] = static_cast<float>(i);
  const Tensor raw = mosaic_rggb(rgb);
  ASSERT_EQ(raw.dims(), (Dims{4, 1, 1}));
  EXPECT_EQ(raw[0], rgb.at(0, 0, 0));
  EXPECT_EQ(raw[1], rgb.at(1, 0, 1));
  EXPECT_EQ(raw[2], rgb.at(1, 1, 0));
  EXPECT_EQ(raw[3], rgb.at(2, 1, 1));
}

TEST(Mosaic, RandomImageMatchesIndexOracle) {
  RngStream r(3, 3);
  const Tensor rgb = gaussian_noise(r, {3, 8, 8});
  const Tensor raw = mosaic_rggb(rgb);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      const std::size_t plane = 2 * (y % 2) + (x % 2);
      const std::size_t colour = plane == 0 ? 0 : plane == 3 ? 2 : 1;
      EXPECT_EQ(raw[(plane * 4 + y / 2) * 4 + x / 2], rgb[(colour * 8 + y) * 8 + x]);
    }
}

TEST(Mosaic, OddSizeRejected) { EXPECT_THROW(mosaic_rggb(Tensor({3, 5, 4})), ShapeError); }

TEST(Burst, DegenerateDegradationRepeatsTheReference) {
  RngStream r(1, 1);
  const Tensor hr = procedural_scene(r, 32);
  DegradationParams p;
  p.max_translation = 0.0;
  p.max_rotation = 0.0;
  p.noise_sigma = 0.0;
  p.scale_factor = 2;
  const BurstStack s = synthesize_burst(hr, p, r);
  const Tensor expect = mosaic_rggb(box_downsample(hr, 2));
  for (const auto& f : s.frames) EXPECT_EQ(f, expect);
}

TEST(Burst, EightFramesWithExpectedShape) {
  RngStream r(2, 2);
  const Tensor hr = procedural_scene(r, 64);
  const auto p = DegradationParams::for_crop(64, 4);
  const BurstStack s = synthesize_burst(hr, p, r);
  ASSERT_EQ(s.size(), 8u);
  EXPECT_EQ(s.offsets[s.reference_index], FrameMotion{});
  for (const auto& f : s.frames) {
    EXPECT_EQ(f.dims(), (Dims{4, 8, 8}));
    for (float v : f.values()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  for (std::size_t k = 1; k < s.size(); ++k) {
    EXPECT_LE(std::abs(s.offsets[k].dx), p.max_translation);
    EXPECT_LE(std::abs(s.offsets[k].dy), p.max_translation);
    EXPECT_LE(std::abs(s.offsets[k].theta), p.max_rotation);
  }
}

TEST(Burst, StoredOffsetsRegenerateEveryFrame) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream r(seed, 17);
    const Tensor hr = procedural_scene(r, 32);
    const auto p = DegradationParams::for_crop(32, 2);
    const RngStream start = r;
    RngStream draw = r;
    const BurstStack s = synthesize_burst(hr, p, draw);
    for (std::size_t k = 0; k < s.size(); ++k)
      ASSERT_EQ(degrade_frame(hr, s.offsets[k], p, start.substream(k)), s.frames[k]) << "seed " << seed << " frame " << k;
  }
}

TEST(Burst, PureFunctionOfInputs) {
  RngStream r(5, 5);
  const Tensor hr = procedural_scene(r, 32);
  const auto p = DegradationParams::for_crop(32, 2);
  RngStream a = r, b = r;
  const BurstStack s1 = synthesize_burst(hr, p, a), s2 = synthesize_burst(hr, p, b);
  for (std::size_t k = 0; k < s1.size(); ++k) {
    EXPECT_EQ(s1.frames[k], s2.frames[k]);
    EXPECT_EQ(s1.offsets[k], s2.offsets[k]);
  }
}

TEST(Burst, PlaneMeansMatchColourMeansWithoutNoiseOrMotion) {
  RngStream r(7, 7);
  const std::size_t sf = 4;
  const Tensor hr = block_constant_hr(64, 2 * sf, r);
  DegradationParams p;
  p.scale_factor = static_cast<int>(sf);
  p.max_translation = p.max_rotation = p.noise_sigma = 0.0;
  const BurstStack s = synthesize_burst(hr, p, r);
  const std::size_t colour_of_plane[4] = {0, 1, 1, 2};
  for (std::size_t plane = 0; plane < 4; ++plane) {
    double pm = 0.0, cm = 0.0;
    for (float v : s.frames[0].plane(plane)) pm += v;
    for (float v : hr.plane(colour_of_plane[plane])) cm += v;
    pm /= static_cast<double>(s.frames[0].plane(plane).size());
    cm /= static_cast<double>(hr.plane(0).size());
    EXPECT_NEAR(pm, cm, 1e-6) << "plane " << plane;
  }
}

TEST(Burst, ParameterValidation) {
  RngStream r(1, 1);
  const Tensor hr({3, 32, 32}, 0.5f);
  DegradationParams p;
  p.scale_factor = 3;
  EXPECT_THROW(synthesize_burst(hr, p, r), ParameterError);
  p = {};
  p.max_translation = -1.0;
  EXPECT_THROW(synthesize_burst(hr, p, r), ParameterError);
  p = {};
  p.noise_sigma = 1.5;
  EXPECT_THROW(synthesize_burst(hr, p, r), ParameterError);
  p = {};
  p.scale_factor = 8;
  EXPECT_THROW(synthesize_burst(Tensor({3, 24, 24}, 0.5f), p, r), ShapeError);
}

TEST(Burst, DatasetRoundTrip) {
  const auto root = std::filesystem::temp_directory_path() / "bdl_test_dataset";
  std::filesystem::remove_all(root);
  RngStream r(9, 9);
  const Tensor hr = procedural_scene(r, 32);
  const BurstStack s = synthesize_burst(hr, DegradationParams::for_crop(32, 2), r);
  save_sample(root, 0, hr, s);
  save_sample(root, 1, hr, s);
  EXPECT_EQ(count_samples(root), 2u);
  EXPECT_TRUE(std::filesystem::exists(root / "hr" / "0000.btsr"));
  EXPECT_TRUE(std::filesystem::exists(root / "burst" / "0001_f7.btsr"));
  const BurstStack back = load_burst(root, 1);
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    EXPECT_EQ(back.frames[k], s.frames[k]);
    EXPECT_EQ(back.offsets[k], s.offsets[k]);
  }
  EXPECT_EQ(load_hr(root, 0), hr);
  EXPECT_THROW(load_burst(root, 5), IoError);
}
