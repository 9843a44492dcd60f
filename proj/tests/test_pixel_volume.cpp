#include <gtest/gtest.h>

#include <vector>

#include "chromalayer/pixel_volume.hpp"

using namespace chromalayer;

TEST(PixelVolume, IndexMatchesRowMajorFrameLayout) {
  PixelVolume v(5, 4, 3);
  EXPECT_EQ(v.index(0, 0, 0), 0u);
  EXPECT_EQ(v.index(4, 0, 0), 4u);
  EXPECT_EQ(v.index(0, 1, 0), 5u);
  EXPECT_EQ(v.index(2, 3, 2), (2u * 4 + 3) * 5 + 2);
}

TEST(PixelVolume, IndexAndCoordAreInverse) {
  PixelVolume v(7, 3, 4);
  std::vector<bool> seen(v.pixel_count(), false);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t y = 0; y < 3; ++y) {
      for (std::size_t x = 0; x < 7; ++x) {
        const std::size_t p = v.index(x, y, t);
        ASSERT_LT(p, v.pixel_count());
        EXPECT_FALSE(seen[p]);
        seen[p] = true;
        const PixelCoord c = v.coord(p);
        EXPECT_EQ(c.x, x);
        EXPECT_EQ(c.y, y);
        EXPECT_EQ(c.t, t);
      }
    }
  }
}

TEST(PixelVolume, ChannelsAreClampedAndNanBecomesZero) {
  PixelVolume v(2, 1, 1, {-0.5f, 0.25f, 1.5f, std::numeric_limits<float>::quiet_NaN(), 1.0f, 0.0f});
  EXPECT_EQ(v.color(0), (Rgb{0.0, 0.25, 1.0}));
  EXPECT_EQ(v.color(1), (Rgb{0.0, 1.0, 0.0}));
  v.set_color(0, {2.0, -1.0, 0.5});
  EXPECT_EQ(v.color(0), (Rgb{1.0, 0.0, 0.5}));
}

TEST(PixelVolume, RejectsDataOfWrongLength) {
  EXPECT_THROW(PixelVolume(2, 2, 1, std::vector<float>(11)), InvalidArgument);
}

TEST(PixelVolume, FrameViewsAndCopies) {
  PixelVolume v(2, 2, 2);
  v.set_color(v.index(1, 1, 1), {0.1, 0.2, 0.3});
  EXPECT_EQ(v.frame(1).size(), 12u);
  EXPECT_FLOAT_EQ(v.frame(1)[9], 0.1f);
  const PixelVolume f = v.frame_volume(1);
  EXPECT_EQ(f.frames(), 1u);
  EXPECT_EQ(f.color(3), v.color(v.index(1, 1, 1)));
}

TEST(PixelVolume, StackFramesConcatenatesAndChecksSizes) {
  std::vector<PixelVolume> frames{PixelVolume(3, 2), PixelVolume(3, 2)};
  frames[1].set_color(0, {1.0, 1.0, 1.0});
  const PixelVolume s = stack_frames(frames);
  EXPECT_EQ(s.frames(), 2u);
  EXPECT_EQ(s.color(s.index(0, 0, 1)), (Rgb{1.0, 1.0, 1.0}));
  frames.emplace_back(2, 3);
  EXPECT_THROW(stack_frames(frames), FormatError);
  EXPECT_THROW(stack_frames(std::span<const PixelVolume>{}), InvalidArgument);
}

TEST(PixelVolume, DistanceHelpers) {
  EXPECT_DOUBLE_EQ(squared_distance({0, 0, 0}, {1, 2, 2}), 9.0);
  EXPECT_DOUBLE_EQ(distance({0, 0, 0}, {1, 2, 2}), 3.0);
}
