#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "biqa/raster.hpp"
#include "test_util.hpp"

using namespace biqa;
namespace bt = biqa::testing;
using bt::TempDir;

namespace {

Raster random_raster(int w, int h, int c, std::uint64_t seed) {
  Raster r(w, h, c);
  RngStream rng(seed, 3);
  for (float& v : r.data()) v = static_cast<float>(rng.uniform());
  return r;
}

Raster ramp(int w, int h) {
  Raster r(w, h, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) r.at(0, y, x) = static_cast<float>(y * w + x) / static_cast<float>(w * h);
  return r;
}

}  // namespace

TEST(Raster, WhitePgmLoadsAsOnes) {
  TempDir dir;
  bt::write_bytes(dir / "white.pgm", std::string("P5\n2 2\n255\n") + std::string(4, '\xff'));
  const auto r = load_image(dir / "white.pgm");
  EXPECT_EQ(r.width(), 2);
  EXPECT_EQ(r.height(), 2);
  EXPECT_EQ(r.channels(), 1);
  for (float v : r.data()) EXPECT_EQ(v, 1.0F);
}

TEST(Raster, PpmPixelScaledBy255) {
  TempDir dir;
  bt::write_bytes(dir / "px.ppm", std::string("P6\n1 1\n255\n") + '\x80' + '\x00' + '\xff');
  const auto r = load_image(dir / "px.ppm");
  ASSERT_EQ(r.channels(), 3);
  EXPECT_FLOAT_EQ(r.at(0, 0, 0), 128.0F / 255.0F);
  EXPECT_FLOAT_EQ(r.at(1, 0, 0), 0.0F);
  EXPECT_FLOAT_EQ(r.at(2, 0, 0), 1.0F);
}

TEST(Raster, LoadErrorsAreDistinct) {
  TempDir dir;
  EXPECT_BIQA_ERROR(load_image(dir / "absent.png"), ErrorCode::missing_file);

  bt::write_bytes(dir / "image.bmp", "BM not an image");
  EXPECT_BIQA_ERROR(load_image(dir / "image.bmp"), ErrorCode::unsupported_format);

  save_image(random_raster(16, 16, 3, 1), dir / "full.png");
  const auto bytes = bt::read_bytes(dir / "full.png");
  bt::write_bytes(dir / "truncated.png", bytes.substr(0, bytes.size() / 2));
  EXPECT_BIQA_ERROR(load_image(dir / "truncated.png"), ErrorCode::corrupt_data);

  bt::write_bytes(dir / "short.pgm", std::string("P5\n4 4\n255\n") + std::string(5, '\x10'));
  EXPECT_BIQA_ERROR(load_image(dir / "short.pgm"), ErrorCode::corrupt_data);
}

TEST(Raster, SaveLoadRoundTripWithinQuantization) {
  TempDir dir;
  for (int channels : {1, 3})
    for (const char* name : {"rt.png", "rt.pnm"}) {
      const auto r = random_raster(8, 8, channels, 11);
      save_image(r, dir / name);
      const auto back = load_image(dir / name);
      ASSERT_EQ(back.channels(), channels);
      for (std::size_t i = 0; i < r.size(); ++i) EXPECT_LE(std::abs(back.data()[i] - r.data()[i]), 1.0F / 255.0F);
    }
}

TEST(Raster, SavesAreByteIdentical) {
  TempDir dir;
  const auto r = random_raster(9, 7, 3, 5);
  save_image(r, dir / "a.png");
  save_image(r, dir / "b.png");
  EXPECT_EQ(bt::read_bytes(dir / "a.png"), bt::read_bytes(dir / "b.png"));
}

TEST(Raster, SaveToMissingDirectoryFails) {
  TempDir dir;
  EXPECT_BIQA_ERROR(save_image(random_raster(4, 4, 1, 1), dir / "nope" / "x.png"), ErrorCode::io);
}

TEST(Raster, RandomCropOfSameSizeIsIdentity) {
  const auto r = random_raster(4, 4, 3, 2);
  RngStream rng(1, 1);
  EXPECT_EQ(random_crop(r, 4, 4, rng), r);
}

TEST(Raster, RandomCropIsDeterministicForClonedStreams) {
  const auto r = random_raster(20, 17, 3, 2);
  RngStream a(42, 9);
  RngStream b = a;
  EXPECT_EQ(random_crop(r, 8, 8, a), random_crop(r, 8, 8, b));
}

TEST(Raster, RandomCropIsContiguousWindow) {
  const auto r = ramp(10, 9);
  RngStream rng(3, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_crop(r, 4, 3, rng);
    const int origin = static_cast<int>(std::lround(c.at(0, 0, 0) * 90.0F));
    const int x0 = origin % 10, y0 = origin / 10;
    EXPECT_EQ(c, crop(r, x0, y0, 4, 3));
  }
}

TEST(Raster, CropLargerThanImageFails) {
  const auto r = random_raster(4, 4, 1, 2);
  RngStream rng(1, 1);
  EXPECT_BIQA_ERROR(random_crop(r, 8, 8, rng), ErrorCode::out_of_range);
  EXPECT_BIQA_ERROR(center_crop(r, 5, 4), ErrorCode::out_of_range);
}

TEST(Raster, RandomCropOffsetsAreUniform) {
  // width 5, crop 2: four horizontal offsets
  const auto r = ramp(5, 4);
  RngStream rng(2024, 1);
  std::array<int, 4> counts{};
  constexpr int kDraws = 10000;
  for (int i = 0; i < kDraws; ++i) {
    const auto c = random_crop(r, 2, 4, rng);
    const int x0 = static_cast<int>(std::lround(c.at(0, 0, 0) * 20.0F));
    ASSERT_GE(x0, 0);
    ASSERT_LT(x0, 4);
    ++counts[static_cast<std::size_t>(x0)];
  }
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - kDraws / 4.0) * (c - kDraws / 4.0) / (kDraws / 4.0);
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(3.0), chi2));
  EXPECT_GT(p, 0.01) << "chi2 = " << chi2;
}

TEST(Raster, CenterCropMargins) {
  const auto r = ramp(4, 4);
  EXPECT_EQ(center_crop(r, 4, 4), r);
  EXPECT_EQ(center_crop(r, 2, 2), crop(r, 1, 1, 2, 2));
  EXPECT_EQ(center_crop(r, 3, 3), crop(r, 0, 0, 3, 3));
}

TEST(Raster, FlipIsInvolutionAndReversesRows) {
  Raster two(2, 1, 1, std::vector<float>{0.0F, 1.0F});
  const auto flipped = apply_augmentation(two, {true, 0});
  EXPECT_EQ(flipped.at(0, 0, 0), 1.0F);
  EXPECT_EQ(flipped.at(0, 0, 1), 0.0F);
  const auto r = random_raster(7, 5, 3, 8);
  EXPECT_EQ(flip_horizontal(flip_horizontal(r)), r);
  EXPECT_EQ(apply_augmentation(apply_augmentation(r, {true, 0}), {true, 0}), r);
}

TEST(Raster, ZeroRotationIsIdentity) {
  const auto r = random_raster(6, 4, 1, 8);
  EXPECT_EQ(apply_augmentation(r, {false, 0}), r);
  EXPECT_EQ(rotate_quarter(rotate_quarter(r, 1), 3), r);
  const auto q = rotate_quarter(r, 1);
  EXPECT_EQ(q.width(), 4);
  EXPECT_EQ(q.height(), 6);
  // counter-clockwise: top-right corner moves to top-left
  EXPECT_EQ(q.at(0, 0, 0), r.at(0, 0, 5));
}

TEST(Raster, AugmentationDrawsCoverTheDiscreteSet) {
  RngStream rng(77, 0);
  std::set<std::pair<bool, int>> seen;
  int flips = 0;
  for (int i = 0; i < 4000; ++i) {
    const auto c = draw_augmentation(rng);
    seen.emplace(c.flip, c.quarter_turns);
    flips += c.flip;
    ASSERT_GE(c.quarter_turns, 0);
    ASSERT_LT(c.quarter_turns, 4);
  }
  EXPECT_EQ(seen.size(), 8U);
  EXPECT_NEAR(flips / 4000.0, 0.5, 0.03);
}

TEST(Raster, TrainingPipelineUsesOnlyPermittedTransforms) {
  const std::set<TrainingTransform> permitted{TrainingTransform::random_crop, TrainingTransform::horizontal_flip,
                                              TrainingTransform::right_angle_rotation};
  const std::set<TrainingTransform> used(std::begin(kTrainingTransforms), std::end(kTrainingTransforms));
  EXPECT_EQ(used, permitted);
  // augment is a pure permutation of pixels: the multiset of values is preserved
  const auto r = random_raster(8, 8, 3, 4);
  RngStream rng(5, 5);
  for (int i = 0; i < 20; ++i) {
    auto a = augment(r, rng);
    std::vector<float> x(r.data().begin(), r.data().end()), y(a.data().begin(), a.data().end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    EXPECT_EQ(x, y);
  }
}

TEST(Raster, OutputsStayInUnitRange) {
  RngStream rng(9, 9);
  for (int trial = 0; trial < 100; ++trial) {
    const int w = 4 + static_cast<int>(rng.uniform_int(20)), h = 4 + static_cast<int>(rng.uniform_int(20));
    Raster r(w, h, trial % 2 ? 3 : 1);
    for (float& v : r.data()) v = static_cast<float>(rng.uniform(-2.0, 3.0));
    if (trial % 10 == 0) r.data()[0] = std::nanf("");
    r.clamp();
    const auto outs = {random_crop(r, 3, 3, rng), center_crop(r, 4, 4), augment(r, rng)};
    for (const auto& o : outs)
      for (float v : o.data()) {
        ASSERT_TRUE(std::isfinite(v));
        ASSERT_GE(v, 0.0F);
        ASSERT_LE(v, 1.0F);
      }
  }
}

TEST(Rng, StreamsAreReproducibleAndIndependent) {
  RngStream a(1, 2), b(1, 2), c(1, 3);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
  // pinned values guard cross-platform stability
  RngStream p(0, 0);
  const auto first = p.next_u64();
  EXPECT_EQ(first, splitmix64(mix_seed(0, 0) ^ splitmix64(0)));
}
