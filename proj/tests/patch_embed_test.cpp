#include <gtest/gtest.h>

#include "svmamba/patch_embed.hpp"
#include "test_support.hpp"

using namespace svmamba;
using svmamba::test::random_image;
using svmamba::test::random_stem;

namespace {

// Per-output-channel accumulation in a different loop order from patchify.
FeatureMap patchify_oracle(const ImageTensor& img, const StemWeights& w) {
  const std::size_t p = w.patch;
  FeatureMap f(img.height / p, img.width / p, w.out_channels);
  for (std::size_t o = 0; o < w.out_channels; ++o)
    for (std::size_t r = 0; r < f.hp; ++r)
      for (std::size_t c = 0; c < f.wp; ++c) {
        double acc = w.bias[o];
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            for (std::size_t ch = 0; ch < img.channels; ++ch) {
              const std::size_t k = (dy * p + dx) * img.channels + ch;
              acc += static_cast<double>(img.at(r * p + dy, c * p + dx, ch)) * w.projection[k * w.out_channels + o];
            }
        f.at(r, c, o) = acc;
      }
  return f;
}

}  // namespace

TEST(Patchify, MatchesOracle) {
  const auto img = random_image(12, 8, 3, 4);
  const auto w = random_stem(4, 3, 5, 8);
  const auto f = patchify(img, w);
  const auto ref = patchify_oracle(img, w);
  ASSERT_EQ(f.hp, 3u);
  ASSERT_EQ(f.wp, 2u);
  for (std::size_t i = 0; i < f.data.size(); ++i) EXPECT_NEAR(f.data[i], ref.data[i], 1e-12);
}

TEST(Patchify, SinglePixelPatchIsAffineMap) {
  StemWeights w;
  w.patch = 1;
  w.in_channels = 3;
  w.out_channels = 1;
  w.projection = {1.0f, 2.0f, 4.0f};
  w.bias = {0.5f};
  const auto img = ImageTensor::from_data(1, 2, 3, {1.0f, 0.0f, 0.0f, 0.0f, 0.5f, 1.0f});
  const auto f = patchify(img, w);
  EXPECT_DOUBLE_EQ(f.at(0, 0, 0), 1.5);
  EXPECT_DOUBLE_EQ(f.at(0, 1, 0), 5.5);
}

TEST(Patchify, ShapeErrors) {
  const auto w = random_stem(4, 3, 2, 1);
  EXPECT_THROW(patchify(random_image(10, 8, 3, 1), w), Error);
  EXPECT_THROW(patchify(random_image(8, 8, 1, 1), w), Error);
  StemWeights bad = w;
  bad.bias.pop_back();
  EXPECT_THROW(patchify(random_image(8, 8, 3, 1), bad), Error);
}

TEST(RotateFeatureMap, KeepsTokenContents) {
  const auto f = test::random_feature_map(3, 5, 4, 2);
  const auto r = rotate_feature_map(f, QuarterTurn(1));
  ASSERT_EQ(r.hp, 5u);
  ASSERT_EQ(r.wp, 3u);
  for (std::size_t i = 0; i < r.hp; ++i)
    for (std::size_t j = 0; j < r.wp; ++j)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(r.at(i, j, c), f.at(j, f.wp - 1 - i, c));
  EXPECT_EQ(rotate_feature_map(r, QuarterTurn(3)), f);
}

TEST(Rfn, FullTurnSetIsExactlyEquivariant) {
  const auto w = random_stem(4, 3, 6, 3);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto img = random_image(16, 16, 3, seed);
    const auto base = rfn_aggregate(img, w, all_quarter_turns());
    for (int q = 1; q < 4; ++q) {
      const auto rotated = rfn_aggregate(rotate_quarter(img, QuarterTurn(q)), w, all_quarter_turns());
      EXPECT_EQ(rotated, rotate_feature_map(base, QuarterTurn(q))) << "seed " << seed << " q " << q;
    }
  }
}

TEST(Rfn, IsElementwiseMaxOfBackRotatedBranches) {
  const auto w = random_stem(2, 3, 3, 5);
  const auto img = random_image(6, 6, 3, 6);
  const auto f = rfn_aggregate(img, w, all_quarter_turns());
  std::vector<FeatureMap> branches;
  for (int q = 0; q < 4; ++q)
    branches.push_back(rotate_feature_map(patchify_oracle(rotate_quarter(img, QuarterTurn(q)), w), QuarterTurn(-q)));
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    double best = branches[0].data[i];
    for (const auto& b : branches) best = std::max(best, b.data[i]);
    EXPECT_NEAR(f.data[i], best, 1e-12);
  }
}

TEST(Rfn, IdentityTurnEqualsPatchify) {
  const auto w = random_stem(4, 3, 4, 7);
  const auto img = random_image(8, 12, 3, 2);
  EXPECT_EQ(rfn_aggregate(img, w, {QuarterTurn(0)}), patchify(img, w));
  EXPECT_NO_THROW(rfn_aggregate(img, w, {QuarterTurn(0), QuarterTurn(2)}));
}

TEST(Rfn, WithoutRotationsEquivarianceBreaks) {
  const auto w = random_stem(4, 3, 4, 7);
  const auto img = random_image(16, 16, 3, 12);
  const auto base = rfn_aggregate(img, w, {QuarterTurn(0)});
  const auto rotated = rfn_aggregate(rotate_quarter(img, QuarterTurn(1)), w, {QuarterTurn(0)});
  EXPECT_NE(rotated, rotate_feature_map(base, QuarterTurn(1)));
}

TEST(Rfn, OddTurnsNeedSquareImage) {
  const auto w = random_stem(4, 3, 2, 1);
  EXPECT_THROW(rfn_aggregate(random_image(8, 12, 3, 1), w, all_quarter_turns()), Error);
  EXPECT_THROW(rfn_aggregate(random_image(8, 8, 3, 1), w, std::vector<QuarterTurn>{}), Error);
}

TEST(Rfn, ParallelMatchesSerialBitwise) {
  const auto w = random_stem(4, 3, 8, 9);
  const auto img = random_image(24, 24, 3, 10);
  EXPECT_EQ(rfn_aggregate(img, w, all_quarter_turns(), true), rfn_aggregate(img, w, all_quarter_turns(), false));
}
