#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "briges/errors.hpp"
#include "briges/feature_alignment.hpp"
#include "testing.hpp"

using namespace briges;

namespace {

FeatureMap random_map(std::size_t h, std::size_t w, std::size_t c, std::mt19937_64& rng) {
  return FeatureMap(h, w, briges::testing::random_tensor({h * w, c}, rng));
}

// Align-corners bilinear sample written directly from the formula.
double bilinear_ref(const FeatureMap& f, std::size_t ch, std::size_t ty, std::size_t tx, std::size_t th,
                    std::size_t tw) {
  auto src = [](std::size_t t, std::size_t n_dst, std::size_t n_src) {
    return n_dst > 1 ? static_cast<double>(t) * static_cast<double>(n_src - 1) / static_cast<double>(n_dst - 1)
                     : 0.0;
  };
  const double y = src(ty, th, f.height), x = src(tx, tw, f.width);
  const auto y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, f.height - 1), x1 = std::min(x0 + 1, f.width - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  return (1 - fy) * ((1 - fx) * f.at(y0, x0, ch) + fx * f.at(y0, x1, ch)) +
         fy * ((1 - fx) * f.at(y1, x0, ch) + fx * f.at(y1, x1, ch));
}

}  // namespace

TEST(Bilinear, ConstantStaysConstant) {
  const FeatureMap f(3, 5, 2, 4.25);
  for (auto [h, w] : {std::pair{1, 1}, {7, 2}, {3, 5}, {10, 13}}) {
    const FeatureMap r = bilinear_resize(f, h, w);
    ASSERT_EQ(r.grid(), (Grid{static_cast<std::size_t>(h), static_cast<std::size_t>(w)}));
    for (double v : r.data.values()) EXPECT_NEAR(v, 4.25, 1e-14);
  }
}

TEST(Bilinear, SameGridIsIdentity) {
  std::mt19937_64 rng(1);
  const FeatureMap f = random_map(4, 6, 3, rng);
  EXPECT_EQ(bilinear_resize(f, 4, 6).data.storage(), f.data.storage());
}

TEST(Bilinear, TwoByTwoToThreeByThree) {
  const FeatureMap f(2, 2, Tensor({4, 1}, std::vector<double>{0, 1, 2, 3}));
  const FeatureMap r = bilinear_resize(f, 3, 3);
  const double expected[] = {0, 0.5, 1, 1, 1.5, 2, 2, 2.5, 3};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(r.data[i], expected[i], 1e-15);
}

TEST(Bilinear, ZeroTargetRejected) {
  const FeatureMap f(2, 2, 1);
  EXPECT_THROW(bilinear_resize(f, 0, 3), ParameterError);
  EXPECT_THROW(bilinear_resize(f, 3, 0), ParameterError);
}

TEST(Bilinear, MatchesFormulaAndStaysInRange) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> side(1, 7);
  for (int trial = 0; trial < 100; ++trial) {
    const FeatureMap f = random_map(side(rng), side(rng), 2, rng);
    const std::size_t th = side(rng), tw = side(rng);
    const FeatureMap r = bilinear_resize(f, th, tw);
    for (std::size_t c = 0; c < 2; ++c) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t t = 0; t < f.grid().tokens(); ++t) {
        lo = std::min(lo, f.data.at(t, c));
        hi = std::max(hi, f.data.at(t, c));
      }
      for (std::size_t y = 0; y < th; ++y) {
        for (std::size_t x = 0; x < tw; ++x) {
          const double v = r.at(y, x, c);
          EXPECT_NEAR(v, bilinear_ref(f, c, y, x, th, tw), 1e-12);
          EXPECT_GE(v, lo - 1e-12);
          EXPECT_LE(v, hi + 1e-12);
        }
      }
    }
  }
}

TEST(MaxPool, ConstantAndSingleWindow) {
  const FeatureMap flat(4, 2, 3, -1.5);
  const FeatureMap pooled = max_pool_2x2(flat);
  for (double v : pooled.data.values()) EXPECT_EQ(v, -1.5);
  const FeatureMap w(2, 2, Tensor({4, 1}, std::vector<double>{1, 2, 3, 4}));
  const FeatureMap p = max_pool_2x2(w);
  ASSERT_EQ(p.grid(), (Grid{1, 1}));
  EXPECT_EQ(p.data[0], 4.0);
}

TEST(MaxPool, OddGridRejected) {
  EXPECT_THROW(max_pool_2x2(FeatureMap(3, 4, 1)), ParameterError);
  EXPECT_THROW(max_pool_2x2(FeatureMap(4, 5, 1)), ParameterError);
}

TEST(MaxPool, MatchesExhaustiveScan) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const FeatureMap f = random_map(4, 4, 2, rng);
    const FeatureMap p = max_pool_2x2(f);
    for (std::size_t y = 0; y < 2; ++y) {
      for (std::size_t x = 0; x < 2; ++x) {
        for (std::size_t c = 0; c < 2; ++c) {
          double best = -1e300;
          for (std::size_t yy = 0; yy < 4; ++yy) {
            for (std::size_t xx = 0; xx < 4; ++xx) {
              if (yy / 2 == y && xx / 2 == x) best = std::max(best, f.at(yy, xx, c));
            }
          }
          EXPECT_EQ(p.at(y, x, c), best);
        }
      }
    }
  }
}

TEST(AlignSemantic, ConstantSameGrid) {
  const FeatureMap f(5, 3, 2, 0.75);
  const FeatureMap a = align_semantic(f, {5, 3});
  ASSERT_EQ(a.grid(), (Grid{5, 3}));
  for (double v : a.data.values()) EXPECT_NEAR(v, 0.75, 1e-14);
}

TEST(AlignSemantic, DominatesBilinearAtTargetLocations) {
  // 8x8 -> 4x4: the intermediate grid is the source itself, and each target
  // location (y * 7/3) falls inside the rows/columns of its pooling window.
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureMap f = random_map(8, 8, 3, rng);
    const FeatureMap a = align_semantic(f, {4, 4});
    ASSERT_EQ(a.grid(), (Grid{4, 4}));
    ASSERT_EQ(a.channels(), 3u);
    const FeatureMap lin = bilinear_resize(f, 4, 4);
    for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_GE(a.data[i], lin.data[i] - 1e-12);
  }
}

TEST(AlignSemantic, NestedGridsPoolDominates) {
  // Source 2x2, target 1x1 x ... use 1-token targets and 2x2 pools: the 2x2
  // intermediate grid shares its corners with the source, so every output
  // is the max of source values that the coarse bilinear grid also samples.
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const FeatureMap f = random_map(2, 2, 2, rng);
    const FeatureMap a = align_semantic(f, {1, 1});
    const FeatureMap coarse = bilinear_resize(f, 1, 1);
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_GE(a.data.at(0, c), coarse.data.at(0, c));
      EXPECT_EQ(a.data.at(0, c), std::max({f.at(0, 0, c), f.at(0, 1, c), f.at(1, 0, c), f.at(1, 1, c)}));
    }
  }
}

TEST(AlignSemantic, MatchesComposedOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const FeatureMap f = random_map(6, 6, 2, rng);
    const FeatureMap a = align_semantic(f, {3, 3});
    ASSERT_EQ(a.grid(), (Grid{3, 3}));
    for (std::size_t y = 0; y < 3; ++y) {
      for (std::size_t x = 0; x < 3; ++x) {
        for (std::size_t c = 0; c < 2; ++c) {
          double best = -1e300;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              best = std::max(best, bilinear_ref(f, c, 2 * y + dy, 2 * x + dx, 6, 6));
            }
          }
          EXPECT_NEAR(a.at(y, x, c), best, 1e-12);
        }
      }
    }
  }
}

TEST(AlignSemantic, OutputGridAlwaysMatchesTarget) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> side(1, 9);
  for (int trial = 0; trial < 100; ++trial) {
    const FeatureMap f = random_map(side(rng), side(rng), 1, rng);
    const Grid target{side(rng), side(rng)};
    EXPECT_EQ(align_semantic(f, target).grid(), target);
  }
}

TEST(Preprocess, SquareInputNeedsNoCrop) {
  std::mt19937_64 rng(8);
  const FeatureMap img = random_map(6, 6, 3, rng);
  std::mt19937_64 a(1);
  const FeatureMap out = preprocess_image(img, 4, a);
  EXPECT_EQ(out.data.storage(), bilinear_resize(img, 4, 4).data.storage());
}

TEST(Preprocess, ConstantImageStaysConstant) {
  const FeatureMap img(5, 9, 3, 0.3);
  std::mt19937_64 rng(2);
  const FeatureMap out = preprocess_image(img, 4, rng);
  ASSERT_EQ(out.grid(), (Grid{4, 4}));
  for (double v : out.data.values()) EXPECT_NEAR(v, 0.3, 1e-14);
}

TEST(Preprocess, CropIsAWindowOfTheResizedImage) {
  std::mt19937_64 src(9);
  const FeatureMap img = random_map(10, 20, 1, src);
  const FeatureMap resized = bilinear_resize(img, 4, 8);
  std::mt19937_64 r1(42), r2(42);
  const FeatureMap a = preprocess_image(img, 4, r1);
  const FeatureMap b = preprocess_image(img, 4, r2);
  EXPECT_EQ(a.data.storage(), b.data.storage());
  // Find the column offset: the crop must equal exactly one window.
  int matches = 0;
  for (std::size_t off = 0; off + 4 <= 8; ++off) {
    bool same = true;
    for (std::size_t y = 0; y < 4 && same; ++y) {
      for (std::size_t x = 0; x < 4 && same; ++x) same = a.at(y, x, 0) == resized.at(y, off + x, 0);
    }
    matches += same;
  }
  EXPECT_EQ(matches, 1);
}

TEST(Preprocess, LongSideRoundsHalfUp) {
  // 4 x 9 with S = 2 scales the long side to 4.5, which rounds to 5.
  std::mt19937_64 src(10);
  const FeatureMap img = random_map(4, 9, 1, src);
  const FeatureMap resized = bilinear_resize(img, 2, 5);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const FeatureMap out = preprocess_image(img, 2, rng);
    ASSERT_EQ(out.grid(), (Grid{2, 2}));
    bool found = false;
    for (std::size_t off = 0; off + 2 <= 5; ++off) {
      bool same = true;
      for (std::size_t y = 0; y < 2; ++y) {
        for (std::size_t x = 0; x < 2; ++x) same = same && out.at(y, x, 0) == resized.at(y, off + x, 0);
      }
      found = found || same;
    }
    EXPECT_TRUE(found) << "seed " << seed;
  }
}
