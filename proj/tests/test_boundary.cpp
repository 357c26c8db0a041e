#include <gtest/gtest.h>

#include "cwbass/boundary.hpp"
#include "support.hpp"

using namespace cwbass;
using namespace testing_support;

TEST(Sobel, ConstantMapHasNoBoundary) {
  for (int k : {0, 1, 3}) {
    LabelMap l(7, 9, k);
    auto m = boundary_from_labels(l);
    EXPECT_EQ(mask_fraction(m), 0.0);
  }
}

TEST(Sobel, KernelOrientation) {
  // class 0 left half, class 2 right half
  LabelMap l(3, 4);
  for (int y = 0; y < 3; ++y)
    for (int x = 2; x < 4; ++x) l(y, x) = 2;
  auto g = sobel_gradients(l);
  EXPECT_DOUBLE_EQ(g.gx(1, 1), 8.0);
  EXPECT_DOUBLE_EQ(g.gx(1, 2), 8.0);
  EXPECT_DOUBLE_EQ(g.gx(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(g.gy(1, 1), 0.0);
  // replicate padding keeps the top row flat vertically
  EXPECT_DOUBLE_EQ(g.gy(0, 2), 0.0);
}

TEST(Sobel, VerticalStepGivesGy) {
  LabelMap l(4, 3);
  for (int x = 0; x < 3; ++x) l(3, x) = l(2, x) = 1;
  auto g = sobel_gradients(l);
  EXPECT_DOUBLE_EQ(g.gy(1, 1), 4.0);
  EXPECT_DOUBLE_EQ(g.gx(1, 1), 0.0);
}

TEST(Sobel, MaskMatchesExplicitKernelOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = rng.range(1, 12), w = rng.range(1, 12);
    auto l = random_labels(rng, rng.range(1, 5), h, w);
    auto got = boundary_from_labels(l);
    auto want = oracle::sobel_mask(to_oracle_grid(l));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) EXPECT_EQ(got(y, x), want[y][x]) << y << "," << x;
  }
}

TEST(Sobel, EpsilonFiltersWeakResponses) {
  LabelMap l(3, 3);
  l(0, 0) = 1;  // corner pixel gives magnitudes of 1 and larger
  auto mag = gradient_magnitude(sobel_gradients(l));
  auto m0 = boundary_mask(mag, 0.0);
  auto m1 = boundary_mask(mag, 1.5);
  EXPECT_GT(mask_fraction(m0), mask_fraction(m1));
  EXPECT_THROW(sobel_gradients(LabelMap(0, 3)), InvalidInput);
}
