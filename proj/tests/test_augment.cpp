#include <gtest/gtest.h>

#include "cwbass/augment.hpp"
#include "support.hpp"

using namespace cwbass;
using namespace testing_support;

namespace {

// Image whose first channel encodes the label so alignment can be checked
// after warping.
AugmentItem coded_item(Rng& rng, int h, int w, int k) {
  AugmentItem it{Image(3, h, w), {random_labels(rng, k, h, w)}, {ConfidenceMap<double>(h, w)}};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      it.reals[0](y, x) = 0.1 + it.labels[0](y, x);
      for (int c = 0; c < 3; ++c) it.image(c, y, x) = static_cast<float>(it.labels[0](y, x));
    }
  return it;
}

}  // namespace

TEST(Geometric, IdentityParamsLeaveItemUnchanged) {
  Rng rng(1);
  auto it = coded_item(rng, 10, 12, 4);
  AugmentParams p{false, 10, 12, 0, 0, 10, 12};
  auto out = apply_geometric(it, p);
  EXPECT_EQ(out.image, it.image);
  EXPECT_EQ(out.labels[0], it.labels[0]);
  EXPECT_EQ(out.reals[0], it.reals[0]);
}

TEST(Geometric, FlipMirrorsColumns) {
  Rng rng(2);
  auto it = coded_item(rng, 6, 7, 3);
  AugmentParams p{true, 6, 7, 0, 0, 6, 7};
  auto out = apply_geometric(it, p);
  EXPECT_EQ(out.labels[0], hflip(it.labels[0]));
  EXPECT_EQ(out.image, hflip(it.image));
}

TEST(Geometric, LabelsAndMapsStayAlignedUnderRandomWarps) {
  Rng rng(3);
  AugmentConfig cfg;
  cfg.crop_h = 20;
  cfg.crop_w = 24;
  for (int trial = 0; trial < 30; ++trial) {
    auto it = coded_item(rng, 16, 18, 4);
    auto p = sample_augment_params(16, 18, cfg, rng);
    auto out = apply_geometric(it, p);
    ASSERT_EQ(out.labels[0].height(), 20);
    ASSERT_EQ(out.labels[0].width(), 24);
    for (int r = 0; r < 20; ++r)
      for (int c = 0; c < 24; ++c) {
        const auto src = source_pixel(p, 16, 18, r, c);
        if (!src) {
          EXPECT_EQ(out.labels[0](r, c), kIgnoreIndex);
          EXPECT_EQ(out.reals[0](r, c), 0.0);
          continue;
        }
        EXPECT_EQ(out.labels[0](r, c), it.labels[0](src->first, src->second));
        EXPECT_EQ(out.reals[0](r, c), 0.1 + out.labels[0](r, c));
      }
  }
}

TEST(Geometric, ScaleRangeAndDeterminism) {
  AugmentConfig cfg;
  cfg.scale_lo = 0.5;
  cfg.scale_hi = 2.0;
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) {
    auto p = sample_augment_params(40, 60, cfg, a);
    auto q = sample_augment_params(40, 60, cfg, b);
    EXPECT_EQ(p.scaled_h, q.scaled_h);
    EXPECT_EQ(p.offset_x, q.offset_x);
    EXPECT_GE(p.scaled_h, 20);
    EXPECT_LE(p.scaled_h, 80);
    EXPECT_GE(p.offset_y, 0);
    EXPECT_LE(p.offset_y + p.crop_h, std::max(p.scaled_h, p.crop_h));
  }
  cfg.scale_lo = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Geometric, RejectsMisalignedTargets) {
  AugmentItem it{Image(3, 4, 4), {LabelMap(4, 5)}, {}};
  EXPECT_THROW(apply_geometric(it, AugmentParams{false, 4, 4, 0, 0, 4, 4}), InvalidInput);
}

TEST(Strong, DisabledIsNoOp) {
  Rng rng(4);
  auto it = coded_item(rng, 8, 8, 3);
  StrongAugConfig cfg;
  cfg.enabled = false;
  Image img = it.image;
  auto labels = it.labels;
  strong_augment(img, labels, cfg, rng);
  EXPECT_EQ(img, it.image);
  EXPECT_EQ(labels, it.labels);
}

TEST(Strong, CutoutIgnoresLabelsAndValuesStayInRange) {
  Rng rng(5);
  StrongAugConfig cfg;
  cfg.cutout_p = 1.0;
  cfg.color_jitter_p = 1.0;
  for (int trial = 0; trial < 20; ++trial) {
    Image img(3, 12, 12);
    for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
    std::vector<LabelMap> labels{LabelMap(12, 12, 1)};
    strong_augment(img, labels, cfg, rng);
    std::size_t ignored = 0;
    for (auto v : labels[0].data()) {
      EXPECT_TRUE(v == 1 || v == kIgnoreIndex);
      ignored += v == kIgnoreIndex;
    }
    EXPECT_GT(ignored, 0u);
    for (float v : img.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}
