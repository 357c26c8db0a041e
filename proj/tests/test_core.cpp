#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cwbass/core.hpp"
#include "cwbass/serialize.hpp"
#include "support.hpp"

using namespace cwbass;
using namespace testing_support;

TEST(Containers, IndexingIsRowMajorPerChannel) {
  Tensor3<int> t(2, 3, 4);
  t(1, 2, 3) = 7;
  EXPECT_EQ(t.data()[1 * 12 + 2 * 4 + 3], 7);
  EXPECT_EQ(t.plane(), 12u);
  EXPECT_EQ(t.channel(1)[11], 7);

  Map2<int> m(3, 5);
  m(2, 4) = 9;
  EXPECT_EQ(m[14], 9);
}

TEST(Containers, NegativeDimensionsRejected) {
  EXPECT_THROW(Tensor3<float>(-1, 2, 2), InvalidInput);
  EXPECT_THROW(Map2<float>(2, -3), InvalidInput);
}

TEST(Sample, ValidateRejectsMismatchedDimsAndBadLabels) {
  SegSample s{"a", Image(3, 4, 4), LabelMap(4, 4)};
  EXPECT_NO_THROW(validate_sample(s, 3));
  (*s.label)(1, 1) = 3;
  EXPECT_THROW(validate_sample(s, 3), InvalidInput);
  (*s.label)(1, 1) = kIgnoreIndex;
  EXPECT_NO_THROW(validate_sample(s, 3));
  s.label = LabelMap(4, 5);
  EXPECT_THROW(validate_sample(s, 3), InvalidInput);
}

TEST(Sample, BatchRequiresUniformShapes) {
  EXPECT_THROW(SegBatch(std::vector<SegSample>{}), InvalidInput);
  std::vector<SegSample> v{{"a", Image(3, 4, 4), {}}, {"b", Image(3, 4, 5), {}}};
  EXPECT_THROW(SegBatch(std::move(v)), InvalidInput);
}

TEST(Softmax, MatchesBruteForceAndSumsToOne) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto z = random_logits<double>(rng, 4, 3, 5, 8.0);
    auto p = softmax_probs(z);
    auto o = to_oracle(z);
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 5; ++x) {
        double s = 0;
        for (int c = 0; c < 4; ++c) {
          EXPECT_NEAR(p(c, y, x), static_cast<double>(oracle::softmax(o, y, x, c)), 1e-14);
          s += p(c, y, x);
        }
        EXPECT_NEAR(s, 1.0, 1e-14);
      }
  }
}

TEST(Softmax, StableForLargeLogits) {
  LogitMap<float> z(2, 1, 1);
  z(0, 0, 0) = 1000.0f;
  z(1, 0, 0) = 999.0f;
  auto p = softmax_probs(z);
  EXPECT_NEAR(p(0, 0, 0), 1.0 / (1.0 + std::exp(-1.0)), 1e-6);
}

TEST(Softmax, RejectsNonFinite) {
  LogitMap<float> z(2, 1, 2);
  z(1, 0, 1) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(softmax_probs(z), InvalidInput);
  z(1, 0, 1) = std::numeric_limits<float>::infinity();
  EXPECT_THROW(argmax_labels(z), InvalidInput);
}

TEST(Argmax, TiesGoToLowestIndex) {
  LogitMap<double> z(3, 1, 2);
  z(0, 0, 0) = 1;
  z(1, 0, 0) = 2;
  z(2, 0, 0) = 2;
  auto l = argmax_labels(z);
  EXPECT_EQ(l(0, 0), 1);
  EXPECT_EQ(l(0, 1), 0);  // all zero
}

TEST(Confidence, IsMaxProbability) {
  Rng rng(5);
  auto z = random_logits<double>(rng, 3, 4, 4);
  auto conf = max_confidence(softmax_probs(z));
  auto o = to_oracle(z);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      EXPECT_NEAR(conf(y, x), static_cast<double>(oracle::max_softmax(o, y, x)), 1e-14);
      EXPECT_GE(conf(y, x), 1.0 / 3.0 - 1e-15);
    }
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs |= x != c.next();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, RangeIsInclusiveAndStateRoundTrips) {
  Rng r(1);
  bool lo = false, hi = false;
  for (int i = 0; i < 2000; ++i) {
    const int v = r.range(-2, 2);
    ASSERT_GE(v, -2);
    ASSERT_LE(v, 2);
    lo |= v == -2;
    hi |= v == 2;
  }
  EXPECT_TRUE(lo && hi);
  const std::string st = r.state();
  const double u = r.uniform();
  r.set_state(st);
  EXPECT_EQ(r.uniform(), u);
  EXPECT_THROW(r.set_state("garbage"), LoadError);
  EXPECT_THROW(r.below(0), InvalidInput);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(9);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  r.shuffle(v.begin(), v.end());
  auto s = v;
  std::sort(s.begin(), s.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(s[i], i);
}

TEST(Serialize, RoundTripAndTagCheck) {
  std::stringstream ss;
  {
    BinaryWriter w(ss);
    w.put_tag("ABCD");
    w.put<std::int32_t>(-5);
    w.put_string("hello");
    std::vector<double> v{1.5, -2.25};
    w.put_array<double>(v);
    w.check();
  }
  BinaryReader r(ss);
  r.expect_tag("ABCD");
  EXPECT_EQ(r.get<std::int32_t>(), -5);
  EXPECT_EQ(r.get_string(), "hello");
  auto v = r.get_array<double>();
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[1], -2.25);
  EXPECT_THROW(r.get<std::int32_t>(), LoadError);

  std::stringstream bad("WXYZ");
  BinaryReader rb(bad);
  EXPECT_THROW(rb.expect_tag("ABCD"), LoadError);
}
