#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cwbass/pseudo_label.hpp"
#include "support.hpp"

using namespace cwbass;
using namespace testing_support;

namespace {

// Deterministic fake teacher: logits depend only on pixel position and a
// scale knob, so outputs are reproducible without a network.
struct FakeTeacher {
  int k = 3;
  double scale = 1.0;
  LogitMap<float> operator()(const Image& img) const {
    LogitMap<float> z(k, img.height(), img.width());
    for (int c = 0; c < k; ++c)
      for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
          z(c, y, x) = static_cast<float>(scale * std::sin(0.7 * c + 0.3 * y - 0.2 * x) +
                                          img(0, y, x));
    return z;
  }
};

std::vector<SegSample> unlabeled_set(int n, int h = 5, int w = 6) {
  std::vector<SegSample> v;
  Rng rng(17);
  for (int i = 0; i < n; ++i) {
    Image im(3, h, w);
    for (auto& p : im.data()) p = static_cast<float>(rng.uniform());
    v.push_back({"u" + std::to_string(i), std::move(im), std::nullopt});
  }
  return v;
}

}  // namespace

TEST(Threshold, InitialIsHalfBaseClamped) {
  EXPECT_DOUBLE_EQ(ThresholdState::initial(0.6, 0.5).current, 0.3);
  EXPECT_DOUBLE_EQ(ThresholdState::initial(1.0, 0.5).current, 0.5);
  EXPECT_DOUBLE_EQ(ThresholdState::initial(0.2, 0.5).current, 0.3);
  EXPECT_THROW(ThresholdState::initial(0.0, 0.5), ConfigError);
  EXPECT_THROW(ThresholdState::initial(0.6, -1.0), ConfigError);
}

TEST(Threshold, MatchesOracleOverGrid) {
  for (double t0 : {0.4, 0.6, 0.9, 1.0})
    for (double beta : {0.0, 0.5, 1.0, 5.0, 20.0})
      for (double p = 0.0; p <= 1.0; p += 0.05) {
        auto s = update_threshold(ThresholdState::initial(t0, beta), p);
        EXPECT_NEAR(s.current, static_cast<double>(oracle::threshold(t0, beta, p)), 1e-12)
            << t0 << " " << beta << " " << p;
      }
}

TEST(Threshold, WorkedValues) {
  auto s = ThresholdState::initial(0.6, 0.5);
  EXPECT_NEAR(update_threshold(s, 0.5).current, 0.30, 1e-12);
  EXPECT_NEAR(update_threshold(s, 1.0).current, 0.6 / (1 + std::exp(-0.25)), 1e-12);
  EXPECT_NEAR(update_threshold(s, 1.0).current, 0.3374, 1e-4);
}

TEST(Threshold, StaysInClampAndIsMonotone) {
  auto s = ThresholdState::initial(1.0, 20.0);
  double prev = 0;
  for (double p = 0.0; p <= 1.0; p += 0.01) {
    const double t = update_threshold(s, p).current;
    EXPECT_GE(t, 0.3);
    EXPECT_LE(t, 0.8);
    EXPECT_GE(t, prev);
    prev = t;
  }
  EXPECT_DOUBLE_EQ(update_threshold(s, 1.0).current, 0.8);
  EXPECT_DOUBLE_EQ(update_threshold(s, 0.0).current, 0.3);
}

TEST(Threshold, RejectsOutOfRangeMean) {
  auto s = ThresholdState::initial(0.6, 0.5);
  EXPECT_THROW(update_threshold(s, -0.01), InvalidInput);
  EXPECT_THROW(update_threshold(s, 1.01), InvalidInput);
  EXPECT_THROW(update_threshold(s, std::nan("")), InvalidInput);
}

TEST(MeanConfidence, NestedMeanMatchesOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const int b = rng.range(1, 5);
    std::vector<ConfidenceMap<double>> confs;
    std::vector<oracle::Field> of;
    for (int i = 0; i < b; ++i) {
      // differing sizes make the nested mean differ from the pooled mean
      confs.push_back(random_confidence<double>(rng, rng.range(1, 6), rng.range(1, 6)));
      of.push_back(to_oracle_grid(confs.back()));
    }
    EXPECT_NEAR(batch_mean_confidence<double>(confs),
                static_cast<double>(oracle::batch_mean_confidence(of)), 1e-12);
  }
}

TEST(MeanConfidence, IgnorePixelsExcludedAndEmptyRejected) {
  ConfidenceMap<double> c(1, 4);
  c[0] = 0.2;
  c[1] = 0.4;
  c[2] = 0.9;
  c[3] = 1.0;
  LabelMap l(1, 4);
  l[2] = kIgnoreIndex;
  l[3] = kIgnoreIndex;
  std::vector<ConfidenceMap<double>> cs{c};
  std::vector<LabelMap> ls{l};
  EXPECT_NEAR(batch_mean_confidence<double>(cs, ls), 0.3, 1e-15);
  EXPECT_THROW(batch_mean_confidence<double>(std::span<const ConfidenceMap<double>>{}),
               InvalidInput);
  l[0] = l[1] = kIgnoreIndex;
  std::vector<LabelMap> all_ignored{l};
  EXPECT_THROW(batch_mean_confidence<double>(cs, all_ignored), InvalidInput);
}

TEST(Retention, BoundaryValueIsRetained) {
  ConfidenceMap<double> c(1, 3);
  c[0] = 0.29999;
  c[1] = 0.3;
  c[2] = 0.31;
  auto m = retain_mask(c, 0.3);
  EXPECT_EQ(m[0], 0);
  EXPECT_EQ(m[1], 1);
  EXPECT_EQ(m[2], 1);
}

TEST(PseudoLabels, GeneratedFromTeacherArgmaxAndMaxProb) {
  FakeTeacher t{4, 2.0};
  auto samples = unlabeled_set(3);
  SegBatch batch(samples);
  auto pls = generate_pseudo_labels(t, batch, 4);
  ASSERT_EQ(pls.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    auto z = t(samples[i].image);
    auto o = to_oracle(z);
    for (int y = 0; y < z.height(); ++y)
      for (int x = 0; x < z.width(); ++x) {
        int best = 0;
        for (int c = 1; c < 4; ++c)
          if (z(c, y, x) > z(best, y, x)) best = c;
        EXPECT_EQ(pls[i].labels(y, x), best);
        EXPECT_NEAR(pls[i].confidence(y, x), static_cast<double>(oracle::max_softmax(o, y, x)),
                    1e-6);
      }
  }
  EXPECT_THROW(generate_pseudo_labels(t, batch, 3), ContractError);
}

TEST(Decay, ScalesOnlyBelowThreshold) {
  PseudoLabelState st;
  ConfidenceMap<double> c(1, 3);
  c[0] = 0.1;
  c[1] = 0.5;
  c[2] = 0.35;
  st.set("a", {LabelMap(1, 3), c, retain_mask(c, 0.4)});
  apply_confidence_decay(st, "a", 0.4, DecayConfig{0.5, true});
  const auto& r = st.at("a");
  EXPECT_DOUBLE_EQ(r.confidence[0], 0.05);
  EXPECT_DOUBLE_EQ(r.confidence[1], 0.5);
  EXPECT_DOUBLE_EQ(r.confidence[2], 0.175);
  EXPECT_EQ(r.retain[1], 1);
  EXPECT_EQ(r.retain[2], 0);
}

TEST(Decay, RepeatedDecayIsGeometric) {
  for (double alpha : {0.85, 0.9}) {
    PseudoLabelState st;
    ConfidenceMap<double> c(1, 1, 0.29);
    st.set("a", {LabelMap(1, 1), c, BoolMap(1, 1)});
    for (int n = 1; n <= 20; ++n) {
      apply_confidence_decay(st, "a", 0.3, DecayConfig{alpha, true});
      EXPECT_NEAR(st.at("a").confidence[0], 0.29 * std::pow(alpha, n), 1e-12);
    }
  }
}

TEST(Decay, AlphaOneIsIdentityAndConfigValidated) {
  PseudoLabelState st;
  ConfidenceMap<double> c(1, 2);
  c[0] = 0.1;
  c[1] = 0.9;
  st.set("a", {LabelMap(1, 2), c, BoolMap(1, 2)});
  apply_confidence_decay_all(st, 0.5, DecayConfig{1.0, true});
  EXPECT_EQ(st.at("a").confidence, c);
  EXPECT_THROW((DecayConfig{0.0, true}.validate()), ConfigError);
  EXPECT_THROW((DecayConfig{1.1, true}.validate()), ConfigError);
}

TEST(State, UnknownIdRaisesLookupError) {
  PseudoLabelState st;
  EXPECT_THROW(st.at("nope"), LookupError);
  EXPECT_THROW(apply_confidence_decay(st, "nope", 0.3, {}), LookupError);
}

TEST(State, RefreshReplacesDecayedValuesWithTeacherOutputs) {
  FakeTeacher t{3, 1.5};
  auto samples = unlabeled_set(4);
  PseudoLabelState st;
  refresh_from_teacher(st, t, samples, 3, 0.4, 5);
  EXPECT_EQ(st.size(), 4u);
  EXPECT_EQ(st.epoch_of_last_refresh, 5);
  const auto fresh = st;
  apply_confidence_decay_all(st, 0.9, DecayConfig{0.5, true});
  EXPECT_NE(st, fresh);
  EXPECT_TRUE(refresh_on_teacher_update(st, t, samples, 3, 0.4, 5, DecayConfig{0.5, true}));
  EXPECT_EQ(st, fresh);

  apply_confidence_decay_all(st, 0.9, DecayConfig{0.5, true});
  const auto decayed = st;
  EXPECT_FALSE(refresh_on_teacher_update(st, t, samples, 3, 0.4, 6, DecayConfig{0.5, false}));
  EXPECT_EQ(st, decayed);
}

TEST(State, RefreshChecksIdsAndShapes) {
  FakeTeacher t{3, 1.0};
  auto samples = unlabeled_set(3);
  PseudoLabelState st;
  refresh_from_teacher(st, t, samples, 3, 0.3, 0);
  auto fewer = unlabeled_set(2);
  EXPECT_THROW(refresh_from_teacher(st, t, fewer, 3, 0.3, 1), ContractError);
  auto renamed = samples;
  renamed[1].id = "other";
  EXPECT_THROW(refresh_from_teacher(st, t, renamed, 3, 0.3, 1), ContractError);
  PseudoLabelState fresh;
  EXPECT_THROW(refresh_from_teacher(fresh, t, samples, 4, 0.3, 1), ContractError);
}

TEST(State, SaveLoadRoundTrip) {
  FakeTeacher t{3, 1.0};
  auto samples = unlabeled_set(3, 4, 7);
  PseudoLabelState st;
  refresh_from_teacher(st, t, samples, 3, 0.35, 2);
  apply_confidence_decay_all(st, 0.6, DecayConfig{0.9, true});
  const auto dir = scratch_dir("pl_state");
  st.save((dir / "s.bin").string());
  EXPECT_EQ(PseudoLabelState::load((dir / "s.bin").string()), st);
  EXPECT_THROW(PseudoLabelState::load((dir / "missing.bin").string()), LoadError);
}
