#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "cwbass/data.hpp"
#include "cwbass/training.hpp"
#include "support.hpp"

using namespace cwbass;
using namespace testing_support;

namespace {

struct Toy {
  std::vector<SegSample> labeled, unlabeled;
};

Toy make_toy(int n_labeled = 4, int n_unlabeled = 8, int size = 24) {
  SyntheticOptions o;
  o.n_images = n_labeled + n_unlabeled;
  o.height = o.width = size;
  o.seed = 3;
  auto all = render_synthetic(o);
  Toy t;
  for (int i = 0; i < o.n_images; ++i) {
    if (i < n_labeled) {
      t.labeled.push_back(all[i]);
    } else {
      all[i].label.reset();
      t.unlabeled.push_back(all[i]);
    }
  }
  return t;
}

TrainConfig small_config() {
  TrainConfig c;
  c.stage1_epochs = 2;
  c.stage2_epochs = 3;
  c.batch_size_labeled = 2;
  c.batch_size_unlabeled = 4;
  c.augment.crop_h = c.augment.crop_w = 24;
  c.model_width = 4;
  c.seed = 11;
  return c;
}

Trainer<TinySegNet> make(const TrainConfig& c, const Toy& t) {
  auto pair = make_model_pair(3, 4, c.model_width, c.seed);
  return Trainer<TinySegNet>(c, t.labeled, t.unlabeled, pair.teacher, pair.student);
}

std::vector<float> params_of(const TinySegNet& m) { return {m.params().begin(), m.params().end()}; }

}  // namespace

TEST(TeacherUpdate, DirectCopyIsExactAndIdempotent) {
  auto pair = make_model_pair(3, 4, 4, 1);
  TinySegNet other({3, 4, 4}, 99);
  pair.student.copy_weights_from(other);
  update_teacher(pair);
  EXPECT_EQ(params_of(pair.teacher), params_of(pair.student));
  update_teacher(pair);
  EXPECT_EQ(params_of(pair.teacher), params_of(other));
  TinySegNet wrong({3, 5, 4}, 1);
  EXPECT_THROW(update_teacher(wrong, pair.student), ContractError);
}

TEST(Objective, TotalFollowsConfiguredCombination) {
  Rng rng(1);
  std::vector<LogitMap<double>> lab{random_logits<double>(rng, 3, 5, 5)};
  std::vector<LabelMap> gt{random_labels(rng, 3, 5, 5)};
  std::vector<LogitMap<double>> unl{random_logits<double>(rng, 3, 5, 5),
                                    random_logits<double>(rng, 3, 5, 5)};
  UnlabeledTargets t;
  for (int i = 0; i < 2; ++i) {
    t.pseudo.push_back(random_labels(rng, 3, 5, 5));
    t.confidence.push_back(random_confidence<double>(rng, 5, 5, 0.3, 1.0));
  }
  t.threshold = 0.5;
  finish_targets(t, true, true);
  ObjectiveOptions opt;
  opt.loss.lambda_unsup = 0.7;
  opt.loss.boundary_coeff = 0.3;
  opt.boundary_term = true;
  auto r = compute_objective<double>(lab, gt, unl, t, opt);
  EXPECT_GT(r.weighted, 0.0);
  EXPECT_GT(r.boundary, 0.0);
  EXPECT_DOUBLE_EQ(r.total, r.labeled + 0.7 * r.weighted + 0.3 * r.boundary);
  opt.boundary_term = false;
  auto s1 = compute_objective<double>(lab, gt, unl, t, opt);
  EXPECT_DOUBLE_EQ(s1.total, s1.labeled + 0.7 * s1.weighted);
  opt.loss.lambda_unsup = 0;
  opt.loss.boundary_coeff = 0;
  opt.boundary_term = true;
  auto sup = compute_objective<double>(lab, gt, unl, t, opt);
  EXPECT_EQ(sup.total, sup.labeled);
}

TEST(Objective, RetentionOffKeepsEverythingButIgnore) {
  UnlabeledTargets t;
  t.pseudo.push_back(LabelMap(2, 2, 1));
  t.pseudo[0][3] = kIgnoreIndex;
  t.confidence.push_back(ConfidenceMap<double>(2, 2, 0.01));
  t.threshold = 0.8;
  finish_targets(t, false, false);
  EXPECT_EQ(t.retain[0][0], 1);
  EXPECT_EQ(t.retain[0][3], 0);
  EXPECT_TRUE(t.boundary.empty());
  finish_targets(t, true, true);
  EXPECT_EQ(t.retain[0][0], 0);
  EXPECT_EQ(t.boundary.size(), 1u);
}

TEST(Trainer, RejectsEmptyLabeledSetAndMissingUnlabeled) {
  auto t = make_toy();
  auto c = small_config();
  auto pair = make_model_pair(3, 4, 4, 0);
  EXPECT_THROW(Trainer<TinySegNet>(c, {}, t.unlabeled, pair.teacher, pair.student), ConfigError);
  EXPECT_THROW(Trainer<TinySegNet>(c, t.labeled, {}, pair.teacher, pair.student), ConfigError);
  auto unlabeled_as_labeled = t.unlabeled;
  EXPECT_THROW(Trainer<TinySegNet>(c, unlabeled_as_labeled, t.unlabeled, pair.teacher,
                                   pair.student),
               ConfigError);
  c.loss.lambda_unsup = 0;
  c.loss.boundary_coeff = 0;
  EXPECT_NO_THROW(Trainer<TinySegNet>(c, t.labeled, {}, pair.teacher, pair.student));
  c.stage1_epochs = 0;
  EXPECT_THROW(Trainer<TinySegNet>(c, t.labeled, {}, pair.teacher, pair.student), ConfigError);
}

TEST(Trainer, StageStructureAndTeacherFrozenInStage2) {
  auto toy = make_toy();
  auto c = small_config();
  c.teacher_copy_every_epochs = 2;
  auto tr = make(c, toy);
  EXPECT_EQ(tr.steps_per_epoch(), 2);
  tr.run_stage1();
  EXPECT_EQ(tr.stage(), 2);
  EXPECT_TRUE(tr.pseudo_state_ready());
  EXPECT_EQ(tr.pseudo_state().size(), toy.unlabeled.size());
  EXPECT_EQ(tr.pseudo_state().epoch_of_last_refresh, c.stage1_epochs);
  auto teacher = params_of(tr.teacher());
  while (!tr.finished()) {
    const int epoch = tr.epoch();
    tr.step();
    const bool copied_now = tr.epoch() != epoch && (epoch - c.stage1_epochs + 1) % 2 == 0;
    if (copied_now) {
      EXPECT_EQ(params_of(tr.teacher()), params_of(tr.student()));
      teacher = params_of(tr.teacher());
    } else {
      EXPECT_EQ(params_of(tr.teacher()), teacher) << "teacher moved at step " << tr.global_step();
    }
  }
  EXPECT_EQ(tr.teacher_copies(), 1);
  EXPECT_EQ(tr.global_step(), tr.total_steps());
  EXPECT_THROW(tr.step(), ContractError);
}

TEST(Trainer, SupervisedOnlyLeavesTeacherUntouched) {
  auto toy = make_toy();
  auto c = small_config();
  c.loss.lambda_unsup = 0;
  c.loss.boundary_coeff = 0;
  auto tr = make(c, toy);
  const auto t0 = params_of(tr.teacher());
  tr.run_stage1();
  EXPECT_EQ(params_of(tr.teacher()), t0);
  EXPECT_FALSE(tr.pseudo_state_ready());
  StepMetrics m = tr.step();
  EXPECT_EQ(m.stage, 2);
  EXPECT_EQ(m.loss.weighted, 0.0);
  EXPECT_EQ(m.loss.total, m.loss.labeled);
}

TEST(Trainer, DeterministicForFixedSeed) {
  auto toy = make_toy();
  auto c = small_config();
  auto a = make(c, toy), b = make(c, toy);
  std::vector<double> la, lb;
  a.run([&](const StepMetrics& m) { la.push_back(m.loss.total); });
  b.run([&](const StepMetrics& m) { lb.push_back(m.loss.total); });
  EXPECT_EQ(la, lb);
  EXPECT_EQ(params_of(a.student()), params_of(b.student()));
  EXPECT_EQ(a.pseudo_state(), b.pseudo_state());
  c.seed = 12;
  auto d = make(c, toy);
  std::vector<double> ld;
  d.run([&](const StepMetrics& m) { ld.push_back(m.loss.total); });
  EXPECT_NE(la, ld);
}

TEST(Trainer, ResultsDoNotDependOnHeapLayout) {
  auto toy = make_toy(4, 8, 40);
  auto c = small_config();
  c.augment.crop_h = c.augment.crop_w = 40;
  c.model_width = 8;
  std::vector<std::string> ref;
  for (std::size_t shift : {0u, 1u, 3u, 5u, 7u}) {
    // odd-sized live blocks move later allocations to other addresses
    std::vector<std::vector<float>> pad;
    for (std::size_t i = 0; i < 8; ++i) pad.emplace_back(shift * 3 + i, 1.f);
    auto t = make(c, toy);
    std::vector<std::string> got;
    t.run([&](const StepMetrics& m) { got.push_back(m.to_json().dump()); });
    if (ref.empty()) ref = got;
    else EXPECT_EQ(got, ref) << "shift " << shift;
  }
}

TEST(Trainer, ResumeFromCheckpointMatchesUninterruptedRun) {
  auto toy = make_toy();
  auto c = small_config();
  const auto dir = scratch_dir("resume");
  for (long cut : {1L, 4L, 5L, 7L}) {  // mid stage 1, stage boundary, mid stage 2
    auto full = make(c, toy);
    std::vector<double> want;
    full.run([&](const StepMetrics& m) { want.push_back(m.loss.total); });

    auto first = make(c, toy);
    std::vector<double> got;
    for (long i = 0; i < cut; ++i) got.push_back(first.step().loss.total);
    const auto ck = (dir / ("c" + std::to_string(cut) + ".ckpt")).string();
    first.save(ck);

    auto pair = make_model_pair(3, 4, c.model_width, 777);  // weights come from the checkpoint
    Trainer<TinySegNet> resumed(c, toy.labeled, toy.unlabeled, pair.teacher, pair.student);
    resumed.load(ck);
    EXPECT_EQ(resumed.global_step(), cut);
    resumed.run([&](const StepMetrics& m) { got.push_back(m.loss.total); });
    EXPECT_EQ(got, want) << "cut at " << cut;
    EXPECT_EQ(params_of(resumed.student()), params_of(full.student()));
  }
}

TEST(Trainer, CheckpointRejectsDifferentConfig) {
  auto toy = make_toy();
  auto c = small_config();
  auto a = make(c, toy);
  a.step();
  const auto ck = (scratch_dir("ckmismatch") / "a.ckpt").string();
  a.save(ck);
  c.seed = 99;
  auto b = make(c, toy);
  EXPECT_THROW(b.load(ck), ContractError);
  EXPECT_THROW(b.load(ck + ".missing"), LoadError);
  auto [teacher, student] = read_checkpoint_models(ck);
  EXPECT_EQ(params_of(student), params_of(a.student()));
}

TEST(Trainer, NonFiniteLossAbortsWithBatchIds) {
  auto toy = make_toy(2, 4);
  // every pixel, so no crop or rescale can drop the bad values
  for (auto& v : toy.labeled[1].image.data()) v = std::numeric_limits<float>::quiet_NaN();
  auto c = small_config();
  auto tr = make(c, toy);
  try {
    tr.step();
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_NE(std::find(e.batch_ids.begin(), e.batch_ids.end(), toy.labeled[1].id),
              e.batch_ids.end());
    EXPECT_NE(std::string(e.what()).find(toy.labeled[1].id), std::string::npos);
  }
}

TEST(Trainer, SupervisedLossDecreasesOnSmallSet) {
  auto toy = make_toy(10, 0, 32);
  TrainConfig c = small_config();
  c.loss.lambda_unsup = 0;
  c.loss.boundary_coeff = 0;
  c.batch_size_labeled = 4;
  c.stage1_epochs = 10;
  c.stage2_epochs = 15;
  c.augment.flip = false;
  c.augment.scale_lo = c.augment.scale_hi = 1.0;
  c.augment.crop_h = c.augment.crop_w = 32;
  c.model_width = 8;
  auto tr = make(c, toy);
  std::vector<double> l;
  tr.run([&](const StepMetrics& m) { l.push_back(m.loss.labeled); });
  ASSERT_EQ(l.size(), 75u);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += l[i];
    tail += l[l.size() - 1 - i];
  }
  EXPECT_LT(tail, 0.6 * head);
}

TEST(Trainer, DecayLowersStoredConfidencesBetweenRefreshes) {
  auto toy = make_toy();
  auto c = small_config();
  c.decay.alpha = 0.5;
  c.decay.refresh_on_teacher_update = false;
  c.threshold = ThresholdState::initial(1.0, 0.0, 0.3, 0.8);  // constant T = 0.5
  c.dynamic_threshold = false;
  auto tr = make(c, toy);
  tr.run_stage1();
  const PseudoLabelState before = tr.pseudo_state();
  tr.step();  // begins the first stage-2 epoch: one decay pass
  for (const auto& [id, rec] : before.records()) {
    const auto& now = tr.pseudo_state().at(id);
    for (std::size_t j = 0; j < rec.confidence.size(); ++j) {
      const double p = rec.confidence[j];
      EXPECT_EQ(now.confidence[j], p < 0.5 ? 0.5 * p : p);
    }
  }
}
