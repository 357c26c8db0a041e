#pragma once

// Dual-stage teacher/student training driver.
//
// Stage 1: the teacher trains on labeled data with plain cross-entropy. Each
// step it pseudo-labels the unlabeled batch; the batch mean confidence drives
// the threshold, and the student trains on labeled CE + lambda * weighted CE.
//
// Stage 2: pseudo-labels live in a PseudoLabelState keyed by sample id. At
// the start of every epoch confidences below the threshold decay by alpha.
// The student trains on labeled + lambda * weighted + coeff * boundary, and
// after every `teacher_copy_every_epochs` epochs the teacher receives the
// student weights by direct copy (optionally followed by a pseudo-label
// refresh).
//
// The driver is a step-level state machine so that a checkpoint taken between
// any two steps resumes to identical subsequent steps.

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwbass/augment.hpp"
#include "cwbass/boundary.hpp"
#include "cwbass/core.hpp"
#include "cwbass/eval.hpp"
#include "cwbass/losses.hpp"
#include "cwbass/nn.hpp"
#include "cwbass/pseudo_label.hpp"
#include "cwbass/serialize.hpp"

namespace cwbass {

class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& msg, std::vector<std::string> ids)
      : Error(msg), batch_ids(std::move(ids)) {}
  std::vector<std::string> batch_ids;
};

struct TrainConfig {
  int stage1_epochs = 5;
  int stage2_epochs = 15;
  int batch_size_labeled = 8;
  int batch_size_unlabeled = 8;
  double lr_initial = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double poly_power = 0.9;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  LossConfig loss;
  ThresholdState threshold = ThresholdState::initial(0.6, 0.5);
  bool dynamic_threshold = true;  // off: every pseudo-label is retained
  DecayConfig decay;
  int teacher_copy_every_epochs = 1;
  // Train the stage-2 student on the unlabeled terms only.
  bool student_unlabeled_only = false;
  int model_width = 16;

  void validate() const {
    if (stage1_epochs < 1 || stage2_epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size_labeled < 1 || batch_size_unlabeled < 1)
      throw ConfigError("train: batch sizes must be >= 1");
    if (!(lr_initial > 0)) throw ConfigError("train: lr_initial must be > 0");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train: momentum must be in [0, 1)");
    if (!(weight_decay >= 0)) throw ConfigError("train: weight_decay must be >= 0");
    if (!(poly_power >= 0)) throw ConfigError("train: poly_power must be >= 0");
    if (teacher_copy_every_epochs < 1)
      throw ConfigError("train: teacher_copy_every_epochs must be >= 1");
    if (model_width < 1) throw ConfigError("train: model_width must be >= 1");
    augment.validate();
    loss.validate();
    threshold.validate();
    decay.validate();
  }

  int total_epochs() const { return stage1_epochs + stage2_epochs; }

  /// Whether the unlabeled branch contributes to any objective.
  bool uses_unlabeled() const { return loss.lambda_unsup != 0.0 || loss.boundary_coeff != 0.0; }
};

struct ModelPair {
  TinySegNet teacher;
  TinySegNet student;
};

inline ModelPair make_model_pair(int in_channels, int num_classes, int width,
                                 std::uint64_t seed) {
  TinySegNet t({in_channels, num_classes, width}, seed);
  return {t, t};
}

/// Direct weight copy, student -> teacher. No averaging.
template <SegmentationModel Model>
void update_teacher(Model& teacher, const Model& student) {
  auto dst = teacher.params();
  auto src = student.params();
  if (dst.size() != src.size() || teacher.num_classes() != student.num_classes())
    throw ContractError("update_teacher: parameter shape mismatch");
  std::copy(src.begin(), src.end(), dst.begin());
}

inline void update_teacher(ModelPair& pair) { update_teacher(pair.teacher, pair.student); }

// Per-image targets for the unlabeled branch of one step.
struct UnlabeledTargets {
  std::vector<LabelMap> pseudo;
  std::vector<ConfidenceMap<double>> confidence;
  std::vector<BoolMap> retain;
  std::vector<BoundaryMask> boundary;  // empty when the boundary term is off
  double mean_confidence = 0.0;
  double threshold = 0.0;
};

/// Retention and boundary masks for a set of pseudo-labels. Retention is
/// all-true (except ignore pixels) when dynamic thresholding is off.
inline void finish_targets(UnlabeledTargets& t, bool dynamic_threshold, bool with_boundary) {
  t.retain.clear();
  t.boundary.clear();
  for (std::size_t i = 0; i < t.pseudo.size(); ++i) {
    BoolMap keep = dynamic_threshold ? retain_mask(t.confidence[i], t.threshold)
                                     : BoolMap(t.pseudo[i].height(), t.pseudo[i].width(), 1);
    for (std::size_t j = 0; j < keep.size(); ++j)
      if (t.pseudo[i][j] == kIgnoreIndex) keep[j] = 0;
    t.retain.push_back(std::move(keep));
    if (with_boundary) t.boundary.push_back(boundary_from_labels(t.pseudo[i]));
  }
}

struct ObjectiveOptions {
  LossConfig loss;
  bool boundary_term = false;  // stage 2 only
  bool include_labeled = true;
};

/// Evaluates the step objective and accumulates dTotal/dlogits into the
/// gradient buffers (which may be empty to skip gradients).
template <class T>
LossReport compute_objective(std::span<const LogitMap<T>> lab_logits,
                             std::span<const LabelMap> gt,
                             std::span<const LogitMap<T>> unl_logits,
                             const UnlabeledTargets& targets, const ObjectiveOptions& opt,
                             std::span<LogitMap<T>> lab_grad = {},
                             std::span<LogitMap<T>> unl_grad = {}) {
  LossReport r;
  auto lab = labeled_ce<T>(lab_logits, gt, lab_grad, T(opt.include_labeled ? 1 : 0));
  r.labeled = static_cast<double>(lab.value);
  r.labeled_pixels = lab.pixels;
  r.labeled_empty = lab.empty;
  const bool unsup = !unl_logits.empty();
  if (unsup) {
    std::vector<ConfidenceMap<T>> conf;
    conf.reserve(targets.confidence.size());
    for (const auto& c : targets.confidence) {
      ConfidenceMap<T> m(c.height(), c.width());
      for (std::size_t j = 0; j < m.size(); ++j) m[j] = static_cast<T>(c[j]);
      conf.push_back(std::move(m));
    }
    for (const auto& p : targets.pseudo) r.unlabeled_pixels += p.size();
    if (opt.loss.lambda_unsup != 0.0) {
      auto w = confidence_weighted_ce_batch<T>(
          unl_logits, targets.pseudo, std::span<const ConfidenceMap<T>>(conf), targets.retain,
          opt.loss.gamma, unl_grad, static_cast<T>(opt.loss.lambda_unsup),
          opt.loss.weighted_mean_over_retained);
      r.weighted = static_cast<double>(w.value);
      r.retained_pixels = w.pixels;
    }
    if (opt.boundary_term && opt.loss.boundary_coeff != 0.0) {
      auto b = boundary_loss_batch<T>(unl_logits, targets.pseudo, targets.boundary, unl_grad,
                                      static_cast<T>(opt.loss.boundary_coeff));
      r.boundary = static_cast<double>(b.value);
      r.boundary_pixels = b.pixels;
    }
  }
  const double labeled_term = opt.include_labeled ? r.labeled : 0.0;
  r.total = opt.boundary_term ? final_loss(labeled_term, r.weighted, r.boundary, opt.loss)
                              : total_stage1_loss(labeled_term, r.weighted, opt.loss.lambda_unsup);
  return r;
}

struct StepMetrics {
  long step = 0;
  int epoch = 0;
  int stage = 1;
  double lr = 0.0;
  LossReport loss;
  double mean_confidence = 0.0;
  double threshold = 0.0;
  double retention = 0.0;
  double boundary_fraction = 0.0;

  nlohmann::json to_json() const {
    return {{"record", "step"},
            {"step", step},
            {"epoch", epoch},
            {"stage", stage},
            {"lr", lr},
            {"labeled", loss.labeled},
            {"weighted", loss.weighted},
            {"boundary", loss.boundary},
            {"total", loss.total},
            {"mean_conf", mean_confidence},
            {"threshold", threshold},
            {"retention", retention},
            {"boundary_frac", boundary_fraction}};
  }
};

/// Predicts a LabelMap per sample and accumulates the confusion matrix.
template <SegmentationModel Model>
ConfusionMatrix evaluate_model(const Model& model, std::span<const SegSample> samples) {
  ConfusionMatrix cm(model.num_classes());
  for (const auto& s : samples) {
    if (!s.label) continue;
    const LogitMap<float> z = model.forward(s.image);
    cm.accumulate(argmax_labels(z), *s.label);
  }
  return cm;
}

/// Teacher and student weights from a trainer checkpoint.
template <SegmentationModel Model = TinySegNet>
std::pair<Model, Model> read_checkpoint_models(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint '" + path + "'");
  BinaryReader r(is);
  r.expect_tag("CWCK");
  const auto version = r.get<std::uint32_t>();
  if (version != 1) throw LoadError("checkpoint: unsupported version " + std::to_string(version));
  r.get_string();
  Model t = Model::read(r);
  Model s = Model::read(r);
  return {std::move(t), std::move(s)};
}

template <SegmentationModel Model = TinySegNet>
class Trainer {
 public:
  static constexpr std::uint32_t kCheckpointVersion = 1;

  Trainer(TrainConfig cfg, std::vector<SegSample> labeled, std::vector<SegSample> unlabeled,
          Model teacher, Model student)
      : cfg_(std::move(cfg)),
        labeled_(std::move(labeled)),
        unlabeled_(std::move(unlabeled)),
        teacher_(std::move(teacher)),
        student_(std::move(student)),
        rng_(cfg_.seed) {
    cfg_.validate();
    if (labeled_.empty()) throw ConfigError("train: labeled set is empty");
    for (const auto& s : labeled_)
      if (!s.label) throw ConfigError("train: labeled sample '" + s.id + "' has no label");
    if (cfg_.uses_unlabeled() && unlabeled_.empty())
      throw ConfigError("train: unlabeled set is empty but an unlabeled loss is enabled");
    if (teacher_.params().size() != student_.params().size() ||
        teacher_.num_classes() != student_.num_classes())
      throw ContractError("train: teacher and student differ in shape");
    const std::size_t n = teacher_.params().size();
    teacher_opt_ = Sgd({cfg_.momentum, cfg_.weight_decay}, n);
    student_opt_ = Sgd({cfg_.momentum, cfg_.weight_decay}, n);
    threshold_ = cfg_.threshold;
    const std::size_t per_epoch_items = unlabeled_.empty() ? labeled_.size() : unlabeled_.size();
    const std::size_t batch =
        unlabeled_.empty() ? cfg_.batch_size_labeled : cfg_.batch_size_unlabeled;
    steps_per_epoch_ = static_cast<long>((per_epoch_items + batch - 1) / batch);
    labeled_order_.resize(labeled_.size());
    std::iota(labeled_order_.begin(), labeled_order_.end(), 0u);
    labeled_cursor_ = labeled_order_.size();  // forces a shuffle on first use
    epoch_order_.resize(per_epoch_items);
  }

  const TrainConfig& config() const { return cfg_; }
  const Model& teacher() const { return teacher_; }
  const Model& student() const { return student_; }
  const ThresholdState& threshold() const { return threshold_; }
  const PseudoLabelState& pseudo_state() const { return pseudo_; }
  bool pseudo_state_ready() const { return pseudo_ready_; }
  long global_step() const { return global_step_; }
  long steps_per_epoch() const { return steps_per_epoch_; }
  long total_steps() const { return steps_per_epoch_ * cfg_.total_epochs(); }
  int epoch() const { return epoch_; }
  int stage() const { return epoch_ < cfg_.stage1_epochs ? 1 : 2; }
  bool finished() const { return epoch_ >= cfg_.total_epochs(); }
  long teacher_copies() const { return teacher_copies_; }

  /// One optimizer step on the student (and in stage 1 on the teacher).
  StepMetrics step() {
    if (finished()) throw ContractError("train: step() after training finished");
    if (cursor_ == 0) begin_epoch();
    StepMetrics m = stage() == 1 ? stage1_step() : stage2_step();
    ++cursor_;
    ++global_step_;
    if (cursor_ == steps_per_epoch_) end_epoch();
    return m;
  }

  using Sink = std::function<void(const StepMetrics&)>;

  void run(const Sink& sink = {}) {
    while (!finished()) {
      StepMetrics m = step();
      if (sink) sink(m);
    }
  }

  /// Runs until stage 1 is complete (pseudo-label state initialized).
  void run_stage1(const Sink& sink = {}) {
    while (!finished() && stage() == 1) {
      StepMetrics m = step();
      if (sink) sink(m);
    }
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open checkpoint '" + path + "' for writing");
    BinaryWriter w(os);
    w.put_tag("CWCK");
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put_string(config_fingerprint());
    teacher_.write(w);
    student_.write(w);
    teacher_opt_.write(w);
    student_opt_.write(w);
    w.put_tag("THRS");
    for (double v : {threshold_.base_threshold, threshold_.sensitivity, threshold_.current,
                     threshold_.clamp_low, threshold_.clamp_high})
      w.put<double>(v);
    w.put<std::uint8_t>(pseudo_ready_ ? 1 : 0);
    pseudo_.write(w);
    w.put_tag("RNGS");
    w.put_string(rng_.state());
    w.put_tag("CTRS");
    w.put<std::int64_t>(global_step_);
    w.put<std::int32_t>(epoch_);
    w.put<std::int64_t>(cursor_);
    w.put<std::uint64_t>(labeled_cursor_);
    w.put<std::int64_t>(teacher_copies_);
    w.put_array<std::uint32_t>(labeled_order_);
    w.put_array<std::uint32_t>(epoch_order_);
    w.check();
  }

  /// Restores state saved by a trainer built with the same config and data.
  void load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot open checkpoint '" + path + "'");
    BinaryReader r(is);
    r.expect_tag("CWCK");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
      throw LoadError("checkpoint: unsupported version " + std::to_string(version));
    if (r.get_string() != config_fingerprint())
      throw ContractError("checkpoint: config or dataset differs from this trainer");
    Model t = Model::read(r);
    Model s = Model::read(r);
    if (t.params().size() != teacher_.params().size())
      throw ContractError("checkpoint: model shape mismatch");
    teacher_ = std::move(t);
    student_ = std::move(s);
    teacher_opt_ = Sgd::read(r);
    student_opt_ = Sgd::read(r);
    r.expect_tag("THRS");
    threshold_.base_threshold = r.get<double>();
    threshold_.sensitivity = r.get<double>();
    threshold_.current = r.get<double>();
    threshold_.clamp_low = r.get<double>();
    threshold_.clamp_high = r.get<double>();
    pseudo_ready_ = r.get<std::uint8_t>() != 0;
    pseudo_ = PseudoLabelState::read(r);
    r.expect_tag("RNGS");
    rng_.set_state(r.get_string());
    r.expect_tag("CTRS");
    global_step_ = r.get<std::int64_t>();
    epoch_ = r.get<std::int32_t>();
    cursor_ = r.get<std::int64_t>();
    labeled_cursor_ = r.get<std::uint64_t>();
    teacher_copies_ = r.get<std::int64_t>();
    labeled_order_ = r.get_array<std::uint32_t>();
    epoch_order_ = r.get_array<std::uint32_t>();
    if (labeled_order_.size() != labeled_.size()) throw LoadError("checkpoint: order mismatch");
  }

 private:
  std::string config_fingerprint() const {
    std::ostringstream os;
    os << "seed=" << cfg_.seed << ";e1=" << cfg_.stage1_epochs << ";e2=" << cfg_.stage2_epochs
       << ";bl=" << cfg_.batch_size_labeled << ";bu=" << cfg_.batch_size_unlabeled
       << ";nl=" << labeled_.size() << ";nu=" << unlabeled_.size()
       << ";params=" << teacher_.params().size() << ";k=" << teacher_.num_classes();
    for (const auto& s : labeled_) os << ";" << s.id;
    for (const auto& s : unlabeled_) os << ";" << s.id;
    return os.str();
  }

  double current_lr() const {
    return poly_lr(global_step_, total_steps(), cfg_.lr_initial, cfg_.poly_power);
  }

  void begin_epoch() {
    std::iota(epoch_order_.begin(), epoch_order_.end(), 0u);
    rng_.shuffle(epoch_order_.begin(), epoch_order_.end());
    if (stage() == 2 && pseudo_ready_)
      apply_confidence_decay_all(pseudo_, threshold_.current, cfg_.decay);
  }

  void end_epoch() {
    cursor_ = 0;
    const int finished_epoch = epoch_;
    ++epoch_;
    if (finished_epoch == cfg_.stage1_epochs - 1) {
      if (cfg_.uses_unlabeled()) {
        refresh_from_teacher(pseudo_, teacher_forward(), std::span<const SegSample>(unlabeled_),
                             teacher_.num_classes(), threshold_.current, epoch_);
        pseudo_ready_ = true;
      }
    } else if (finished_epoch >= cfg_.stage1_epochs) {
      const int stage2_epoch = finished_epoch - cfg_.stage1_epochs;
      if ((stage2_epoch + 1) % cfg_.teacher_copy_every_epochs == 0) {
        update_teacher(teacher_, student_);
        ++teacher_copies_;
        if (pseudo_ready_ && !finished())
          refresh_on_teacher_update(pseudo_, teacher_forward(),
                                    std::span<const SegSample>(unlabeled_),
                                    teacher_.num_classes(), threshold_.current, epoch_,
                                    cfg_.decay);
      }
    }
  }

  auto teacher_forward() const {
    return [this](const Image& x) { return teacher_.forward(x); };
  }

  std::vector<SegSample> next_labeled_batch() {
    std::vector<SegSample> out;
    for (int i = 0; i < cfg_.batch_size_labeled; ++i) {
      if (labeled_cursor_ >= labeled_order_.size()) {
        rng_.shuffle(labeled_order_.begin(), labeled_order_.end());
        labeled_cursor_ = 0;
      }
      out.push_back(augment(labeled_[labeled_order_[labeled_cursor_++]], cfg_.augment, rng_));
    }
    return out;
  }

  std::vector<std::uint32_t> unlabeled_batch_indices() const {
    const std::size_t b = static_cast<std::size_t>(cfg_.batch_size_unlabeled);
    const std::size_t begin = static_cast<std::size_t>(cursor_) * b;
    const std::size_t end = std::min(epoch_order_.size(), begin + b);
    return {epoch_order_.begin() + begin, epoch_order_.begin() + end};
  }

  static std::vector<std::string> ids_of(const std::vector<SegSample>& v) {
    std::vector<std::string> out;
    for (const auto& s : v) out.push_back(s.id);
    return out;
  }

  // Forward + backward of `model` over both branches; returns the report.
  LossReport train_model(Model& model, Sgd& opt, const std::vector<SegSample>& lab,
                         const std::vector<Image>& unl_images, const UnlabeledTargets& targets,
                         const ObjectiveOptions& obj, double lr,
                         const std::vector<std::string>& batch_ids) {
    std::vector<typename Model::Activations> lab_act(lab.size()), unl_act(unl_images.size());
    std::vector<LogitMap<float>> lab_logits, unl_logits, lab_grad, unl_grad;
    std::vector<LabelMap> gt;
    for (std::size_t i = 0; i < lab.size(); ++i) {
      lab_logits.push_back(model.forward(lab[i].image, lab_act[i]));
      lab_grad.emplace_back(lab_logits.back().channels(), lab_logits.back().height(),
                            lab_logits.back().width());
      gt.push_back(*lab[i].label);
    }
    for (std::size_t i = 0; i < unl_images.size(); ++i) {
      unl_logits.push_back(model.forward(unl_images[i], unl_act[i]));
      unl_grad.emplace_back(unl_logits.back().channels(), unl_logits.back().height(),
                            unl_logits.back().width());
    }
    LossReport rep = compute_objective<float>(lab_logits, gt, unl_logits, targets, obj,
                                              lab_grad, unl_grad);
    if (!std::isfinite(rep.total)) {
      std::string msg = "non-finite loss at step " + std::to_string(global_step_) + "; batch:";
      for (const auto& id : batch_ids) msg += " " + id;
      throw TrainingAborted(msg, batch_ids);
    }
    model.zero_grad();
    for (std::size_t i = 0; i < lab.size(); ++i) model.backward(lab_act[i], lab_grad[i]);
    for (std::size_t i = 0; i < unl_images.size(); ++i) model.backward(unl_act[i], unl_grad[i]);
    opt.step(model.params(), model.grads(), model.decay_mask(), lr);
    return rep;
  }

  void fill_step_stats(StepMetrics& m, const UnlabeledTargets& t) const {
    m.mean_confidence = t.mean_confidence;
    m.threshold = threshold_.current;
    std::size_t valid = 0, kept = 0, edge = 0, total = 0;
    for (std::size_t i = 0; i < t.pseudo.size(); ++i)
      for (std::size_t j = 0; j < t.pseudo[i].size(); ++j) {
        ++total;
        if (t.pseudo[i][j] == kIgnoreIndex) continue;
        ++valid;
        kept += t.retain[i][j] != 0;
        if (!t.boundary.empty()) edge += t.boundary[i][j] != 0;
      }
    m.retention = valid ? static_cast<double>(kept) / valid : 0.0;
    m.boundary_fraction = total ? static_cast<double>(edge) / total : 0.0;
  }

  void update_threshold_from(UnlabeledTargets& t) {
    t.mean_confidence = batch_mean_confidence<double>(t.confidence, t.pseudo);
    if (cfg_.dynamic_threshold) threshold_ = update_threshold(threshold_, t.mean_confidence);
    t.threshold = threshold_.current;
  }

  StepMetrics stage1_step() {
    StepMetrics m{global_step_, epoch_, 1, current_lr(), {}, 0, threshold_.current, 0, 0};
    std::vector<SegSample> lab = next_labeled_batch();
    std::vector<std::string> ids = ids_of(lab);

    UnlabeledTargets targets;
    std::vector<Image> unl_images;
    if (cfg_.uses_unlabeled()) {
      for (std::uint32_t idx : unlabeled_batch_indices()) {
        const SegSample& s = unlabeled_[idx];
        ids.push_back(s.id);
        AugmentItem item = augment(AugmentItem{s.image, {}, {}}, cfg_.augment, rng_);
        auto pl = pseudo_labels_from_logits(teacher_.forward(item.image));
        ConfidenceMap<double> conf(pl.confidence.height(), pl.confidence.width());
        for (std::size_t j = 0; j < conf.size(); ++j) conf[j] = pl.confidence[j];
        targets.pseudo.push_back(std::move(pl.labels));
        targets.confidence.push_back(std::move(conf));
        unl_images.push_back(std::move(item.image));
      }
      for (std::size_t i = 0; i < unl_images.size(); ++i) {
        std::vector<LabelMap> one{targets.pseudo[i]};
        strong_augment(unl_images[i], one, cfg_.augment.strong, rng_);
        targets.pseudo[i] = std::move(one.front());
      }
      update_threshold_from(targets);
      finish_targets(targets, cfg_.dynamic_threshold, false);
      fill_step_stats(m, targets);
    }

    // Teacher: supervised only. Nothing reads it when the unlabeled branch is off.
    if (cfg_.uses_unlabeled()) {
      ObjectiveOptions sup{cfg_.loss, false, true};
      sup.loss.lambda_unsup = 0.0;
      train_model(teacher_, teacher_opt_, lab, {}, UnlabeledTargets{}, sup, m.lr, ids);
    }
    ObjectiveOptions obj{cfg_.loss, false, true};
    m.loss = train_model(student_, student_opt_, lab, unl_images, targets, obj, m.lr, ids);
    return m;
  }

  StepMetrics stage2_step() {
    StepMetrics m{global_step_, epoch_, 2, current_lr(), {}, 0, threshold_.current, 0, 0};
    std::vector<SegSample> lab = next_labeled_batch();
    std::vector<std::string> ids = ids_of(lab);

    UnlabeledTargets targets;
    std::vector<Image> unl_images;
    if (cfg_.uses_unlabeled()) {
      if (!pseudo_ready_) throw ContractError("train: stage 2 without pseudo-label state");
      for (std::uint32_t idx : unlabeled_batch_indices()) {
        const SegSample& s = unlabeled_[idx];
        ids.push_back(s.id);
        const PseudoLabelRecord& rec = pseudo_.at(s.id);
        AugmentItem item = augment(AugmentItem{s.image, {rec.labels}, {rec.confidence}},
                                   cfg_.augment, rng_);
        strong_augment(item.image, item.labels, cfg_.augment.strong, rng_);
        targets.pseudo.push_back(std::move(item.labels.front()));
        targets.confidence.push_back(std::move(item.reals.front()));
        unl_images.push_back(std::move(item.image));
      }
      update_threshold_from(targets);
      finish_targets(targets, cfg_.dynamic_threshold, cfg_.loss.boundary_coeff != 0.0);
      fill_step_stats(m, targets);
    }
    ObjectiveOptions obj{cfg_.loss, true, !cfg_.student_unlabeled_only};
    m.loss = train_model(student_, student_opt_, lab, unl_images, targets, obj, m.lr, ids);
    return m;
  }

  TrainConfig cfg_;
  std::vector<SegSample> labeled_;
  std::vector<SegSample> unlabeled_;
  Model teacher_;
  Model student_;
  Sgd teacher_opt_;
  Sgd student_opt_;
  ThresholdState threshold_;
  PseudoLabelState pseudo_;
  bool pseudo_ready_ = false;
  Rng rng_;

  long steps_per_epoch_ = 0;
  long global_step_ = 0;
  int epoch_ = 0;
  long cursor_ = 0;  // step within the current epoch
  std::size_t labeled_cursor_ = 0;
  long teacher_copies_ = 0;
  std::vector<std::uint32_t> labeled_order_;
  std::vector<std::uint32_t> epoch_order_;
};

}  // namespace cwbass
