#pragma once

// Teacher pseudo-labels with confidences, the logistic dynamic threshold,
// and per-pixel confidence decay across epochs.

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cwbass/core.hpp"
#include "cwbass/serialize.hpp"

namespace cwbass {

struct ThresholdState {
  double base_threshold = 0.6;  // T0
  double sensitivity = 0.5;     // beta
  double current = 0.3;         // T
  double clamp_low = 0.3;
  double clamp_high = 0.8;

  void validate() const {
    if (!(base_threshold > 0.0 && base_threshold <= 1.0))
      throw ConfigError("threshold: base_threshold must be in (0, 1]");
    if (!(sensitivity >= 0.0)) throw ConfigError("threshold: sensitivity must be >= 0");
    if (!(clamp_low > 0.0 && clamp_low < clamp_high && clamp_high <= 1.0))
      throw ConfigError("threshold: need 0 < clamp_low < clamp_high <= 1");
    if (!(current >= clamp_low && current <= clamp_high))
      throw ConfigError("threshold: current outside clamp range");
  }

  /// State before any batch statistics exist: the logistic evaluated at
  /// mean confidence 0.5, i.e. T0 / 2, clamped.
  static ThresholdState initial(double t0, double beta, double lo = 0.3, double hi = 0.8) {
    ThresholdState s{t0, beta, std::clamp(t0 / 2.0, lo, hi), lo, hi};
    s.validate();
    return s;
  }

  bool operator==(const ThresholdState&) const = default;
};

/// Unclamped logistic threshold T0 / (1 + exp(-beta (mean_conf - 0.5))).
inline double raw_threshold(double t0, double beta, double mean_conf) {
  return t0 / (1.0 + std::exp(-beta * (mean_conf - 0.5)));
}

inline ThresholdState update_threshold(ThresholdState state, double mean_conf) {
  if (!(mean_conf >= 0.0 && mean_conf <= 1.0))
    throw InvalidInput("update_threshold: mean confidence outside [0, 1]");
  state.current = std::clamp(raw_threshold(state.base_threshold, state.sensitivity, mean_conf),
                             state.clamp_low, state.clamp_high);
  return state;
}

struct DecayConfig {
  double alpha = 0.9;  // 1.0 disables decay
  bool refresh_on_teacher_update = true;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("decay: alpha must be in (0, 1]");
  }
  bool operator==(const DecayConfig&) const = default;
};

template <class T>
struct PseudoLabels {
  LabelMap labels;
  ConfidenceMap<T> confidence;
};

/// Labels by argmax, confidence by max softmax probability.
template <class T>
PseudoLabels<T> pseudo_labels_from_logits(const LogitMap<T>& logits) {
  return {argmax_labels(logits), max_confidence(softmax_probs(logits))};
}

/// Runs the teacher on every sample of the batch. `teacher` maps an Image to
/// a LogitMap and must not update its weights.
template <class Forward>
auto generate_pseudo_labels(Forward&& teacher, const SegBatch& batch, int num_classes) {
  using Logits = std::invoke_result_t<Forward&, const Image&>;
  using T = typename Logits::value_type;
  std::vector<PseudoLabels<T>> out;
  out.reserve(batch.size());
  for (const auto& s : batch) {
    const Logits z = teacher(s.image);
    if (z.channels() != num_classes || z.height() != s.image.height() ||
        z.width() != s.image.width())
      throw ContractError("generate_pseudo_labels: teacher output shape mismatch for '" + s.id +
                          "'");
    out.push_back(pseudo_labels_from_logits(z));
  }
  return out;
}

/// Mean over images of each image's mean confidence. Pixels whose entry in
/// the optional label maps is kIgnoreIndex are excluded from their image's
/// mean; images with no valid pixel are skipped.
template <class T>
double batch_mean_confidence(std::span<const ConfidenceMap<T>> confs,
                             std::span<const LabelMap> labels = {}) {
  if (confs.empty()) throw InvalidInput("batch_mean_confidence: empty collection");
  if (!labels.empty() && labels.size() != confs.size())
    throw InvalidInput("batch_mean_confidence: label/confidence count mismatch");
  double total = 0.0;
  std::size_t images = 0;
  for (std::size_t i = 0; i < confs.size(); ++i) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < confs[i].size(); ++j) {
      if (!labels.empty() && labels[i][j] == kIgnoreIndex) continue;
      sum += static_cast<double>(confs[i][j]);
      ++n;
    }
    if (n == 0) continue;
    total += sum / static_cast<double>(n);
    ++images;
  }
  if (images == 0) throw InvalidInput("batch_mean_confidence: no valid pixels");
  return total / static_cast<double>(images);
}

template <class T>
BoolMap retain_mask(const ConfidenceMap<T>& conf, double threshold) {
  BoolMap mask(conf.height(), conf.width());
  for (std::size_t j = 0; j < conf.size(); ++j)
    mask[j] = static_cast<double>(conf[j]) >= threshold ? 1 : 0;
  return mask;
}

struct PseudoLabelRecord {
  LabelMap labels;
  ConfidenceMap<double> confidence;
  BoolMap retain;

  bool operator==(const PseudoLabelRecord&) const = default;
};

// Per-unlabeled-image pseudo-labels and decayed confidences keyed by sample
// id. Single writer: the training driver.
class PseudoLabelState {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  bool contains(const std::string& id) const { return records_.count(id) != 0; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  const PseudoLabelRecord& at(const std::string& id) const {
    auto it = records_.find(id);
    if (it == records_.end()) throw LookupError("pseudo-label state: unknown sample '" + id + "'");
    return it->second;
  }
  PseudoLabelRecord& at(const std::string& id) {
    auto it = records_.find(id);
    if (it == records_.end()) throw LookupError("pseudo-label state: unknown sample '" + id + "'");
    return it->second;
  }

  void set(const std::string& id, PseudoLabelRecord rec) { records_[id] = std::move(rec); }

  const std::map<std::string, PseudoLabelRecord>& records() const { return records_; }

  int epoch_of_last_refresh = -1;

  bool operator==(const PseudoLabelState&) const = default;

  void write(BinaryWriter& w) const {
    w.put_tag("CWPL");
    w.put<std::uint32_t>(kFormatVersion);
    w.put<std::int32_t>(epoch_of_last_refresh);
    w.put<std::uint64_t>(records_.size());
    for (const auto& [id, r] : records_) {
      w.put_string(id);
      w.put<std::int32_t>(r.labels.height());
      w.put<std::int32_t>(r.labels.width());
      w.put_array<Label>(r.labels.data());
      w.put_array<double>(r.confidence.data());
      w.put_array<std::uint8_t>(r.retain.data());
    }
  }

  static PseudoLabelState read(BinaryReader& rd) {
    rd.expect_tag("CWPL");
    const auto version = rd.get<std::uint32_t>();
    if (version != kFormatVersion)
      throw LoadError("pseudo-label state: unsupported version " + std::to_string(version));
    PseudoLabelState st;
    st.epoch_of_last_refresh = rd.get<std::int32_t>();
    const auto n = rd.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string id = rd.get_string();
      const int h = rd.get<std::int32_t>();
      const int w = rd.get<std::int32_t>();
      if (h < 0 || w < 0) throw LoadError("pseudo-label state: bad dims");
      PseudoLabelRecord r{LabelMap(h, w), ConfidenceMap<double>(h, w), BoolMap(h, w)};
      auto copy_into = [&](auto span, auto vec) {
        if (vec.size() != span.size()) throw LoadError("pseudo-label state: record size mismatch");
        std::copy(vec.begin(), vec.end(), span.begin());
      };
      copy_into(r.labels.data(), rd.get_array<Label>());
      copy_into(r.confidence.data(), rd.get_array<double>());
      copy_into(r.retain.data(), rd.get_array<std::uint8_t>());
      st.records_.emplace(std::move(id), std::move(r));
    }
    return st;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    BinaryWriter w(os);
    write(w);
    w.check();
  }

  static PseudoLabelState load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot open '" + path + "'");
    BinaryReader rd(is);
    return read(rd);
  }

 private:
  std::map<std::string, PseudoLabelRecord> records_;
};

/// One decay step for a sample: confidences below `threshold` are scaled by
/// alpha, the rest are kept; the retain mask is recomputed afterwards.
inline void apply_confidence_decay(PseudoLabelState& state, const std::string& id,
                                   double threshold, const DecayConfig& cfg) {
  PseudoLabelRecord& r = state.at(id);
  for (std::size_t j = 0; j < r.confidence.size(); ++j)
    if (r.confidence[j] < threshold) r.confidence[j] *= cfg.alpha;
  r.retain = retain_mask(r.confidence, threshold);
}

inline void apply_confidence_decay_all(PseudoLabelState& state, double threshold,
                                       const DecayConfig& cfg) {
  for (const auto& [id, rec] : state.records()) apply_confidence_decay(state, id, threshold, cfg);
}

/// Replaces every record with fresh teacher outputs. When the state already
/// holds records, the sample ids must match exactly.
template <class Forward>
void refresh_from_teacher(PseudoLabelState& state, Forward&& teacher,
                          std::span<const SegSample> unlabeled, int num_classes,
                          double threshold, int epoch) {
  if (!state.empty()) {
    if (state.size() != unlabeled.size())
      throw ContractError("refresh_from_teacher: dataset size differs from state");
    for (const auto& s : unlabeled)
      if (!state.contains(s.id))
        throw ContractError("refresh_from_teacher: sample '" + s.id + "' not in state");
  }
  for (const auto& s : unlabeled) {
    const auto z = teacher(s.image);
    if (z.channels() != num_classes || z.height() != s.image.height() ||
        z.width() != s.image.width())
      throw ContractError("refresh_from_teacher: teacher output shape mismatch for '" + s.id +
                          "'");
    auto pl = pseudo_labels_from_logits(z);
    ConfidenceMap<double> conf(pl.confidence.height(), pl.confidence.width());
    for (std::size_t j = 0; j < conf.size(); ++j) conf[j] = static_cast<double>(pl.confidence[j]);
    BoolMap keep = retain_mask(conf, threshold);
    state.set(s.id, {std::move(pl.labels), std::move(conf), std::move(keep)});
  }
  state.epoch_of_last_refresh = epoch;
}

/// Teacher-copy hook: refreshes only when the decay config asks for it.
/// Returns whether a refresh happened.
template <class Forward>
bool refresh_on_teacher_update(PseudoLabelState& state, Forward&& teacher,
                               std::span<const SegSample> unlabeled, int num_classes,
                               double threshold, int epoch, const DecayConfig& cfg) {
  if (!cfg.refresh_on_teacher_update) return false;
  refresh_from_teacher(state, std::forward<Forward>(teacher), unlabeled, num_classes, threshold,
                       epoch);
  return true;
}

}  // namespace cwbass
