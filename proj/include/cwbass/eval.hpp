#pragma once

// Confusion-matrix accumulation and intersection-over-union.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwbass/core.hpp"

namespace cwbass {

// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes) : k_(num_classes) {
    if (num_classes < 1) throw InvalidInput("ConfusionMatrix: need at least one class");
    counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
  }

  int num_classes() const { return k_; }

  std::uint64_t at(int truth, int pred) const {
    return counts_[static_cast<std::size_t>(truth) * k_ + pred];
  }
  std::uint64_t& at(int truth, int pred) {
    return counts_[static_cast<std::size_t>(truth) * k_ + pred];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  /// Adds one (pred, gt) pair. Ground-truth ignore pixels are skipped;
  /// predictions must be valid class indices.
  void accumulate(const LabelMap& pred, const LabelMap& gt) {
    if (!pred.same_shape(gt)) throw InvalidInput("accumulate_confusion: shape mismatch");
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const Label t = gt[j];
      const Label p = pred[j];
      if (t == kIgnoreIndex) continue;
      if (t < 0 || t >= k_) throw InvalidInput("accumulate_confusion: ground truth out of range");
      if (p < 0 || p >= k_)
        throw InvalidInput("accumulate_confusion: prediction " + std::to_string(p) +
                           " is not a class index");
    }
    for (std::size_t j = 0; j < gt.size(); ++j)
      if (gt[j] != kIgnoreIndex) ++at(gt[j], pred[j]);
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.k_ != k_) throw InvalidInput("ConfusionMatrix: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix accumulate_confusion(ConfusionMatrix cm, const LabelMap& pred,
                                            const LabelMap& gt) {
  cm.accumulate(pred, gt);
  return cm;
}

struct IouResult {
  std::vector<double> per_class;  // NaN where the class has zero union
  double mean = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;  // false when every class has zero union
};

inline IouResult miou(const ConfusionMatrix& cm) {
  const int k = cm.num_classes();
  IouResult r;
  r.per_class.assign(k, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int o = 0; o < k; ++o) {
      row += cm.at(c, o);
      col += cm.at(o, c);
    }
    const std::uint64_t inter = cm.at(c, c);
    const std::uint64_t uni = row + col - inter;
    if (uni == 0) continue;
    r.per_class[c] = static_cast<double>(inter) / static_cast<double>(uni);
    sum += r.per_class[c];
    ++present;
  }
  if (present > 0) {
    r.mean = sum / present;
    r.defined = true;
  }
  return r;
}

/// Single-line structured record of an evaluation, same style as the metrics
/// stream.
inline nlohmann::json eval_record(const IouResult& r, const ConfusionMatrix& cm,
                                  const std::string& tag) {
  nlohmann::json j;
  j["record"] = "eval";
  j["tag"] = tag;
  j["num_classes"] = cm.num_classes();
  j["pixels"] = cm.total();
  j["defined"] = r.defined;
  j["miou"] = r.defined ? nlohmann::json(r.mean) : nlohmann::json(nullptr);
  auto per = nlohmann::json::array();
  for (double v : r.per_class) per.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  j["per_class_iou"] = per;
  return j;
}

inline std::string format_iou_table(const IouResult& r) {
  std::ostringstream os;
  os << "class  IoU\n";
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    os << std::setw(5) << c << "  ";
    if (std::isnan(r.per_class[c]))
      os << "absent\n";
    else
      os << std::fixed << std::setprecision(4) << r.per_class[c] << "\n";
  }
  os << "mIoU   ";
  if (r.defined)
    os << std::fixed << std::setprecision(4) << r.mean << "\n";
  else
    os << "undefined\n";
  return os.str();
}

}  // namespace cwbass
