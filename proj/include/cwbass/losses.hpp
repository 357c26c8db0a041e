#pragma once

// Training objectives over student logits.
//
// Every loss returns its value and, when a gradient buffer is supplied,
// accumulates scale * dLoss/dlogits into it. Cross-entropy is always taken
// from logits through log-sum-exp. Confidence weights are constants with
// respect to the student logits.

#include <cmath>
#include <span>
#include <vector>

#include "cwbass/boundary.hpp"
#include "cwbass/core.hpp"

namespace cwbass {

struct LossConfig {
  double gamma = 1.0;         // confidence exponent
  double lambda_unsup = 1.0;  // weight of the confidence-weighted term
  double boundary_coeff = 0.5;
  // Normalize the weighted term by retained pixels instead of all pixels.
  bool weighted_mean_over_retained = false;

  void validate() const {
    if (!(gamma >= 0.0)) throw ConfigError("loss: gamma must be >= 0");
    if (!(lambda_unsup >= 0.0)) throw ConfigError("loss: lambda_unsup must be >= 0");
    if (!std::isfinite(boundary_coeff)) throw ConfigError("loss: boundary_coeff must be finite");
  }
  bool operator==(const LossConfig&) const = default;
};

template <class T>
struct LossTerm {
  T value = 0;
  std::size_t pixels = 0;  // pixels with nonzero contribution weight
  bool empty = false;      // no eligible pixel; value defined as 0
};

struct LossReport {
  double labeled = 0.0;
  double weighted = 0.0;
  double boundary = 0.0;
  double total = 0.0;
  std::size_t labeled_pixels = 0;
  std::size_t retained_pixels = 0;
  std::size_t boundary_pixels = 0;
  std::size_t unlabeled_pixels = 0;
  bool labeled_empty = false;

  bool operator==(const LossReport&) const = default;
};

namespace detail {

// Cross-entropy at pixel j against class y; when grad is non-null adds
// weight * (softmax - onehot) at that pixel.
template <class T>
T pixel_ce(const LogitMap<T>& z, std::size_t j, Label y, LogitMap<T>* grad, T weight) {
  const int k = z.channels();
  const std::size_t n = z.plane();
  auto d = z.data();
  T m = d[j];
  for (int c = 1; c < k; ++c) m = std::max(m, d[c * n + j]);
  T sum = 0;
  for (int c = 0; c < k; ++c) sum += std::exp(d[c * n + j] - m);
  const T lse = m + std::log(sum);
  if (grad) {
    auto g = grad->data();
    for (int c = 0; c < k; ++c) {
      const T p = std::exp(d[c * n + j] - lse);
      g[c * n + j] += weight * (p - (c == y ? T(1) : T(0)));
    }
  }
  return lse - d[y * n + j];
}

template <class T>
void check_label(Label y, int k) {
  if (y != kIgnoreIndex && (y < 0 || y >= k))
    throw InvalidInput("loss: label " + std::to_string(y) + " out of range");
}

}  // namespace detail

/// Mean cross-entropy over all non-ignored pixels pooled across the batch.
template <class T>
LossTerm<T> labeled_ce(std::span<const LogitMap<T>> logits, std::span<const LabelMap> gt,
                       std::span<LogitMap<T>> grad = {}, T scale = T(1)) {
  if (logits.size() != gt.size()) throw InvalidInput("labeled_ce: batch size mismatch");
  if (!grad.empty() && grad.size() != logits.size())
    throw InvalidInput("labeled_ce: gradient batch size mismatch");
  std::size_t count = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (logits[i].height() != gt[i].height() || logits[i].width() != gt[i].width())
      throw InvalidInput("labeled_ce: logits/label shape mismatch");
    for (Label y : gt[i].data()) {
      detail::check_label<T>(y, logits[i].channels());
      count += y != kIgnoreIndex;
    }
  }
  LossTerm<T> out;
  out.pixels = count;
  if (count == 0) {
    out.empty = true;
    return out;
  }
  const T w = scale / static_cast<T>(count);
  T sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    LogitMap<T>* g = grad.empty() ? nullptr : &grad[i];
    for (std::size_t j = 0; j < gt[i].size(); ++j) {
      const Label y = gt[i][j];
      if (y == kIgnoreIndex) continue;
      sum += detail::pixel_ce(logits[i], j, y, g, w);
    }
  }
  out.value = sum / static_cast<T>(count);
  return out;
}

/// Confidence-weighted cross-entropy against pseudo-labels for one image:
/// (1/N) * sum_j retain_j * p_j^gamma * CE_j with N the image pixel count
/// (or the retained count when `mean_over_retained`). Pseudo-label pixels
/// equal to kIgnoreIndex contribute nothing.
template <class T>
LossTerm<T> confidence_weighted_ce(const LogitMap<T>& logits, const LabelMap& pseudo,
                                   const ConfidenceMap<T>& conf, const BoolMap& retain,
                                   double gamma, LogitMap<T>* grad = nullptr, T scale = T(1),
                                   bool mean_over_retained = false) {
  if (!(gamma >= 0.0)) throw ConfigError("confidence_weighted_ce: gamma must be >= 0");
  if (logits.height() != pseudo.height() || logits.width() != pseudo.width() ||
      !pseudo.same_shape(conf) || !pseudo.same_shape(retain))
    throw InvalidInput("confidence_weighted_ce: shape mismatch");
  std::size_t kept = 0;
  for (std::size_t j = 0; j < pseudo.size(); ++j) {
    detail::check_label<T>(pseudo[j], logits.channels());
    kept += retain[j] && pseudo[j] != kIgnoreIndex;
  }
  LossTerm<T> out;
  out.pixels = kept;
  const std::size_t denom = mean_over_retained ? kept : pseudo.size();
  if (kept == 0 || denom == 0) {
    out.empty = kept == 0;
    return out;
  }
  const T inv_n = T(1) / static_cast<T>(denom);
  T sum = 0;
  for (std::size_t j = 0; j < pseudo.size(); ++j) {
    if (!retain[j] || pseudo[j] == kIgnoreIndex) continue;
    const T weight = static_cast<T>(std::pow(static_cast<double>(conf[j]), gamma));
    sum += weight * detail::pixel_ce(logits, j, pseudo[j], grad, scale * weight * inv_n);
  }
  out.value = sum * inv_n;
  return out;
}

/// Boundary-masked cross-entropy for one image, normalized by the total
/// pixel count (not the boundary count).
template <class T>
LossTerm<T> boundary_loss(const LogitMap<T>& logits, const LabelMap& pseudo,
                          const BoundaryMask& mask, LogitMap<T>* grad = nullptr,
                          T scale = T(1)) {
  if (logits.height() != pseudo.height() || logits.width() != pseudo.width() ||
      !pseudo.same_shape(mask))
    throw InvalidInput("boundary_loss: shape mismatch");
  LossTerm<T> out;
  if (pseudo.empty()) {
    out.empty = true;
    return out;
  }
  const T inv_n = T(1) / static_cast<T>(pseudo.size());
  T sum = 0;
  for (std::size_t j = 0; j < pseudo.size(); ++j) {
    detail::check_label<T>(pseudo[j], logits.channels());
    if (!mask[j] || pseudo[j] == kIgnoreIndex) continue;
    ++out.pixels;
    sum += detail::pixel_ce(logits, j, pseudo[j], grad, scale * inv_n);
  }
  out.empty = out.pixels == 0;
  out.value = sum * inv_n;
  return out;
}

/// Batch form of the weighted term: per-image losses averaged uniformly.
template <class T>
LossTerm<T> confidence_weighted_ce_batch(std::span<const LogitMap<T>> logits,
                                         std::span<const LabelMap> pseudo,
                                         std::span<const ConfidenceMap<T>> conf,
                                         std::span<const BoolMap> retain, double gamma,
                                         std::span<LogitMap<T>> grad = {}, T scale = T(1),
                                         bool mean_over_retained = false) {
  const std::size_t b = logits.size();
  if (b == 0 || pseudo.size() != b || conf.size() != b || retain.size() != b ||
      (!grad.empty() && grad.size() != b))
    throw InvalidInput("confidence_weighted_ce_batch: batch size mismatch");
  LossTerm<T> out;
  const T per = scale / static_cast<T>(b);
  for (std::size_t i = 0; i < b; ++i) {
    auto t = confidence_weighted_ce(logits[i], pseudo[i], conf[i], retain[i], gamma,
                                    grad.empty() ? nullptr : &grad[i], per, mean_over_retained);
    out.value += t.value;
    out.pixels += t.pixels;
  }
  out.value /= static_cast<T>(b);
  out.empty = out.pixels == 0;
  return out;
}

template <class T>
LossTerm<T> boundary_loss_batch(std::span<const LogitMap<T>> logits,
                                std::span<const LabelMap> pseudo,
                                std::span<const BoundaryMask> masks,
                                std::span<LogitMap<T>> grad = {}, T scale = T(1)) {
  const std::size_t b = logits.size();
  if (b == 0 || pseudo.size() != b || masks.size() != b || (!grad.empty() && grad.size() != b))
    throw InvalidInput("boundary_loss_batch: batch size mismatch");
  LossTerm<T> out;
  const T per = scale / static_cast<T>(b);
  for (std::size_t i = 0; i < b; ++i) {
    auto t = boundary_loss(logits[i], pseudo[i], masks[i], grad.empty() ? nullptr : &grad[i], per);
    out.value += t.value;
    out.pixels += t.pixels;
  }
  out.value /= static_cast<T>(b);
  out.empty = out.pixels == 0;
  return out;
}

inline double total_stage1_loss(double labeled, double weighted, double lambda_unsup) {
  return labeled + lambda_unsup * weighted;
}

inline double final_loss(double labeled, double weighted, double boundary, const LossConfig& cfg) {
  return labeled + cfg.lambda_unsup * weighted + cfg.boundary_coeff * boundary;
}

}  // namespace cwbass
