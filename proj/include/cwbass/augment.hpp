#pragma once

// Joint geometric augmentation (flip, scale, crop) of an image together with
// its per-pixel targets, plus optional photometric ops for unlabeled inputs.

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "cwbass/core.hpp"
#include "cwbass/nn.hpp"

namespace cwbass {

struct StrongAugConfig {
  bool enabled = true;
  double color_jitter_p = 0.8;
  double jitter = 0.4;  // brightness/contrast/saturation strength
  double grayscale_p = 0.2;
  double blur_p = 0.5;
  double cutout_p = 0.5;
  bool operator==(const StrongAugConfig&) const = default;
};

struct AugmentConfig {
  bool flip = true;
  double scale_lo = 0.5;
  double scale_hi = 2.0;
  int crop_h = 64;
  int crop_w = 64;
  StrongAugConfig strong;

  void validate() const {
    if (!(scale_lo > 0 && scale_lo <= scale_hi))
      throw ConfigError("augment: need 0 < scale_lo <= scale_hi");
    if (crop_h < 1 || crop_w < 1) throw ConfigError("augment: crop size must be positive");
  }
  bool operator==(const AugmentConfig&) const = default;
};

// Sampled geometric parameters. The output pixel (r, c) reads the scaled,
// bottom/right-padded canvas at (r + offset_y, c + offset_x).
struct AugmentParams {
  bool flip = false;
  int scaled_h = 0, scaled_w = 0;
  int offset_y = 0, offset_x = 0;
  int crop_h = 0, crop_w = 0;
};

inline AugmentParams sample_augment_params(int h, int w, const AugmentConfig& cfg, Rng& rng) {
  AugmentParams p;
  p.flip = cfg.flip && rng.bernoulli(0.5);
  const double s = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  p.scaled_h = std::max(1, static_cast<int>(std::lround(h * s)));
  p.scaled_w = std::max(1, static_cast<int>(std::lround(w * s)));
  p.crop_h = cfg.crop_h;
  p.crop_w = cfg.crop_w;
  const int ph = std::max(p.scaled_h, p.crop_h), pw = std::max(p.scaled_w, p.crop_w);
  p.offset_y = rng.range(0, ph - p.crop_h);
  p.offset_x = rng.range(0, pw - p.crop_w);
  return p;
}

/// Nearest source index for a scaled coordinate (half-pixel centers).
inline int nearest_source(int scaled, int scaled_size, int src_size) {
  const int v = static_cast<int>(std::floor((scaled + 0.5) * src_size / scaled_size));
  return std::min(v, src_size - 1);
}

/// Source pixel feeding output (r, c), or nullopt for padding.
inline std::optional<std::pair<int, int>> source_pixel(const AugmentParams& p, int src_h,
                                                       int src_w, int r, int c) {
  const int ys = r + p.offset_y, xs = c + p.offset_x;
  if (ys >= p.scaled_h || xs >= p.scaled_w) return std::nullopt;
  const int sy = nearest_source(ys, p.scaled_h, src_h);
  int sx = nearest_source(xs, p.scaled_w, src_w);
  if (p.flip) sx = src_w - 1 - sx;
  return std::pair{sy, sx};
}

template <class T>
Map2<T> warp_nearest(const Map2<T>& src, const AugmentParams& p, T fill) {
  Map2<T> out(p.crop_h, p.crop_w, fill);
  for (int r = 0; r < p.crop_h; ++r)
    for (int c = 0; c < p.crop_w; ++c)
      if (auto s = source_pixel(p, src.height(), src.width(), r, c))
        out(r, c) = src(s->first, s->second);
  return out;
}

inline Image hflip(const Image& img) {
  Image out(img.channels(), img.height(), img.width());
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) out(c, y, x) = img(c, y, img.width() - 1 - x);
  return out;
}

template <class T>
Map2<T> hflip(const Map2<T>& m) {
  Map2<T> out(m.height(), m.width());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) out(y, x) = m(y, m.width() - 1 - x);
  return out;
}

/// Image warp: flip, bilinear rescale, pad with the per-channel mean, crop.
inline Image warp_image(const Image& src, const AugmentParams& p) {
  const Image flipped = p.flip ? hflip(src) : src;
  const Image scaled = nn::resize_bilinear(flipped, p.scaled_h, p.scaled_w);
  Image out(src.channels(), p.crop_h, p.crop_w);
  for (int c = 0; c < src.channels(); ++c) {
    double mean = 0;
    for (float v : src.channel(c)) mean += v;
    mean /= std::max<std::size_t>(1, src.plane());
    for (int r = 0; r < p.crop_h; ++r)
      for (int x = 0; x < p.crop_w; ++x) {
        const int ys = r + p.offset_y, xs = x + p.offset_x;
        out(c, r, x) = (ys < p.scaled_h && xs < p.scaled_w) ? scaled(c, ys, xs)
                                                             : static_cast<float>(mean);
      }
  }
  return out;
}

// An image with the per-pixel targets that must stay aligned with it.
struct AugmentItem {
  Image image;
  std::vector<LabelMap> labels;             // padded with ignore_index
  std::vector<ConfidenceMap<double>> reals;  // padded with 0
};

inline AugmentItem apply_geometric(const AugmentItem& in, const AugmentParams& p) {
  for (const auto& l : in.labels)
    if (l.height() != in.image.height() || l.width() != in.image.width())
      throw InvalidInput("augment: label/image size mismatch");
  for (const auto& m : in.reals)
    if (m.height() != in.image.height() || m.width() != in.image.width())
      throw InvalidInput("augment: map/image size mismatch");
  AugmentItem out;
  out.image = warp_image(in.image, p);
  for (const auto& l : in.labels) out.labels.emplace_back(warp_nearest<Label>(l, p, kIgnoreIndex));
  for (const auto& m : in.reals) out.reals.emplace_back(warp_nearest<double>(m, p, 0.0));
  return out;
}

inline AugmentItem augment(const AugmentItem& in, const AugmentConfig& cfg, Rng& rng) {
  return apply_geometric(in, sample_augment_params(in.image.height(), in.image.width(), cfg, rng));
}

/// Labeled-sample form of the geometric augmentation.
inline SegSample augment(const SegSample& s, const AugmentConfig& cfg, Rng& rng) {
  AugmentItem item{s.image, {}, {}};
  if (s.label) item.labels.push_back(*s.label);
  AugmentItem out = augment(item, cfg, rng);
  SegSample r{s.id, std::move(out.image), std::nullopt};
  if (s.label) r.label = std::move(out.labels.front());
  return r;
}

namespace detail {

inline void gaussian_blur(Image& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2 * sigma)));
  std::vector<float> k(2 * radius + 1);
  float sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
    sum += k[i + radius];
  }
  for (float& v : k) v /= sum;
  const int h = img.height(), w = img.width();
  Image tmp(img.channels(), h, w);
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * img(c, y, std::clamp(x + i, 0, w - 1));
        tmp(c, y, x) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * tmp(c, std::clamp(y + i, 0, h - 1), x);
        img(c, y, x) = acc;
      }
  }
}

}  // namespace detail

/// Photometric perturbations for a student's unlabeled input. Cutout regions
/// are filled with random values and their labels set to ignore_index.
inline void strong_augment(Image& img, std::vector<LabelMap>& labels, const StrongAugConfig& cfg,
                           Rng& rng) {
  if (!cfg.enabled) return;
  const int ch = img.channels();
  if (rng.bernoulli(cfg.color_jitter_p) && ch == 3) {
    const double b = rng.uniform(1 - cfg.jitter, 1 + cfg.jitter);
    const double ct = rng.uniform(1 - cfg.jitter, 1 + cfg.jitter);
    const double sat = rng.uniform(1 - cfg.jitter, 1 + cfg.jitter);
    double mean = 0;
    for (float v : img.data()) mean += v;
    mean /= static_cast<double>(img.size());
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) {
        const double gray = 0.299 * img(0, y, x) + 0.587 * img(1, y, x) + 0.114 * img(2, y, x);
        for (int c = 0; c < 3; ++c) {
          double v = img(c, y, x) * b;
          v = (v - mean) * ct + mean;
          v = gray * b + (v - gray * b) * sat;
          img(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
  }
  if (rng.bernoulli(cfg.grayscale_p) && ch == 3) {
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) {
        const float g = 0.299f * img(0, y, x) + 0.587f * img(1, y, x) + 0.114f * img(2, y, x);
        for (int c = 0; c < 3; ++c) img(c, y, x) = g;
      }
  }
  if (rng.bernoulli(cfg.blur_p)) detail::gaussian_blur(img, rng.uniform(0.1, 2.0));
  if (rng.bernoulli(cfg.cutout_p)) {
    const int h = img.height(), w = img.width();
    const int ch_ = std::max(1, static_cast<int>(h * rng.uniform(0.1, 0.4)));
    const int cw = std::max(1, static_cast<int>(w * rng.uniform(0.1, 0.4)));
    const int y0 = rng.range(0, h - ch_), x0 = rng.range(0, w - cw);
    std::vector<float> fill(ch);
    for (auto& f : fill) f = static_cast<float>(rng.uniform());
    for (int y = y0; y < y0 + ch_; ++y)
      for (int x = x0; x < x0 + cw; ++x) {
        for (int c = 0; c < ch; ++c) img(c, y, x) = fill[c];
        for (auto& l : labels) l(y, x) = kIgnoreIndex;
      }
  }
}

}  // namespace cwbass
