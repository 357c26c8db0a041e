#pragma once

// Small encoder-decoder segmentation network with hand-written backprop,
// and an SGD-with-momentum optimizer over a flat parameter vector.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "cwbass/core.hpp"
#include "cwbass/serialize.hpp"

namespace cwbass {

/// What the training driver needs from a model. Parameters are exposed as a
/// flat float vector so teacher copies, checkpoints and the optimizer stay
/// architecture-agnostic.
template <class M>
concept SegmentationModel =
    requires(M m, const M cm, const Image& x, typename M::Activations& act,
             const typename M::Activations& cact, const LogitMap<float>& g) {
      { cm.forward(x) } -> std::same_as<LogitMap<float>>;
      { cm.forward(x, act) } -> std::same_as<LogitMap<float>>;
      m.backward(cact, g);
      { cm.params() } -> std::convertible_to<std::span<const float>>;
      { m.params() } -> std::convertible_to<std::span<float>>;
      { cm.grads() } -> std::convertible_to<std::span<const float>>;
      { cm.decay_mask() } -> std::convertible_to<std::span<const std::uint8_t>>;
      m.zero_grad();
      { cm.num_classes() } -> std::convertible_to<int>;
    };

namespace nn {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using CVec = Eigen::Map<const Eigen::VectorXf>;
using Vec = Eigen::Map<Eigen::VectorXf>;

struct Conv2d {
  int cin = 0, cout = 0, kernel = 3, stride = 1, pad = 1, dilation = 1;
  std::size_t w_off = 0, b_off = 0;

  int out_dim(int in) const { return (in + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1; }
  std::size_t patch() const { return static_cast<std::size_t>(cin) * kernel * kernel; }

  // Output columns [lo, hi) whose input column ox*stride - pad + kx*dilation
  // falls inside [0, in_w).
  std::pair<int, int> valid_range(int k_off, int in_size, int out_size) const {
    int lo = 0;
    while (lo < out_size && lo * stride - pad + k_off < 0) ++lo;
    int hi = out_size;
    while (hi > lo && (hi - 1) * stride - pad + k_off >= in_size) --hi;
    return {lo, hi};
  }

  void im2col(const Tensor3<float>& in, MatR& cols) const {
    const int ho = out_dim(in.height()), wo = out_dim(in.width());
    cols.setZero(static_cast<Eigen::Index>(patch()), static_cast<Eigen::Index>(ho) * wo);
    for (int c = 0; c < cin; ++c)
      for (int ky = 0; ky < kernel; ++ky)
        for (int kx = 0; kx < kernel; ++kx) {
          float* row = cols.row((c * kernel + ky) * kernel + kx).data();
          const auto [ylo, yhi] = valid_range(ky * dilation, in.height(), ho);
          const auto [xlo, xhi] = valid_range(kx * dilation, in.width(), wo);
          for (int oy = ylo; oy < yhi; ++oy) {
            const float* src = &in(c, oy * stride - pad + ky * dilation, 0);
            float* dst = row + static_cast<std::ptrdiff_t>(oy) * wo;
            const int x0 = -pad + kx * dilation;
            for (int ox = xlo; ox < xhi; ++ox) dst[ox] = src[ox * stride + x0];
          }
        }
  }

  void col2im(const MatR& dcols, Tensor3<float>& din) const {
    const int ho = out_dim(din.height()), wo = out_dim(din.width());
    for (int c = 0; c < cin; ++c)
      for (int ky = 0; ky < kernel; ++ky)
        for (int kx = 0; kx < kernel; ++kx) {
          const float* row = dcols.row((c * kernel + ky) * kernel + kx).data();
          const auto [ylo, yhi] = valid_range(ky * dilation, din.height(), ho);
          const auto [xlo, xhi] = valid_range(kx * dilation, din.width(), wo);
          for (int oy = ylo; oy < yhi; ++oy) {
            float* dst = &din(c, oy * stride - pad + ky * dilation, 0);
            const float* src = row + static_cast<std::ptrdiff_t>(oy) * wo;
            const int x0 = -pad + kx * dilation;
            for (int ox = xlo; ox < xhi; ++ox) dst[ox * stride + x0] += src[ox];
          }
        }
  }

  Tensor3<float> forward(std::span<const float> params, const Tensor3<float>& in,
                         MatR& cols) const {
    im2col(in, cols);
    Tensor3<float> out(cout, out_dim(in.height()), out_dim(in.width()));
    MapR o(out.data().data(), cout, static_cast<Eigen::Index>(out.plane()));
    CMapR w(params.data() + w_off, cout, static_cast<Eigen::Index>(patch()));
    o.noalias() = w * cols;
    o.colwise() += CVec(params.data() + b_off, cout);
    return out;
  }

  // Accumulates weight/bias gradients; returns the input gradient when
  // `din` is non-null.
  void backward(std::span<const float> params, std::span<float> grads, const MatR& cols,
                const Tensor3<float>& dout, Tensor3<float>* din) const {
    CMapR g(dout.data().data(), cout, static_cast<Eigen::Index>(dout.plane()));
    MapR dw(grads.data() + w_off, cout, static_cast<Eigen::Index>(patch()));
    dw.noalias() += g * cols.transpose();
    Vec(grads.data() + b_off, cout) += g.rowwise().sum();
    if (din) {
      CMapR w(params.data() + w_off, cout, static_cast<Eigen::Index>(patch()));
      MatR dcols = w.transpose() * g;
      col2im(dcols, *din);
    }
  }
};

inline void relu_inplace(Tensor3<float>& t) {
  for (float& v : t.data()) v = v < 0.f ? 0.f : v;  // NaN passes through
}

inline void relu_backward(const Tensor3<float>& out, Tensor3<float>& grad) {
  auto o = out.data();
  auto g = grad.data();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(o[i] > 0.f)) g[i] = 0.f;
}

// Bilinear resampling with half-pixel centers (align_corners = false).
struct ResizeTap {
  int i0, i1;
  float w1;
};

inline std::vector<ResizeTap> resize_taps(int in, int out) {
  std::vector<ResizeTap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, static_cast<float>(src - i0)};
  }
  return taps;
}

inline Tensor3<float> resize_bilinear(const Tensor3<float>& in, int oh, int ow) {
  if (in.height() == oh && in.width() == ow) return in;
  Tensor3<float> out(in.channels(), oh, ow);
  const auto ty = resize_taps(in.height(), oh);
  const auto tx = resize_taps(in.width(), ow);
  for (int c = 0; c < in.channels(); ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const auto& a = ty[y];
        const auto& b = tx[x];
        const float top = in(c, a.i0, b.i0) * (1 - b.w1) + in(c, a.i0, b.i1) * b.w1;
        const float bot = in(c, a.i1, b.i0) * (1 - b.w1) + in(c, a.i1, b.i1) * b.w1;
        out(c, y, x) = top * (1 - a.w1) + bot * a.w1;
      }
  return out;
}

inline Tensor3<float> resize_bilinear_backward(const Tensor3<float>& dout, int ih, int iw) {
  if (dout.height() == ih && dout.width() == iw) return dout;
  Tensor3<float> din(dout.channels(), ih, iw);
  const auto ty = resize_taps(ih, dout.height());
  const auto tx = resize_taps(iw, dout.width());
  for (int c = 0; c < dout.channels(); ++c)
    for (int y = 0; y < dout.height(); ++y)
      for (int x = 0; x < dout.width(); ++x) {
        const auto& a = ty[y];
        const auto& b = tx[x];
        const float g = dout(c, y, x);
        din(c, a.i0, b.i0) += g * (1 - a.w1) * (1 - b.w1);
        din(c, a.i0, b.i1) += g * (1 - a.w1) * b.w1;
        din(c, a.i1, b.i0) += g * a.w1 * (1 - b.w1);
        din(c, a.i1, b.i1) += g * a.w1 * b.w1;
      }
  return din;
}

inline Tensor3<float> concat_channels(const Tensor3<float>& a, const Tensor3<float>& b) {
  Tensor3<float> out(a.channels() + b.channels(), a.height(), a.width());
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + a.size());
  return out;
}

}  // namespace nn

// Reference model:
//   enc1 3x3/s2 -> enc2 3x3/s2 -> enc3 3x3 -> enc4 3x3 dilation 2
//   -> bilinear up to enc1 size, concat enc1 -> dec 3x3 -> head 1x1
//   -> bilinear up to input size.
// Inputs are expected in [0, 1]; logits come out at input resolution.
class TinySegNet {
 public:
  struct Options {
    int in_channels = 3;
    int num_classes = 4;
    int width = 16;  // enc1/dec channels; enc2..4 use twice this
    bool operator==(const Options&) const = default;
  };

  struct Activations {
    Tensor3<float> x0, e1, e2, e3, e4, up, cat, d, h;
    nn::MatR c1, c2, c3, c4, c5, c6;
  };

  TinySegNet() : TinySegNet(Options{}, 0) {}

  TinySegNet(Options opt, std::uint64_t seed) : opt_(opt) {
    if (opt.num_classes < 2) throw ConfigError("TinySegNet: num_classes must be >= 2");
    if (opt.in_channels < 1 || opt.width < 1) throw ConfigError("TinySegNet: bad options");
    const int w1 = opt.width, w2 = 2 * opt.width;
    enc1_ = add_conv(opt.in_channels, w1, 3, 2, 1, 1);
    enc2_ = add_conv(w1, w2, 3, 2, 1, 1);
    enc3_ = add_conv(w2, w2, 3, 1, 1, 1);
    enc4_ = add_conv(w2, w2, 3, 1, 2, 2);
    dec_ = add_conv(w2 + w1, w1, 3, 1, 1, 1);
    head_ = add_conv(w1, opt.num_classes, 1, 1, 0, 1);
    params_.assign(size_, 0.f);
    grads_.assign(size_, 0.f);
    decay_.assign(size_, 0);
    Rng rng(seed);
    for (const nn::Conv2d* c : {&enc1_, &enc2_, &enc3_, &enc4_, &dec_, &head_}) {
      const double stddev = std::sqrt(2.0 / static_cast<double>(c->patch()));
      const std::size_t n = static_cast<std::size_t>(c->cout) * c->patch();
      for (std::size_t i = 0; i < n; ++i) {
        params_[c->w_off + i] = static_cast<float>(stddev * rng.normal());
        decay_[c->w_off + i] = 1;
      }
    }
  }

  const Options& options() const { return opt_; }
  int num_classes() const { return opt_.num_classes; }

  std::span<float> params() { return params_; }
  std::span<const float> params() const { return params_; }
  std::span<const float> grads() const { return grads_; }
  std::span<float> grads() { return grads_; }
  /// 1 for weights subject to weight decay, 0 for biases.
  std::span<const std::uint8_t> decay_mask() const { return decay_; }
  void zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.f); }

  LogitMap<float> forward(const Image& x) const {
    Activations a;
    return forward(x, a);
  }

  LogitMap<float> forward(const Image& x, Activations& a) const {
    if (x.channels() != opt_.in_channels)
      throw ContractError("TinySegNet: expected " + std::to_string(opt_.in_channels) +
                          " input channels");
    if (x.height() < 1 || x.width() < 1) throw InvalidInput("TinySegNet: empty image");
    a.x0 = x;
    for (float& v : a.x0.data()) v -= 0.5f;
    a.e1 = enc1_.forward(params_, a.x0, a.c1);
    nn::relu_inplace(a.e1);
    a.e2 = enc2_.forward(params_, a.e1, a.c2);
    nn::relu_inplace(a.e2);
    a.e3 = enc3_.forward(params_, a.e2, a.c3);
    nn::relu_inplace(a.e3);
    a.e4 = enc4_.forward(params_, a.e3, a.c4);
    nn::relu_inplace(a.e4);
    a.up = nn::resize_bilinear(a.e4, a.e1.height(), a.e1.width());
    a.cat = nn::concat_channels(a.up, a.e1);
    a.d = dec_.forward(params_, a.cat, a.c5);
    nn::relu_inplace(a.d);
    a.h = head_.forward(params_, a.d, a.c6);
    return LogitMap<float>(nn::resize_bilinear(a.h, x.height(), x.width()));
  }

  /// Accumulates parameter gradients for one sample.
  void backward(const Activations& a, const LogitMap<float>& dlogits) {
    Tensor3<float> dh = nn::resize_bilinear_backward(dlogits, a.h.height(), a.h.width());
    Tensor3<float> dd(a.d.channels(), a.d.height(), a.d.width());
    head_.backward(params_, grads_, a.c6, dh, &dd);
    nn::relu_backward(a.d, dd);
    Tensor3<float> dcat(a.cat.channels(), a.cat.height(), a.cat.width());
    dec_.backward(params_, grads_, a.c5, dd, &dcat);
    const int cu = a.up.channels();
    Tensor3<float> dup(cu, a.up.height(), a.up.width());
    Tensor3<float> de1(a.e1.channels(), a.e1.height(), a.e1.width());
    auto src = dcat.data();
    std::copy(src.begin(), src.begin() + dup.size(), dup.data().begin());
    std::copy(src.begin() + dup.size(), src.end(), de1.data().begin());
    Tensor3<float> de4 = nn::resize_bilinear_backward(dup, a.e4.height(), a.e4.width());
    nn::relu_backward(a.e4, de4);
    Tensor3<float> de3(a.e3.channels(), a.e3.height(), a.e3.width());
    enc4_.backward(params_, grads_, a.c4, de4, &de3);
    nn::relu_backward(a.e3, de3);
    Tensor3<float> de2(a.e2.channels(), a.e2.height(), a.e2.width());
    enc3_.backward(params_, grads_, a.c3, de3, &de2);
    nn::relu_backward(a.e2, de2);
    Tensor3<float> de1b(a.e1.channels(), a.e1.height(), a.e1.width());
    enc2_.backward(params_, grads_, a.c2, de2, &de1b);
    auto d1 = de1.data();
    auto d1b = de1b.data();
    for (std::size_t i = 0; i < d1.size(); ++i) d1[i] += d1b[i];
    nn::relu_backward(a.e1, de1);
    enc1_.backward(params_, grads_, a.c1, de1, nullptr);
  }

  /// Copies weights from a model with identical parameter layout.
  void copy_weights_from(const TinySegNet& other) {
    if (other.opt_ != opt_ || other.params_.size() != params_.size())
      throw ContractError("TinySegNet: parameter shape mismatch on copy");
    params_ = other.params_;
  }

  void write(BinaryWriter& w) const {
    w.put_tag("TSEG");
    w.put<std::int32_t>(opt_.in_channels);
    w.put<std::int32_t>(opt_.num_classes);
    w.put<std::int32_t>(opt_.width);
    w.put_array<float>(params_);
  }

  static TinySegNet read(BinaryReader& r) {
    r.expect_tag("TSEG");
    Options o;
    o.in_channels = r.get<std::int32_t>();
    o.num_classes = r.get<std::int32_t>();
    o.width = r.get<std::int32_t>();
    TinySegNet m(o, 0);
    auto p = r.get_array<float>();
    if (p.size() != m.params_.size()) throw LoadError("TinySegNet: parameter count mismatch");
    m.params_.assign(p.begin(), p.end());
    return m;
  }

 private:
  nn::Conv2d add_conv(int cin, int cout, int k, int stride, int pad, int dil) {
    nn::Conv2d c{cin, cout, k, stride, pad, dil, 0, 0};
    c.w_off = size_;
    size_ += static_cast<std::size_t>(cout) * c.patch();
    c.b_off = size_;
    size_ += static_cast<std::size_t>(cout);
    return c;
  }

  Options opt_;
  nn::Conv2d enc1_, enc2_, enc3_, enc4_, dec_, head_;
  std::size_t size_ = 0;
  AlignedVector<float> params_, grads_;
  std::vector<std::uint8_t> decay_;
};

static_assert(SegmentationModel<TinySegNet>);

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool operator==(const SgdConfig&) const = default;
};

// Heavy-ball SGD: v <- mu v + (g + wd w); w <- w - lr v.
class Sgd {
 public:
  Sgd() = default;
  Sgd(SgdConfig cfg, std::size_t n) : cfg_(cfg), velocity_(n, 0.f) {}

  void step(std::span<float> params, std::span<const float> grads,
            std::span<const std::uint8_t> decay_mask, double lr) {
    if (params.size() != velocity_.size() || grads.size() != params.size() ||
        decay_mask.size() != params.size())
      throw ContractError("Sgd: parameter size mismatch");
    const float mu = static_cast<float>(cfg_.momentum);
    const float wd = static_cast<float>(cfg_.weight_decay);
    const float rate = static_cast<float>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const float g = grads[i] + (decay_mask[i] ? wd * params[i] : 0.f);
      velocity_[i] = mu * velocity_[i] + g;
      params[i] -= rate * velocity_[i];
    }
  }

  const std::vector<float>& velocity() const { return velocity_; }
  const SgdConfig& config() const { return cfg_; }

  void write(BinaryWriter& w) const {
    w.put_tag("SGDM");
    w.put<double>(cfg_.momentum);
    w.put<double>(cfg_.weight_decay);
    w.put_array<float>(velocity_);
  }

  static Sgd read(BinaryReader& r) {
    r.expect_tag("SGDM");
    Sgd s;
    s.cfg_.momentum = r.get<double>();
    s.cfg_.weight_decay = r.get<double>();
    s.velocity_ = r.get_array<float>();
    return s;
  }

  bool operator==(const Sgd&) const = default;

 private:
  SgdConfig cfg_;
  std::vector<float> velocity_;
};

/// lr_initial * (1 - iter / total_iters)^power.
inline double poly_lr(long iter, long total_iters, double lr_initial, double power) {
  if (total_iters <= 0) throw ConfigError("poly_lr: total_iters must be positive");
  if (iter < 0 || iter > total_iters) throw InvalidInput("poly_lr: iter outside [0, total]");
  return lr_initial *
         std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total_iters), power);
}

}  // namespace cwbass
