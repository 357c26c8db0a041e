#pragma once

// Shared tensor types and elementary per-pixel transforms.
//
// Layout is channel-first everywhere: a class-score tensor is [K, H, W] and a
// per-pixel map is [H, W], both stored row-major in a flat vector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <new>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cwbass {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

using Label = std::int32_t;
inline constexpr Label kIgnoreIndex = 255;

/// Allocator with 64-byte aligned blocks. Vectorized kernels see the same
/// alignment on every run, so float results do not depend on heap history.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template <class T>
class Tensor3 {
 public:
  using value_type = T;

  Tensor3() = default;
  Tensor3(int channels, int height, int width, T fill = T{})
      : channels_(channels), height_(height), width_(width) {
    if (channels < 0 || height < 0 || width < 0)
      throw InvalidInput("Tensor3: negative dimension");
    data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int c, int h, int w) { return data_[index(c, h, w)]; }
  const T& operator()(int c, int h, int w) const { return data_[index(c, h, w)]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::span<T> channel(int c) { return {data_.data() + c * plane(), plane()}; }
  std::span<const T> channel(int c) const { return {data_.data() + c * plane(), plane()}; }

  template <class U>
  bool same_shape(const Tensor3<U>& o) const {
    return channels_ == o.channels() && height_ == o.height() && width_ == o.width();
  }

  bool operator==(const Tensor3&) const = default;

 private:
  std::size_t index(int c, int h, int w) const {
    return (static_cast<std::size_t>(c) * height_ + h) * width_ + w;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  AlignedVector<T> data_;
};

template <class T>
class Map2 {
 public:
  using value_type = T;

  Map2() = default;
  Map2(int height, int width, T fill = T{}) : height_(height), width_(width) {
    if (height < 0 || width < 0) throw InvalidInput("Map2: negative dimension");
    data_.assign(static_cast<std::size_t>(height) * width, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int h, int w) { return data_[static_cast<std::size_t>(h) * width_ + w]; }
  const T& operator()(int h, int w) const {
    return data_[static_cast<std::size_t>(h) * width_ + w];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  template <class U>
  bool same_shape(const Map2<U>& o) const {
    return height_ == o.height() && width_ == o.width();
  }

  bool operator==(const Map2&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  AlignedVector<T> data_;
};

/// Unnormalized per-class scores [K, H, W].
template <class T>
class LogitMap : public Tensor3<T> {
 public:
  using Tensor3<T>::Tensor3;
  LogitMap() = default;
  explicit LogitMap(Tensor3<T> t) : Tensor3<T>(std::move(t)) {}
  int num_classes() const { return this->channels(); }
};

/// Per-pixel class distribution [K, H, W].
template <class T>
class ProbMap : public Tensor3<T> {
 public:
  using Tensor3<T>::Tensor3;
  ProbMap() = default;
  explicit ProbMap(Tensor3<T> t) : Tensor3<T>(std::move(t)) {}
  int num_classes() const { return this->channels(); }
};

/// Per-pixel confidence in [0, 1].
template <class T>
class ConfidenceMap : public Map2<T> {
 public:
  using Map2<T>::Map2;
  ConfidenceMap() = default;
  explicit ConfidenceMap(Map2<T> m) : Map2<T>(std::move(m)) {}
};

/// Class indices in {0..K-1} or kIgnoreIndex.
class LabelMap : public Map2<Label> {
 public:
  using Map2<Label>::Map2;
  LabelMap() = default;
  explicit LabelMap(Map2<Label> m) : Map2<Label>(std::move(m)) {}
};

using BoolMap = Map2<std::uint8_t>;

using Image = Tensor3<float>;

struct SegSample {
  std::string id;
  Image image;                    // [C_in, H, W], values in [0, 1]
  std::optional<LabelMap> label;  // [H, W]
};

/// Throws unless the sample satisfies its shape and label-range invariants.
inline void validate_sample(const SegSample& s, int num_classes) {
  if (!s.label) return;
  if (s.label->height() != s.image.height() || s.label->width() != s.image.width())
    throw InvalidInput("sample '" + s.id + "': image and label dims differ");
  for (Label v : s.label->data())
    if (v != kIgnoreIndex && (v < 0 || v >= num_classes))
      throw InvalidInput("sample '" + s.id + "': label value " + std::to_string(v) +
                         " outside [0, " + std::to_string(num_classes) + ")");
}

class SegBatch {
 public:
  explicit SegBatch(std::vector<SegSample> samples) : samples_(std::move(samples)) {
    if (samples_.empty()) throw InvalidInput("SegBatch: empty batch");
    const Image& ref = samples_.front().image;
    for (const auto& s : samples_)
      if (!s.image.same_shape(ref)) throw InvalidInput("SegBatch: heterogeneous shapes");
  }

  std::size_t size() const { return samples_.size(); }
  const SegSample& operator[](std::size_t i) const { return samples_[i]; }
  auto begin() const { return samples_.begin(); }
  auto end() const { return samples_.end(); }
  const std::vector<SegSample>& samples() const { return samples_; }

 private:
  std::vector<SegSample> samples_;
};

// Seeded generator with portable derived distributions. The engine is the
// standard Mersenne Twister; the distributions below are written out so the
// stream does not depend on the standard library's distribution algorithms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw InvalidInput("Rng::below(0)");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do x = engine_();
    while (x >= limit);
    return x % n;
  }

  int range(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) std::iter_swap(first + (i - 1), first + below(i));
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (!is) throw LoadError("Rng: malformed state");
  }

 private:
  std::mt19937_64 engine_;
};

template <class T>
void require_finite(const Tensor3<T>& t, const char* what) {
  for (T v : t.data())
    if (!std::isfinite(v)) throw InvalidInput(std::string(what) + ": non-finite value");
}

/// Per-pixel softmax over the class axis, max-subtracted for stability.
template <class T>
ProbMap<T> softmax_probs(const LogitMap<T>& logits) {
  require_finite(logits, "softmax_probs");
  const int k = logits.channels();
  const std::size_t n = logits.plane();
  ProbMap<T> out(k, logits.height(), logits.width());
  auto z = logits.data();
  auto p = out.data();
  for (std::size_t j = 0; j < n; ++j) {
    T m = z[j];
    for (int c = 1; c < k; ++c) m = std::max(m, z[c * n + j]);
    T sum = 0;
    for (int c = 0; c < k; ++c) {
      const T e = std::exp(z[c * n + j] - m);
      p[c * n + j] = e;
      sum += e;
    }
    for (int c = 0; c < k; ++c) p[c * n + j] /= sum;
  }
  return out;
}

/// Per-pixel argmax; ties go to the lowest class index.
template <class T>
LabelMap argmax_labels(const Tensor3<T>& scores) {
  require_finite(scores, "argmax_labels");
  const int k = scores.channels();
  const std::size_t n = scores.plane();
  LabelMap out(scores.height(), scores.width());
  auto z = scores.data();
  for (std::size_t j = 0; j < n; ++j) {
    Label best = 0;
    T best_v = z[j];
    for (int c = 1; c < k; ++c)
      if (z[c * n + j] > best_v) {
        best_v = z[c * n + j];
        best = c;
      }
    out[j] = best;
  }
  return out;
}

/// Per-pixel max probability.
template <class T>
ConfidenceMap<T> max_confidence(const ProbMap<T>& probs) {
  const int k = probs.channels();
  const std::size_t n = probs.plane();
  ConfidenceMap<T> out(probs.height(), probs.width());
  auto p = probs.data();
  for (std::size_t j = 0; j < n; ++j) {
    T m = p[j];
    for (int c = 1; c < k; ++c) m = std::max(m, p[c * n + j]);
    out[j] = m;
  }
  return out;
}

}  // namespace cwbass
