#pragma once

// Random instances, converters to oracle form, and scratch directories.

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "cwbass/core.hpp"
#include "oracles.hpp"

namespace testing_support {

using namespace cwbass;

template <class T>
LogitMap<T> random_logits(Rng& rng, int k, int h, int w, double spread = 3.0) {
  LogitMap<T> z(k, h, w);
  for (auto& v : z.data()) v = static_cast<T>(rng.uniform(-spread, spread));
  return z;
}

inline LabelMap random_labels(Rng& rng, int k, int h, int w, double ignore_p = 0.0) {
  LabelMap m(h, w);
  for (auto& v : m.data()) v = rng.bernoulli(ignore_p) ? kIgnoreIndex : rng.range(0, k - 1);
  return m;
}

template <class T>
ConfidenceMap<T> random_confidence(Rng& rng, int h, int w, double lo = 0.0, double hi = 1.0) {
  ConfidenceMap<T> c(h, w);
  for (auto& v : c.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return c;
}

inline BoolMap random_mask(Rng& rng, int h, int w, double p = 0.5) {
  BoolMap m(h, w);
  for (auto& v : m.data()) v = rng.bernoulli(p) ? 1 : 0;
  return m;
}

template <class T>
oracle::Logits to_oracle(const LogitMap<T>& z) {
  oracle::Logits o(z.channels(), oracle::Field(z.height(), std::vector<oracle::Real>(z.width())));
  for (int c = 0; c < z.channels(); ++c)
    for (int y = 0; y < z.height(); ++y)
      for (int x = 0; x < z.width(); ++x) o[c][y][x] = z(c, y, x);
  return o;
}

template <class M>
auto to_oracle_grid(const M& m) {
  using V = std::conditional_t<std::is_floating_point_v<typename M::value_type>, oracle::Real, int>;
  std::vector<std::vector<V>> o(m.height(), std::vector<V>(m.width()));
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) o[y][x] = static_cast<V>(m(y, x));
  return o;
}

inline double rel_err(long double a, long double b) {
  const long double d = std::fabs(a - b);
  const long double s = std::max(std::fabs(a), std::fabs(b));
  return s == 0 ? static_cast<double>(d) : static_cast<double>(d / s);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cwbass_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace testing_support
