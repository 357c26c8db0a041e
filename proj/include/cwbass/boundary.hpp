#pragma once

// Boundary masks from label maps via 3x3 Sobel gradients.
//
// Class indices are convolved as raw numbers, so any change of label between
// neighbours registers regardless of which classes meet. Borders use
// replicate padding: a constant map yields an empty mask, borders included.

#include <cmath>

#include "cwbass/core.hpp"

namespace cwbass {

struct GradientPair {
  Map2<double> gx;
  Map2<double> gy;
};

using BoundaryMask = BoolMap;

inline GradientPair sobel_gradients(const LabelMap& labels) {
  const int h = labels.height();
  const int w = labels.width();
  if (h < 1 || w < 1) throw InvalidInput("sobel_gradients: empty label map");
  GradientPair g{Map2<double>(h, w), Map2<double>(h, w)};
  auto at = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return static_cast<double>(labels(y, x));
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double tl = at(y - 1, x - 1), tc = at(y - 1, x), tr = at(y - 1, x + 1);
      const double ml = at(y, x - 1), mr = at(y, x + 1);
      const double bl = at(y + 1, x - 1), bc = at(y + 1, x), br = at(y + 1, x + 1);
      g.gx(y, x) = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl);
      g.gy(y, x) = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr);
    }
  return g;
}

inline Map2<double> gradient_magnitude(const GradientPair& g) {
  if (!g.gx.same_shape(g.gy)) throw InvalidInput("gradient_magnitude: shape mismatch");
  Map2<double> mag(g.gx.height(), g.gx.width());
  for (std::size_t j = 0; j < mag.size(); ++j) mag[j] = std::hypot(g.gx[j], g.gy[j]);
  return mag;
}

/// True where magnitude > epsilon. The default epsilon of 0 is exact for
/// integer label inputs.
inline BoundaryMask boundary_mask(const Map2<double>& magnitude, double epsilon = 0.0) {
  BoundaryMask mask(magnitude.height(), magnitude.width());
  for (std::size_t j = 0; j < mask.size(); ++j) mask[j] = magnitude[j] > epsilon ? 1 : 0;
  return mask;
}

inline BoundaryMask boundary_from_labels(const LabelMap& labels, double epsilon = 0.0) {
  return boundary_mask(gradient_magnitude(sobel_gradients(labels)), epsilon);
}

inline double mask_fraction(const BoolMap& m) {
  if (m.empty()) return 0.0;
  std::size_t n = 0;
  for (auto v : m.data()) n += v != 0;
  return static_cast<double>(n) / static_cast<double>(m.size());
}

}  // namespace cwbass
