#pragma once

// Figure-style artifacts: input | ground truth | prediction triptychs,
// boundary overlays, and training curves (CSV plus a stacked line chart).

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwbass/boundary.hpp"
#include "cwbass/core.hpp"
#include "cwbass/image_io.hpp"

namespace cwbass {

using Rgb = std::array<std::uint8_t, 3>;

inline Rgb class_color(Label k) {
  static constexpr Rgb palette[] = {{0, 0, 0},       {230, 25, 75},  {60, 180, 75},
                                    {255, 225, 25},  {0, 130, 200},  {245, 130, 48},
                                    {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
                                    {210, 245, 60}};
  if (k == kIgnoreIndex) return {255, 255, 255};
  if (k < 0) return {128, 128, 128};
  return palette[static_cast<std::size_t>(k) % std::size(palette)];
}

inline RasterImage colorize(const LabelMap& m) {
  RasterImage r{m.width(), m.height(), 3, std::vector<std::uint8_t>(m.size() * 3)};
  for (std::size_t j = 0; j < m.size(); ++j) {
    const Rgb c = class_color(m[j]);
    std::copy(c.begin(), c.end(), r.pixels.begin() + 3 * j);
  }
  return r;
}

inline RasterImage to_rgb(const RasterImage& r) {
  if (r.channels == 3) return r;
  RasterImage out{r.width, r.height, 3, std::vector<std::uint8_t>(r.pixels.size() * 3)};
  for (std::size_t j = 0; j < r.pixels.size(); ++j)
    for (int c = 0; c < 3; ++c) out.pixels[3 * j + c] = r.pixels[j];
  return out;
}

/// Panels side by side with a 2-pixel white gutter; heights must match.
inline RasterImage hconcat(const std::vector<RasterImage>& panels) {
  constexpr int gutter = 2;
  if (panels.empty()) throw InvalidInput("hconcat: no panels");
  const int h = panels.front().height;
  int w = 0;
  for (const auto& p : panels) {
    if (p.height != h || p.channels != 3) throw InvalidInput("hconcat: panel shape mismatch");
    w += p.width;
  }
  w += gutter * static_cast<int>(panels.size() - 1);
  RasterImage out{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3, 255)};
  int x0 = 0;
  for (const auto& p : panels) {
    for (int y = 0; y < h; ++y)
      std::copy_n(p.pixels.begin() + static_cast<std::size_t>(y) * p.width * 3, p.width * 3,
                  out.pixels.begin() + (static_cast<std::size_t>(y) * w + x0) * 3);
    x0 += p.width + gutter;
  }
  return out;
}

inline RasterImage make_triptych(const Image& input, const LabelMap& gt, const LabelMap& pred) {
  return hconcat({to_rgb(image_to_raster(input)), colorize(gt), colorize(pred)});
}

/// Input image with boundary pixels painted in `color`. Returns the count of
/// painted pixels through `drawn` when given.
inline RasterImage boundary_overlay(const Image& input, const BoundaryMask& mask,
                                    std::size_t* drawn = nullptr, Rgb color = {255, 0, 0}) {
  RasterImage r = to_rgb(image_to_raster(input));
  if (mask.height() != r.height || mask.width() != r.width)
    throw InvalidInput("boundary_overlay: mask/image size mismatch");
  std::size_t n = 0;
  for (std::size_t j = 0; j < mask.size(); ++j)
    if (mask[j]) {
      std::copy(color.begin(), color.end(), r.pixels.begin() + 3 * j);
      ++n;
    }
  if (drawn) *drawn = n;
  return r;
}

// ---- curves ------------------------------------------------------------------

inline const std::vector<std::string>& curve_columns() {
  static const std::vector<std::string> cols = {"lr",        "labeled",   "weighted",
                                                "boundary",  "total",     "mean_conf",
                                                "threshold", "retention", "boundary_frac"};
  return cols;
}

struct Curves {
  std::vector<long> step;
  std::vector<std::vector<double>> series;  // one per curve_columns() entry
};

/// Collects the step records of a metrics stream. Throws InvalidInput when it
/// holds none.
inline Curves read_curves(const std::string& ndjson_path) {
  std::ifstream is(ndjson_path);
  if (!is) throw LoadError("cannot read metrics stream '" + ndjson_path + "'");
  Curves c;
  c.series.resize(curve_columns().size());
  std::string line;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw LoadError(ndjson_path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (rec.value("record", "") != "step") continue;
    c.step.push_back(rec.at("step").get<long>());
    for (std::size_t k = 0; k < curve_columns().size(); ++k)
      c.series[k].push_back(rec.value(curve_columns()[k], 0.0));
  }
  if (c.step.empty()) throw InvalidInput("metrics stream '" + ndjson_path + "' has no step records");
  return c;
}

inline void write_curves_csv(const std::string& path, const Curves& c) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write '" + path + "'");
  os << "step";
  for (const auto& name : curve_columns()) os << "," << name;
  os << "\n";
  os.precision(10);
  for (std::size_t i = 0; i < c.step.size(); ++i) {
    os << c.step[i];
    for (const auto& s : c.series) os << "," << s[i];
    os << "\n";
  }
}

namespace detail {

inline void draw_line(RasterImage& img, int x0, int y0, int x1, int y1, Rgb col) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    if (x0 >= 0 && x0 < img.width && y0 >= 0 && y0 < img.height)
      std::copy(col.begin(), col.end(),
                img.pixels.begin() + (static_cast<std::size_t>(y0) * img.width + x0) * 3);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace detail

/// One min-max normalized panel per series, stacked vertically in column
/// order. Panel borders are gray; the series color follows class_color(k+1).
inline RasterImage render_curves_chart(const Curves& c, int panel_w = 480, int panel_h = 80) {
  const int n = static_cast<int>(c.series.size());
  const int pad = 6;
  RasterImage img{panel_w, n * panel_h, 3,
                  std::vector<std::uint8_t>(static_cast<std::size_t>(panel_w) * n * panel_h * 3,
                                            255)};
  const std::size_t m = c.step.size();
  for (int k = 0; k < n; ++k) {
    const int top = k * panel_h;
    const Rgb gray{200, 200, 200};
    detail::draw_line(img, 0, top, panel_w - 1, top, gray);
    detail::draw_line(img, 0, top + panel_h - 1, panel_w - 1, top + panel_h - 1, gray);
    const auto& s = c.series[k];
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : s)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    if (!std::isfinite(lo)) continue;
    const double span = hi > lo ? hi - lo : 1.0;
    auto px = [&](std::size_t i) {
      return m <= 1 ? pad
                    : pad + static_cast<int>(std::lround(static_cast<double>(i) / (m - 1) *
                                                         (panel_w - 1 - 2 * pad)));
    };
    auto py = [&](double v) {
      return top + panel_h - 1 - pad -
             static_cast<int>(std::lround((v - lo) / span * (panel_h - 1 - 2 * pad)));
    };
    const Rgb col = class_color(k + 1);
    for (std::size_t i = 0; i + 1 < m; ++i)
      detail::draw_line(img, px(i), py(s[i]), px(i + 1), py(s[i + 1]), col);
    if (m == 1) detail::draw_line(img, px(0), py(s[0]), px(0), py(s[0]), col);
  }
  return img;
}

}  // namespace cwbass
