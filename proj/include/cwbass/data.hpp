#pragma once

// Datasets: a synthetic shapes generator for desk-scale runs, a loader for
// the on-disk directory layout, and labeled/unlabeled split construction.
//
// Directory layout:
//   root/images/<id>.png   RGB input
//   root/masks/<id>.png    8-bit gray or palette class indices
//   root/manifest.txt      one sample id per line
//   root/splits/*.txt      optional id lists (train.txt, val.txt, ...)
//   root/label_remap.txt   optional raw id -> train id table (cityscapes)

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwbass/core.hpp"
#include "cwbass/image_io.hpp"

namespace cwbass {

namespace fs = std::filesystem;

enum class ShapeKind : int { Rectangle = 1, Circle = 2, Triangle = 3, Diamond = 4, Ring = 5 };

inline const char* shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Rectangle: return "rectangle";
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Triangle: return "triangle";
    case ShapeKind::Diamond: return "diamond";
    case ShapeKind::Ring: return "ring";
  }
  return "?";
}

inline constexpr int kMaxSyntheticClasses = 6;

// Geometry in pixel units; a pixel (x, y) is tested at its center
// (x + 0.5, y + 0.5).
struct Shape {
  ShapeKind kind = ShapeKind::Circle;
  double cx = 0, cy = 0;
  double size = 0;      // radius, half-extent, or circumradius
  double aspect = 1.0;  // rectangle height/width ratio
  double angle = 0.0;   // triangle/diamond rotation, radians
  std::array<double, 3> color{1, 1, 1};

  Label label() const { return static_cast<Label>(kind); }

  bool contains(double px, double py) const {
    const double dx = px - cx, dy = py - cy;
    switch (kind) {
      case ShapeKind::Rectangle:
        return std::abs(dx) <= size && std::abs(dy) <= size * aspect;
      case ShapeKind::Circle:
        return dx * dx + dy * dy <= size * size;
      case ShapeKind::Ring: {
        const double r2 = dx * dx + dy * dy;
        return r2 <= size * size && r2 >= 0.25 * size * size;
      }
      case ShapeKind::Diamond: {
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = c * dx + s * dy, v = -s * dx + c * dy;
        return std::abs(u) + std::abs(v) <= size;
      }
      case ShapeKind::Triangle: {
        double vx[3], vy[3];
        for (int i = 0; i < 3; ++i) {
          const double a = angle + i * 2.0943951023931953;
          vx[i] = size * std::cos(a);
          vy[i] = size * std::sin(a);
        }
        auto side = [&](int i, int j) {
          return (vx[j] - vx[i]) * (dy - vy[i]) - (vy[j] - vy[i]) * (dx - vx[i]);
        };
        const double s0 = side(0, 1), s1 = side(1, 2), s2 = side(2, 0);
        return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
      }
    }
    return false;
  }

  bool contains_pixel(int x, int y) const { return contains(x + 0.5, y + 0.5); }
};

struct SyntheticOptions {
  int n_images = 100;
  int height = 64;
  int width = 64;
  int num_classes = 4;
  std::uint64_t seed = 7;
  int min_shapes = 1;
  int max_shapes = 4;
  double noise = 0.06;
  double min_size_frac = 0.15;
  double max_size_frac = 0.35;
  // Fill hue drawn from a band per class (centered at (kind-1)*360/kinds,
  // +-hue_jitter degrees) over a low-saturation background. Off: fully
  // random fills, so only geometry identifies the class.
  bool class_hues = true;
  double hue_jitter = 80.0;

  void validate() const {
    if (num_classes < 2 || num_classes > kMaxSyntheticClasses)
      throw ConfigError("synthetic: num_classes must be in [2, " +
                        std::to_string(kMaxSyntheticClasses) + "]");
    if (height < 8 || width < 8)
      throw ConfigError("synthetic: image size too small to place a shape (need >= 8x8)");
    if (n_images < 1) throw ConfigError("synthetic: n_images must be >= 1");
    if (min_shapes < 0 || max_shapes < min_shapes)
      throw ConfigError("synthetic: bad shape count range");
    if (!(noise >= 0)) throw ConfigError("synthetic: noise must be >= 0");
    if (!(min_size_frac > 0 && max_size_frac >= min_size_frac && max_size_frac < 0.5))
      throw ConfigError("synthetic: bad size fractions");
    if (!(hue_jitter >= 0 && hue_jitter <= 180)) throw ConfigError("synthetic: bad hue_jitter");
  }
};

struct SyntheticSample {
  std::string id;
  RasterImage image;  // RGB, 8-bit
  LabelMap label;
  std::vector<Shape> shapes;  // in drawing order; later shapes occlude earlier ones
};

/// h in degrees, s and v in [0, 1].
inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

inline std::string synthetic_id(int index) {
  std::ostringstream os;
  os << "syn_" << std::setw(5) << std::setfill('0') << index;
  return os.str();
}

/// Draws shapes over a textured background. Label = kind of the topmost
/// shape covering the pixel, 0 elsewhere.
inline void rasterize(const std::vector<Shape>& shapes, LabelMap& label,
                      std::vector<std::array<double, 3>>* colors = nullptr) {
  for (const auto& s : shapes)
    for (int y = 0; y < label.height(); ++y)
      for (int x = 0; x < label.width(); ++x)
        if (s.contains_pixel(x, y)) {
          label(y, x) = s.label();
          if (colors) (*colors)[static_cast<std::size_t>(y) * label.width() + x] = s.color;
        }
}

inline SyntheticSample render_synthetic_sample(int index, const SyntheticOptions& opt) {
  opt.validate();
  Rng rng(opt.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(index) + 1);
  const int h = opt.height, w = opt.width;
  SyntheticSample out{synthetic_id(index), RasterImage{w, h, 3, {}}, LabelMap(h, w, 0), {}};

  // Background: base color plus two oriented sinusoids.
  std::array<double, 3> base;
  if (opt.class_hues) {
    const double g = rng.uniform(0.25, 0.75);
    for (auto& c : base) c = g + rng.uniform(-0.06, 0.06);
  } else {
    for (auto& c : base) c = rng.uniform(0.15, 0.85);
  }
  const double f1 = rng.uniform(0.1, 0.5), f2 = rng.uniform(0.1, 0.5);
  const double o1 = rng.uniform(0, 3.14159), o2 = rng.uniform(0, 3.14159);
  const double a1 = rng.uniform(0.04, 0.12), a2 = rng.uniform(0.02, 0.08);
  const double ph1 = rng.uniform(0, 6.28318), ph2 = rng.uniform(0, 6.28318);
  std::vector<std::array<double, 3>> colors(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double t1 = std::sin(f1 * (x * std::cos(o1) + y * std::sin(o1)) + ph1);
      const double t2 = std::sin(f2 * (x * std::cos(o2) + y * std::sin(o2)) + ph2);
      auto& c = colors[static_cast<std::size_t>(y) * w + x];
      for (int k = 0; k < 3; ++k) c[k] = base[k] + a1 * t1 + a2 * t2 * (k == 1 ? -1 : 1);
    }

  const int kinds = opt.num_classes - 1;
  const int n_shapes = opt.max_shapes > 0 ? rng.range(opt.min_shapes, opt.max_shapes) : 0;
  const double dim = std::min(h, w);
  for (int i = 0; i < n_shapes; ++i) {
    Shape s;
    s.kind = static_cast<ShapeKind>(rng.range(1, kinds));
    s.size = rng.uniform(opt.min_size_frac, opt.max_size_frac) * dim;
    s.cx = rng.uniform(s.size * 0.5, w - s.size * 0.5);
    s.cy = rng.uniform(s.size * 0.5, h - s.size * 0.5);
    s.aspect = rng.uniform(0.6, 1.4);
    s.angle = rng.uniform(0, 6.28318);
    // Keep the fill distinguishable from the background base color.
    double dist = 0;
    do {
      if (opt.class_hues) {
        const double center = (static_cast<int>(s.kind) - 1) * 360.0 / kinds;
        s.color = hsv_to_rgb(center + rng.uniform(-opt.hue_jitter, opt.hue_jitter),
                             rng.uniform(0.45, 0.9), rng.uniform(0.55, 1.0));
      } else {
        for (auto& c : s.color) c = rng.uniform(0.0, 1.0);
      }
      dist = std::abs(s.color[0] - base[0]) + std::abs(s.color[1] - base[1]) +
             std::abs(s.color[2] - base[2]);
    } while (dist < 0.35);
    out.shapes.push_back(s);
  }
  rasterize(out.shapes, out.label, &colors);

  out.image.pixels.resize(static_cast<std::size_t>(h) * w * 3);
  for (std::size_t j = 0; j < colors.size(); ++j)
    for (int k = 0; k < 3; ++k) {
      const double v = std::clamp(colors[j][k] + opt.noise * rng.normal(), 0.0, 1.0);
      out.image.pixels[j * 3 + k] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return out;
}

inline SegSample to_seg_sample(const SyntheticSample& s) {
  return {s.id, raster_to_image(s.image), s.label};
}

inline std::vector<SegSample> render_synthetic(const SyntheticOptions& opt, int first_index = 0) {
  opt.validate();
  std::vector<SegSample> out;
  out.reserve(opt.n_images);
  for (int i = 0; i < opt.n_images; ++i)
    out.push_back(to_seg_sample(render_synthetic_sample(first_index + i, opt)));
  return out;
}

inline nlohmann::json shape_to_json(const Shape& s) {
  return {{"kind", shape_name(s.kind)}, {"class", s.label()}, {"cx", s.cx},  {"cy", s.cy},
          {"size", s.size},             {"aspect", s.aspect}, {"angle", s.angle}};
}

inline void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream os(p);
  if (!os) throw Error("cannot write '" + p.string() + "'");
  for (const auto& l : lines) os << l << "\n";
}

inline std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw LoadError("cannot read '" + p.string() + "'");
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty() && line[0] != '#') out.push_back(line);
  }
  return out;
}

/// Writes `n_train` training images followed by `n_val` validation images,
/// with splits/train.txt and splits/val.txt when n_val > 0. Returns the ids.
inline std::vector<std::string> generate_synthetic_dataset(const fs::path& root,
                                                           const SyntheticOptions& opt,
                                                           int n_val = 0) {
  opt.validate();
  if (n_val < 0) throw ConfigError("synthetic: n_val must be >= 0");
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  std::vector<std::string> ids, train, val;
  nlohmann::json meta = nlohmann::json::object();
  meta["num_classes"] = opt.num_classes;
  meta["height"] = opt.height;
  meta["width"] = opt.width;
  meta["seed"] = opt.seed;
  meta["samples"] = nlohmann::json::object();
  for (int i = 0; i < opt.n_images + n_val; ++i) {
    const SyntheticSample s = render_synthetic_sample(i, opt);
    write_png((root / "images" / (s.id + ".png")).string(), s.image);
    write_png((root / "masks" / (s.id + ".png")).string(), label_to_raster(s.label));
    auto shapes = nlohmann::json::array();
    for (const auto& sh : s.shapes) shapes.push_back(shape_to_json(sh));
    meta["samples"][s.id] = shapes;
    ids.push_back(s.id);
    (i < opt.n_images ? train : val).push_back(s.id);
  }
  write_lines(root / "manifest.txt", ids);
  {
    std::ofstream os(root / "shapes.json");
    os << meta.dump(1) << "\n";
  }
  if (n_val > 0) {
    fs::create_directories(root / "splits");
    write_lines(root / "splits" / "train.txt", train);
    write_lines(root / "splits" / "val.txt", val);
  }
  return ids;
}

enum class DatasetKind { Synthetic, VocLayout, CityscapesLayout };

inline DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "synthetic") return DatasetKind::Synthetic;
  if (s == "voc-layout") return DatasetKind::VocLayout;
  if (s == "cityscapes-layout") return DatasetKind::CityscapesLayout;
  throw ConfigError("unknown dataset kind '" + s + "'");
}

inline std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::Synthetic: return "synthetic";
    case DatasetKind::VocLayout: return "voc-layout";
    case DatasetKind::CityscapesLayout: return "cityscapes-layout";
  }
  return "?";
}

struct DatasetSpec {
  DatasetKind kind = DatasetKind::Synthetic;
  std::string root;
  int num_classes = 4;
  Label ignore_index = kIgnoreIndex;

  void validate() const {
    if (num_classes < 2) throw ConfigError("dataset: num_classes must be >= 2");
    if (ignore_index != kIgnoreIndex) throw ConfigError("dataset: ignore_index must be 255");
  }
};

/// Raw id -> train id, 256 entries; unmapped ids map to kIgnoreIndex.
using RemapTable = std::array<Label, 256>;

inline RemapTable cityscapes_default_remap() {
  RemapTable t;
  t.fill(kIgnoreIndex);
  const std::pair<int, int> pairs[] = {{7, 0},   {8, 1},   {11, 2},  {12, 3},  {13, 4},
                                       {17, 5},  {19, 6},  {20, 7},  {21, 8},  {22, 9},
                                       {23, 10}, {24, 11}, {25, 12}, {26, 13}, {27, 14},
                                       {28, 15}, {31, 16}, {32, 17}, {33, 18}};
  for (auto [raw, train] : pairs) t[raw] = train;
  return t;
}

inline RemapTable load_remap_table(const fs::path& path) {
  RemapTable t;
  t.fill(kIgnoreIndex);
  for (const auto& line : read_lines(path)) {
    std::istringstream is(line);
    int raw = -1, train = -1;
    if (!(is >> raw >> train) || raw < 0 || raw > 255 || train < 0 || train > 255)
      throw LoadError("remap table '" + path.string() + "': malformed line '" + line + "'");
    t[raw] = train;
  }
  return t;
}

struct Dataset {
  std::vector<SegSample> samples;
  std::vector<std::string> warnings;
  std::vector<std::string> unusable;  // ids whose mask is entirely ignore_index

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& s : samples) out.push_back(s.id);
    return out;
  }

  const SegSample& by_id(const std::string& id) const {
    for (const auto& s : samples)
      if (s.id == id) return s;
    throw LookupError("dataset: unknown sample '" + id + "'");
  }

  std::vector<SegSample> subset(const std::vector<std::string>& wanted) const {
    std::map<std::string, const SegSample*> index;
    for (const auto& s : samples) index[s.id] = &s;
    std::vector<SegSample> out;
    for (const auto& id : wanted) {
      auto it = index.find(id);
      if (it == index.end()) throw LookupError("dataset: unknown sample '" + id + "'");
      out.push_back(*it->second);
    }
    return out;
  }
};

inline bool usable_for_supervision(const SegSample& s) {
  if (!s.label) return false;
  for (Label v : s.label->data())
    if (v != kIgnoreIndex) return true;
  return false;
}

/// Loads every sample listed in the manifest (or, without one, every PNG in
/// images/). Out-of-range class values become ignore_index with a warning.
inline Dataset load_segmentation_dataset(const DatasetSpec& spec,
                                         const std::vector<std::string>* only_ids = nullptr) {
  spec.validate();
  const fs::path root(spec.root);
  if (!fs::is_directory(root / "images"))
    throw LoadError("dataset: '" + (root / "images").string() + "' does not exist");
  std::vector<std::string> ids;
  if (only_ids) {
    ids = *only_ids;
  } else if (fs::exists(root / "manifest.txt")) {
    ids = read_lines(root / "manifest.txt");
  } else {
    for (const auto& e : fs::directory_iterator(root / "images"))
      if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
    std::sort(ids.begin(), ids.end());
  }
  std::vector<std::string> missing;
  for (const auto& id : ids)
    if (!fs::exists(root / "masks" / (id + ".png"))) missing.push_back(id);
  if (!missing.empty()) {
    std::string msg = "dataset: missing masks for ids:";
    for (const auto& id : missing) msg += " " + id;
    throw LoadError(msg);
  }

  std::optional<RemapTable> remap;
  if (spec.kind == DatasetKind::CityscapesLayout)
    remap = fs::exists(root / "label_remap.txt") ? load_remap_table(root / "label_remap.txt")
                                                 : cityscapes_default_remap();

  Dataset ds;
  for (const auto& id : ids) {
    const RasterImage img = read_png((root / "images" / (id + ".png")).string(), false);
    const RasterImage mask = read_png((root / "masks" / (id + ".png")).string(), true);
    if (img.width != mask.width || img.height != mask.height)
      throw LoadError("dataset: image/mask size differ for '" + id + "'");
    LabelMap label(mask.height, mask.width);
    std::set<int> unknown;
    for (std::size_t j = 0; j < label.size(); ++j) {
      int v = mask.pixels[j];
      if (remap) {
        const Label mapped = (*remap)[v];
        if (mapped == kIgnoreIndex && v != kIgnoreIndex) {
          label[j] = kIgnoreIndex;
          continue;
        }
        v = mapped;
      }
      if (v != kIgnoreIndex && v >= spec.num_classes) {
        unknown.insert(v);
        v = kIgnoreIndex;
      }
      label[j] = v;
    }
    for (int u : unknown)
      ds.warnings.push_back("sample '" + id + "': unknown class id " + std::to_string(u) +
                            " mapped to ignore_index");
    SegSample s{id, raster_to_image(img), std::move(label)};
    if (!usable_for_supervision(s)) ds.unusable.push_back(id);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

struct Fraction {
  long num = 1;
  long den = 8;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
  bool operator==(const Fraction&) const = default;

  /// Accepts "a/b" or a decimal in (0, 1).
  static Fraction parse(const std::string& s) {
    Fraction f;
    const auto slash = s.find('/');
    try {
      if (slash != std::string::npos) {
        f.num = std::stol(s.substr(0, slash));
        f.den = std::stol(s.substr(slash + 1));
      } else {
        const double d = std::stod(s);
        f.den = 1000000;
        f.num = std::lround(d * f.den);
        const long g = std::gcd(f.num, f.den);
        if (g > 0) {
          f.num /= g;
          f.den /= g;
        }
      }
    } catch (const std::exception&) {
      throw ConfigError("split: cannot parse fraction '" + s + "'");
    }
    if (!(f.num > 0 && f.den > 0 && f.num < f.den))
      throw ConfigError("split: fraction '" + s + "' must lie in (0, 1)");
    return f;
  }
};

struct SplitSpec {
  Fraction labeled_fraction{1, 8};
  std::uint64_t seed = 0;
  std::optional<std::string> explicit_list;
};

struct Split {
  std::vector<std::string> labeled;
  std::vector<std::string> unlabeled;
};

/// Uniform shuffled split; labeled count = round(fraction * N), halves up.
inline Split make_splits(std::vector<std::string> ids, const SplitSpec& spec) {
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw ConfigError("split: duplicate sample ids");
  Split out;
  if (spec.explicit_list) {
    const auto wanted = read_lines(*spec.explicit_list);
    const std::set<std::string> chosen(wanted.begin(), wanted.end());
    for (const auto& w : chosen)
      if (!std::binary_search(ids.begin(), ids.end(), w))
        throw ConfigError("split: listed id '" + w + "' is not in the dataset");
    for (const auto& id : ids) (chosen.count(id) ? out.labeled : out.unlabeled).push_back(id);
  } else {
    const Fraction& f = spec.labeled_fraction;
    if (!(f.num > 0 && f.den > 0 && f.num < f.den))
      throw ConfigError("split: fraction must lie in (0, 1)");
    const long n = static_cast<long>(ids.size());
    const long count = (2 * f.num * n + f.den) / (2 * f.den);
    if (count == 0) throw ConfigError("split: labeled count rounds to 0");
    Rng rng(spec.seed);
    rng.shuffle(ids.begin(), ids.end());
    out.labeled.assign(ids.begin(), ids.begin() + count);
    out.unlabeled.assign(ids.begin() + count, ids.end());
    std::sort(out.labeled.begin(), out.labeled.end());
    std::sort(out.unlabeled.begin(), out.unlabeled.end());
  }
  if (out.labeled.empty()) throw ConfigError("split: labeled set is empty");
  return out;
}

}  // namespace cwbass
