#pragma once

// Run configuration: one document covering dataset, split, training, loss,
// threshold and decay settings. Files are YAML (JSON is accepted as well);
// schema errors carry the line and column of the offending node.

#include <yaml-cpp/yaml.h>

#include <array>
#include <charconv>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cwbass/core.hpp"
#include "cwbass/data.hpp"
#include "cwbass/training.hpp"

namespace cwbass {

struct RunConfig {
  std::string preset = "full";
  std::uint64_t seed = 0;
  std::string out = "runs/cwbass";
  DatasetSpec dataset{DatasetKind::Synthetic, "data/synthetic", 4, kIgnoreIndex};
  // Id lists relative to the dataset root; a missing train list means the
  // whole manifest, a missing val list means no held-out evaluation.
  std::string train_list = "splits/train.txt";
  std::string val_list = "splits/val.txt";
  SplitSpec split;
  std::optional<std::uint64_t> split_seed;  // unset: follows `seed`
  TrainConfig train;

  void validate() const {
    dataset.validate();
    train.validate();
    if (out.empty()) throw ConfigError("out: must not be empty");
    const Fraction& f = split.labeled_fraction;
    if (!(f.num > 0 && f.den > 0 && f.num < f.den))
      throw ConfigError("split.labeled_fraction: must lie in (0, 1)");
  }

  /// Resolves derived fields (seed propagation).
  RunConfig resolved() const {
    RunConfig r = *this;
    r.train.seed = seed;
    r.split.seed = split_seed.value_or(seed);
    return r;
  }
};

// ---- presets -------------------------------------------------------------

struct PresetInfo {
  std::string name;
  std::string description;
  std::function<void(RunConfig&)> apply;
};

namespace detail {

inline void set_components(RunConfig& c, double lambda, double coeff, double alpha,
                           bool threshold) {
  c.train.loss.lambda_unsup = lambda;
  c.train.loss.boundary_coeff = coeff;
  c.train.decay.alpha = alpha;
  c.train.dynamic_threshold = threshold;
}

inline void set_hyper(RunConfig& c, double gamma, double beta, double alpha) {
  c.train.loss.gamma = gamma;
  c.train.threshold = ThresholdState::initial(c.train.threshold.base_threshold, beta,
                                              c.train.threshold.clamp_low,
                                              c.train.threshold.clamp_high);
  c.train.decay.alpha = alpha;
}

}  // namespace detail

inline const std::vector<PresetInfo>& presets() {
  using detail::set_components;
  static const std::vector<PresetInfo> table = {
      {"suponly", "labeled CE only",
       [](RunConfig& c) { set_components(c, 0.0, 0.0, 1.0, false); }},
      {"weighted", "labeled + weighted",
       [](RunConfig& c) { set_components(c, 1.0, 0.0, 1.0, false); }},
      {"weighted+decay", "labeled + weighted, confidence decay",
       [](RunConfig& c) { set_components(c, 1.0, 0.0, 0.9, false); }},
      {"weighted+threshold", "labeled + weighted, dynamic threshold",
       [](RunConfig& c) { set_components(c, 1.0, 0.0, 1.0, true); }},
      {"weighted+decay+threshold", "labeled + weighted, decay and dynamic threshold",
       [](RunConfig& c) { set_components(c, 1.0, 0.0, 0.9, true); }},
      {"weighted+boundary", "labeled + weighted + boundary",
       [](RunConfig& c) { set_components(c, 1.0, 0.5, 1.0, false); }},
      {"full", "all components",
       [](RunConfig& c) { set_components(c, 1.0, 0.5, 0.9, true); }},
      {"standard", "all components, gamma=1.0 beta=0.5 alpha=0.9",
       [](RunConfig& c) {
         set_components(c, 1.0, 0.5, 0.9, true);
         detail::set_hyper(c, 1.0, 0.5, 0.9);
       }},
      {"conservative", "all components, gamma=0.5 beta=1.0 alpha=1.0",
       [](RunConfig& c) {
         set_components(c, 1.0, 0.5, 1.0, true);
         detail::set_hyper(c, 0.5, 1.0, 1.0);
       }},
  };
  return table;
}

inline const PresetInfo& find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  std::string known;
  for (const auto& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

/// Defaults with the named preset applied.
inline RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  find_preset(name).apply(c);
  return c;
}

// ---- YAML mapping ----------------------------------------------------------

namespace detail {

inline std::string where(const YAML::Node& n) {
  const YAML::Mark m = n.Mark();
  if (m.is_null()) return "";
  return "line " + std::to_string(m.line + 1) + ", column " + std::to_string(m.column + 1) + ": ";
}

// Reads a mapping, rejecting keys outside `allowed`.
class MapReader {
 public:
  MapReader(const YAML::Node& node, std::string path, std::set<std::string> allowed)
      : node_(node), path_(std::move(path)) {
    if (!node_.IsMap())
      throw ConfigError(where(node_) + "'" + path_ + "' must be a mapping");
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!allowed.count(key))
        throw ConfigError(where(kv.first) + "unknown key '" + qualify(key) + "'");
    }
  }

  template <class T>
  void get(const std::string& key, T& out) const {
    const YAML::Node n = node_[key];
    if (!n) return;
    if (!n.IsScalar())
      throw ConfigError(where(n) + "'" + qualify(key) + "' must be a scalar");
    try {
      out = n.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(n) + "'" + qualify(key) + "' has invalid value '" + n.Scalar() + "'");
    }
  }

  template <class T>
  void get_pair(const std::string& key, T& a, T& b) const {
    const YAML::Node n = node_[key];
    if (!n) return;
    if (!n.IsSequence() || n.size() != 2)
      throw ConfigError(where(n) + "'" + qualify(key) + "' must be a 2-element list");
    try {
      a = n[0].as<T>();
      b = n[1].as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(n) + "'" + qualify(key) + "' has invalid elements");
    }
  }

  std::optional<MapReader> child(const std::string& key, std::set<std::string> allowed) const {
    const YAML::Node n = node_[key];
    if (!n) return std::nullopt;
    return MapReader(n, qualify(key), std::move(allowed));
  }

  const YAML::Node& node() const { return node_; }
  YAML::Node at(const std::string& key) const { return node_[key]; }
  std::string qualify(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  YAML::Node node_;
  std::string path_;
};

// Wraps validation so the error points at the section it came from.
template <class F>
void checked(const YAML::Node& n, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind("line ", 0) == 0) throw;
    throw ConfigError(where(n) + msg);
  }
}

}  // namespace detail

/// Overlays a parsed document onto `cfg`. A `preset` key is applied first so
/// that explicit keys in the same document win over it.
inline void apply_yaml(RunConfig& cfg, const YAML::Node& root) {
  using detail::MapReader;
  if (!root || root.IsNull()) return;
  const MapReader top(root, "",
                      {"preset", "seed", "out", "dataset", "split", "train", "loss", "threshold",
                       "decay", "augment"});
  if (const YAML::Node p = top.at("preset")) {
    std::string name;
    top.get("preset", name);
    detail::checked(p, [&] { find_preset(name).apply(cfg); });
    cfg.preset = name;
  }
  top.get("seed", cfg.seed);
  top.get("out", cfg.out);

  if (auto d = top.child("dataset", {"kind", "root", "num_classes", "ignore_index", "train_list",
                                      "val_list"})) {
    std::string kind = to_string(cfg.dataset.kind);
    d->get("kind", kind);
    detail::checked(d->node(), [&] { cfg.dataset.kind = parse_dataset_kind(kind); });
    d->get("root", cfg.dataset.root);
    d->get("num_classes", cfg.dataset.num_classes);
    d->get("ignore_index", cfg.dataset.ignore_index);
    d->get("train_list", cfg.train_list);
    d->get("val_list", cfg.val_list);
    detail::checked(d->node(), [&] { cfg.dataset.validate(); });
  }
  if (auto s = top.child("split", {"labeled_fraction", "seed", "explicit_list"})) {
    std::string frac = cfg.split.labeled_fraction.str();
    s->get("labeled_fraction", frac);
    detail::checked(s->node(), [&] { cfg.split.labeled_fraction = Fraction::parse(frac); });
    if (s->at("seed")) {
      std::uint64_t v = 0;
      s->get("seed", v);
      cfg.split_seed = v;
    }
    if (s->at("explicit_list")) {
      std::string list;
      s->get("explicit_list", list);
      cfg.split.explicit_list = list.empty() ? std::nullopt : std::optional<std::string>(list);
    }
  }
  TrainConfig& t = cfg.train;
  if (auto tr = top.child("train", {"stage1_epochs", "stage2_epochs", "batch_size_labeled",
                                     "batch_size_unlabeled", "lr_initial", "momentum",
                                     "weight_decay", "poly_power", "teacher_copy_every_epochs",
                                     "student_unlabeled_only", "model_width"})) {
    tr->get("stage1_epochs", t.stage1_epochs);
    tr->get("stage2_epochs", t.stage2_epochs);
    tr->get("batch_size_labeled", t.batch_size_labeled);
    tr->get("batch_size_unlabeled", t.batch_size_unlabeled);
    tr->get("lr_initial", t.lr_initial);
    tr->get("momentum", t.momentum);
    tr->get("weight_decay", t.weight_decay);
    tr->get("poly_power", t.poly_power);
    tr->get("teacher_copy_every_epochs", t.teacher_copy_every_epochs);
    tr->get("student_unlabeled_only", t.student_unlabeled_only);
    tr->get("model_width", t.model_width);
  }
  if (auto a = top.child("augment", {"flip", "scale_range", "crop_size", "strong"})) {
    a->get("flip", t.augment.flip);
    a->get_pair("scale_range", t.augment.scale_lo, t.augment.scale_hi);
    a->get_pair("crop_size", t.augment.crop_h, t.augment.crop_w);
    if (auto s = a->child("strong", {"enabled", "color_jitter_p", "jitter", "grayscale_p",
                                      "blur_p", "cutout_p"})) {
      s->get("enabled", t.augment.strong.enabled);
      s->get("color_jitter_p", t.augment.strong.color_jitter_p);
      s->get("jitter", t.augment.strong.jitter);
      s->get("grayscale_p", t.augment.strong.grayscale_p);
      s->get("blur_p", t.augment.strong.blur_p);
      s->get("cutout_p", t.augment.strong.cutout_p);
    }
    detail::checked(a->node(), [&] { t.augment.validate(); });
  }
  if (auto l = top.child("loss", {"gamma", "lambda_unsup", "boundary_coeff",
                                   "weighted_mean_over_retained"})) {
    l->get("gamma", t.loss.gamma);
    l->get("lambda_unsup", t.loss.lambda_unsup);
    l->get("boundary_coeff", t.loss.boundary_coeff);
    l->get("weighted_mean_over_retained", t.loss.weighted_mean_over_retained);
    detail::checked(l->node(), [&] { t.loss.validate(); });
  }
  if (auto th = top.child("threshold", {"dynamic", "base_threshold", "sensitivity", "clamp_low",
                                         "clamp_high"})) {
    th->get("dynamic", t.dynamic_threshold);
    double t0 = t.threshold.base_threshold, beta = t.threshold.sensitivity;
    double lo = t.threshold.clamp_low, hi = t.threshold.clamp_high;
    th->get("base_threshold", t0);
    th->get("sensitivity", beta);
    th->get("clamp_low", lo);
    th->get("clamp_high", hi);
    detail::checked(th->node(), [&] { t.threshold = ThresholdState::initial(t0, beta, lo, hi); });
  }
  if (auto dc = top.child("decay", {"alpha", "refresh_on_teacher_update"})) {
    dc->get("alpha", t.decay.alpha);
    dc->get("refresh_on_teacher_update", t.decay.refresh_on_teacher_update);
    detail::checked(dc->node(), [&] { t.decay.validate(); });
  }
  detail::checked(root, [&] { cfg.validate(); });
}

inline YAML::Node parse_yaml_text(const std::string& text, const std::string& source) {
  try {
    return YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source + ": line " + std::to_string(e.mark.line + 1) + ", column " +
                      std::to_string(e.mark.column + 1) + ": " + e.msg);
  }
}

inline RunConfig config_from_text(const std::string& text, RunConfig base = {},
                                  const std::string& source = "<config>") {
  const YAML::Node root = parse_yaml_text(text, source);
  try {
    apply_yaml(base, root);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return base;
}

inline RunConfig load_config_file(const std::string& path, RunConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_text(ss.str(), std::move(base), path);
}

namespace detail {

// Shortest text that parses back to the same double.
inline std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string out(buf, res.ptr);
  if (out.find_first_of(".eEn") == std::string::npos) out += ".0";
  return out;
}

}  // namespace detail

/// Full resolved document, every field present. Loading it back yields the
/// same configuration.
inline std::string dump_config(const RunConfig& c) {
  const TrainConfig& t = c.train;
  YAML::Emitter e;
  e << YAML::BeginMap;
  e << YAML::Key << "preset" << YAML::Value << c.preset;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  e << YAML::Key << "out" << YAML::Value << c.out;
  e << YAML::Key << "dataset" << YAML::Value << YAML::BeginMap
    << YAML::Key << "kind" << YAML::Value << to_string(c.dataset.kind)
    << YAML::Key << "root" << YAML::Value << c.dataset.root
    << YAML::Key << "num_classes" << YAML::Value << c.dataset.num_classes
    << YAML::Key << "ignore_index" << YAML::Value << c.dataset.ignore_index
    << YAML::Key << "train_list" << YAML::Value << c.train_list
    << YAML::Key << "val_list" << YAML::Value << c.val_list << YAML::EndMap;
  e << YAML::Key << "split" << YAML::Value << YAML::BeginMap
    << YAML::Key << "labeled_fraction" << YAML::Value << c.split.labeled_fraction.str()
    << YAML::Key << "seed" << YAML::Value << c.split_seed.value_or(c.seed)
    << YAML::Key << "explicit_list" << YAML::Value << c.split.explicit_list.value_or("")
    << YAML::EndMap;
  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap
    << YAML::Key << "stage1_epochs" << YAML::Value << t.stage1_epochs
    << YAML::Key << "stage2_epochs" << YAML::Value << t.stage2_epochs
    << YAML::Key << "batch_size_labeled" << YAML::Value << t.batch_size_labeled
    << YAML::Key << "batch_size_unlabeled" << YAML::Value << t.batch_size_unlabeled
    << YAML::Key << "lr_initial" << YAML::Value << detail::num(t.lr_initial)
    << YAML::Key << "momentum" << YAML::Value << detail::num(t.momentum)
    << YAML::Key << "weight_decay" << YAML::Value << detail::num(t.weight_decay)
    << YAML::Key << "poly_power" << YAML::Value << detail::num(t.poly_power)
    << YAML::Key << "teacher_copy_every_epochs" << YAML::Value << t.teacher_copy_every_epochs
    << YAML::Key << "student_unlabeled_only" << YAML::Value << t.student_unlabeled_only
    << YAML::Key << "model_width" << YAML::Value << t.model_width << YAML::EndMap;
  e << YAML::Key << "augment" << YAML::Value << YAML::BeginMap
    << YAML::Key << "flip" << YAML::Value << t.augment.flip
    << YAML::Key << "scale_range" << YAML::Value << YAML::Flow << YAML::BeginSeq
    << detail::num(t.augment.scale_lo) << detail::num(t.augment.scale_hi) << YAML::EndSeq
    << YAML::Key << "crop_size" << YAML::Value << YAML::Flow << YAML::BeginSeq
    << t.augment.crop_h << t.augment.crop_w << YAML::EndSeq
    << YAML::Key << "strong" << YAML::Value << YAML::BeginMap
    << YAML::Key << "enabled" << YAML::Value << t.augment.strong.enabled
    << YAML::Key << "color_jitter_p" << YAML::Value << detail::num(t.augment.strong.color_jitter_p)
    << YAML::Key << "jitter" << YAML::Value << detail::num(t.augment.strong.jitter)
    << YAML::Key << "grayscale_p" << YAML::Value << detail::num(t.augment.strong.grayscale_p)
    << YAML::Key << "blur_p" << YAML::Value << detail::num(t.augment.strong.blur_p)
    << YAML::Key << "cutout_p" << YAML::Value << detail::num(t.augment.strong.cutout_p) << YAML::EndMap
    << YAML::EndMap;
  e << YAML::Key << "loss" << YAML::Value << YAML::BeginMap
    << YAML::Key << "gamma" << YAML::Value << detail::num(t.loss.gamma)
    << YAML::Key << "lambda_unsup" << YAML::Value << detail::num(t.loss.lambda_unsup)
    << YAML::Key << "boundary_coeff" << YAML::Value << detail::num(t.loss.boundary_coeff)
    << YAML::Key << "weighted_mean_over_retained" << YAML::Value
    << t.loss.weighted_mean_over_retained << YAML::EndMap;
  e << YAML::Key << "threshold" << YAML::Value << YAML::BeginMap
    << YAML::Key << "dynamic" << YAML::Value << t.dynamic_threshold
    << YAML::Key << "base_threshold" << YAML::Value << detail::num(t.threshold.base_threshold)
    << YAML::Key << "sensitivity" << YAML::Value << detail::num(t.threshold.sensitivity)
    << YAML::Key << "clamp_low" << YAML::Value << detail::num(t.threshold.clamp_low)
    << YAML::Key << "clamp_high" << YAML::Value << detail::num(t.threshold.clamp_high) << YAML::EndMap;
  e << YAML::Key << "decay" << YAML::Value << YAML::BeginMap
    << YAML::Key << "alpha" << YAML::Value << detail::num(t.decay.alpha)
    << YAML::Key << "refresh_on_teacher_update" << YAML::Value
    << t.decay.refresh_on_teacher_update << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace cwbass
