#pragma once

// Command-line front end: generate, train, eval, visualize.
//
// Exit codes: 0 success, 1 runtime/load failure, 2 configuration or usage
// error, 3 training aborted on a non-finite loss.

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwbass/config.hpp"
#include "cwbass/data.hpp"
#include "cwbass/eval.hpp"
#include "cwbass/run.hpp"
#include "cwbass/training.hpp"
#include "cwbass/visualize.hpp"

namespace cwbass {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitAborted = 3;

namespace cli {

namespace fs = std::filesystem;

struct GenerateArgs {
  std::string out;
  int n = 200;
  int n_val = 0;
  std::string size = "64x64";
  int classes = 4;
  std::uint64_t seed = 7;
  double noise = 0.06;
  bool geometry_only = false;
};

// Flags shared by train/eval/visualize that feed RunConfig. Unset optionals
// leave the config value alone.
struct ConfigArgs {
  std::string config_file;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string data_root;
  std::string split;
  std::string out;
  std::optional<int> num_classes;
  std::optional<double> gamma, beta, alpha, t0, lambda, boundary_coeff, lr;
  std::optional<int> stage1_epochs, stage2_epochs, batch_labeled, batch_unlabeled, width;
  std::optional<bool> strong_aug, dynamic_threshold, refresh;
};

inline void add_config_flags(CLI::App* cmd, ConfigArgs& a, bool hyper) {
  cmd->add_option("--config", a.config_file, "YAML/JSON run configuration file");
  cmd->add_option("--preset", a.preset, "named configuration preset");
  cmd->add_option("--seed", a.seed, "global seed");
  cmd->add_option("--data-root", a.data_root, "dataset root directory");
  cmd->add_option("--num-classes", a.num_classes, "number of classes");
  cmd->add_option("--out", a.out, "output directory");
  if (!hyper) return;
  cmd->add_option("--split", a.split, "labeled fraction, e.g. 1/8");
  cmd->add_option("--gamma", a.gamma, "confidence weighting exponent");
  cmd->add_option("--beta", a.beta, "threshold sensitivity");
  cmd->add_option("--alpha", a.alpha, "confidence decay factor");
  cmd->add_option("--t0", a.t0, "base threshold");
  cmd->add_option("--lambda", a.lambda, "weight of the unlabeled term");
  cmd->add_option("--boundary-coeff", a.boundary_coeff, "weight of the boundary term");
  cmd->add_option("--lr", a.lr, "initial learning rate");
  cmd->add_option("--stage1-epochs", a.stage1_epochs, "stage 1 epochs");
  cmd->add_option("--stage2-epochs", a.stage2_epochs, "stage 2 epochs");
  cmd->add_option("--batch-labeled", a.batch_labeled, "labeled batch size");
  cmd->add_option("--batch-unlabeled", a.batch_unlabeled, "unlabeled batch size");
  cmd->add_option("--width", a.width, "model base width");
  cmd->add_option("--strong-aug", a.strong_aug, "photometric ops on unlabeled inputs");
  cmd->add_option("--dynamic-threshold", a.dynamic_threshold, "adaptive retention threshold");
  cmd->add_option("--refresh", a.refresh, "regenerate pseudo-labels after teacher copies");
}

/// defaults <- config file <- --preset <- individual flags.
inline RunConfig resolve_config(const ConfigArgs& a) {
  RunConfig c;
  if (!a.config_file.empty()) c = load_config_file(a.config_file, c);
  if (!a.preset.empty()) {
    find_preset(a.preset).apply(c);
    c.preset = a.preset;
  }
  if (a.seed) c.seed = *a.seed;
  if (!a.data_root.empty()) c.dataset.root = a.data_root;
  if (a.num_classes) c.dataset.num_classes = *a.num_classes;
  if (!a.out.empty()) c.out = a.out;
  if (!a.split.empty()) c.split.labeled_fraction = Fraction::parse(a.split);
  TrainConfig& t = c.train;
  if (a.gamma) t.loss.gamma = *a.gamma;
  if (a.lambda) t.loss.lambda_unsup = *a.lambda;
  if (a.boundary_coeff) t.loss.boundary_coeff = *a.boundary_coeff;
  if (a.alpha) t.decay.alpha = *a.alpha;
  if (a.refresh) t.decay.refresh_on_teacher_update = *a.refresh;
  if (a.beta || a.t0)
    t.threshold = ThresholdState::initial(a.t0.value_or(t.threshold.base_threshold),
                                          a.beta.value_or(t.threshold.sensitivity),
                                          t.threshold.clamp_low, t.threshold.clamp_high);
  if (a.dynamic_threshold) t.dynamic_threshold = *a.dynamic_threshold;
  if (a.lr) t.lr_initial = *a.lr;
  if (a.stage1_epochs) t.stage1_epochs = *a.stage1_epochs;
  if (a.stage2_epochs) t.stage2_epochs = *a.stage2_epochs;
  if (a.batch_labeled) t.batch_size_labeled = *a.batch_labeled;
  if (a.batch_unlabeled) t.batch_size_unlabeled = *a.batch_unlabeled;
  if (a.width) t.model_width = *a.width;
  if (a.strong_aug) t.augment.strong.enabled = *a.strong_aug;
  RunConfig r = c.resolved();
  r.validate();
  return r;
}

inline std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw ConfigError("--size: expected HxW, got '" + s + "'");
  }
}

inline int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  SyntheticOptions opt;
  opt.n_images = a.n;
  std::tie(opt.height, opt.width) = parse_size(a.size);
  opt.num_classes = a.classes;
  opt.seed = a.seed;
  opt.noise = a.noise;
  opt.class_hues = !a.geometry_only;
  out << "generate:\n  out: " << a.out << "\n  n: " << a.n << "\n  n_val: " << a.n_val
      << "\n  size: " << opt.height << "x" << opt.width << "\n  classes: " << opt.num_classes
      << "\n  seed: " << opt.seed << "\n  noise: " << opt.noise
      << "\n  class_hues: " << (opt.class_hues ? "true" : "false")
      << "\n  hue_jitter: " << opt.hue_jitter << "\n  size_frac: [" << opt.min_size_frac << ", "
      << opt.max_size_frac << "]\n";
  opt.validate();
  if (a.out.empty()) throw ConfigError("--out is required");
  const auto ids = generate_synthetic_dataset(a.out, opt, a.n_val);
  out << "wrote " << ids.size() << " samples; manifest: " << (fs::path(a.out) / "manifest.txt").string()
      << "\n";
  return kExitOk;
}

struct TrainArgs {
  ConfigArgs cfg;
  bool show_config = false;
  std::string resume;
  bool eval_each_epoch = true;
};

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  if (!os) throw Error("cannot write '" + p.string() + "'");
  os << text;
}

inline int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(a.cfg);
  out << dump_config(cfg);
  if (a.show_config) return kExitOk;

  const fs::path root(cfg.out);
  fs::create_directories(root / "checkpoints");
  fs::create_directories(root / "reports");
  fs::create_directories(root / "figures");
  write_text(root / "config.resolved", dump_config(cfg));

  const RunData data = load_run_data(cfg);
  for (const auto& w : data.warnings) err << "warning: " << w << "\n";
  out << "labeled: " << data.labeled.size() << "  unlabeled: " << data.unlabeled.size()
      << "  val: " << data.val.size() << "\n";

  Trainer<TinySegNet> trainer = make_trainer(cfg, data);
  if (!a.resume.empty()) {
    trainer.load(a.resume);
    out << "resumed from " << a.resume << " at step " << trainer.global_step() << "\n";
  }
  std::ofstream metrics(root / "metrics.ndjson",
                        a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw Error("cannot write metrics stream");

  RunHooks hooks;
  hooks.eval_each_epoch = a.eval_each_epoch;
  hooks.on_step = [&](const StepMetrics& m) { metrics << m.to_json().dump() << "\n"; };
  hooks.on_epoch = [&](const nlohmann::json& rec) {
    metrics << rec.dump() << "\n";
    metrics.flush();
    out << "epoch " << rec["epoch"] << " stage " << rec["stage"] << " threshold "
        << rec["threshold"];
    if (rec.contains("val_miou")) out << " val_miou " << rec["val_miou"];
    out << "\n";
  };
  hooks.on_epoch_end = [&](const Trainer<TinySegNet>& tr) {
    std::ostringstream name;
    name << "epoch_" << std::setw(3) << std::setfill('0') << tr.epoch() - 1 << ".ckpt";
    tr.save((root / "checkpoints" / name.str()).string());
    tr.save((root / "checkpoints" / "last.ckpt").string());
  };

  RunResult res;
  try {
    res = train_and_evaluate(trainer, data, hooks);
  } catch (const TrainingAborted& e) {
    nlohmann::json dump = {{"record", "abort"},
                           {"message", e.what()},
                           {"step", trainer.global_step()},
                           {"epoch", trainer.epoch()},
                           {"batch_ids", e.batch_ids}};
    metrics << dump.dump() << "\n";
    write_text(root / "reports" / "abort.json", dump.dump(2) + "\n");
    err << "error: " << e.what() << "\n";
    return kExitAborted;
  }
  trainer.save((root / "checkpoints" / "final.ckpt").string());
  if (!data.val.empty()) {
    const nlohmann::json rec = eval_record(res.val_iou, res.val_cm, "final/val");
    metrics << rec.dump() << "\n";
    write_text(root / "reports" / "final_eval.json", rec.dump(2) + "\n");
    write_text(root / "reports" / "final_eval.txt", format_iou_table(res.val_iou));
    out << format_iou_table(res.val_iou);
  }
  out << "steps: " << res.steps << "  seconds: " << res.seconds << "\n";
  return kExitOk;
}

struct EvalArgs {
  ConfigArgs cfg;
  std::string checkpoint;
  std::string list;
  std::string model = "student";
};

inline std::vector<std::string> resolve_id_list(const RunConfig& cfg, const std::string& list) {
  const fs::path root(cfg.dataset.root);
  if (!list.empty()) {
    const fs::path p = fs::exists(list) ? fs::path(list) : root / list;
    if (!fs::exists(p)) throw ConfigError("id list '" + list + "' not found");
    return read_lines(p);
  }
  if (fs::exists(root / cfg.val_list)) return read_lines(root / cfg.val_list);
  if (fs::exists(root / "manifest.txt")) return read_lines(root / "manifest.txt");
  throw ConfigError("no id list: pass --list or provide " + cfg.val_list);
}

inline TinySegNet load_model(const std::string& checkpoint, const std::string& which,
                             int num_classes) {
  if (checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(checkpoint)) throw LoadError("checkpoint '" + checkpoint + "' does not exist");
  if (which != "student" && which != "teacher")
    throw ConfigError("--model must be 'student' or 'teacher'");
  auto [teacher, student] = read_checkpoint_models<TinySegNet>(checkpoint);
  TinySegNet net = which == "student" ? std::move(student) : std::move(teacher);
  if (net.num_classes() != num_classes)
    throw ConfigError("checkpoint has " + std::to_string(net.num_classes()) +
                      " classes but the dataset is configured for " +
                      std::to_string(num_classes));
  return net;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(a.cfg);
  out << dump_config(cfg);
  out << "eval:\n  checkpoint: " << a.checkpoint << "\n  model: " << a.model
      << "\n  list: " << (a.list.empty() ? "(default)" : a.list) << "\n";
  const TinySegNet net = load_model(a.checkpoint, a.model, cfg.dataset.num_classes);
  const auto ids = resolve_id_list(cfg, a.list);
  const Dataset ds = load_segmentation_dataset(cfg.dataset, &ids);
  for (const auto& w : ds.warnings) err << "warning: " << w << "\n";
  const ConfusionMatrix cm = evaluate_model(net, std::span<const SegSample>(ds.samples));
  const IouResult r = miou(cm);
  const nlohmann::json rec = eval_record(r, cm, "eval/" + a.model);
  out << format_iou_table(r);
  out << rec.dump() << "\n";
  if (!a.cfg.out.empty()) {
    fs::create_directories(fs::path(cfg.out) / "reports");
    write_text(fs::path(cfg.out) / "reports" / "eval.json", rec.dump(2) + "\n");
    write_text(fs::path(cfg.out) / "reports" / "eval.txt", format_iou_table(r));
  }
  return kExitOk;
}

struct VisualizeArgs {
  ConfigArgs cfg;
  std::string checkpoint;
  std::vector<std::string> ids;
  std::string metrics;
  std::string model = "student";
};

inline int cmd_visualize(const VisualizeArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(a.cfg);
  out << dump_config(cfg);
  out << "visualize:\n  checkpoint: " << a.checkpoint << "\n  metrics: " << a.metrics
      << "\n  ids: " << a.ids.size() << "\n";
  if (a.checkpoint.empty() && a.metrics.empty())
    throw ConfigError("visualize needs --checkpoint (with --ids) and/or --metrics");
  const fs::path figs = fs::path(cfg.out) / "figures";
  fs::create_directories(figs);
  std::size_t written = 0;
  if (!a.checkpoint.empty()) {
    if (a.ids.empty()) throw ConfigError("--ids is required with --checkpoint");
    const TinySegNet net = load_model(a.checkpoint, a.model, cfg.dataset.num_classes);
    const Dataset ds = load_segmentation_dataset(cfg.dataset, &a.ids);
    for (const auto& w : ds.warnings) err << "warning: " << w << "\n";
    for (const auto& s : ds.samples) {
      const LabelMap pred = argmax_labels(net.forward(s.image));
      write_png((figs / ("triptych_" + s.id + ".png")).string(),
                make_triptych(s.image, *s.label, pred));
      std::size_t drawn = 0;
      write_png((figs / ("boundary_" + s.id + ".png")).string(),
                boundary_overlay(s.image, boundary_from_labels(pred), &drawn));
      out << s.id << ": boundary pixels " << drawn << "\n";
      written += 2;
    }
  }
  if (!a.metrics.empty()) {
    const Curves c = read_curves(a.metrics);
    write_curves_csv((figs / "curves.csv").string(), c);
    write_png((figs / "curves.png").string(), render_curves_chart(c));
    out << "curves: " << c.step.size() << " steps, " << c.series.size() << " series\n";
    written += 2;
  }
  out << "wrote " << written << " files to " << figs.string() << "\n";
  return kExitOk;
}

}  // namespace cli

/// Entry point shared by the executable and the tests.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Confidence-weighted, boundary-aware semi-supervised segmentation toolkit"};
  app.require_subcommand(1);

  cli::GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a synthetic shapes dataset");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--n", gen.n, "number of training images");
  g->add_option("--val", gen.n_val, "number of extra held-out images");
  g->add_option("--size", gen.size, "image size HxW");
  g->add_option("--classes", gen.classes, "number of classes including background");
  g->add_option("--seed", gen.seed, "generator seed");
  g->add_option("--noise", gen.noise, "additive noise std");
  g->add_flag("--geometry-only", gen.geometry_only, "random fills; class from shape only");

  cli::TrainArgs tr;
  auto* t = app.add_subcommand("train", "two-stage teacher/student training");
  cli::add_config_flags(t, tr.cfg, true);
  t->add_flag("--show-config", tr.show_config, "print the resolved config and exit");
  t->add_option("--resume", tr.resume, "checkpoint to resume from");
  t->add_option("--eval-each-epoch", tr.eval_each_epoch, "evaluate on val after every epoch");

  cli::EvalArgs ev;
  auto* e = app.add_subcommand("eval", "mIoU of a checkpoint on a dataset");
  cli::add_config_flags(e, ev.cfg, false);
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  e->add_option("--list", ev.list, "id list file (default: val list, then manifest)");
  e->add_option("--model", ev.model, "student or teacher");

  cli::VisualizeArgs vz;
  auto* v = app.add_subcommand("visualize", "triptychs, boundary overlays and curves");
  cli::add_config_flags(v, vz.cfg, false);
  v->add_option("--checkpoint", vz.checkpoint, "checkpoint file");
  v->add_option("--ids", vz.ids, "sample ids")->delimiter(',');
  v->add_option("--metrics", vz.metrics, "metrics.ndjson stream");
  v->add_option("--model", vz.model, "student or teacher");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*g) return cli::cmd_generate(gen, out);
    if (*t) return cli::cmd_train(tr, out, err);
    if (*e) return cli::cmd_eval(ev, out, err);
    if (*v) return cli::cmd_visualize(vz, out, err);
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const InvalidInput& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitFailure;
  }
  return kExitConfig;
}

}  // namespace cwbass
