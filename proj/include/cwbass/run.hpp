#pragma once

// End-to-end run: resolve data from a RunConfig, train, evaluate, and write
// the output directory (config.resolved, metrics.ndjson, checkpoints/,
// reports/).

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "cwbass/config.hpp"
#include "cwbass/data.hpp"
#include "cwbass/eval.hpp"
#include "cwbass/training.hpp"

namespace cwbass {

/// Keeps freed tensor buffers in the heap instead of returning them to the OS
/// after every step. Call once at process start.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

struct RunData {
  std::vector<SegSample> labeled;
  std::vector<SegSample> unlabeled;  // labels dropped
  std::vector<SegSample> val;
  std::vector<std::string> warnings;
  int in_channels = 3;
};

/// Builds a RunData from in-memory samples and a split.
inline RunData make_run_data(const std::vector<SegSample>& pool, const Split& split,
                             std::vector<SegSample> val) {
  std::map<std::string, const SegSample*> by_id;
  for (const auto& s : pool) by_id[s.id] = &s;
  RunData d;
  for (const auto& id : split.labeled) d.labeled.push_back(*by_id.at(id));
  for (const auto& id : split.unlabeled) {
    SegSample s = *by_id.at(id);
    s.label.reset();
    d.unlabeled.push_back(std::move(s));
  }
  d.val = std::move(val);
  if (!pool.empty()) d.in_channels = pool.front().image.channels();
  return d;
}

inline RunData load_run_data(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path root(cfg.dataset.root);
  std::optional<std::vector<std::string>> train_ids, val_ids;
  if (!cfg.train_list.empty() && fs::exists(root / cfg.train_list))
    train_ids = read_lines(root / cfg.train_list);
  if (!cfg.val_list.empty() && fs::exists(root / cfg.val_list))
    val_ids = read_lines(root / cfg.val_list);
  Dataset pool = load_segmentation_dataset(cfg.dataset, train_ids ? &*train_ids : nullptr);
  if (!train_ids && val_ids) {
    const std::set<std::string> held(val_ids->begin(), val_ids->end());
    std::erase_if(pool.samples, [&](const SegSample& s) { return held.count(s.id) != 0; });
  }
  std::vector<SegSample> val;
  std::vector<std::string> warnings = pool.warnings;
  if (val_ids) {
    Dataset v = load_segmentation_dataset(cfg.dataset, &*val_ids);
    warnings.insert(warnings.end(), v.warnings.begin(), v.warnings.end());
    val = std::move(v.samples);
  }
  const Split split = make_splits(pool.ids(), cfg.split);
  RunData d = make_run_data(pool.samples, split, std::move(val));
  d.warnings = std::move(warnings);
  std::erase_if(d.labeled, [](const SegSample& s) { return !usable_for_supervision(s); });
  if (d.labeled.empty()) throw ConfigError("no usable labeled samples after the split");
  return d;
}

struct RunResult {
  IouResult val_iou;
  ConfusionMatrix val_cm{2};
  long steps = 0;
  double seconds = 0.0;
  std::vector<nlohmann::json> epoch_records;
};

struct RunHooks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const nlohmann::json&)> on_epoch;        // epoch summary record
  std::function<void(const Trainer<TinySegNet>&)> on_epoch_end;  // after the record
  bool eval_each_epoch = false;
};

inline nlohmann::json epoch_record(const Trainer<TinySegNet>& tr, int finished_epoch,
                                   const std::optional<IouResult>& iou) {
  nlohmann::json r = {{"record", "epoch"},
                      {"epoch", finished_epoch},
                      {"stage", finished_epoch < tr.config().stage1_epochs ? 1 : 2},
                      {"step", tr.global_step()},
                      {"threshold", tr.threshold().current},
                      {"teacher_copies", tr.teacher_copies()}};
  if (iou) r["val_miou"] = iou->defined ? nlohmann::json(iou->mean) : nlohmann::json(nullptr);
  return r;
}

/// Trains the configured pair on `data` and evaluates the student on the
/// validation samples. `trainer` may be pre-built (for resuming).
inline RunResult train_and_evaluate(Trainer<TinySegNet>& trainer, const RunData& data,
                                    const RunHooks& hooks = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult res;
  while (!trainer.finished()) {
    const int epoch_before = trainer.epoch();
    StepMetrics m = trainer.step();
    if (hooks.on_step) hooks.on_step(m);
    if (trainer.epoch() != epoch_before) {
      std::optional<IouResult> iou;
      if (hooks.eval_each_epoch && !data.val.empty())
        iou = miou(evaluate_model(trainer.student(), std::span<const SegSample>(data.val)));
      nlohmann::json rec = epoch_record(trainer, epoch_before, iou);
      res.epoch_records.push_back(rec);
      if (hooks.on_epoch) hooks.on_epoch(rec);
      if (hooks.on_epoch_end) hooks.on_epoch_end(trainer);
    }
  }
  res.steps = trainer.global_step();
  if (!data.val.empty()) {
    res.val_cm = evaluate_model(trainer.student(), std::span<const SegSample>(data.val));
    res.val_iou = miou(res.val_cm);
  }
  res.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline Trainer<TinySegNet> make_trainer(const RunConfig& resolved, const RunData& data) {
  ModelPair pair = make_model_pair(data.in_channels, resolved.dataset.num_classes,
                                   resolved.train.model_width, resolved.seed);
  return Trainer<TinySegNet>(resolved.train, data.labeled, data.unlabeled,
                             std::move(pair.teacher), std::move(pair.student));
}

/// Convenience for in-memory experiments.
inline RunResult run_experiment(const RunConfig& cfg, const RunData& data,
                                const RunHooks& hooks = {}) {
  const RunConfig r = cfg.resolved();
  r.validate();
  Trainer<TinySegNet> tr = make_trainer(r, data);
  return train_and_evaluate(tr, data, hooks);
}

}  // namespace cwbass
