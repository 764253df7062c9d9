#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tkcn/metrics.hpp"
#include "tkcn/miniseg.hpp"
#include "tkcn/run_config.hpp"
#include "tkcn/segdata.hpp"

namespace tkcn {

struct EvalReport {
  ConfusionMatrix confusion{1};
  SegMetrics metrics;
};

/// Evaluates in fixed batches of `batch` samples with eval_multiscale.
EvalReport evaluate_dataset(const MiniSegModel& model, const Dataset& ds, const std::vector<double>& scales,
                            bool flip, int ignore_index, std::size_t batch = 8);

/// {"class_iou": [...], "miou": ..., "pixel_accuracy": ..., "mean_class_accuracy": ...};
/// absent classes are null.
std::string metrics_json(const SegMetrics& m);

struct EpochSummary {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;  // mean over the epoch's iterations
  SegMetrics val;
};

struct TrainReport {
  std::vector<EpochSummary> epochs;
  SegMetrics final_val;  // with the configured eval scales
  double seconds = 0.0;
};

struct TrainOptions {
  std::filesystem::path out_dir;   // metrics.jsonl, config.json, checkpoint/
  std::function<void(const std::string&)> progress;  // optional per-epoch line
};

/// Generates data (train indices [0, count), validation [count, count + val_count)),
/// trains MiniSeg with SGD and the poly schedule, logs one JSON line per
/// iteration and per epoch to metrics.jsonl, and saves the final checkpoint.
/// Everything written to metrics.jsonl is a function of the config alone.
TrainReport run_training(const RunConfig& cfg, const TrainOptions& opts);

/// Samples per epoch are shuffled with this permutation.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t count);

}  // namespace tkcn
