#include "tkcn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <stdexcept>

#include "tkcn/parallel.hpp"
#include "tkcn/resize.hpp"

namespace tkcn {

namespace {

// Stream ids under the training seed.
constexpr std::uint64_t kModelStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kAugmentStream = 3;

nlohmann::json metrics_to_json(const SegMetrics& m) {
  nlohmann::json iou = nlohmann::json::array();
  for (const auto& v : m.class_iou) {
    if (v) {
      iou.push_back(*v);
    } else {
      iou.push_back(nullptr);
    }
  }
  return {{"class_iou", iou},
          {"miou", m.mean_iou},
          {"pixel_accuracy", m.pixel_accuracy},
          {"mean_class_accuracy", m.mean_class_accuracy}};
}

void write_line(std::ofstream& f, const nlohmann::json& j) {
  f << j.dump() << "\n";
  if (!f) throw std::runtime_error("train: failed writing metrics.jsonl");
}

}  // namespace

std::string metrics_json(const SegMetrics& m) { return metrics_to_json(m).dump(2); }

EvalReport evaluate_dataset(const MiniSegModel& model, const Dataset& ds, const std::vector<double>& scales,
                            bool flip, int ignore_index, std::size_t batch) {
  if (ds.samples.empty()) throw std::invalid_argument("evaluate_dataset: empty dataset");
  if (batch == 0) throw std::invalid_argument("evaluate_dataset: batch must be >= 1");
  EvalReport r{ConfusionMatrix(model.config.num_classes), {}};
  for (std::size_t start = 0; start < ds.samples.size(); start += batch) {
    const std::size_t end = std::min(ds.samples.size(), start + batch);
    std::vector<const Tensor4*> images;
    std::vector<const LabelMap*> labels;
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(&ds.samples[i].image);
      labels.push_back(&ds.samples[i].labels);
    }
    const LabelMap pred = eval_multiscale(model, stack_images(images), scales, flip);
    confusion_update(r.confusion, pred, stack_labels(labels), ignore_index);
  }
  r.metrics = compute_metrics(r.confusion);
  return r;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t count) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng(seed).split(kShuffleStream).split(epoch);
  for (std::size_t i = count; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

TrainReport run_training(const RunConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::filesystem::create_directories(opts.out_dir);
  {
    std::ofstream c(opts.out_dir / "config.json");
    c << dump_run_config(cfg) << "\n";
  }
  std::ofstream log(opts.out_dir / "metrics.jsonl");
  if (!log) throw std::runtime_error("train: cannot write " + (opts.out_dir / "metrics.jsonl").string());

  const int ignore = cfg.train.ignore_index;
  SynthOptions so;
  so.seed = cfg.data.seed;
  so.count = cfg.data.count;
  so.size = cfg.data.size;
  so.num_classes = cfg.data.num_classes;
  so.ignore_index = ignore;
  const Dataset train_set = synth_generate(so);
  so.count = cfg.data.val_count;
  so.first_index = cfg.data.count;
  const Dataset val_set = synth_generate(so);

  const Rng master(cfg.train.seed);
  Rng model_rng = master.split(kModelStream);
  MiniSegModel model = miniseg_build(model_rng, cfg.model);
  ParamGroup params = miniseg_params(model);

  TrainReport report;
  const std::size_t count = train_set.samples.size();
  const std::size_t bs = cfg.train.batch_size;
  std::size_t iter = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(cfg.train.seed, epoch, count);
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (std::size_t start = 0; start < count; start += bs) {
      const std::size_t end = std::min(count, start + bs);
      std::vector<SegSample> batch(end - start);
      parallel_for(batch.size(), [&](std::size_t b) {
        const std::size_t pos = start + b;
        Rng rng = master.split(kAugmentStream).split(epoch * count + pos);
        batch[b] = crop_or_pad(augment(train_set.samples[order[pos]], rng), cfg.data.size, rng, ignore);
      });
      std::vector<const Tensor4*> images;
      std::vector<const LabelMap*> labels;
      for (const auto& s : batch) {
        images.push_back(&s.image);
        labels.push_back(&s.labels);
      }
      const Tensor4 x = stack_images(images);
      const LabelMap y = stack_labels(labels);

      const double lr = poly_lr(iter, cfg.train);
      MiniSegResult fwd = miniseg_forward(model, x, Mode::Train);
      const LossResult loss = cross_entropy_masked(fwd.logits, y, ignore);
      if (!std::isfinite(loss.loss)) {
        throw std::runtime_error("train: loss became non-finite at iteration " + std::to_string(iter));
      }
      miniseg_backward(model, fwd.cache, loss.d_logits, params);
      sgd_step(params, lr, cfg.train);
      write_line(log, {{"iter", iter}, {"epoch", epoch + 1}, {"lr", lr}, {"loss", loss.loss}});
      loss_sum += loss.loss;
      ++loss_n;
      ++iter;
    }
    EpochSummary s;
    s.epoch = epoch + 1;
    s.train_loss = loss_sum / static_cast<double>(loss_n);
    s.val = evaluate_dataset(model, val_set, {1.0}, false, ignore).metrics;
    write_line(log, {{"epoch_end", s.epoch},
                     {"train_loss", s.train_loss},
                     {"val_miou", s.val.mean_iou},
                     {"val_pixel_accuracy", s.val.pixel_accuracy}});
    if (opts.progress) {
      nlohmann::json p = {{"epoch", s.epoch}, {"train_loss", s.train_loss}, {"val_miou", s.val.mean_iou}};
      opts.progress(p.dump());
    }
    report.epochs.push_back(s);
  }

  report.final_val = evaluate_dataset(model, val_set, cfg.eval.scales, cfg.eval.flip, ignore).metrics;
  nlohmann::json fin = metrics_to_json(report.final_val);
  fin["final"] = true;
  fin["scales"] = cfg.eval.scales;
  fin["flip"] = cfg.eval.flip;
  write_line(log, fin);
  miniseg_save(model, opts.out_dir / "checkpoint");
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace tkcn
