#include "tkcn/metrics.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

namespace tkcn {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : classes_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw std::invalid_argument("ConfusionMatrix: need at least one class");
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw std::invalid_argument("ConfusionMatrix::merge: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

void confusion_update(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt, int ignore_index) {
  if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w) {
    throw std::invalid_argument("confusion_update: prediction and ground truth shapes differ");
  }
  const auto k = static_cast<std::int64_t>(cm.classes_);
  // Validate first so a bad map leaves the matrix untouched.
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    if (gt.data[i] == ignore_index) continue;
    if (gt.data[i] < 0 || gt.data[i] >= k || pred.data[i] < 0 || pred.data[i] >= k) {
      throw std::invalid_argument("confusion_update: class out of range at pixel " + std::to_string(i) +
                                  " (gt " + std::to_string(gt.data[i]) + ", pred " +
                                  std::to_string(pred.data[i]) + ")");
    }
  }
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    if (gt.data[i] == ignore_index) continue;
    ++cm.counts_[static_cast<std::size_t>(gt.data[i]) * cm.classes_ + static_cast<std::size_t>(pred.data[i])];
  }
}

SegMetrics compute_metrics(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("compute_metrics: confusion matrix is empty");
  const std::size_t k = cm.num_classes();
  SegMetrics m;
  m.class_iou.resize(k);
  std::uint64_t trace = 0;
  double iou_sum = 0.0;
  std::size_t iou_count = 0;
  double acc_sum = 0.0;
  std::size_t acc_count = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t row = 0;
    std::uint64_t col = 0;
    for (std::size_t o = 0; o < k; ++o) {
      row += cm.at(c, o);
      col += cm.at(o, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    trace += tp;
    const std::uint64_t uni = row + col - tp;
    if (uni > 0) {
      const double iou = static_cast<double>(tp) / static_cast<double>(uni);
      m.class_iou[c] = iou;
      iou_sum += iou;
      ++iou_count;
    }
    if (row > 0) {
      acc_sum += static_cast<double>(tp) / static_cast<double>(row);
      ++acc_count;
    }
  }
  m.mean_iou = iou_sum / static_cast<double>(iou_count);
  m.pixel_accuracy = static_cast<double>(trace) / static_cast<double>(total);
  m.mean_class_accuracy = acc_sum / static_cast<double>(acc_count);
  return m;
}

}  // namespace tkcn
