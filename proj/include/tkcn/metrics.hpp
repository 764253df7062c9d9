#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tkcn/sample.hpp"

namespace tkcn {

/// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  std::size_t num_classes() const { return classes_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * classes_ + pred]; }
  std::uint64_t total() const;
  void merge(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

  friend void confusion_update(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt, int ignore_index);

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

/// Counts every pixel whose ground truth is not ignore_index.
void confusion_update(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt, int ignore_index);

struct SegMetrics {
  std::vector<std::optional<double>> class_iou;  // empty when absent from GT and prediction
  double mean_iou = 0.0;
  double pixel_accuracy = 0.0;
  double mean_class_accuracy = 0.0;  // over classes present in GT
};

SegMetrics compute_metrics(const ConfusionMatrix& cm);

}  // namespace tkcn
