#pragma once

#include <cstdint>
#include <vector>

#include "tkcn/tensor.hpp"

namespace tkcn {

inline constexpr int kDefaultIgnoreIndex = 255;

/// Integer label map of shape (n, h, w).
struct LabelMap {
  std::size_t n = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::int32_t> data;

  LabelMap() = default;
  LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, std::int32_t fill = 0)
      : n(n_), h(h_), w(w_), data(n_ * h_ * w_, fill) {}

  std::int32_t& operator()(std::size_t b, std::size_t y, std::size_t x) { return data[(b * h + y) * w + x]; }
  std::int32_t operator()(std::size_t b, std::size_t y, std::size_t x) const { return data[(b * h + y) * w + x]; }
  bool operator==(const LabelMap&) const = default;
};

/// One image (1, 3, H, W) in [0, 1] and its (1, H, W) labels.
struct SegSample {
  Tensor4 image;
  LabelMap labels;
};

/// Labels stored as a (n, 1, h, w) tensor of exact small integers.
Tensor4 labels_to_tensor(const LabelMap& labels);
LabelMap labels_from_tensor(const Tensor4& t);

/// Stacks single-sample labels/images into a batch.
LabelMap stack_labels(const std::vector<const LabelMap*>& parts);
Tensor4 stack_images(const std::vector<const Tensor4*>& parts);

}  // namespace tkcn
