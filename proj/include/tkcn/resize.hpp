#pragma once

#include "tkcn/rng.hpp"
#include "tkcn/sample.hpp"
#include "tkcn/tensor.hpp"

namespace tkcn {

/// Half-pixel-center bilinear resize: s = (d + 0.5) * in / out - 0.5, clamped
/// to [0, in - 1], with 4-tap weights.
Tensor4 bilinear_resize(const Tensor4& x, std::size_t out_h, std::size_t out_w);

/// Transpose of bilinear_resize: scatters d_out back with the same weights.
Tensor4 bilinear_resize_backward(const Tensor4& d_out, std::size_t in_h, std::size_t in_w);

/// Nearest neighbour on the same half-pixel grid; never invents label values.
LabelMap resize_labels_nearest(const LabelMap& labels, std::size_t out_h, std::size_t out_w);

Tensor4 mirror_horizontal(const Tensor4& x);
LabelMap mirror_horizontal(const LabelMap& labels);

/// Deterministic augmentation core: optional mirror, then resize by `scale`
/// (image bilinear, labels nearest). Output side is round(side * scale).
SegSample augment_with(const SegSample& sample, bool mirror, double scale);

/// Random mirror with probability 0.5 and scale uniform in [0.5, 2].
SegSample augment(const SegSample& sample, Rng& rng);

/// Crop (random offset) or pad (image 0, labels ignore_index) back to size x size.
SegSample crop_or_pad(const SegSample& sample, std::size_t size, Rng& rng, int ignore_index);

}  // namespace tkcn
