#pragma once

#include <filesystem>
#include <vector>

#include "tkcn/batchnorm.hpp"
#include "tkcn/conv_engine.hpp"
#include "tkcn/rng.hpp"
#include "tkcn/sample.hpp"
#include "tkcn/tfa.hpp"
#include "tkcn/train.hpp"

namespace tkcn {

struct MiniSegConfig {
  std::size_t width = 16;  // stem widths are width, 2 width, 4 width
  std::size_t num_classes = 4;
  std::vector<Factors> body = {{2, 1}, {4, 3}};
  bool use_tfa = true;
  // TFA_S factors scaled down for 16 x 16 feature maps.
  TfaConfig head = {{{2, 1}, {4, 3}, {6, 5}}, 0, 1, true};

  std::size_t trunk_channels() const { return 4 * width; }
  void validate() const;
};

/// Bias-free convolution followed by batch norm and ReLU.
struct ConvBnLayer {
  BoxConvGeometry geometry;
  Tensor4 kernel;
  BatchNormState bn;
};

/// Stem (3 conv stages, overall stride 4), KConv body, TFA head, 1x1
/// classifier and x4 bilinear upsampling back to the input resolution.
struct MiniSegModel {
  MiniSegConfig config;
  std::vector<ConvBnLayer> stem;
  std::vector<ConvBnLayer> body;
  TfaModule head;
  Tensor4 classifier_kernel;  // (classes, head channels, 1, 1)
  Tensor4 classifier_bias;    // (1, classes, 1, 1)

  std::size_t classifier_in_channels() const { return classifier_kernel.c(); }
};

MiniSegModel miniseg_build(Rng& rng, const MiniSegConfig& config);

struct LayerCache {
  Tensor4 input;
  ConvColumns columns;
  BatchNormCache bn;
  Tensor4 output;  // post-ReLU
};

struct MiniSegCache {
  std::vector<LayerCache> stem;
  std::vector<LayerCache> body;
  TfaCache head;
  Tensor4 classifier_input;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
};

struct MiniSegResult {
  Tensor4 logits;  // (n, classes, H, W)
  MiniSegCache cache;
};

/// Train mode uses batch statistics and updates running statistics.
MiniSegResult miniseg_forward(MiniSegModel& model, const Tensor4& x, Mode mode);
/// Eval mode on a shared model.
MiniSegResult miniseg_forward(const MiniSegModel& model, const Tensor4& x);

/// Parameters in a fixed order. Holds pointers into `model`, so rebuild the
/// group if the model is moved.
ParamGroup miniseg_params(MiniSegModel& model);

/// Writes parameter gradients into `params` (built by miniseg_params on the
/// same model). Returns the input gradient when need_input is set, otherwise
/// an empty tensor.
Tensor4 miniseg_backward(const MiniSegModel& model, const MiniSegCache& cache, const Tensor4& d_logits,
                         ParamGroup& params, bool need_input = false);

/// Per-pixel argmax over classes; ties resolve to the lowest class index.
LabelMap argmax_labels(const Tensor4& scores);

/// Multi-scale average fusion: per scale (side rounded to a multiple of 4),
/// eval forward, softmax, resize back, optional mirrored pass; mean; argmax.
LabelMap eval_multiscale(const MiniSegModel& model, const Tensor4& image, const std::vector<double>& scales,
                         bool flip);

void miniseg_save(const MiniSegModel& model, const std::filesystem::path& dir);
MiniSegModel miniseg_load(const std::filesystem::path& dir);

}  // namespace tkcn
