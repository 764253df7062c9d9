#pragma once

#include <vector>

#include "tkcn/kconv.hpp"
#include "tkcn/tensor.hpp"

namespace tkcn {

/// A convolution whose (2k+1)^2 taps are `dilation` apart, each reading the
/// sum of a box x box window of the zero-padded input, sampled every
/// `stride` pixels. Kronecker convolutions are (dilation r1, box r2,
/// stride 1); standard and strided convolutions are box 1.
struct BoxConvGeometry {
  int k = 1;
  int dilation = 1;
  int box = 1;
  int stride = 1;
  Pads pads;

  static BoxConvGeometry from_spec(const ConvSpec& spec);
  std::pair<std::size_t, std::size_t> output_hw(std::size_t h, std::size_t w) const;
};

/// Column matrix built by the forward pass, kept so backward can skip
/// rebuilding it. Only valid for the input it was built from.
struct ConvColumns {
  std::vector<double> values;
};

/// kernel: (c_out, c_in, 2k+1, 2k+1); bias may be null.
Tensor4 box_conv_forward(const Tensor4& x, const Tensor4& kernel, const Tensor4* bias,
                         const BoxConvGeometry& g, ConvColumns* keep = nullptr);

/// Gradients w.r.t. input (skipped when need_input is false), kernel and bias.
/// `cols`, when given, must come from the forward pass on the same x.
ConvGrads box_conv_backward(const Tensor4& x, const Tensor4& kernel, const BoxConvGeometry& g,
                            const Tensor4& d_out, bool need_input = true,
                            const ConvColumns* cols = nullptr);

}  // namespace tkcn
