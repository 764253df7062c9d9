#pragma once

#include "tkcn/tensor.hpp"

namespace tkcn {

enum class Mode { Train, Eval };

struct BatchNormState {
  Tensor4 gamma;         // (1, C, 1, 1)
  Tensor4 beta;          // (1, C, 1, 1)
  Tensor4 running_mean;  // (1, C, 1, 1)
  Tensor4 running_var;   // (1, C, 1, 1)
  double epsilon = 1e-5;
  double momentum = 0.9;  // fraction of the running statistic retained per update

  static BatchNormState identity(std::size_t channels);
  std::size_t channels() const { return gamma.c(); }
};

struct BatchNormCache {
  Mode mode = Mode::Eval;
  Tensor4 normalized;   // x_hat
  Tensor4 inv_std;      // (1, C, 1, 1)
};

/// Train mode normalizes with batch statistics over (n, h, w) and updates the
/// running statistics (unbiased variance); eval mode uses the running ones.
Tensor4 batchnorm_forward(const Tensor4& x, BatchNormState& state, Mode mode,
                          BatchNormCache* cache = nullptr);

/// Eval-mode forward on a shared, read-only state.
Tensor4 batchnorm_forward(const Tensor4& x, const BatchNormState& state,
                          BatchNormCache* cache = nullptr);

struct BatchNormGrads {
  Tensor4 d_input;
  Tensor4 d_gamma;
  Tensor4 d_beta;
};

BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const BatchNormState& state,
                                  const Tensor4& d_out);

Tensor4 relu(const Tensor4& x);
/// Gradient through ReLU given its output (zero where the output is zero).
Tensor4 relu_backward(const Tensor4& relu_out, const Tensor4& d_out);

}  // namespace tkcn
