#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "tkcn/batchnorm.hpp"
#include "tkcn/kconv.hpp"
#include "tkcn/rng.hpp"

namespace tkcn {

struct Factors {
  int r1 = 1;
  int r2 = 1;
  bool operator==(const Factors&) const = default;
};

struct TfaConfig {
  std::vector<Factors> steps;
  std::size_t branch_channels = 0;  // 0 derives max(1, C / 4) from the input
  int kernel_half_extent = 1;
  bool include_identity = true;

  /// (6,3), (10,7), (20,15)
  static TfaConfig small_factors();
  /// (10,7), (20,15), (30,25)
  static TfaConfig large_factors();

  void validate() const;
};

struct TfaBranch {
  ConvSpec spec;
  KernelWeights weights;  // bias stays zero; batch norm follows
  BatchNormState bn;
};

/// Tree-structured aggregation: o_0 = x, o_i = ReLU(BN(KConv_i(o_{i-1}))),
/// output = concat(x, o_1, ..., o_n) (x omitted without the identity branch).
struct TfaModule {
  TfaConfig config;
  std::size_t input_channels = 0;
  std::vector<TfaBranch> branches;

  std::size_t branch_channels() const;
  std::size_t output_channels() const;
};

TfaModule tfa_build(Rng& rng, std::size_t input_channels, const TfaConfig& config);

struct TfaCache {
  std::vector<Tensor4> step_inputs;   // o_0 .. o_{n-1}
  std::vector<Tensor4> step_outputs;  // o_1 .. o_n
  std::vector<BatchNormCache> bn;
};

struct TfaResult {
  Tensor4 y;
  TfaCache cache;
};

/// Train mode updates each branch's running batch-norm statistics.
TfaResult tfa_forward(const Tensor4& x, TfaModule& module, Mode mode);
/// Eval mode on a shared, read-only module.
TfaResult tfa_forward(const Tensor4& x, const TfaModule& module);

struct TfaBranchGrads {
  Tensor4 d_kernel;
  Tensor4 d_gamma;
  Tensor4 d_beta;
};

struct TfaGrads {
  Tensor4 d_input;
  std::vector<TfaBranchGrads> branches;
};

TfaGrads tfa_backward(const TfaCache& cache, const TfaModule& module, const Tensor4& d_y);

/// Writes `<stem>.json` plus one tensor file per branch parameter into dir.
void tfa_save(const TfaModule& module, const std::filesystem::path& dir, const std::string& stem);
TfaModule tfa_load(const std::filesystem::path& dir, const std::string& stem);

}  // namespace tkcn
