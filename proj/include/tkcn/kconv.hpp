#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tkcn/rng.hpp"
#include "tkcn/tensor.hpp"

namespace tkcn {

enum class Padding { Same, Valid };

/// Geometry of one Kronecker convolution. The kernel side is 2k+1; r1 spaces
/// the taps (inter-dilating factor) and each tap sums an r2 x r2 subregion
/// (intra-sharing factor).
struct ConvSpec {
  int k = 1;
  int r1 = 1;
  int r2 = 1;
  std::size_t c_in = 1;
  std::size_t c_out = 1;
  Padding padding = Padding::Same;

  int side() const { return 2 * k + 1; }
  /// Throws std::invalid_argument unless 1 <= r2 <= r1, k >= 0, channels >= 1.
  void validate() const;
  std::string describe() const;
};

struct KernelWeights {
  Tensor4 kernel;  // (c_out, c_in, 2k+1, 2k+1)
  Tensor4 bias;    // (1, c_out, 1, 1)

  void check(const ConvSpec& spec) const;
  std::size_t parameter_count() const { return kernel.size() + bias.size(); }
};

KernelWeights zero_weights(const ConvSpec& spec);

/// Kernel ~ Normal(0, 2 / (c_in (2k+1)^2)), bias zero.
KernelWeights he_init(Rng& rng, const ConvSpec& spec);

/// The r1 x r1 binary matrix with an all-ones r2 x r2 block in the top-left.
struct TransformMatrix {
  int r1 = 1;
  int r2 = 1;
  std::vector<std::uint8_t> values;  // row-major r1 * r1

  int at(int u, int v) const { return values[static_cast<std::size_t>(u * r1 + v)]; }
};

TransformMatrix build_transform(int r1, int r2);

struct ExpandedKernel {
  Tensor4 kernel;  // (c_out, c_in, (2k+1) r1, (2k+1) r1)
};

/// Per channel pair, the Kronecker product K(c2, c1) (x) F.
ExpandedKernel expand_kernel(const KernelWeights& w, const TransformMatrix& f);

struct Pads {
  int top = 0;
  int left = 0;
  int bottom = 0;
  int right = 0;
  bool operator==(const Pads&) const = default;
};

/// Tap offsets span [-k r1, k r1 + r2 - 1], so resolution-preserving padding
/// is one-sided: (k r1, k r1, k r1 + r2 - 1, k r1 + r2 - 1).
Pads pad_for_same(const ConvSpec& spec);
Pads pads_for(const ConvSpec& spec);

/// Output (h, w) for an input of (h, w); throws when the footprint does not fit.
std::pair<std::size_t, std::size_t> output_hw(const ConvSpec& spec, std::size_t h, std::size_t w);

/// Dense convolution with the materialized expanded kernel. Reference path.
Tensor4 kconv_forward_expanded(const Tensor4& a, const KernelWeights& w, const ConvSpec& spec);

/// Direct loops over only the (2k+1)^2 r2^2 nonzero taps of the expanded kernel.
Tensor4 kconv_forward_sparse(const Tensor4& a, const KernelWeights& w, const ConvSpec& spec);

/// Subregion sums followed by a (2k+1)^2 dilated weighted sum (GEMM-backed).
Tensor4 kconv_forward_factored(const Tensor4& a, const KernelWeights& w, const ConvSpec& spec);

/// Summed-area table per padded channel; each r2 x r2 box read in O(1).
Tensor4 kconv_forward_sat(const Tensor4& a, const KernelWeights& w, const ConvSpec& spec);

struct ConvGrads {
  Tensor4 d_input;
  Tensor4 d_kernel;
  Tensor4 d_bias;
};

/// Exact reverse-mode gradients of kconv_forward_factored.
ConvGrads kconv_backward(const Tensor4& a, const KernelWeights& w, const ConvSpec& spec,
                         const Tensor4& d_out);

// Plain dilated convolution written with direct loops and no shared code with
// the Kronecker paths; used to cross-check them when r2 == 1.
Tensor4 atrous_forward(const Tensor4& a, const KernelWeights& w, int rate,
                       Padding padding = Padding::Same);
ConvGrads atrous_backward(const Tensor4& a, const KernelWeights& w, int rate,
                          const Tensor4& d_out, Padding padding = Padding::Same);

/// Number of input positions read per output element of atrous_forward.
std::size_t atrous_tap_count(int k, int rate);

/// Valid feature ratio r2^2 / r1^2.
double vfr(int r1, int r2);

/// Alternative ratio over the tap footprint ((2k r1 + r2)^2 positions).
double footprint_vfr(int k, int r1, int r2);

enum class Strategy { DenseExpanded, SparseTaps, Factored, Sat };
std::string to_string(Strategy s);

struct MacCount {
  std::uint64_t mults = 0;  // per output element
  std::uint64_t adds = 0;   // per output element
};

MacCount mac_count(const ConvSpec& spec, Strategy strategy);

/// Additions spent building the summed-area tables: 2 c_in per padded element.
std::uint64_t sat_build_cost(const ConvSpec& spec, std::size_t n, std::size_t h, std::size_t w);

}  // namespace tkcn
