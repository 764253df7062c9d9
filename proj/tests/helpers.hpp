#pragma once

#include <cstddef>
#include <cstdint>

#include "tkcn/kconv.hpp"
#include "tkcn/rng.hpp"
#include "tkcn/tensor.hpp"

namespace tkcn::test {

inline Tensor4 random_tensor(std::uint64_t seed, Shape s, double sd = 1.0) {
  Rng rng(seed);
  Tensor4 t(s);
  for (auto& v : t.data()) v = rng.normal(0.0, sd);
  return t;
}

inline Tensor4 integer_tensor(std::uint64_t seed, Shape s, int lo, int hi) {
  Rng rng(seed);
  Tensor4 t(s);
  for (auto& v : t.data()) v = static_cast<double>(lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))));
  return t;
}

inline KernelWeights random_weights(std::uint64_t seed, const ConvSpec& spec) {
  const auto side = static_cast<std::size_t>(spec.side());
  return {random_tensor(seed, Shape{spec.c_out, spec.c_in, side, side}),
          random_tensor(seed + 1000, Shape{1, spec.c_out, 1, 1})};
}

// Direct transcription of the Kronecker convolution sum: output (p, q) reads
// input (p - top + i r1 + u, q - left + j r1 + v) for i, j in [-k, k] and
// u, v in [0, r2), zero outside the image. Same passes 0, Valid passes -k r1.
inline Tensor4 naive_kconv(const Tensor4& a, const Tensor4& kernel, const Tensor4* bias, int k, int r1, int r2,
                           int top, int left, std::size_t oh, std::size_t ow) {
  const std::size_t c_out = kernel.n();
  Tensor4 out(a.n(), c_out, oh, ow);
  const auto h = static_cast<long>(a.h());
  const auto w = static_cast<long>(a.w());
  for (std::size_t n = 0; n < a.n(); ++n)
    for (std::size_t co = 0; co < c_out; ++co)
      for (std::size_t p = 0; p < oh; ++p)
        for (std::size_t q = 0; q < ow; ++q) {
          double acc = bias ? (*bias)(0, co, 0, 0) : 0.0;
          for (std::size_t ci = 0; ci < a.c(); ++ci)
            for (int i = -k; i <= k; ++i)
              for (int j = -k; j <= k; ++j)
                for (int u = 0; u < r2; ++u)
                  for (int v = 0; v < r2; ++v) {
                    const long y = static_cast<long>(p) - top + i * r1 + u;
                    const long x = static_cast<long>(q) - left + j * r1 + v;
                    if (y < 0 || x < 0 || y >= h || x >= w) continue;
                    acc += kernel(co, ci, static_cast<std::size_t>(i + k), static_cast<std::size_t>(j + k)) *
                           a(n, ci, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                  }
          out(n, co, p, q) = acc;
        }
  return out;
}

// Same-padded Kronecker convolution via naive_kconv.
inline Tensor4 naive_kconv_same(const Tensor4& a, const KernelWeights& w, const ConvSpec& s) {
  return naive_kconv(a, w.kernel, &w.bias, s.k, s.r1, s.r2, 0, 0, a.h(), a.w());
}

// Textbook centered convolution (cross-correlation) with symmetric zero padding k.
inline Tensor4 naive_standard_conv(const Tensor4& a, const KernelWeights& w) {
  const int k = static_cast<int>(w.kernel.h() / 2);
  Tensor4 out(a.n(), w.kernel.n(), a.h(), a.w());
  for (std::size_t n = 0; n < a.n(); ++n)
    for (std::size_t co = 0; co < out.c(); ++co)
      for (std::size_t y = 0; y < a.h(); ++y)
        for (std::size_t x = 0; x < a.w(); ++x) {
          double acc = w.bias(0, co, 0, 0);
          for (std::size_t ci = 0; ci < a.c(); ++ci)
            for (int dy = 0; dy <= 2 * k; ++dy)
              for (int dx = 0; dx <= 2 * k; ++dx) {
                const long sy = static_cast<long>(y) + dy - k;
                const long sx = static_cast<long>(x) + dx - k;
                if (sy < 0 || sx < 0 || sy >= static_cast<long>(a.h()) || sx >= static_cast<long>(a.w())) continue;
                acc += w.kernel(co, ci, static_cast<std::size_t>(dy), static_cast<std::size_t>(dx)) *
                       a(n, ci, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
              }
          out(n, co, y, x) = acc;
        }
  return out;
}

}  // namespace tkcn::test
