#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "tkcn/conv_engine.hpp"
#include "tkcn/kconv.hpp"
#include "tkcn/train.hpp"

using namespace tkcn;
using namespace tkcn::test;

namespace {

const std::vector<std::pair<int, int>> kFactorGrid = {{1, 1}, {2, 1}, {2, 2}, {3, 2}, {4, 3}, {6, 5}, {10, 7}};

Tensor4 iota_plane(std::size_t h, std::size_t w) {
  Tensor4 a(1, 1, h, w);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<double>(i + 1);
  return a;
}

KernelWeights constant_weights(std::size_t side, double v) {
  return {Tensor4(Shape{1, 1, side, side}, v), Tensor4(Shape{1, 1, 1, 1}, 0.0)};
}

}  // namespace

TEST_CASE("build_transform") {
  CHECK(build_transform(1, 1).values == std::vector<std::uint8_t>{1});
  auto f41 = build_transform(4, 1);
  CHECK(f41.values.size() == 16);
  CHECK(std::count(f41.values.begin(), f41.values.end(), 1) == 1);
  CHECK(f41.at(0, 0) == 1);
  CHECK(build_transform(3, 2).values == std::vector<std::uint8_t>{1, 1, 0, 1, 1, 0, 0, 0, 0});
  CHECK_THROWS_AS(build_transform(2, 3), std::invalid_argument);
  CHECK_THROWS_AS(build_transform(0, 0), std::invalid_argument);
}

TEST_CASE("expand_kernel") {
  KernelWeights w{Tensor4(Shape{1, 1, 1, 1}, 2.0), Tensor4(Shape{1, 1, 1, 1})};
  auto e = expand_kernel(w, build_transform(3, 2));
  CHECK(e.kernel.shape() == Shape{1, 1, 3, 3});
  CHECK(std::vector<double>(e.kernel.data().begin(), e.kernel.data().end()) ==
        std::vector<double>{2, 2, 0, 2, 2, 0, 0, 0, 0});

  const ConvSpec s{1, 1, 1, 2, 3, Padding::Same};
  auto rw = random_weights(1, s);
  CHECK(expand_kernel(rw, build_transform(1, 1)).kernel == rw.kernel);

  const ConvSpec s43{1, 4, 3, 1, 1, Padding::Same};
  auto w43 = random_weights(2, s43);
  auto e43 = expand_kernel(w43, build_transform(4, 3)).kernel;
  CHECK(e43.shape() == Shape{1, 1, 12, 12});
  std::size_t nonzero = 0;
  for (double v : e43.data()) nonzero += v != 0.0;
  CHECK(nonzero == 81);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t u = 0; u < 4; ++u)
        for (std::size_t v = 0; v < 4; ++v) {
          const double expect = (u < 3 && v < 3) ? w43.kernel(0, 0, i, j) : 0.0;
          CHECK(e43(0, 0, i * 4 + u, j * 4 + v) == expect);
        }
}

TEST_CASE("pad_for_same") {
  CHECK(pad_for_same({1, 1, 1, 1, 1, Padding::Same}) == Pads{1, 1, 1, 1});
  CHECK(pad_for_same({1, 4, 1, 1, 1, Padding::Same}) == Pads{4, 4, 4, 4});
  CHECK(pad_for_same({1, 4, 3, 1, 1, Padding::Same}) == Pads{4, 4, 6, 6});
  CHECK(pads_for({1, 4, 3, 1, 1, Padding::Valid}) == Pads{0, 0, 0, 0});
  for (int k = 0; k <= 2; ++k)
    for (auto [r1, r2] : kFactorGrid) {
      const ConvSpec s{k, r1, r2, 1, 1, Padding::Same};
      CHECK(output_hw(s, 9, 7) == std::pair<std::size_t, std::size_t>{9, 7});
    }
}

TEST_CASE("ConvSpec validation") {
  CHECK_THROWS_AS((ConvSpec{1, 2, 3, 1, 1, Padding::Same}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((ConvSpec{-1, 1, 1, 1, 1, Padding::Same}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((ConvSpec{1, 1, 1, 0, 1, Padding::Same}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((ConvSpec{1, 0, 0, 1, 1, Padding::Same}.validate()), std::invalid_argument);
  CHECK_NOTHROW((ConvSpec{0, 1, 1, 1, 1, Padding::Same}.validate()));
}

TEST_CASE("hand-computed windows") {
  // 1x1 kernel of 1, r1 = r2 = 2: output (0,0) sums the top-left 2x2 window.
  const ConvSpec s{0, 2, 2, 1, 1, Padding::Same};
  const Tensor4 a = iota_plane(5, 5);
  const auto w = constant_weights(1, 1.0);
  CHECK(kconv_forward_expanded(a, w, s)(0, 0, 0, 0) == 16.0);
  CHECK(kconv_forward_factored(a, w, s)(0, 0, 0, 0) == 16.0);
  CHECK(kconv_forward_sat(a, w, s)(0, 0, 0, 0) == 16.0);
  CHECK(kconv_forward_sparse(a, w, s)(0, 0, 0, 0) == 16.0);

  // 3x3 ones, r1 = 2, r2 = 1 on ones: the centre sees all nine taps.
  const ConvSpec s2{1, 2, 1, 1, 1, Padding::Same};
  const Tensor4 ones(Shape{1, 1, 5, 5}, 1.0);
  const auto w2 = constant_weights(3, 1.0);
  CHECK(kconv_forward_expanded(ones, w2, s2)(0, 0, 2, 2) == 9.0);
  CHECK(kconv_forward_factored(ones, w2, s2)(0, 0, 2, 2) == 9.0);
  CHECK(kconv_forward_sat(ones, w2, s2)(0, 0, 2, 2) == 9.0);
  CHECK(kconv_forward_expanded(ones, w2, s2)(0, 0, 0, 0) == 4.0);
}

TEST_CASE("every forward path matches the direct sum over the grid") {
  std::uint64_t seed = 100;
  for (int k = 0; k <= 2; ++k)
    for (auto [r1, r2] : kFactorGrid) {
      const ConvSpec s{k, r1, r2, 3, 2, Padding::Same};
      const Tensor4 a = random_tensor(seed++, Shape{2, 3, 9, 11});
      const auto w = random_weights(seed++, s);
      const Tensor4 oracle = naive_kconv_same(a, w, s);
      INFO(s.describe());
      CHECK(max_abs_diff(kconv_forward_expanded(a, w, s), oracle) < 1e-10);
      CHECK(max_abs_diff(kconv_forward_factored(a, w, s), oracle) < 1e-10);
      CHECK(max_abs_diff(kconv_forward_sat(a, w, s), oracle) < 1e-9);
      CHECK(max_abs_diff(kconv_forward_sparse(a, w, s), oracle) < 1e-10);
    }
}

TEST_CASE("valid padding matches the direct sum") {
  const ConvSpec s{1, 3, 2, 2, 2, Padding::Valid};
  const Tensor4 a = random_tensor(7, Shape{1, 2, 12, 10});
  const auto w = random_weights(8, s);
  const auto [oh, ow] = output_hw(s, 12, 10);
  CHECK(oh == 12 - 7);
  CHECK(ow == 10 - 7);
  // Valid output (p, q) starts its footprint at input (p, q), i.e. offset -k r1 = -3.
  const Tensor4 oracle = naive_kconv(a, w.kernel, &w.bias, 1, 3, 2, -3, -3, oh, ow);
  CHECK(max_abs_diff(kconv_forward_expanded(a, w, s), oracle) < 1e-10);
  CHECK(max_abs_diff(kconv_forward_factored(a, w, s), oracle) < 1e-10);
  CHECK(max_abs_diff(kconv_forward_sat(a, w, s), oracle) < 1e-9);
  CHECK(max_abs_diff(kconv_forward_sparse(a, w, s), oracle) < 1e-10);
  CHECK_THROWS(kconv_forward_factored(random_tensor(9, Shape{1, 2, 6, 6}), w, s));
}

TEST_CASE("expanded vs factored on the larger example") {
  const ConvSpec s{1, 6, 5, 3, 3, Padding::Same};
  const Tensor4 a = random_tensor(31, Shape{2, 3, 16, 16});
  const auto w = random_weights(32, s);
  CHECK(allclose(kconv_forward_factored(a, w, s), kconv_forward_expanded(a, w, s), 0.0, 1e-10).close);
}

TEST_CASE("sat path is exact on integer data and close on the large factor case") {
  const ConvSpec s{1, 4, 3, 2, 2, Padding::Same};
  const Tensor4 a = integer_tensor(41, Shape{1, 2, 13, 13}, -20, 20);
  KernelWeights w{integer_tensor(42, Shape{2, 2, 3, 3}, -3, 3), integer_tensor(43, Shape{1, 2, 1, 1}, -2, 2)};
  CHECK(kconv_forward_sat(a, w, s) == kconv_forward_factored(a, w, s));

  const ConvSpec big{1, 10, 7, 4, 2, Padding::Same};
  const Tensor4 b = random_tensor(44, Shape{1, 4, 32, 32});
  const auto wb = random_weights(45, big);
  CHECK(allclose(kconv_forward_sat(b, wb, big), kconv_forward_expanded(b, wb, big), 0.0, 1e-9).close);
}

TEST_CASE("r2 = 1 degenerates to the atrous and standard convolutions") {
  std::uint64_t seed = 500;
  for (int k = 0; k <= 2; ++k)
    for (int rate : {1, 2, 3, 4, 6, 10}) {
      const ConvSpec s{k, rate, 1, 2, 3, Padding::Same};
      const Tensor4 a = random_tensor(seed++, Shape{2, 2, 10, 9});
      const auto w = random_weights(seed++, s);
      const Tensor4 ref = atrous_forward(a, w, rate);
      INFO(s.describe());
      CHECK(max_abs_diff(kconv_forward_expanded(a, w, s), ref) <= 1e-12);
      CHECK(max_abs_diff(kconv_forward_factored(a, w, s), ref) <= 1e-12);
      CHECK(max_abs_diff(kconv_forward_sat(a, w, s), ref) <= 1e-12);
      CHECK(max_abs_diff(kconv_forward_sparse(a, w, s), ref) <= 1e-12);
      if (rate == 1) CHECK(max_abs_diff(ref, naive_standard_conv(a, w)) <= 1e-12);
    }
}

TEST_CASE("atrous rate 4 reads exactly nine input positions") {
  const ConvSpec s{1, 4, 1, 1, 1, Padding::Same};
  KernelWeights w = constant_weights(3, 1.0);
  const Tensor4 base(Shape{1, 1, 17, 17}, 0.0);
  std::set<std::pair<std::size_t, std::size_t>> touched;
  for (std::size_t y = 0; y < 17; ++y)
    for (std::size_t x = 0; x < 17; ++x) {
      Tensor4 probe = base;
      probe(0, 0, y, x) = 1.0;
      if (atrous_forward(probe, w, 4)(0, 0, 8, 8) != 0.0) touched.insert({y, x});
    }
  CHECK(touched.size() == 9);
  CHECK(touched.size() == atrous_tap_count(1, 4));
  CHECK(touched.count({4, 4}) == 1);
  CHECK(touched.count({12, 12}) == 1);
}

TEST_CASE("linearity in input and kernel") {
  const ConvSpec s{1, 4, 3, 2, 2, Padding::Same};
  const Tensor4 a = random_tensor(61, Shape{1, 2, 10, 10});
  const Tensor4 b = random_tensor(62, Shape{1, 2, 10, 10});
  auto w = random_weights(63, s);
  w.bias.fill(0.0);
  const double alpha = 0.7;
  const double beta = -1.3;
  const Tensor4 lhs = kconv_forward_factored(axpby(alpha, a, beta, b), w, s);
  const Tensor4 rhs = axpby(alpha, kconv_forward_factored(a, w, s), beta, kconv_forward_factored(b, w, s));
  CHECK(max_abs_diff(lhs, rhs) < 1e-10);

  KernelWeights w2{scaled(w.kernel, alpha), w.bias};
  CHECK(max_abs_diff(kconv_forward_factored(a, w2, s), scaled(kconv_forward_factored(a, w, s), alpha)) < 1e-10);
}

TEST_CASE("interior translation equivariance") {
  const ConvSpec s{1, 2, 2, 1, 1, Padding::Same};
  const Tensor4 a = random_tensor(71, Shape{1, 1, 24, 24});
  Tensor4 shifted(a.shape());
  for (std::size_t y = 0; y < 24; ++y)
    for (std::size_t x = 1; x < 24; ++x) shifted(0, 0, y, x) = a(0, 0, y, x - 1);
  const auto w = random_weights(72, s);
  const Tensor4 ya = kconv_forward_factored(a, w, s);
  const Tensor4 ys = kconv_forward_factored(shifted, w, s);
  // Footprint offsets span [-2, 3]; stay clear of the borders.
  for (std::size_t y = 3; y < 20; ++y)
    for (std::size_t x = 4; x < 20; ++x) CHECK(ys(0, 0, y, x) == doctest::Approx(ya(0, 0, y, x - 1)).epsilon(1e-12));
}

TEST_CASE("kconv_backward matches finite differences") {
  const ConvSpec s{1, 3, 2, 2, 2, Padding::Same};
  const Tensor4 a = random_tensor(81, Shape{1, 2, 8, 8});
  const auto w = random_weights(82, s);
  const Tensor4 weight = random_tensor(83, Shape{1, 2, 8, 8});
  const ConvGrads g = kconv_backward(a, w, s, weight);
  GradCheckOptions opts;
  opts.step = 1e-6;
  auto fa = [&](const Tensor4& p) { return dot(weight, kconv_forward_factored(p, w, s)); };
  auto fk = [&](const Tensor4& p) { return dot(weight, kconv_forward_factored(a, KernelWeights{p, w.bias}, s)); };
  auto fb = [&](const Tensor4& p) { return dot(weight, kconv_forward_factored(a, KernelWeights{w.kernel, p}, s)); };
  CHECK(grad_check(fa, a, g.d_input, opts).max_rel_error < 1e-5);
  CHECK(grad_check(fk, w.kernel, g.d_kernel, opts).max_rel_error < 1e-5);
  CHECK(grad_check(fb, w.bias, g.d_bias, opts).max_rel_error < 1e-5);

  // db is the per-channel sum of dB.
  for (std::size_t c = 0; c < 2; ++c) {
    double sum = 0.0;
    for (double v : weight.plane(0, c)) sum += v;
    CHECK(g.d_bias(0, c, 0, 0) == doctest::Approx(sum).epsilon(1e-12));
  }
}

TEST_CASE("kconv_backward with zero upstream gradient") {
  const ConvSpec s{2, 4, 3, 2, 3, Padding::Same};
  const Tensor4 a = random_tensor(91, Shape{2, 2, 7, 7});
  const auto w = random_weights(92, s);
  const ConvGrads g = kconv_backward(a, w, s, Tensor4(Shape{2, 3, 7, 7}));
  for (const Tensor4* t : {&g.d_input, &g.d_kernel, &g.d_bias})
    for (double v : t->data()) CHECK(v == 0.0);
  CHECK_THROWS(kconv_backward(a, w, s, Tensor4(Shape{2, 3, 7, 6})));
}

TEST_CASE("kconv_backward agrees with the atrous gradients for r2 = 1") {
  for (int rate : {1, 3}) {
    const ConvSpec s{1, rate, 1, 3, 2, Padding::Same};
    const Tensor4 a = random_tensor(101, Shape{2, 3, 9, 9});
    const auto w = random_weights(102, s);
    const Tensor4 d = random_tensor(103, Shape{2, 2, 9, 9});
    const ConvGrads g = kconv_backward(a, w, s, d);
    const ConvGrads r = atrous_backward(a, w, rate, d);
    CHECK(max_abs_diff(g.d_input, r.d_input) < 1e-12);
    CHECK(max_abs_diff(g.d_kernel, r.d_kernel) < 1e-11);
    CHECK(max_abs_diff(g.d_bias, r.d_bias) < 1e-12);
  }
}

TEST_CASE("kconv gradients across the grid") {
  std::uint64_t seed = 200;
  for (int k = 0; k <= 2; ++k)
    for (auto [r1, r2] : kFactorGrid) {
      const ConvSpec s{k, r1, r2, 2, 2, Padding::Same};
      const Tensor4 a = random_tensor(seed++, Shape{1, 2, 5, 5});
      const auto w = random_weights(seed++, s);
      const Tensor4 weight = random_tensor(seed++, Shape{1, 2, 5, 5});
      const ConvGrads g = kconv_backward(a, w, s, weight);
      GradCheckOptions opts;
      opts.step = 1e-2;  // linear in each argument: no truncation error
      INFO(s.describe());
      CHECK(grad_check([&](const Tensor4& p) { return dot(weight, kconv_forward_factored(p, w, s)); }, a, g.d_input,
                       opts)
                .max_rel_error < 1e-5);
      CHECK(grad_check([&](const Tensor4& p) { return dot(weight, kconv_forward_factored(a, {p, w.bias}, s)); },
                       w.kernel, g.d_kernel, opts)
                .max_rel_error < 1e-5);
    }
}

TEST_CASE("vfr") {
  CHECK(vfr(4, 3) == 0.5625);
  CHECK(vfr(10, 7) == 0.49);
  CHECK(vfr(5, 5) == 1.0);
  for (int r = 1; r <= 16; ++r) CHECK(vfr(r, 1) == 1.0 / (r * r));
  for (int r2 = 1; r2 <= 7; ++r2)
    for (int r1 = r2 + 1; r1 <= 20; ++r1) CHECK(vfr(r1, r2) < vfr(r1 - 1, r2));
  CHECK_THROWS_AS(vfr(2, 3), std::invalid_argument);
  CHECK_THROWS_AS(vfr(0, 0), std::invalid_argument);
  // Footprint reading: 9 of 81 positions for a 3x3 kernel at rate 4.
  CHECK(footprint_vfr(1, 4, 1) == doctest::Approx(9.0 / 81.0).epsilon(1e-15));
}

TEST_CASE("mac_count formulas") {
  const ConvSpec s{1, 4, 3, 1, 1, Padding::Same};
  CHECK(mac_count(s, Strategy::DenseExpanded).mults == 144);
  CHECK(mac_count(s, Strategy::SparseTaps).mults == 81);
  const ConvSpec atrous{1, 6, 1, 5, 1, Padding::Same};
  CHECK(mac_count(atrous, Strategy::SparseTaps).mults == 45);
  CHECK(mac_count(atrous, Strategy::Factored).mults == 45);
  CHECK(mac_count(atrous, Strategy::Factored).adds == 0);
  for (auto [r1, r2] : kFactorGrid) {
    const ConvSpec g{2, r1, r2, 3, 1, Padding::Same};
    CHECK(mac_count(g, Strategy::Sat).mults == 75);
    CHECK(mac_count(g, Strategy::Sat).adds == 3 * 75);
    CHECK(mac_count(g, Strategy::Factored).adds == 75u * static_cast<unsigned>(r2 * r2 - 1));
    if (r1 > 1) CHECK(mac_count(g, Strategy::Factored).mults < mac_count(g, Strategy::DenseExpanded).mults);
  }
  // k=1, r1=3, r2=2 pads 3 before and 4 after: a 15 x 15 plane per channel and sample.
  const ConvSpec b{1, 3, 2, 2, 1, Padding::Same};
  CHECK(sat_build_cost(b, 3, 8, 8) == 2u * 2 * (8 + 3 + 4) * (8 + 3 + 4) * 3);
}

TEST_CASE("parameter count is independent of the factors") {
  for (int k = 0; k <= 2; ++k)
    for (auto [r1, r2] : kFactorGrid) {
      const ConvSpec s{k, r1, r2, 5, 7, Padding::Same};
      Rng rng(1);
      const std::size_t side = static_cast<std::size_t>(2 * k + 1);
      CHECK(he_init(rng, s).parameter_count() == 7 * 5 * side * side + 7);
      CHECK(zero_weights(s).parameter_count() == 7 * 5 * side * side + 7);
    }
}

TEST_CASE("box conv engine: strided convolution matches direct loops") {
  // 3x3 stride 2 with symmetric padding 1, as used by the stem.
  const Tensor4 x = random_tensor(301, Shape{2, 3, 9, 8});
  const Tensor4 kernel = random_tensor(302, Shape{4, 3, 3, 3});
  const Tensor4 bias = random_tensor(303, Shape{1, 4, 1, 1});
  const BoxConvGeometry g{1, 1, 1, 2, {1, 1, 1, 1}};
  const auto [oh, ow] = g.output_hw(9, 8);
  CHECK(oh == 5);
  CHECK(ow == 4);
  const Tensor4 y = box_conv_forward(x, kernel, &bias, g);
  Tensor4 expect(2, 4, oh, ow);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t co = 0; co < 4; ++co)
      for (std::size_t p = 0; p < oh; ++p)
        for (std::size_t q = 0; q < ow; ++q) {
          double acc = bias(0, co, 0, 0);
          for (std::size_t ci = 0; ci < 3; ++ci)
            for (int dy = 0; dy < 3; ++dy)
              for (int dx = 0; dx < 3; ++dx) {
                const long sy = static_cast<long>(2 * p) + dy - 1;
                const long sx = static_cast<long>(2 * q) + dx - 1;
                if (sy < 0 || sx < 0 || sy >= 9 || sx >= 8) continue;
                acc += kernel(co, ci, static_cast<std::size_t>(dy), static_cast<std::size_t>(dx)) *
                       x(n, ci, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
              }
          expect(n, co, p, q) = acc;
        }
  CHECK(max_abs_diff(y, expect) < 1e-12);

  const Tensor4 d = random_tensor(304, y.shape());
  ConvColumns cols;
  box_conv_forward(x, kernel, &bias, g, &cols);
  const ConvGrads cached = box_conv_backward(x, kernel, g, d, true, &cols);
  const ConvGrads fresh = box_conv_backward(x, kernel, g, d, true);
  CHECK(cached.d_input == fresh.d_input);
  CHECK(cached.d_kernel == fresh.d_kernel);
  GradCheckOptions opts;
  opts.step = 1e-2;
  CHECK(grad_check([&](const Tensor4& p) { return dot(d, box_conv_forward(p, kernel, &bias, g)); }, x,
                   fresh.d_input, opts)
            .max_rel_error < 1e-8);
  CHECK(grad_check([&](const Tensor4& p) { return dot(d, box_conv_forward(x, p, &bias, g)); }, kernel,
                   fresh.d_kernel, opts)
            .max_rel_error < 1e-8);
  CHECK(box_conv_backward(x, kernel, g, d, false).d_input.size() == 0);
}
