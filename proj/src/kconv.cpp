#include "tkcn/kconv.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "tkcn/conv_engine.hpp"
#include "tkcn/parallel.hpp"

namespace tkcn {

void ConvSpec::validate() const {
  if (k < 0) throw std::invalid_argument("ConvSpec: k must be >= 0, got " + std::to_string(k));
  if (r1 < 1) throw std::invalid_argument("ConvSpec: r1 must be >= 1, got " + std::to_string(r1));
  if (r2 < 1 || r2 > r1) {
    throw std::invalid_argument("ConvSpec: need 1 <= r2 <= r1, got r1=" + std::to_string(r1) +
                                " r2=" + std::to_string(r2));
  }
  if (c_in < 1 || c_out < 1) throw std::invalid_argument("ConvSpec: channel counts must be >= 1");
}

std::string ConvSpec::describe() const {
  std::ostringstream os;
  os << "k=" << k << " r1=" << r1 << " r2=" << r2 << " c_in=" << c_in << " c_out=" << c_out
     << " padding=" << (padding == Padding::Same ? "same" : "valid");
  return os.str();
}

void KernelWeights::check(const ConvSpec& spec) const {
  const std::size_t side = static_cast<std::size_t>(spec.side());
  if (kernel.shape() != Shape{spec.c_out, spec.c_in, side, side}) {
    throw std::invalid_argument("KernelWeights: kernel shape " + to_string(kernel.shape()) +
                                " does not match " + spec.describe());
  }
  if (bias.shape() != Shape{1, spec.c_out, 1, 1}) {
    throw std::invalid_argument("KernelWeights: bias shape " + to_string(bias.shape()) +
                                " does not match c_out=" + std::to_string(spec.c_out));
  }
}

KernelWeights zero_weights(const ConvSpec& spec) {
  spec.validate();
  const std::size_t side = static_cast<std::size_t>(spec.side());
  return {Tensor4(Shape{spec.c_out, spec.c_in, side, side}), Tensor4(Shape{1, spec.c_out, 1, 1})};
}

KernelWeights he_init(Rng& rng, const ConvSpec& spec) {
  KernelWeights w = zero_weights(spec);
  const double fan_in = static_cast<double>(spec.c_in) * spec.side() * spec.side();
  const double stddev = std::sqrt(2.0 / fan_in);
  for (double& v : w.kernel.data()) v = rng.normal(0.0, stddev);
  return w;
}

TransformMatrix build_transform(int r1, int r2) {
  if (r1 < 1 || r2 < 1 || r2 > r1) {
    throw std::invalid_argument("build_transform: need 1 <= r2 <= r1, got r1=" + std::to_string(r1) +
                                " r2=" + std::to_string(r2));
  }
  TransformMatrix f{r1, r2, std::vector<std::uint8_t>(static_cast<std::size_t>(r1 * r1), 0)};
  for (int u = 0; u < r2; ++u) {
    for (int v = 0; v < r2; ++v) f.values[static_cast<std::size_t>(u * r1 + v)] = 1;
  }
  return f;
}

ExpandedKernel expand_kernel(const KernelWeights& w, const TransformMatrix& f) {
  const Shape& ks = w.kernel.shape();
  if (ks.h != ks.w || ks.h % 2 == 0) throw std::invalid_argument("expand_kernel: kernel must be odd square");
  if (f.values.size() != static_cast<std::size_t>(f.r1 * f.r1)) {
    throw std::invalid_argument("expand_kernel: malformed transform matrix");
  }
  const std::size_t r1 = static_cast<std::size_t>(f.r1);
  ExpandedKernel out{Tensor4(Shape{ks.n, ks.c, ks.h * r1, ks.w * r1})};
  for (std::size_t c2 = 0; c2 < ks.n; ++c2) {
    for (std::size_t c1 = 0; c1 < ks.c; ++c1) {
      for (std::size_t i = 0; i < ks.h; ++i) {
        for (std::size_t j = 0; j < ks.w; ++j) {
          const double kij = w.kernel(c2, c1, i, j);
          for (std::size_t u = 0; u < r1; ++u) {
            for (std::size_t v = 0; v < r1; ++v) {
              out.kernel(c2, c1, i * r1 + u, j * r1 + v) =
                  kij * static_cast<double>(f.at(static_cast<int>(u), static_cast<int>(v)));
            }
          }
        }
      }
    }
  }
  return out;
}

Pads pad_for_same(const ConvSpec& spec) {
  spec.validate();
  const int lead = spec.k * spec.r1;
  const int trail = spec.k * spec.r1 + spec.r2 - 1;
  return {lead, lead, trail, trail};
}

Pads pads_for(const ConvSpec& spec) {
  return spec.padding == Padding::Same ? pad_for_same(spec) : Pads{};
}

std::pair<std::size_t, std::size_t> output_hw(const ConvSpec& spec, std::size_t h, std::size_t w) {
  spec.validate();
  return BoxConvGeometry::from_spec(spec).output_hw(h, w);
}

namespace {

void check_input(const Tensor4& a, const KernelWeights& w, const ConvSpec& spec) {
  spec.validate();
  w.check(spec);
  if (a.c() != spec.c_in) {
    throw std::invalid_argument("kconv: input has " + std::to_string(a.c()) + " channels, spec expects " +
                                std::to_string(spec.c_in));
  }
}

Tensor4 match_dtype(Tensor4 out, const Tensor4& a) {
  return a.dtype() == DType::F32 ? out.to_f32() : out;
}

// Zero-padded copy of one (n, c) plane with extra margins.
std::vector<double> padded_plane(const Tensor4& a, std::size_t n, std::size_t c, const Pads& pads,
                                 std::size_t hp, std::size_t wp) {
  std::vector<double> out(hp * wp, 0.0);
  const auto src = a.plane(n, c);
  for (std::size_t y = 0; y < a.h(); ++y) {
    std::copy_n(src.data() + y * a.w(), a.w(), out.data() + (y + pads.top) * wp + pads.left);
  }
  return out;
}

}  // namespace

Tensor4 kconv_forward_expanded(const Tensor4& a, const KernelWeights& w, const ConvSpec& spec) {
  check_input(a, w, spec);
  const auto [oh, ow] = output_hw(spec, a.h(), a.w());
  const ExpandedKernel ek = expand_kernel(w, build_transform(spec.r1, spec.r2));
  const Pads pads = pads_for(spec);
  const std::size_t r1 = static_cast<std::size_t>(spec.r1);
  const std::size_t side = static_cast<std::size_t>(spec.side());
  const std::size_t ext = side * r1;
  // The expanded kernel reaches r1 - r2 rows past the footprint; those taps
  // carry zero weight, so the padded plane just needs room for them.
  const std::size_t hp = oh + ext - 1;
  const std::size_t wp = ow + ext - 1;

  Tensor4 out(Shape{a.n(), spec.c_out, oh, ow});
  parallel_for(a.n() * spec.c_out, [&](std::size_t job) {
    const std::size_t n = job / spec.c_out;
    const std::size_t c2 = job % spec.c_out;
    std::vector<double> acc(oh * ow, 0.0);
    for (std::size_t c1 = 0; c1 < spec.c_in; ++c1) {
      const auto plane = padded_plane(a, n, c1, pads, std::max(hp, a.h() + pads.top),
                                      std::max(wp, a.w() + pads.left));
      const std::size_t pw = std::max(wp, a.w() + pads.left);
      for (std::size_t i = 0; i < side; ++i) {
        for (std::size_t j = 0; j < side; ++j) {
          for (std::size_t u = 0; u < r1; ++u) {
            for (std::size_t v = 0; v < r1; ++v) {
              const double kv = ek.kernel(c2, c1, i * r1 + u, j * r1 + v);
              for (std::size_t p = 0; p < oh; ++p) {
                const double* row = plane.data() + (p + i * r1 + u) * pw + j * r1 + v;
                double* dst = acc.data() + p * ow;
                for (std::size_t q = 0; q < ow; ++q) dst[q] += kv * row[q];
              }
            }
          }
        }
      }
    }
    auto dst = out.plane(n, c2);
    for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = acc[i] + w.bias[c2];
  });
  return match_dtype(std::move(out), a);
}

Tensor4 kconv_forward_sparse(const Tensor4& a, const KernelWeights& w, const ConvSpec& spec) {
  check_input(a, w, spec);
  const auto [oh, ow] = output_hw(spec, a.h(), a.w());
  const Pads pads = pads_for(spec);
  const std::size_t r1 = static_cast<std::size_t>(spec.r1);
  const std::size_t r2 = static_cast<std::size_t>(spec.r2);
  const std::size_t side = static_cast<std::size_t>(spec.side());
  const std::size_t reach = (side - 1) * r1 + r2;
  const std::size_t hp = std::max(oh + reach - 1, a.h() + pads.top);
  const std::size_t wp = std::max(ow + reach - 1, a.w() + pads.left);

  Tensor4 out(Shape{a.n(), spec.c_out, oh, ow});
  parallel_for(a.n() * spec.c_out, [&](std::size_t job) {
    const std::size_t n = job / spec.c_out;
    const std::size_t c2 = job % spec.c_out;
    std::vector<double> acc(oh * ow, 0.0);
    for (std::size_t c1 = 0; c1 < spec.c_in; ++c1) {
      const auto plane = padded_plane(a, n, c1, pads, hp, wp);
      for (std::size_t i = 0; i < side; ++i) {
        for (std::size_t j = 0; j < side; ++j) {
          const double kv = w.kernel(c2, c1, i, j);
          for (std::size_t u = 0; u < r2; ++u) {
            for (std::size_t v = 0; v < r2; ++v) {
              for (std::size_t p = 0; p < oh; ++p) {
                const double* row = plane.data() + (p + i * r1 + u) * wp + j * r1 + v;
                double* dst = acc.data() + p * ow;
                for (std::size_t q = 0; q < ow; ++q) dst[q] += kv * row[q];
              }
            }
          }
        }
      }
    }
    auto dst = out.plane(n, c2);
    for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = acc[i] + w.bias[c2];
  });
  return match_dtype(std::move(out), a);
}

Tensor4 kconv_forward_factored(const Tensor4& a, const KernelWeights& w, const ConvSpec& spec) {
  check_input(a, w, spec);
  return match_dtype(box_conv_forward(a, w.kernel, &w.bias, BoxConvGeometry::from_spec(spec)), a);
}

Tensor4 kconv_forward_sat(const Tensor4& a, const KernelWeights& w, const ConvSpec& spec) {
  check_input(a, w, spec);
  const auto [oh, ow] = output_hw(spec, a.h(), a.w());
  const Pads pads = pads_for(spec);
  const std::size_t hp = a.h() + pads.top + pads.bottom;
  const std::size_t wp = a.w() + pads.left + pads.right;
  const std::size_t r1 = static_cast<std::size_t>(spec.r1);
  const std::size_t r2 = static_cast<std::size_t>(spec.r2);
  const std::size_t side = static_cast<std::size_t>(spec.side());
  const std::size_t hs = hp + 1 - r2;
  const std::size_t ws = wp + 1 - r2;

  Tensor4 out(Shape{a.n(), spec.c_out, oh, ow});
  parallel_for(a.n(), [&](std::size_t n) {
    // Box sums of every channel, read from a summed-area table with a zero
    // leading row and column.
    std::vector<double> boxes(spec.c_in * hs * ws);
    std::vector<double> table((hp + 1) * (wp + 1), 0.0);
    for (std::size_t c = 0; c < spec.c_in; ++c) {
      const auto plane = padded_plane(a, n, c, pads, hp, wp);
      for (std::size_t y = 0; y < hp; ++y) {
        double row = 0.0;
        for (std::size_t x = 0; x < wp; ++x) {
          row += plane[y * wp + x];
          table[(y + 1) * (wp + 1) + x + 1] = table[y * (wp + 1) + x + 1] + row;
        }
      }
      double* bc = boxes.data() + c * hs * ws;
      for (std::size_t y = 0; y < hs; ++y) {
        const double* top = table.data() + y * (wp + 1);
        const double* bottom = table.data() + (y + r2) * (wp + 1);
        for (std::size_t x = 0; x < ws; ++x) {
          bc[y * ws + x] = bottom[x + r2] - top[x + r2] - bottom[x] + top[x];
        }
      }
    }
    for (std::size_t c2 = 0; c2 < spec.c_out; ++c2) {
      std::vector<double> acc(oh * ow, 0.0);
      for (std::size_t c1 = 0; c1 < spec.c_in; ++c1) {
        const double* bc = boxes.data() + c1 * hs * ws;
        for (std::size_t i = 0; i < side; ++i) {
          for (std::size_t j = 0; j < side; ++j) {
            const double kv = w.kernel(c2, c1, i, j);
            for (std::size_t p = 0; p < oh; ++p) {
              const double* src = bc + (p + i * r1) * ws + j * r1;
              double* dst = acc.data() + p * ow;
              for (std::size_t q = 0; q < ow; ++q) dst[q] += kv * src[q];
            }
          }
        }
      }
      auto dst = out.plane(n, c2);
      for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = acc[i] + w.bias[c2];
    }
  });
  return match_dtype(std::move(out), a);
}

ConvGrads kconv_backward(const Tensor4& a, const KernelWeights& w, const ConvSpec& spec,
                         const Tensor4& d_out) {
  check_input(a, w, spec);
  return box_conv_backward(a, w.kernel, BoxConvGeometry::from_spec(spec), d_out, true);
}

namespace {

struct AtrousGeometry {
  long offset;  // input row of tap i=0 relative to output row
  std::size_t oh, ow;
};

AtrousGeometry atrous_geometry(const Tensor4& a, const KernelWeights& w, int rate, Padding padding) {
  if (rate < 1) throw std::invalid_argument("atrous: rate must be >= 1");
  const Shape& ks = w.kernel.shape();
  if (ks.c != a.c()) throw std::invalid_argument("atrous: channel mismatch");
  if (ks.h != ks.w || ks.h % 2 == 0) throw std::invalid_argument("atrous: kernel must be odd square");
  const long k = static_cast<long>(ks.h / 2);
  if (padding == Padding::Same) return {-k * rate, a.h(), a.w()};
  const long span = 2 * k * rate + 1;
  if (static_cast<long>(a.h()) < span || static_cast<long>(a.w()) < span) {
    throw std::invalid_argument("atrous: input smaller than footprint");
  }
  return {0, a.h() - static_cast<std::size_t>(span) + 1, a.w() - static_cast<std::size_t>(span) + 1};
}

}  // namespace

Tensor4 atrous_forward(const Tensor4& a, const KernelWeights& w, int rate, Padding padding) {
  const AtrousGeometry g = atrous_geometry(a, w, rate, padding);
  const Shape& ks = w.kernel.shape();
  const long h = static_cast<long>(a.h());
  const long wd = static_cast<long>(a.w());
  Tensor4 out(Shape{a.n(), ks.n, g.oh, g.ow});
  for (std::size_t n = 0; n < a.n(); ++n) {
    for (std::size_t c2 = 0; c2 < ks.n; ++c2) {
      for (std::size_t p = 0; p < g.oh; ++p) {
        for (std::size_t q = 0; q < g.ow; ++q) {
          double acc = 0.0;
          for (std::size_t c1 = 0; c1 < ks.c; ++c1) {
            for (std::size_t i = 0; i < ks.h; ++i) {
              const long y = static_cast<long>(p) + g.offset + static_cast<long>(i) * rate;
              if (y < 0 || y >= h) continue;
              for (std::size_t j = 0; j < ks.w; ++j) {
                const long x = static_cast<long>(q) + g.offset + static_cast<long>(j) * rate;
                if (x < 0 || x >= wd) continue;
                acc += w.kernel(c2, c1, i, j) * a(n, c1, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
              }
            }
          }
          out(n, c2, p, q) = acc + w.bias[c2];
        }
      }
    }
  }
  return out;
}

ConvGrads atrous_backward(const Tensor4& a, const KernelWeights& w, int rate, const Tensor4& d_out,
                          Padding padding) {
  const AtrousGeometry g = atrous_geometry(a, w, rate, padding);
  const Shape& ks = w.kernel.shape();
  if (d_out.shape() != Shape{a.n(), ks.n, g.oh, g.ow}) {
    throw std::invalid_argument("atrous_backward: gradient shape mismatch");
  }
  const long h = static_cast<long>(a.h());
  const long wd = static_cast<long>(a.w());
  ConvGrads grads{Tensor4(a.shape()), Tensor4(ks), Tensor4(Shape{1, ks.n, 1, 1})};
  for (std::size_t n = 0; n < a.n(); ++n) {
    for (std::size_t c2 = 0; c2 < ks.n; ++c2) {
      for (std::size_t p = 0; p < g.oh; ++p) {
        for (std::size_t q = 0; q < g.ow; ++q) {
          const double go = d_out(n, c2, p, q);
          grads.d_bias[c2] += go;
          for (std::size_t c1 = 0; c1 < ks.c; ++c1) {
            for (std::size_t i = 0; i < ks.h; ++i) {
              const long y = static_cast<long>(p) + g.offset + static_cast<long>(i) * rate;
              if (y < 0 || y >= h) continue;
              for (std::size_t j = 0; j < ks.w; ++j) {
                const long x = static_cast<long>(q) + g.offset + static_cast<long>(j) * rate;
                if (x < 0 || x >= wd) continue;
                const auto yy = static_cast<std::size_t>(y);
                const auto xx = static_cast<std::size_t>(x);
                grads.d_kernel(c2, c1, i, j) += go * a(n, c1, yy, xx);
                grads.d_input(n, c1, yy, xx) += go * w.kernel(c2, c1, i, j);
              }
            }
          }
        }
      }
    }
  }
  return grads;
}

std::size_t atrous_tap_count(int k, int rate) {
  if (k < 0 || rate < 1) throw std::invalid_argument("atrous_tap_count: invalid arguments");
  return static_cast<std::size_t>((2 * k + 1) * (2 * k + 1));
}

double vfr(int r1, int r2) {
  if (r1 < 1 || r2 < 1 || r2 > r1) {
    throw std::invalid_argument("vfr: need 1 <= r2 <= r1, got r1=" + std::to_string(r1) +
                                " r2=" + std::to_string(r2));
  }
  return static_cast<double>(r2 * r2) / static_cast<double>(r1 * r1);
}

double footprint_vfr(int k, int r1, int r2) {
  if (k < 0) throw std::invalid_argument("footprint_vfr: k must be >= 0");
  vfr(r1, r2);
  const double used = static_cast<double>((2 * k + 1) * r2);
  const double span = static_cast<double>(2 * k * r1 + r2);
  return (used * used) / (span * span);
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::DenseExpanded: return "dense-expanded";
    case Strategy::SparseTaps: return "sparse-taps";
    case Strategy::Factored: return "factored";
    case Strategy::Sat: return "sat";
  }
  return "unknown";
}

MacCount mac_count(const ConvSpec& spec, Strategy strategy) {
  spec.validate();
  const std::uint64_t c = spec.c_in;
  const std::uint64_t taps = static_cast<std::uint64_t>(spec.side()) * spec.side();
  const std::uint64_t r1 = static_cast<std::uint64_t>(spec.r1);
  const std::uint64_t r2 = static_cast<std::uint64_t>(spec.r2);
  switch (strategy) {
    case Strategy::DenseExpanded: return {c * taps * r1 * r1, c * taps * r1 * r1};
    case Strategy::SparseTaps: return {c * taps * r2 * r2, c * taps * r2 * r2};
    case Strategy::Factored: return {c * taps, c * taps * (r2 * r2 - 1)};
    case Strategy::Sat: return {c * taps, 3 * c * taps};
  }
  return {};
}

std::uint64_t sat_build_cost(const ConvSpec& spec, std::size_t n, std::size_t h, std::size_t w) {
  const Pads p = pads_for(spec);
  const std::uint64_t padded = (h + p.top + p.bottom) * (w + p.left + p.right);
  return 2 * static_cast<std::uint64_t>(spec.c_in) * padded * n;
}

}  // namespace tkcn
