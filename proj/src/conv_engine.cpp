#include "tkcn/conv_engine.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <stdexcept>
#include <vector>

#include "tkcn/parallel.hpp"

namespace tkcn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct Plan {
  std::size_t c_in, c_out, h, w;
  std::size_t hp, wp;  // padded input
  std::size_t hs, ws;  // box-summed plane
  std::size_t oh, ow;
  std::size_t taps;    // (2k+1)
  std::size_t rows() const { return c_in * taps * taps; }
  std::size_t cols() const { return oh * ow; }
};

Plan make_plan(const Tensor4& x, const Tensor4& kernel, const BoxConvGeometry& g) {
  if (kernel.c() != x.c()) {
    throw std::invalid_argument("conv: input has " + std::to_string(x.c()) +
                                " channels, kernel expects " + std::to_string(kernel.c()));
  }
  const std::size_t taps = static_cast<std::size_t>(2 * g.k + 1);
  if (kernel.h() != taps || kernel.w() != taps) {
    throw std::invalid_argument("conv: kernel spatial size does not match k");
  }
  Plan p{};
  p.c_in = x.c();
  p.c_out = kernel.n();
  p.h = x.h();
  p.w = x.w();
  p.hp = p.h + g.pads.top + g.pads.bottom;
  p.wp = p.w + g.pads.left + g.pads.right;
  p.hs = p.hp + 1 - g.box;
  p.ws = p.wp + 1 - g.box;
  std::tie(p.oh, p.ow) = g.output_hw(p.h, p.w);
  p.taps = taps;
  return p;
}

// Zero-padded copy of one sample, then box sums (separable: rows, then columns).
void box_sums(const Tensor4& x, std::size_t n, const Plan& p, const BoxConvGeometry& g,
              std::vector<double>& padded, std::vector<double>& summed) {
  padded.assign(p.c_in * p.hp * p.wp, 0.0);
  for (std::size_t c = 0; c < p.c_in; ++c) {
    const auto src = x.plane(n, c);
    for (std::size_t y = 0; y < p.h; ++y) {
      std::copy_n(src.data() + y * p.w, p.w,
                  padded.data() + (c * p.hp + y + g.pads.top) * p.wp + g.pads.left);
    }
  }
  if (g.box == 1) {
    summed.swap(padded);
    return;
  }
  const std::size_t box = static_cast<std::size_t>(g.box);
  std::vector<double> rows(p.hp * p.ws);
  summed.assign(p.c_in * p.hs * p.ws, 0.0);
  for (std::size_t c = 0; c < p.c_in; ++c) {
    const double* pc = padded.data() + c * p.hp * p.wp;
    for (std::size_t y = 0; y < p.hp; ++y) {
      for (std::size_t xx = 0; xx < p.ws; ++xx) {
        double s = 0.0;
        for (std::size_t v = 0; v < box; ++v) s += pc[y * p.wp + xx + v];
        rows[y * p.ws + xx] = s;
      }
    }
    double* sc = summed.data() + c * p.hs * p.ws;
    for (std::size_t y = 0; y < p.hs; ++y) {
      for (std::size_t xx = 0; xx < p.ws; ++xx) {
        double s = 0.0;
        for (std::size_t u = 0; u < box; ++u) s += rows[(y + u) * p.ws + xx];
        sc[y * p.ws + xx] = s;
      }
    }
  }
}

// Writes sample n's im2col block into columns [n cols, (n + 1) cols) of a
// rows x (batch cols) matrix.
void gather(const std::vector<double>& summed, const Plan& p, const BoxConvGeometry& g, double* col,
            std::size_t ld, std::size_t n) {
  const std::size_t dil = static_cast<std::size_t>(g.dilation);
  const std::size_t stride = static_cast<std::size_t>(g.stride);
  std::size_t row = 0;
  for (std::size_t c = 0; c < p.c_in; ++c) {
    const double* sc = summed.data() + c * p.hs * p.ws;
    for (std::size_t i = 0; i < p.taps; ++i) {
      for (std::size_t j = 0; j < p.taps; ++j, ++row) {
        double* dst = col + row * ld + n * p.cols();
        for (std::size_t y = 0; y < p.oh; ++y) {
          const double* src = sc + (y * stride + i * dil) * p.ws + j * dil;
          if (stride == 1) {
            std::copy_n(src, p.ow, dst + y * p.ow);
          } else {
            for (std::size_t xx = 0; xx < p.ow; ++xx) dst[y * p.ow + xx] = src[xx * stride];
          }
        }
      }
    }
  }
}

std::vector<double> build_columns(const Tensor4& x, const Plan& p, const BoxConvGeometry& g) {
  const std::size_t ld = x.n() * p.cols();
  std::vector<double> col(p.rows() * ld);
  parallel_for(x.n(), [&](std::size_t n) {
    std::vector<double> padded, summed;
    box_sums(x, n, p, g, padded, summed);
    gather(summed, p, g, col.data(), ld, n);
  });
  return col;
}

// Transpose of gather followed by the transpose of box_sums, cropped to the input.
void scatter_to_input(const double* dcol, std::size_t ld, const Plan& p, const BoxConvGeometry& g,
                      Tensor4& dx, std::size_t n) {
  const std::size_t dil = static_cast<std::size_t>(g.dilation);
  const std::size_t stride = static_cast<std::size_t>(g.stride);
  const std::size_t box = static_cast<std::size_t>(g.box);
  std::vector<double> ds(p.hs * p.ws);
  std::vector<double> drows(p.hp * p.ws);
  std::vector<double> dp(p.hp * p.wp);
  std::size_t row = 0;
  for (std::size_t c = 0; c < p.c_in; ++c) {
    std::fill(ds.begin(), ds.end(), 0.0);
    for (std::size_t i = 0; i < p.taps; ++i) {
      for (std::size_t j = 0; j < p.taps; ++j, ++row) {
        const double* src = dcol + row * ld + n * p.cols();
        for (std::size_t y = 0; y < p.oh; ++y) {
          double* dst = ds.data() + (y * stride + i * dil) * p.ws + j * dil;
          const double* s = src + y * p.ow;
          if (stride == 1) {
            for (std::size_t xx = 0; xx < p.ow; ++xx) dst[xx] += s[xx];
          } else {
            for (std::size_t xx = 0; xx < p.ow; ++xx) dst[xx * stride] += s[xx];
          }
        }
      }
    }
    const std::vector<double>* plane = &ds;
    if (box > 1) {
      std::fill(drows.begin(), drows.end(), 0.0);
      for (std::size_t y = 0; y < p.hs; ++y) {
        for (std::size_t u = 0; u < box; ++u) {
          for (std::size_t xx = 0; xx < p.ws; ++xx) drows[(y + u) * p.ws + xx] += ds[y * p.ws + xx];
        }
      }
      std::fill(dp.begin(), dp.end(), 0.0);
      for (std::size_t y = 0; y < p.hp; ++y) {
        for (std::size_t xx = 0; xx < p.ws; ++xx) {
          const double v = drows[y * p.ws + xx];
          for (std::size_t s = 0; s < box; ++s) dp[y * p.wp + xx + s] += v;
        }
      }
      plane = &dp;
    }
    auto out = dx.plane(n, c);
    for (std::size_t y = 0; y < p.h; ++y) {
      std::copy_n(plane->data() + (y + g.pads.top) * p.wp + g.pads.left, p.w, out.data() + y * p.w);
    }
  }
}

}  // namespace

BoxConvGeometry BoxConvGeometry::from_spec(const ConvSpec& spec) {
  return BoxConvGeometry{spec.k, spec.r1, spec.r2, 1, pads_for(spec)};
}

std::pair<std::size_t, std::size_t> BoxConvGeometry::output_hw(std::size_t h, std::size_t w) const {
  const long footprint = 2L * k * dilation + box;
  const long hp = static_cast<long>(h) + pads.top + pads.bottom;
  const long wp = static_cast<long>(w) + pads.left + pads.right;
  if (hp < footprint || wp < footprint) {
    throw std::invalid_argument("conv: input " + std::to_string(h) + "x" + std::to_string(w) +
                                " is smaller than the " + std::to_string(footprint) + "x" +
                                std::to_string(footprint) + " footprint");
  }
  return {static_cast<std::size_t>((hp - footprint) / stride + 1),
          static_cast<std::size_t>((wp - footprint) / stride + 1)};
}

Tensor4 box_conv_forward(const Tensor4& x, const Tensor4& kernel, const Tensor4* bias,
                         const BoxConvGeometry& g, ConvColumns* keep) {
  const Plan p = make_plan(x, kernel, g);
  const std::size_t batch = x.n();
  const std::size_t ld = batch * p.cols();
  std::vector<double> col = build_columns(x, p, g);
  // One GEMM over the whole batch; its accumulation order depends only on shapes.
  const ConstMapMat kmat(kernel.raw(), static_cast<Eigen::Index>(p.c_out),
                         static_cast<Eigen::Index>(p.rows()));
  const ConstMapMat cmat(col.data(), static_cast<Eigen::Index>(p.rows()), static_cast<Eigen::Index>(ld));
  RowMat prod(static_cast<Eigen::Index>(p.c_out), static_cast<Eigen::Index>(ld));
  prod.noalias() = kmat * cmat;

  Tensor4 out(Shape{batch, p.c_out, p.oh, p.ow});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < p.c_out; ++c) {
      const double* src = prod.data() + c * ld + n * p.cols();
      auto dst = out.plane(n, c);
      const double b = bias != nullptr ? (*bias)[c] : 0.0;
      if (bias != nullptr) {
        for (std::size_t i = 0; i < p.cols(); ++i) dst[i] = src[i] + b;
      } else {
        std::copy_n(src, p.cols(), dst.data());
      }
    }
  }
  if (keep != nullptr) keep->values = std::move(col);
  return out;
}

ConvGrads box_conv_backward(const Tensor4& x, const Tensor4& kernel, const BoxConvGeometry& g,
                            const Tensor4& d_out, bool need_input, const ConvColumns* cols) {
  const Plan p = make_plan(x, kernel, g);
  const std::size_t batch = x.n();
  if (d_out.shape() != Shape{batch, p.c_out, p.oh, p.ow}) {
    throw std::invalid_argument("conv backward: gradient shape " + to_string(d_out.shape()) +
                                " does not match output " +
                                to_string(Shape{batch, p.c_out, p.oh, p.ow}));
  }
  ConvGrads grads;
  grads.d_input = need_input ? Tensor4(x.shape()) : Tensor4();
  grads.d_kernel = Tensor4(kernel.shape());
  grads.d_bias = Tensor4(Shape{1, p.c_out, 1, 1});

  const std::size_t ld = batch * p.cols();
  std::vector<double> built;
  if (cols != nullptr && cols->values.size() != p.rows() * ld) {
    throw std::invalid_argument("conv backward: cached columns do not match the input");
  }
  if (cols == nullptr) built = build_columns(x, p, g);
  const double* col = cols != nullptr ? cols->values.data() : built.data();
  RowMat dy(static_cast<Eigen::Index>(p.c_out), static_cast<Eigen::Index>(ld));
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < p.c_out; ++c) {
      const auto src = d_out.plane(n, c);
      std::copy(src.begin(), src.end(), dy.data() + c * ld + n * p.cols());
    }
  }

  const ConstMapMat kmat(kernel.raw(), static_cast<Eigen::Index>(p.c_out),
                         static_cast<Eigen::Index>(p.rows()));
  const ConstMapMat cmat(col, static_cast<Eigen::Index>(p.rows()), static_cast<Eigen::Index>(ld));
  MapMat dk(grads.d_kernel.raw(), static_cast<Eigen::Index>(p.c_out), static_cast<Eigen::Index>(p.rows()));
  dk.noalias() = dy * cmat.transpose();
  for (std::size_t c = 0; c < p.c_out; ++c) grads.d_bias[c] = dy.row(static_cast<Eigen::Index>(c)).sum();

  if (need_input) {
    if (built.empty()) built.resize(p.rows() * ld);
    // The column matrix is no longer needed; its buffer holds the column gradient.
    MapMat dc(built.data(), static_cast<Eigen::Index>(p.rows()), static_cast<Eigen::Index>(ld));
    dc.noalias() = kmat.transpose() * dy;
    parallel_for(batch, [&](std::size_t n) { scatter_to_input(built.data(), ld, p, g, grads.d_input, n); });
  }
  return grads;
}

}  // namespace tkcn
