#include "tkcn/batchnorm.hpp"

#include <cmath>
#include <stdexcept>

namespace tkcn {

BatchNormState BatchNormState::identity(std::size_t channels) {
  const Shape s{1, channels, 1, 1};
  return {Tensor4(s, 1.0), Tensor4(s, 0.0), Tensor4(s, 0.0), Tensor4(s, 1.0)};
}

namespace {

// `running` is updated in train mode and must be non-null there.
Tensor4 forward_impl(const Tensor4& x, const BatchNormState& state, Mode mode, BatchNormCache* cache,
                     BatchNormState* running) {
  const std::size_t channels = x.c();
  if (state.channels() != channels) {
    throw std::invalid_argument("batchnorm: input has " + std::to_string(channels) +
                                " channels, state has " + std::to_string(state.channels()));
  }
  const std::size_t count = x.n() * x.h() * x.w();
  if (mode == Mode::Train && count <= 1) {
    throw std::invalid_argument("batchnorm: train mode needs more than one value per channel");
  }
  Tensor4 mean(Shape{1, channels, 1, 1});
  Tensor4 inv_std(Shape{1, channels, 1, 1});
  const std::size_t plane = x.h() * x.w();
  if (mode == Mode::Train) {
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < x.n(); ++n) {
        const double* src = x.raw() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += src[i];
      }
      const double mu = s / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < x.n(); ++n) {
        const double* src = x.raw() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (src[i] - mu) * (src[i] - mu);
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + state.epsilon);
      const double unbiased = sq / static_cast<double>(count - 1);
      running->running_mean[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mu;
      running->running_var[c] = state.momentum * state.running_var[c] + (1.0 - state.momentum) * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.epsilon);
    }
  }

  Tensor4 y(x.shape());
  Tensor4 normalized(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = (n * channels + c) * plane;
      const double* src = x.raw() + off;
      double* xh = normalized.raw() + off;
      double* dst = y.raw() + off;
      const double mu = mean[c];
      const double is = inv_std[c];
      const double gm = state.gamma[c];
      const double bt = state.beta[c];
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = (src[i] - mu) * is;
        xh[i] = v;
        dst[i] = gm * v + bt;
      }
    }
  }
  if (cache != nullptr) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

}  // namespace

Tensor4 batchnorm_forward(const Tensor4& x, BatchNormState& state, Mode mode, BatchNormCache* cache) {
  return forward_impl(x, state, mode, cache, &state);
}

Tensor4 batchnorm_forward(const Tensor4& x, const BatchNormState& state, BatchNormCache* cache) {
  return forward_impl(x, state, Mode::Eval, cache, nullptr);
}

BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const BatchNormState& state,
                                  const Tensor4& d_out) {
  const Tensor4& xh = cache.normalized;
  if (d_out.shape() != xh.shape()) {
    throw std::invalid_argument("batchnorm_backward: gradient shape " + to_string(d_out.shape()) +
                                " does not match " + to_string(xh.shape()));
  }
  const std::size_t channels = xh.c();
  const double count = static_cast<double>(xh.n() * xh.h() * xh.w());
  BatchNormGrads g{Tensor4(xh.shape()), Tensor4(Shape{1, channels, 1, 1}), Tensor4(Shape{1, channels, 1, 1})};
  const std::size_t plane = xh.h() * xh.w();
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xh = 0.0;
    for (std::size_t n = 0; n < xh.n(); ++n) {
      const std::size_t off = (n * channels + c) * plane;
      const double* dy = d_out.raw() + off;
      const double* x = xh.raw() + off;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xh += dy[i] * x[i];
      }
    }
    g.d_beta[c] = sum_dy;
    g.d_gamma[c] = sum_dy_xh;
    const double scale = state.gamma[c] * cache.inv_std[c];
    const double mean_dy = sum_dy / count;
    const double mean_dy_xh = sum_dy_xh / count;
    for (std::size_t n = 0; n < xh.n(); ++n) {
      const std::size_t off = (n * channels + c) * plane;
      const double* dy = d_out.raw() + off;
      const double* x = xh.raw() + off;
      double* dx = g.d_input.raw() + off;
      if (cache.mode == Mode::Train) {
        for (std::size_t i = 0; i < plane; ++i) dx[i] = scale * (dy[i] - mean_dy - x[i] * mean_dy_xh);
      } else {
        for (std::size_t i = 0; i < plane; ++i) dx[i] = scale * dy[i];
      }
    }
  }
  return g;
}

Tensor4 relu(const Tensor4& x) {
  Tensor4 y(x.shape());
  const double* src = x.raw();
  double* dst = y.raw();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
  return y;
}

Tensor4 relu_backward(const Tensor4& relu_out, const Tensor4& d_out) {
  if (relu_out.shape() != d_out.shape()) throw std::invalid_argument("relu_backward: shape mismatch");
  Tensor4 dx(d_out.shape());
  const double* r = relu_out.raw();
  const double* g = d_out.raw();
  double* dst = dx.raw();
  for (std::size_t i = 0; i < dx.size(); ++i) dst[i] = r[i] > 0.0 ? g[i] : 0.0;
  return dx;
}

}  // namespace tkcn
