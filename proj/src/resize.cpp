#include "tkcn/resize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace tkcn {

namespace {

struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;  // weight of hi
};

std::vector<Tap> taps_for(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double s = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(s));
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[d] = {lo, hi, s - static_cast<double>(lo)};
  }
  return taps;
}

std::size_t nearest_source(std::size_t d, std::size_t in, std::size_t out) {
  const double s = (static_cast<double>(d) + 0.5) * static_cast<double>(in) / static_cast<double>(out);
  return std::min(static_cast<std::size_t>(std::floor(s)), in - 1);
}

}  // namespace

Tensor4 bilinear_resize(const Tensor4& x, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("bilinear_resize: output size must be >= 1");
  if (out_h == x.h() && out_w == x.w()) return x;
  const auto ty = taps_for(x.h(), out_h);
  const auto tx = taps_for(x.w(), out_w);
  Tensor4 out(Shape{x.n(), x.c(), out_h, out_w});
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const auto src = x.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t y = 0; y < out_h; ++y) {
        const Tap& a = ty[y];
        const double* r0 = src.data() + a.lo * x.w();
        const double* r1 = src.data() + a.hi * x.w();
        for (std::size_t xx = 0; xx < out_w; ++xx) {
          const Tap& b = tx[xx];
          const double top = (1.0 - b.frac) * r0[b.lo] + b.frac * r0[b.hi];
          const double bottom = (1.0 - b.frac) * r1[b.lo] + b.frac * r1[b.hi];
          dst[y * out_w + xx] = (1.0 - a.frac) * top + a.frac * bottom;
        }
      }
    }
  }
  return out;
}

Tensor4 bilinear_resize_backward(const Tensor4& d_out, std::size_t in_h, std::size_t in_w) {
  if (in_h == 0 || in_w == 0) throw std::invalid_argument("bilinear_resize_backward: input size must be >= 1");
  if (in_h == d_out.h() && in_w == d_out.w()) return d_out;
  const std::size_t out_h = d_out.h();
  const std::size_t out_w = d_out.w();
  const auto ty = taps_for(in_h, out_h);
  const auto tx = taps_for(in_w, out_w);
  Tensor4 dx(Shape{d_out.n(), d_out.c(), in_h, in_w});
  for (std::size_t n = 0; n < d_out.n(); ++n) {
    for (std::size_t c = 0; c < d_out.c(); ++c) {
      const auto g = d_out.plane(n, c);
      auto dst = dx.plane(n, c);
      for (std::size_t y = 0; y < out_h; ++y) {
        const Tap& a = ty[y];
        for (std::size_t xx = 0; xx < out_w; ++xx) {
          const Tap& b = tx[xx];
          const double v = g[y * out_w + xx];
          dst[a.lo * in_w + b.lo] += (1.0 - a.frac) * (1.0 - b.frac) * v;
          dst[a.lo * in_w + b.hi] += (1.0 - a.frac) * b.frac * v;
          dst[a.hi * in_w + b.lo] += a.frac * (1.0 - b.frac) * v;
          dst[a.hi * in_w + b.hi] += a.frac * b.frac * v;
        }
      }
    }
  }
  return dx;
}

LabelMap resize_labels_nearest(const LabelMap& labels, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("resize_labels_nearest: output size must be >= 1");
  LabelMap out(labels.n, out_h, out_w);
  for (std::size_t n = 0; n < labels.n; ++n) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const std::size_t sy = nearest_source(y, labels.h, out_h);
      for (std::size_t x = 0; x < out_w; ++x) {
        out(n, y, x) = labels(n, sy, nearest_source(x, labels.w, out_w));
      }
    }
  }
  return out;
}

Tensor4 mirror_horizontal(const Tensor4& x) {
  Tensor4 out(x.shape(), 0.0, x.dtype());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      for (std::size_t y = 0; y < x.h(); ++y) {
        for (std::size_t xx = 0; xx < x.w(); ++xx) out(n, c, y, xx) = x(n, c, y, x.w() - 1 - xx);
      }
    }
  }
  return out;
}

LabelMap mirror_horizontal(const LabelMap& labels) {
  LabelMap out(labels.n, labels.h, labels.w);
  for (std::size_t n = 0; n < labels.n; ++n) {
    for (std::size_t y = 0; y < labels.h; ++y) {
      for (std::size_t x = 0; x < labels.w; ++x) out(n, y, x) = labels(n, y, labels.w - 1 - x);
    }
  }
  return out;
}

SegSample augment_with(const SegSample& sample, bool mirror, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("augment_with: scale must be > 0");
  SegSample out = mirror ? SegSample{mirror_horizontal(sample.image), mirror_horizontal(sample.labels)} : sample;
  const auto oh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(sample.image.h() * scale)));
  const auto ow = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(sample.image.w() * scale)));
  if (oh == sample.image.h() && ow == sample.image.w()) return out;
  return {bilinear_resize(out.image, oh, ow), resize_labels_nearest(out.labels, oh, ow)};
}

SegSample augment(const SegSample& sample, Rng& rng) {
  const bool mirror = rng.bernoulli(0.5);
  const double scale = rng.uniform(0.5, 2.0);
  return augment_with(sample, mirror, scale);
}

SegSample crop_or_pad(const SegSample& sample, std::size_t size, Rng& rng, int ignore_index) {
  const std::size_t h = sample.image.h();
  const std::size_t w = sample.image.w();
  // Source window start (when larger) or destination offset (when smaller).
  const std::size_t sy = h > size ? rng.below(h - size + 1) : 0;
  const std::size_t sx = w > size ? rng.below(w - size + 1) : 0;
  const std::size_t dy = h < size ? rng.below(size - h + 1) : 0;
  const std::size_t dx = w < size ? rng.below(size - w + 1) : 0;
  SegSample out{Tensor4(Shape{1, sample.image.c(), size, size}), LabelMap(1, size, size, ignore_index)};
  const std::size_t ch = std::min(h, size);
  const std::size_t cw = std::min(w, size);
  for (std::size_t y = 0; y < ch; ++y) {
    for (std::size_t x = 0; x < cw; ++x) {
      for (std::size_t c = 0; c < sample.image.c(); ++c) {
        out.image(0, c, y + dy, x + dx) = sample.image(0, c, y + sy, x + sx);
      }
      out.labels(0, y + dy, x + dx) = sample.labels(0, y + sy, x + sx);
    }
  }
  return out;
}

}  // namespace tkcn
