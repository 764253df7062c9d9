#include "tkcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tkcn {

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << "(" << s.n << "," << s.c << "," << s.h << "," << s.w << ")";
  return os.str();
}

Tensor4::Tensor4(Shape shape, double fill, DType dtype)
    : shape_(shape), dtype_(dtype), data_(shape.numel(), fill) {
  if (dtype_ == DType::F32) {
    for (auto& v : data_) v = static_cast<float>(v);
  }
}

Tensor4::Tensor4(Shape shape, std::vector<double> data, DType dtype)
    : shape_(shape), dtype_(dtype), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw std::invalid_argument("Tensor4: data length " + std::to_string(data_.size()) +
                                " does not match shape " + to_string(shape_));
  }
  if (dtype_ == DType::F32) {
    for (auto& v : data_) v = static_cast<float>(v);
  }
}

Tensor4 Tensor4::to_f32() const {
  Tensor4 out = *this;
  out.dtype_ = DType::F32;
  for (auto& v : out.data_) v = static_cast<float>(v);
  return out;
}

Tensor4 Tensor4::to_f64() const {
  Tensor4 out = *this;
  out.dtype_ = DType::F64;
  return out;
}

void Tensor4::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor4::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor4::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

Tensor4 concat_channels(std::span<const Tensor4> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no parts");
  const Shape& first = parts[0].shape();
  std::size_t channels = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w ||
        parts[i].dtype() != parts[0].dtype()) {
      throw std::invalid_argument("concat_channels: part " + std::to_string(i) + " has shape " +
                                  to_string(s) + ", expected n,h,w of " + to_string(first));
    }
    channels += s.c;
  }
  Tensor4 out(Shape{first.n, channels, first.h, first.w}, 0.0, parts[0].dtype());
  const std::size_t hw = first.h * first.w;
  for (std::size_t n = 0; n < first.n; ++n) {
    double* dst = out.raw() + n * channels * hw;
    for (const auto& p : parts) {
      const double* src = p.raw() + n * p.c() * hw;
      dst = std::copy(src, src + p.c() * hw, dst);
    }
  }
  return out;
}

Tensor4 concat_channels(std::initializer_list<Tensor4> parts) {
  return concat_channels(std::span<const Tensor4>(parts.begin(), parts.size()));
}

Tensor4 slice_channels(const Tensor4& t, std::size_t begin, std::size_t count) {
  if (begin + count > t.c()) {
    throw std::out_of_range("slice_channels: [" + std::to_string(begin) + ", " +
                            std::to_string(begin + count) + ") exceeds " +
                            std::to_string(t.c()) + " channels");
  }
  Tensor4 out(Shape{t.n(), count, t.h(), t.w()}, 0.0, t.dtype());
  const std::size_t hw = t.h() * t.w();
  for (std::size_t n = 0; n < t.n(); ++n) {
    const double* src = t.raw() + t.index(n, begin, 0, 0);
    std::copy(src, src + count * hw, out.raw() + out.index(n, 0, 0, 0));
  }
  return out;
}

Tensor4 slice_batch(const Tensor4& t, std::size_t index) {
  if (index >= t.n()) throw std::out_of_range("slice_batch: index out of range");
  Tensor4 out(Shape{1, t.c(), t.h(), t.w()}, 0.0, t.dtype());
  const std::size_t chw = t.c() * t.h() * t.w();
  const double* src = t.raw() + index * chw;
  std::copy(src, src + chw, out.raw());
  return out;
}

CloseReport allclose(const Tensor4& a, const Tensor4& b, double rtol, double atol) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("allclose: shape mismatch " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
  CloseReport r;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    if (d > r.max_abs_diff || std::isnan(d)) {
      r.max_abs_diff = d;
      r.worst_index = i;
    }
    if (!(d <= atol + rtol * std::abs(b[i]))) r.close = false;
  }
  return r;
}

double max_abs_diff(const Tensor4& a, const Tensor4& b) { return allclose(a, b, 0, 0).max_abs_diff; }

Tensor4 axpby(double alpha, const Tensor4& x, double beta, const Tensor4& y) {
  if (x.shape() != y.shape()) throw std::invalid_argument("axpby: shape mismatch");
  Tensor4 out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = alpha * x[i] + beta * y[i];
  return out;
}

Tensor4 scaled(const Tensor4& x, double alpha) {
  Tensor4 out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = alpha * x[i];
  return out;
}

double dot(const Tensor4& a, const Tensor4& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace tkcn
