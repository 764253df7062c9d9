#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tkcn {

enum class DType : std::uint8_t { F64 = 1, F32 = 2 };

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Dense NCHW tensor. Storage is always double; an F32 tensor holds values
/// that are exactly representable as float and is written as float on disk.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape shape, double fill = 0.0, DType dtype = DType::F64);
  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : Tensor4(Shape{n, c, h, w}, fill) {}
  Tensor4(Shape shape, std::vector<double> data, DType dtype = DType::F64);

  const Shape& shape() const { return shape_; }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  DType dtype() const { return dtype_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  double operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  // Contiguous (h, w) plane for one (n, c) pair.
  std::span<double> plane(std::size_t n, std::size_t c) {
    return {data_.data() + index(n, c, 0, 0), shape_.h * shape_.w};
  }
  std::span<const double> plane(std::size_t n, std::size_t c) const {
    return {data_.data() + index(n, c, 0, 0), shape_.h * shape_.w};
  }

  /// Copy rounded to float precision, tagged F32.
  Tensor4 to_f32() const;
  Tensor4 to_f64() const;

  void fill(double v);
  bool all_finite() const;
  double sum() const;

  bool operator==(const Tensor4& o) const {
    return shape_ == o.shape_ && dtype_ == o.dtype_ && data_ == o.data_;
  }

 private:
  Shape shape_;
  DType dtype_ = DType::F64;
  std::vector<double> data_;
};

/// Concatenate along channels. All parts must agree on n, h, w and dtype.
Tensor4 concat_channels(std::span<const Tensor4> parts);
Tensor4 concat_channels(std::initializer_list<Tensor4> parts);

/// Channels [begin, begin + count) of t.
Tensor4 slice_channels(const Tensor4& t, std::size_t begin, std::size_t count);

/// One batch element as an (1, c, h, w) tensor.
Tensor4 slice_batch(const Tensor4& t, std::size_t index);

struct CloseReport {
  bool close = true;
  double max_abs_diff = 0.0;
  std::size_t worst_index = 0;
};

/// True iff |a_i - b_i| <= atol + rtol * |b_i| for every i.
CloseReport allclose(const Tensor4& a, const Tensor4& b, double rtol, double atol);

double max_abs_diff(const Tensor4& a, const Tensor4& b);

// Elementwise helpers used by tests and the training loop.
Tensor4 axpby(double alpha, const Tensor4& x, double beta, const Tensor4& y);
Tensor4 scaled(const Tensor4& x, double alpha);
double dot(const Tensor4& a, const Tensor4& b);

}  // namespace tkcn
