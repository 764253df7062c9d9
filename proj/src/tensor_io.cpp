#include "tkcn/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace tkcn {

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

bool mul_overflows(std::uint64_t a, std::uint64_t b, std::uint64_t& out) {
  return __builtin_mul_overflow(a, b, &out);
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor4& t) {
  const std::size_t elem = t.dtype() == DType::F64 ? 8 : 4;
  std::vector<std::uint8_t> out;
  out.reserve(kTensorHeaderBytes + t.size() * elem);
  out.insert(out.end(), std::begin(kTensorMagic), std::end(kTensorMagic));
  out.push_back(static_cast<std::uint8_t>(t.dtype()));
  out.push_back(4);
  out.insert(out.end(), 6, 0);
  put_u64(out, t.n());
  put_u64(out, t.c());
  put_u64(out, t.h());
  put_u64(out, t.w());
  for (double v : t.data()) {
    if (t.dtype() == DType::F64) {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    } else {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  return out;
}

Tensor4 decode_tensor(const std::vector<std::uint8_t>& bytes) {
  using K = TensorIoError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kTensorMagic, 4) != 0) {
    throw TensorIoError(K::BadMagic, "tensor file: bad magic (expected \"TKT1\")");
  }
  if (bytes.size() < kTensorHeaderBytes) {
    throw TensorIoError(K::Truncated, "tensor file: truncated header (" +
                                          std::to_string(bytes.size()) + " bytes)");
  }
  const std::uint8_t tag = bytes[4];
  if (tag != 1 && tag != 2) {
    throw TensorIoError(K::BadDtype, "tensor file: unknown dtype tag " + std::to_string(tag));
  }
  if (bytes[5] != 4) {
    throw TensorIoError(K::BadRank, "tensor file: rank " + std::to_string(bytes[5]) + " != 4");
  }
  for (int i = 6; i < 12; ++i) {
    if (bytes[i] != 0) throw TensorIoError(K::BadReserved, "tensor file: reserved bytes not zero");
  }
  const DType dtype = static_cast<DType>(tag);
  Shape shape{get_u64(&bytes[12]), get_u64(&bytes[20]), get_u64(&bytes[28]), get_u64(&bytes[36])};
  const std::uint64_t elem = dtype == DType::F64 ? 8 : 4;
  std::uint64_t count = 1;
  std::uint64_t payload = 0;
  if (mul_overflows(shape.n, shape.c, count) || mul_overflows(count, shape.h, count) ||
      mul_overflows(count, shape.w, count) || mul_overflows(count, elem, payload) ||
      payload > std::numeric_limits<std::uint64_t>::max() - kTensorHeaderBytes ||
      count > std::numeric_limits<std::size_t>::max() / 8) {
    throw TensorIoError(K::DimsOverflow, "tensor file: dims overflow " + to_string(shape));
  }
  const std::uint64_t expected = kTensorHeaderBytes + payload;
  if (bytes.size() < expected) {
    throw TensorIoError(K::Truncated, "tensor file: truncated payload (" +
                                          std::to_string(bytes.size()) + " of " +
                                          std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) {
    throw TensorIoError(K::TrailingData, "tensor file: " + std::to_string(bytes.size() - expected) +
                                             " trailing bytes");
  }
  std::vector<double> data(count);
  const std::uint8_t* p = bytes.data() + kTensorHeaderBytes;
  for (std::uint64_t i = 0; i < count; ++i) {
    if (dtype == DType::F64) {
      data[i] = std::bit_cast<double>(get_u64(p + 8 * i));
    } else {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t{p[4 * i + b]} << (8 * b);
      data[i] = std::bit_cast<float>(bits);
    }
  }
  return Tensor4(shape, std::move(data), dtype);
}

void write_tensor(const std::filesystem::path& path, const Tensor4& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw TensorIoError(TensorIoError::Kind::Io, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw TensorIoError(TensorIoError::Kind::Io, "write failed: " + path.string());
}

Tensor4 read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TensorIoError(TensorIoError::Kind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

}  // namespace tkcn
