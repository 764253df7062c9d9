#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tkcn/tensor.hpp"

namespace tkcn {

// On-disk layout, little-endian throughout:
//   "TKT1" | u8 dtype (1=f64, 2=f32) | u8 rank (4) | 6 zero bytes
//   | u64 n | u64 c | u64 h | u64 w | payload in N,C,H,W order
inline constexpr char kTensorMagic[4] = {'T', 'K', 'T', '1'};
inline constexpr std::size_t kTensorHeaderBytes = 4 + 1 + 1 + 6 + 4 * 8;

class TensorIoError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, BadDtype, BadRank, BadReserved, Truncated, DimsOverflow, TrailingData };
  TensorIoError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::vector<std::uint8_t> encode_tensor(const Tensor4& t);
Tensor4 decode_tensor(const std::vector<std::uint8_t>& bytes);

void write_tensor(const std::filesystem::path& path, const Tensor4& t);
Tensor4 read_tensor(const std::filesystem::path& path);

}  // namespace tkcn
