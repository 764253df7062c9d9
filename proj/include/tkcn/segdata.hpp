#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tkcn/sample.hpp"

namespace tkcn {

enum ShapeClass : std::int32_t { kBackground = 0, kCircle = 1, kRectangle = 2, kTriangle = 3 };

struct SynthOptions {
  std::uint64_t seed = 7;
  std::size_t count = 1;
  std::size_t size = 64;
  std::size_t num_classes = 4;
  std::size_t first_index = 0;  // samples are indexed; index i draws from stream i
  int ignore_index = kDefaultIgnoreIndex;
};

struct Dataset {
  std::vector<SegSample> samples;
  std::uint64_t seed = 0;
  std::size_t size = 0;
  std::size_t num_classes = 0;
  std::size_t first_index = 0;
  int ignore_index = kDefaultIgnoreIndex;
};

/// Textured background plus 1-4 non-overlapping circles, rectangles and
/// triangles whose radii span 5%-40% of the side. The innermost pixel ring
/// of each shape is labelled ignore_index. Sample i depends only on
/// (seed, i, size), so datasets are prefix-stable.
Dataset synth_generate(const SynthOptions& opts);
SegSample synth_sample(std::uint64_t seed, std::size_t index, std::size_t size, int ignore_index);

/// Writes manifest.json plus image_XXXXX.tkt / labels_XXXXX.tkt per sample.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// SHA-256 (hex) over the encoded image and label tensors of every sample in order.
std::string dataset_sha256(const Dataset& ds);
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);

}  // namespace tkcn
