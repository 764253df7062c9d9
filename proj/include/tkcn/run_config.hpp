#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tkcn/miniseg.hpp"
#include "tkcn/tfa.hpp"
#include "tkcn/train.hpp"

namespace tkcn {

/// Invalid or unknown configuration. The CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ChannelPair {
  std::size_t c_in = 3;
  std::size_t c_out = 4;
};

/// Operator grid shared by equiv and bench.
struct ConvGrid {
  std::vector<int> k = {0, 1, 2};
  std::vector<Factors> factors = {{1, 1}, {2, 1}, {2, 2}, {3, 2}, {4, 3}, {6, 5}, {10, 7}};
  std::vector<ChannelPair> channels = {{3, 4}};
  std::vector<std::size_t> sizes = {16};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::size_t batch = 2;
};

struct VfrTable {
  int r1_min = 1;
  int r1_max = 16;
  std::vector<int> r2 = {1, 2, 3, 5, 7};
  int k = 1;  // footprint column only
};

struct BenchGrid {
  std::vector<int> k = {1};
  std::vector<Factors> factors = {{10, 7}};
  std::vector<std::size_t> channels = {16};
  std::vector<std::size_t> sizes = {64};
  std::size_t batch = 1;
  std::size_t repeats = 5;
};

struct DataConfig {
  std::uint64_t seed = 7;
  std::size_t count = 2000;
  std::size_t val_count = 200;
  std::size_t size = 64;
  std::size_t num_classes = 4;
};

struct EvalConfig {
  std::vector<double> scales = {1.0};
  bool flip = false;
};

/// One JSON document with sections conv, vfr, bench, tfa, model, train, data
/// and eval. Every section and key is optional; unknown keys are errors.
struct RunConfig {
  ConvGrid conv;
  VfrTable vfr;
  BenchGrid bench;
  MiniSegConfig model;  // model.head holds the tfa section
  TrainConfig train;
  std::size_t epochs = 20;  // train.max_iter is derived from epochs when omitted
  bool max_iter_given = false;
  DataConfig data;
  EvalConfig eval;

  void validate() const;
  /// Iterations per epoch for the configured data and batch size.
  std::size_t iters_per_epoch() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical JSON of every field, defaults included.
std::string dump_run_config(const RunConfig& cfg);
/// Human-readable listing of keys and defaults for --help.
std::string run_config_help();

}  // namespace tkcn
