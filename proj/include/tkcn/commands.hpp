#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tkcn/run_config.hpp"

namespace tkcn {

/// Process exit codes shared by every subcommand.
enum ExitCode : int { kExitOk = 0, kExitVerificationFailed = 1, kExitUsage = 2 };

struct EquivOptions {
  bool inject_fault = false;  // perturbs one kernel weight on the factored path only
};

/// Expanded vs factored vs SAT vs sparse-taps agreement (atol 1e-9) plus the
/// atrous degeneration check for r2 == 1 (atol 1e-12) over the conv grid.
int cmd_equiv(const RunConfig& cfg, const EquivOptions& opts, std::ostream& out);

/// VFR table: r1, r2, vfr, atrous_vfr (1/r1^2), footprint_vfr. Cells with r2 > r1 are skipped.
int cmd_vfr(const RunConfig& cfg, bool csv, std::ostream& out);

struct BenchRow {
  int k = 0;
  int r1 = 1;
  int r2 = 1;
  std::size_t channels = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::string strategy;
  std::uint64_t mac_mults = 0;
  std::uint64_t mac_adds = 0;
  std::uint64_t sat_build_adds = 0;  // nonzero on sat rows only
  double median_ms = 0.0;
};

/// Times every strategy (1 warm-up, then bench.repeats runs) after checking
/// it against the expanded path. Throws std::runtime_error on a mismatch.
std::vector<BenchRow> run_bench(const BenchGrid& grid, std::uint64_t seed);
std::string bench_csv(const std::vector<BenchRow>& rows);
int cmd_bench(const RunConfig& cfg, std::uint64_t seed, std::ostream& out);

/// Empty targets runs all of them. Unknown names are usage errors (exit 2).
int cmd_gradcheck(const std::vector<std::string>& targets, std::uint64_t seed, std::ostream& out);

/// Writes train/ and val/ datasets under out_dir and prints their SHA-256.
/// When golden_dir holds dataset_sha256.json with a matching entry, a
/// mismatch is a verification failure.
int cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir,
              const std::optional<std::filesystem::path>& golden_dir, std::ostream& out);

int cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& out);

/// Evaluates a checkpoint. Without data_dir the validation split of the
/// config's data section is regenerated.
int cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
             const std::optional<std::filesystem::path>& data_dir, const std::vector<double>& scales, bool flip,
             std::ostream& out);

}  // namespace tkcn
