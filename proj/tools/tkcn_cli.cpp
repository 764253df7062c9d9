#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <optional>

#include "tkcn/commands.hpp"
#include "tkcn/parallel.hpp"
#include "tkcn/run_config.hpp"

namespace {

std::optional<std::filesystem::path> golden_dir() {
  const char* v = std::getenv("TKCN_GOLDEN_DIR");
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::filesystem::path(v);
}

}  // namespace

int main(int argc, char** argv) {
  tkcn::keep_heap_warm();
  CLI::App app{"Kronecker convolution toolkit: operator checks, VFR tables, benchmarks, training and evaluation"};
  app.footer(tkcn::run_config_help() + "\nEnvironment: TKCN_GOLDEN_DIR points at committed golden files.\n" +
             "Exit codes: 0 success, 1 verification failure, 2 usage or config error.");
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;
  std::string out_dir = "out";
  app.add_option("--config", config_path, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Overrides conv.seeds, train.seed and the bench/gradcheck seed");
  app.add_option("--threads", threads, "Worker cap (0 = all cores); results do not depend on it");
  app.add_option("--out", out_dir, "Output directory for synth and train")->capture_default_str();

  auto* equiv = app.add_subcommand("equiv", "Check expanded, factored, SAT and sparse paths agree");
  bool inject_fault = false;
  equiv->add_flag("--inject-fault", inject_fault, "Perturb one factored-path weight (negative control)");

  auto* vfr = app.add_subcommand("vfr", "Print the valid feature ratio table");
  bool csv = false;
  vfr->add_flag("--csv", csv, "CSV instead of aligned text");

  auto* bench = app.add_subcommand("bench", "Time each forward strategy; CSV output");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  std::vector<std::string> targets;
  gradcheck->add_option("targets", targets, "Any of kconv, tfa, loss, resize, model (default: all)");

  app.add_subcommand("synth", "Write the synthetic train/val datasets to --out");
  app.add_subcommand("train", "Train MiniSeg; writes metrics.jsonl and checkpoint/ under --out");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; prints metrics JSON");
  std::string checkpoint;
  std::string data_dir;
  std::vector<double> scales;
  bool flip = false;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  eval->add_option("--data", data_dir, "Dataset directory (default: regenerate the validation split)");
  eval->add_option("--scales", scales, "Inference scales (default: eval.scales)")->delimiter(',');
  eval->add_flag("--flip", flip, "Add mirrored passes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? tkcn::kExitOk : tkcn::kExitUsage;
  }

  try {
    tkcn::set_num_threads(threads);
    tkcn::RunConfig cfg = config_path.empty() ? tkcn::parse_run_config("{}") : tkcn::load_run_config(config_path);
    if (seed) {
      cfg.conv.seeds = {*seed};
      cfg.train.seed = *seed;
    }
    const std::uint64_t run_seed = seed.value_or(1);
    if (equiv->parsed()) return tkcn::cmd_equiv(cfg, {inject_fault}, std::cout);
    if (vfr->parsed()) return tkcn::cmd_vfr(cfg, csv, std::cout);
    if (bench->parsed()) return tkcn::cmd_bench(cfg, run_seed, std::cout);
    if (gradcheck->parsed()) return tkcn::cmd_gradcheck(targets, run_seed, std::cout);
    if (app.got_subcommand("synth")) return tkcn::cmd_synth(cfg, out_dir, golden_dir(), std::cout);
    if (app.got_subcommand("train")) return tkcn::cmd_train(cfg, out_dir, std::cout);
    if (eval->parsed()) {
      std::optional<std::filesystem::path> data;
      if (!data_dir.empty()) data = data_dir;
      return tkcn::cmd_eval(cfg, checkpoint, data, scales.empty() ? cfg.eval.scales : scales, flip || cfg.eval.flip,
                            std::cout);
    }
  } catch (const tkcn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return tkcn::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return tkcn::kExitUsage;
  }
  return tkcn::kExitUsage;
}
