#include "tkcn/commands.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "tkcn/gradsuite.hpp"
#include "tkcn/kconv.hpp"
#include "tkcn/miniseg.hpp"
#include "tkcn/segdata.hpp"
#include "tkcn/trainer.hpp"

namespace tkcn {

namespace {

Tensor4 random_normal(Rng& rng, Shape s) {
  Tensor4 t(s);
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

KernelWeights random_weights(Rng& rng, const ConvSpec& spec) {
  const auto side = static_cast<std::size_t>(spec.side());
  return {random_normal(rng, Shape{spec.c_out, spec.c_in, side, side}), random_normal(rng, Shape{1, spec.c_out, 1, 1})};
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

}  // namespace

int cmd_equiv(const RunConfig& cfg, const EquivOptions& opts, std::ostream& out) {
  constexpr double kPathTol = 1e-9;
  constexpr double kAtrousTol = 1e-12;
  const ConvGrid& g = cfg.conv;
  out << std::left << std::setw(46) << "spec" << std::setw(6) << "size" << std::setw(6) << "seed" << std::setw(11)
      << "factored" << std::setw(11) << "sat" << std::setw(11) << "sparse" << std::setw(11) << "atrous"
      << "status\n";
  std::size_t failures = 0;
  std::size_t cases = 0;
  for (int k : g.k) {
    for (const auto& f : g.factors) {
      for (const auto& ch : g.channels) {
        for (std::size_t size : g.sizes) {
          for (std::uint64_t seed : g.seeds) {
            const ConvSpec spec{k, f.r1, f.r2, ch.c_in, ch.c_out, Padding::Same};
            Rng rng(seed);
            const Tensor4 a = random_normal(rng, Shape{g.batch, ch.c_in, size, size});
            const KernelWeights w = random_weights(rng, spec);
            KernelWeights wf = w;
            if (opts.inject_fault) wf.kernel[0] += 1e-6;
            const Tensor4 ref = kconv_forward_expanded(a, w, spec);
            const double d_fact = max_abs_diff(ref, kconv_forward_factored(a, wf, spec));
            const double d_sat = max_abs_diff(ref, kconv_forward_sat(a, w, spec));
            const double d_sparse = max_abs_diff(ref, kconv_forward_sparse(a, w, spec));
            bool ok = d_fact <= kPathTol && d_sat <= kPathTol && d_sparse <= kPathTol;
            std::string atrous = "-";
            if (f.r2 == 1) {
              const Tensor4 dil = atrous_forward(a, w, f.r1);
              const double d = std::max({max_abs_diff(dil, ref), max_abs_diff(dil, kconv_forward_factored(a, wf, spec)),
                                         max_abs_diff(dil, kconv_forward_sat(a, w, spec))});
              atrous = sci(d);
              ok = ok && d <= kAtrousTol;
            }
            ++cases;
            if (!ok) ++failures;
            out << std::setw(46) << spec.describe() << std::setw(6) << size << std::setw(6) << seed << std::setw(11)
                << sci(d_fact) << std::setw(11) << sci(d_sat) << std::setw(11) << sci(d_sparse) << std::setw(11)
                << atrous << (ok ? "ok" : "FAIL") << "\n";
            if (!ok) out << "FAILED: " << spec.describe() << " size=" << size << " seed=" << seed << "\n";
          }
        }
      }
    }
  }
  out << cases - failures << "/" << cases << " cases passed (paths atol 1e-9, atrous atol 1e-12)\n";
  return failures == 0 ? kExitOk : kExitVerificationFailed;
}

int cmd_vfr(const RunConfig& cfg, bool csv, std::ostream& out) {
  const VfrTable& t = cfg.vfr;
  if (csv) {
    out << "r1,r2,vfr,atrous_vfr,footprint_vfr\n";
  } else {
    out << std::left << std::setw(5) << "r1" << std::setw(5) << "r2" << std::setw(16) << "vfr" << std::setw(16)
        << "atrous" << "footprint(k=" << t.k << ")\n";
  }
  out << std::setprecision(10);
  for (int r1 = t.r1_min; r1 <= t.r1_max; ++r1) {
    for (int r2 : t.r2) {
      if (r2 > r1) continue;
      const double v = vfr(r1, r2);
      const double atrous = vfr(r1, 1);
      const double fp = footprint_vfr(t.k, r1, r2);
      if (csv) {
        out << r1 << "," << r2 << "," << v << "," << atrous << "," << fp << "\n";
      } else {
        out << std::setw(5) << r1 << std::setw(5) << r2 << std::setw(16) << v << std::setw(16) << atrous << fp << "\n";
      }
    }
  }
  return kExitOk;
}

std::vector<BenchRow> run_bench(const BenchGrid& grid, std::uint64_t seed) {
  using Clock = std::chrono::steady_clock;
  using Forward = Tensor4 (*)(const Tensor4&, const KernelWeights&, const ConvSpec&);
  const std::pair<Strategy, Forward> paths[] = {{Strategy::DenseExpanded, kconv_forward_expanded},
                                                {Strategy::SparseTaps, kconv_forward_sparse},
                                                {Strategy::Factored, kconv_forward_factored},
                                                {Strategy::Sat, kconv_forward_sat}};
  std::vector<BenchRow> rows;
  for (int k : grid.k) {
    for (const auto& f : grid.factors) {
      for (std::size_t c : grid.channels) {
        for (std::size_t size : grid.sizes) {
          const ConvSpec spec{k, f.r1, f.r2, c, c, Padding::Same};
          Rng rng(seed);
          const Tensor4 a = random_normal(rng, Shape{grid.batch, c, size, size});
          const KernelWeights w = random_weights(rng, spec);
          const Tensor4 ref = kconv_forward_expanded(a, w, spec);
          for (const auto& [strategy, fn] : paths) {
            const Tensor4 y = fn(a, w, spec);  // also the warm-up run
            const CloseReport cr = allclose(ref, y, 0.0, 1e-9);
            if (!cr.close) {
              throw std::runtime_error("bench: " + to_string(strategy) + " disagrees with the expanded path for " +
                                       spec.describe() + " (max abs diff " + sci(cr.max_abs_diff) + ")");
            }
            std::vector<double> times;
            for (std::size_t r = 0; r < grid.repeats; ++r) {
              const auto t0 = Clock::now();
              const Tensor4 out = fn(a, w, spec);
              times.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
            }
            std::sort(times.begin(), times.end());
            const std::size_t m = times.size();
            const double median = m % 2 == 1 ? times[m / 2] : 0.5 * (times[m / 2 - 1] + times[m / 2]);
            const MacCount mc = mac_count(spec, strategy);
            rows.push_back({k, f.r1, f.r2, c, size, size, to_string(strategy), mc.mults, mc.adds,
                            strategy == Strategy::Sat ? sat_build_cost(spec, grid.batch, size, size) : 0, median});
          }
        }
      }
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "k,r1,r2,C,H,W,strategy,mac_mults,mac_adds,sat_build_adds,median_ms\n";
  for (const auto& r : rows) {
    os << r.k << "," << r.r1 << "," << r.r2 << "," << r.channels << "," << r.h << "," << r.w << "," << r.strategy
       << "," << r.mac_mults << "," << r.mac_adds << "," << r.sat_build_adds << "," << std::fixed
       << std::setprecision(3) << r.median_ms << std::defaultfloat << "\n";
  }
  return os.str();
}

int cmd_bench(const RunConfig& cfg, std::uint64_t seed, std::ostream& out) {
  std::vector<BenchRow> rows;
  try {
    rows = run_bench(cfg.bench, seed);
  } catch (const std::runtime_error& e) {
    out << e.what() << "\n";
    return kExitVerificationFailed;
  }
  out << bench_csv(rows);
  return kExitOk;
}

int cmd_gradcheck(const std::vector<std::string>& targets, std::uint64_t seed, std::ostream& out) {
  const auto& known = gradcheck_targets();
  const std::vector<std::string> run = targets.empty() ? known : targets;
  for (const auto& t : run) {
    if (std::find(known.begin(), known.end(), t) == known.end()) {
      throw ConfigError("unknown gradcheck target '" + t + "' (expected kconv, tfa, loss, resize, model)");
    }
  }
  bool all_ok = true;
  for (const auto& t : run) {
    const auto entries = run_gradcheck(t, seed);
    double worst = 0.0;
    const GradEntry* worst_entry = nullptr;
    for (const auto& e : entries) {
      if (worst_entry == nullptr || e.result.max_rel_error > worst) {
        worst = e.result.max_rel_error;
        worst_entry = &e;
      }
      if (!e.pass()) {
        all_ok = false;
        out << "FAIL " << t << " " << e.what << ": rel err " << sci(e.result.max_rel_error) << " >= " << sci(e.tolerance)
            << " at coordinate " << e.result.worst_index << " (analytic " << e.result.analytic << ", numeric "
            << e.result.numeric << ")\n";
      }
    }
    out << t << ": " << entries.size() << " checks, max rel err " << sci(worst) << " (" << worst_entry->what
        << ", tolerance " << sci(worst_entry->tolerance) << ")\n";
  }
  return all_ok ? kExitOk : kExitVerificationFailed;
}

int cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir,
              const std::optional<std::filesystem::path>& golden_dir, std::ostream& out) {
  SynthOptions so;
  so.seed = cfg.data.seed;
  so.count = cfg.data.count;
  so.size = cfg.data.size;
  so.num_classes = cfg.data.num_classes;
  so.ignore_index = cfg.train.ignore_index;
  const Dataset train = synth_generate(so);
  so.first_index = cfg.data.count;
  so.count = cfg.data.val_count;
  const Dataset val = synth_generate(so);
  save_dataset(train, out_dir / "train");
  save_dataset(val, out_dir / "val");
  const std::string sha = dataset_sha256(train);
  out << "train " << train.samples.size() << " samples sha256 " << sha << "\n";
  out << "val " << val.samples.size() << " samples sha256 " << dataset_sha256(val) << "\n";

  if (golden_dir) {
    const auto file = *golden_dir / "dataset_sha256.json";
    std::ifstream f(file);
    if (f) {
      const nlohmann::json j = nlohmann::json::parse(f);
      for (const auto& e : j.at("entries")) {
        if (e.at("seed").get<std::uint64_t>() == cfg.data.seed && e.at("count").get<std::size_t>() == cfg.data.count &&
            e.at("size").get<std::size_t>() == cfg.data.size) {
          const std::string want = e.at("sha256").get<std::string>();
          if (want != sha) {
            out << "golden mismatch: expected " << want << "\n";
            return kExitVerificationFailed;
          }
          out << "golden match\n";
        }
      }
    }
  }
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& out) {
  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.progress = [&](const std::string& line) { out << line << std::endl; };
  const TrainReport r = run_training(cfg, opts);
  nlohmann::json summary = {{"epochs", r.epochs.size()},
                            {"first_epoch_loss", r.epochs.front().train_loss},
                            {"last_epoch_loss", r.epochs.back().train_loss},
                            {"val_miou", r.final_val.mean_iou},
                            {"val_pixel_accuracy", r.final_val.pixel_accuracy},
                            {"seconds", r.seconds},
                            {"checkpoint", (out_dir / "checkpoint").string()}};
  out << summary.dump(2) << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
             const std::optional<std::filesystem::path>& data_dir, const std::vector<double>& scales, bool flip,
             std::ostream& out) {
  const MiniSegModel model = miniseg_load(checkpoint);
  Dataset ds;
  if (data_dir) {
    ds = load_dataset(*data_dir);
  } else {
    SynthOptions so;
    so.seed = cfg.data.seed;
    so.count = cfg.data.val_count;
    so.size = cfg.data.size;
    so.first_index = cfg.data.count;
    so.ignore_index = cfg.train.ignore_index;
    ds = synth_generate(so);
  }
  const EvalReport r = evaluate_dataset(model, ds, scales, flip, ds.ignore_index);
  out << metrics_json(r.metrics) << "\n";
  return kExitOk;
}

}  // namespace tkcn
