// Acceptance driver: one PASS/FAIL line per criterion. Tolerances and
// runtime limits are pinned below.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "tkcn/commands.hpp"
#include "tkcn/gradsuite.hpp"
#include "tkcn/kconv.hpp"
#include "tkcn/miniseg.hpp"
#include "tkcn/parallel.hpp"
#include "tkcn/run_config.hpp"
#include "tkcn/tfa.hpp"
#include "tkcn/trainer.hpp"

namespace fs = std::filesystem;
using namespace tkcn;
using tkcn::test::naive_standard_conv;
using tkcn::test::random_tensor;
using tkcn::test::random_weights;

namespace {

constexpr double kEquivAtol = 1e-9;
constexpr double kDegenerateAtol = 1e-12;
constexpr double kVfrRtol = 1e-9;  // the CSV carries 10 significant digits
constexpr double kMiouBound = 0.80;
constexpr double kLossRatio = 0.5;
constexpr double kAtrousSlack = 0.01;

const std::map<std::string, double> kGradTolerance = {
    {"kconv", 1e-5}, {"loss", 1e-6}, {"resize", 1e-8}, {"tfa", 1e-4}, {"model", 1e-4}};

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double limit_s;  // 0: no runtime bound
  std::function<Outcome()> run;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const ConvGrid kGrid;

Outcome oracle_equivalence() {
  double worst = 0.0;
  std::size_t cases = 0;
  for (int k : kGrid.k)
    for (const Factors& f : kGrid.factors)
      for (std::uint64_t seed : kGrid.seeds) {
        const ChannelPair ch = kGrid.channels.front();
        const std::size_t side = kGrid.sizes.front();
        const ConvSpec spec{k, f.r1, f.r2, ch.c_in, ch.c_out, Padding::Same};
        const Tensor4 a = random_tensor(seed, Shape{kGrid.batch, ch.c_in, side, side});
        const KernelWeights w = random_weights(seed + 500, spec);
        const Tensor4 ref = kconv_forward_expanded(a, w, spec);
        worst = std::max({worst, max_abs_diff(kconv_forward_factored(a, w, spec), ref),
                          max_abs_diff(kconv_forward_sat(a, w, spec), ref),
                          max_abs_diff(kconv_forward_sparse(a, w, spec), ref)});
        ++cases;
      }
  return {worst <= kEquivAtol, std::to_string(cases) + " cases, max |diff| " + fmt(worst) + " (atol " +
                                   fmt(kEquivAtol) + ")"};
}

Outcome degeneration() {
  std::vector<int> rates;
  for (const Factors& f : kGrid.factors) rates.push_back(f.r1);
  std::sort(rates.begin(), rates.end());
  rates.erase(std::unique(rates.begin(), rates.end()), rates.end());

  double worst_atrous = 0.0;
  double worst_standard = 0.0;
  std::size_t cases = 0;
  for (int k : kGrid.k)
    for (int r : rates)
      for (std::uint64_t seed : kGrid.seeds) {
        const ChannelPair ch = kGrid.channels.front();
        const std::size_t side = kGrid.sizes.front();
        const ConvSpec spec{k, r, 1, ch.c_in, ch.c_out, Padding::Same};
        const Tensor4 a = random_tensor(seed + 40, Shape{kGrid.batch, ch.c_in, side, side});
        const KernelWeights w = random_weights(seed + 900, spec);
        const Tensor4 atrous = atrous_forward(a, w, r);
        for (const Tensor4& y : {kconv_forward_expanded(a, w, spec), kconv_forward_factored(a, w, spec),
                                 kconv_forward_sat(a, w, spec), kconv_forward_sparse(a, w, spec)}) {
          worst_atrous = std::max(worst_atrous, max_abs_diff(y, atrous));
          if (r == 1) worst_standard = std::max(worst_standard, max_abs_diff(y, naive_standard_conv(a, w)));
        }
        ++cases;
      }
  const double worst = std::max(worst_atrous, worst_standard);
  return {worst <= kDegenerateAtol, std::to_string(cases) + " cases, vs atrous " + fmt(worst_atrous) +
                                        ", (1,1) vs standard " + fmt(worst_standard) + " (atol " +
                                        fmt(kDegenerateAtol) + ")"};
}

Outcome gradient_suite() {
  bool pass = true;
  std::string detail;
  for (const std::string& target : gradcheck_targets()) {
    double worst = 0.0;
    std::string where;
    for (const GradEntry& e : run_gradcheck(target, 1)) {
      if (e.result.max_rel_error >= worst) {
        worst = e.result.max_rel_error;
        where = e.what;
      }
    }
    const double tol = kGradTolerance.at(target);
    const bool ok = worst < tol;
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += target + " " + fmt(worst, 2) + (ok ? " < " : " >= ") + fmt(tol, 1);
    if (!ok) detail += " at " + where;
  }
  return {pass, detail};
}

Outcome vfr_curves() {
  std::ostringstream csv;
  const RunConfig cfg = parse_run_config("{}");
  if (cmd_vfr(cfg, true, csv) != kExitOk) return {false, "cmd_vfr failed"};

  std::map<int, std::map<int, double>> table;  // r2 -> r1 -> vfr
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(row, cell, ',')) v.push_back(std::stod(cell));
    table[static_cast<int>(v.at(1))][static_cast<int>(v.at(0))] = v.at(2);
  }
  auto close = [](double got, double want) { return std::abs(got - want) <= kVfrRtol * std::abs(want); };

  std::vector<std::string> bad;
  std::size_t cells = 0;
  for (const auto& [r2, col] : table) {
    double prev = 2.0;
    for (const auto& [r1, v] : col) {
      ++cells;
      if (r1 == r2 && v != 1.0) bad.push_back("vfr(" + std::to_string(r1) + "," + std::to_string(r2) + ") != 1");
      if (r2 == 1 && !close(v, 1.0 / (r1 * r1))) bad.push_back("vfr(" + std::to_string(r1) + ",1) != 1/r1^2");
      if (!(v < prev)) bad.push_back("not decreasing at r1=" + std::to_string(r1) + " r2=" + std::to_string(r2));
      prev = v;
    }
  }
  const bool spot_43 = table.count(3) && table[3].count(4) && close(table[3][4], 0.5625);
  const bool spot_107 = table.count(7) && table[7].count(10) && close(table[7][10], 0.49);
  if (!spot_43) bad.push_back("vfr(4,3) != 0.5625");
  if (!spot_107) bad.push_back("vfr(10,7) != 0.49");
  std::string detail = std::to_string(cells) + " cells; vfr(4,3)=" + fmt(table[3][4], 10) +
                       ", vfr(10,7)=" + fmt(table[7][10], 10);
  if (!bad.empty()) detail += "; first problem: " + bad.front();
  return {bad.empty(), detail};
}

Outcome parameter_count() {
  const std::vector<std::pair<std::size_t, std::size_t>> channels = {{1, 1}, {3, 4}, {16, 16}, {64, 16}};
  std::size_t checked = 0;
  std::vector<std::string> bad;
  for (int k : kGrid.k)
    for (auto [c_in, c_out] : channels) {
      const std::size_t side = static_cast<std::size_t>(2 * k + 1);
      const std::size_t want = c_out * c_in * side * side + c_out;
      for (const Factors& f : kGrid.factors) {
        const ConvSpec spec{k, f.r1, f.r2, c_in, c_out, Padding::Same};
        Rng rng(checked);
        const std::size_t he = he_init(rng, spec).parameter_count();
        const std::size_t zero = zero_weights(spec).parameter_count();
        if (he != want || zero != want) bad.push_back(spec.describe());
        ++checked;
      }
    }

  // Whole model: swapping KConv factors for atrous rates leaves the parameter set unchanged.
  auto model_params = [](std::vector<Factors> body) {
    MiniSegConfig cfg;
    cfg.body = std::move(body);
    Rng rng(3);
    MiniSegModel m = miniseg_build(rng, cfg);
    std::size_t total = 0;
    for (const Param& p : miniseg_params(m).params()) total += p.value->size();
    return total;
  };
  const std::size_t kconv_model = model_params({{2, 1}, {4, 3}});
  const std::size_t atrous_model = model_params({{2, 1}, {4, 1}});
  if (kconv_model != atrous_model) bad.push_back("MiniSeg body (4,3) vs (4,1)");
  std::string detail = std::to_string(checked) + " specs match c_out*c_in*(2k+1)^2 + c_out; MiniSeg " +
                       std::to_string(kconv_model) + " vs " + std::to_string(atrous_model) + " parameters";
  if (!bad.empty()) detail += "; mismatch at " + bad.front();
  return {bad.empty(), detail};
}

Outcome tfa_structure() {
  std::vector<std::string> bad;
  std::size_t checked = 0;
  for (std::size_t c : {4, 16, 64, 66}) {
    for (const TfaConfig& preset : {TfaConfig::small_factors(), TfaConfig::large_factors()}) {
      Rng rng(c);
      TfaModule full = tfa_build(rng, c, preset);
      Rng bn_rng(c + 1);
      for (TfaBranch& b : full.branches) {
        for (auto& v : b.bn.gamma.data()) v = bn_rng.uniform(0.5, 1.5);
        for (auto& v : b.bn.beta.data()) v = bn_rng.normal(0.0, 0.1);
        for (auto& v : b.bn.running_mean.data()) v = bn_rng.normal(0.0, 0.1);
        for (auto& v : b.bn.running_var.data()) v = bn_rng.uniform(0.5, 1.5);
      }
      const std::size_t n = preset.steps.size();
      const std::size_t want = c + n * (c / 4);
      const Tensor4 x = random_tensor(c + 2, Shape{2, c, 12, 12});
      const Tensor4 y = tfa_forward(x, static_cast<const TfaModule&>(full)).y;
      if (full.output_channels() != want || y.c() != want) bad.push_back("channels at C=" + std::to_string(c));

      for (std::size_t keep = 0; keep < n; ++keep) {
        TfaModule prefix = full;
        prefix.config.steps.resize(keep + 1);
        prefix.branches.resize(keep + 1);
        for (Mode mode : {Mode::Eval, Mode::Train}) {
          TfaModule a = full;
          TfaModule b = prefix;
          const Tensor4 yf = tfa_forward(x, a, mode).y;
          const Tensor4 yp = tfa_forward(x, b, mode).y;
          if (!(slice_channels(yf, 0, yp.c()) == yp)) {
            bad.push_back("prefix " + std::to_string(keep + 1) + " at C=" + std::to_string(c));
          }
        }
      }
      ++checked;
    }
  }
  std::string detail = std::to_string(checked) + " modules: C + n*floor(C/4) and bitwise prefix property";
  if (!bad.empty()) detail += "; failed: " + bad.front();
  return {bad.empty(), detail};
}

struct TrainRun {
  TrainReport report;
  std::string metrics;  // metrics.jsonl bytes
};

class Trainer {
 public:
  explicit Trainer(fs::path work) : work_(std::move(work)) {}

  const TrainRun& get(const std::string& tag, std::vector<Factors> body, std::uint64_t seed, int copy = 0) {
    const std::string key = tag + "_seed" + std::to_string(seed) + "_run" + std::to_string(copy);
    auto it = runs_.find(key);
    if (it != runs_.end()) return it->second;
    RunConfig cfg = parse_run_config("{}");
    cfg.model.body = std::move(body);
    cfg.train.seed = seed;
    cfg.validate();
    TrainOptions opts;
    opts.out_dir = work_ / key;
    fs::remove_all(opts.out_dir);
    opts.progress = [key](const std::string& line) { std::cerr << "[" << key << "] " << line << "\n"; };
    TrainRun run;
    run.report = run_training(cfg, opts);
    std::ifstream f(opts.out_dir / "metrics.jsonl", std::ios::binary);
    run.metrics.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    return runs_.emplace(key, std::move(run)).first->second;
  }

 private:
  fs::path work_;
  std::map<std::string, TrainRun> runs_;
};

const std::vector<Factors> kKconvBody = {{2, 1}, {4, 3}};
const std::vector<Factors> kAtrousBody = {{2, 1}, {4, 1}};

Outcome toy_training(Trainer& trainer) {
  const TrainRun& first = trainer.get("kconv43", kKconvBody, 7, 0);
  const TrainRun& again = trainer.get("kconv43", kKconvBody, 7, 1);
  const auto& epochs = first.report.epochs;
  const double miou = first.report.final_val.mean_iou;
  const double ratio = epochs.back().train_loss / epochs.front().train_loss;
  const bool bitwise = !first.metrics.empty() && first.metrics == again.metrics;
  const double secs = first.report.seconds;
  const bool pass = epochs.size() == 20 && miou >= kMiouBound && ratio < kLossRatio && bitwise && secs < 600.0;
  return {pass, "val mIoU " + fmt(miou) + " (bound " + fmt(kMiouBound) + "), loss epoch20/epoch1 " + fmt(ratio, 3) +
                    " (< " + fmt(kLossRatio) + "), metrics.jsonl rerun " + (bitwise ? "identical" : "DIFFERS") +
                    ", " + fmt(secs, 4) + " s per run (< 600)"};
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Outcome kconv_vs_atrous(Trainer& trainer) {
  std::vector<double> kconv;
  std::vector<double> atrous;
  for (std::uint64_t seed : {7, 8, 9}) {
    kconv.push_back(trainer.get("kconv43", kKconvBody, seed).report.final_val.mean_iou);
    atrous.push_back(trainer.get("atrous41", kAtrousBody, seed).report.final_val.mean_iou);
  }
  const double mk = median3(kconv);
  const double ma = median3(atrous);
  auto list = [](const std::vector<double>& v) {
    return fmt(v[0]) + "/" + fmt(v[1]) + "/" + fmt(v[2]);
  };
  return {mk >= ma - kAtrousSlack, "median mIoU (4,3) " + fmt(mk) + " [" + list(kconv) + "] vs (4,1) " + fmt(ma) +
                                       " [" + list(atrous) + "], slack " + fmt(kAtrousSlack)};
}

Outcome bench_sanity() {
  const BenchGrid grid;  // k=1, (10,7), C=16, 64x64
  const std::vector<BenchRow> rows = run_bench(grid, 1);
  double dense_ms = -1.0;
  double sat_ms = -1.0;
  std::vector<std::string> bad;
  for (const BenchRow& r : rows) {
    const std::uint64_t c = r.channels;
    const std::uint64_t taps = static_cast<std::uint64_t>((2 * r.k + 1) * (2 * r.k + 1));
    const std::uint64_t r1 = static_cast<std::uint64_t>(r.r1);
    const std::uint64_t r2 = static_cast<std::uint64_t>(r.r2);
    std::uint64_t mults = 0;
    std::uint64_t adds = 0;
    std::uint64_t build = 0;
    if (r.strategy == "dense-expanded") {
      mults = adds = c * taps * r1 * r1;
      dense_ms = r.median_ms;
    } else if (r.strategy == "sparse-taps") {
      mults = adds = c * taps * r2 * r2;
    } else if (r.strategy == "factored") {
      mults = c * taps;
      adds = c * taps * (r2 * r2 - 1);
    } else if (r.strategy == "sat") {
      mults = c * taps;
      adds = 3 * c * taps;
      const std::uint64_t pad = static_cast<std::uint64_t>(2 * r.k * r.r1 + r.r2 - 1);
      build = 2 * c * (r.h + pad) * (r.w + pad) * grid.batch;
      sat_ms = r.median_ms;
    } else {
      bad.push_back("unknown strategy " + r.strategy);
      continue;
    }
    if (r.mac_mults != mults || r.mac_adds != adds || r.sat_build_adds != build) {
      bad.push_back("mac columns for " + r.strategy);
    }
  }
  if (dense_ms < 0 || sat_ms < 0) bad.push_back("missing dense or sat row");
  else if (!(sat_ms <= dense_ms)) bad.push_back("sat slower than dense");
  std::string detail = "sat " + fmt(sat_ms) + " ms vs dense-expanded " + fmt(dense_ms) + " ms; " +
                       std::to_string(rows.size()) + " rows, mac columns " +
                       (bad.empty() ? "exact" : "checked");
  if (!bad.empty()) detail += "; problem: " + bad.front();
  return {bad.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  keep_heap_warm();
  CLI::App app{"Acceptance checks; prints one PASS/FAIL line per criterion"};
  std::vector<int> selected;
  std::string work_dir = "acceptance_work";
  app.add_option("criteria", selected, "Criterion numbers 1-9 (default: all)")->check(CLI::Range(1, 9));
  app.add_option("--work-dir", work_dir, "Scratch directory for training runs")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  // Single core throughout: runtime limits refer to one CPU core.
  set_num_threads(1);
  Trainer trainer(work_dir);

  const std::vector<Criterion> criteria = {
      {1, "oracle equivalence", 30.0, oracle_equivalence},
      {2, "degeneration to atrous/standard", 10.0, degeneration},
      {3, "gradient suite", 120.0, gradient_suite},
      {4, "VFR curves", 1.0, vfr_curves},
      {5, "parameter-count invariance", 1.0, parameter_count},
      {6, "TFA structure", 10.0, tfa_structure},
      {7, "toy end-to-end", 0.0, [&] { return toy_training(trainer); }},
      {8, "KConv vs atrous body", 0.0, [&] { return kconv_vs_atrous(trainer); }},
      {9, "bench sanity", 60.0, bench_sanity},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    std::string timing = fmt(secs, 3) + " s";
    if (c.limit_s > 0) {
      timing += " / limit " + fmt(c.limit_s, 3) + " s";
      if (secs >= c.limit_s) o.pass = false;
    }
    if (!o.pass) ++failures;
    std::cout << "criterion " << c.id << " " << (o.pass ? "PASS" : "FAIL") << "  " << c.name << ": " << o.detail
              << " [" << timing << "]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
