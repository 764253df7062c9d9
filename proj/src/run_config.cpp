#include "tkcn/run_config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace tkcn {

namespace {

using nlohmann::json;

class Section {
 public:
  Section(const json& root, const std::string& name) : name_(name) {
    if (!root.contains(name)) return;
    node_ = &root.at(name);
    if (!node_->is_object()) throw ConfigError(name + ": expected an object");
  }

  template <typename T>
  bool get(const std::string& key, T& out) {
    known_.insert(key);
    if (node_ == nullptr || !node_->contains(key)) return false;
    try {
      out = node_->at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name_ + "." + key + ": wrong type (" + node_->at(key).dump() + ")");
    }
    return true;
  }

  bool factors(const std::string& key, std::vector<Factors>& out) {
    std::vector<std::vector<int>> raw;
    if (!get(key, raw)) return false;
    out.clear();
    for (const auto& p : raw) {
      if (p.size() != 2) throw ConfigError(name_ + "." + key + ": each entry must be [r1, r2]");
      out.push_back({p[0], p[1]});
    }
    return true;
  }

  void finish() const {
    if (node_ == nullptr) return;
    for (const auto& [key, value] : node_->items()) {
      if (!known_.count(key)) throw ConfigError(name_ + "." + key + ": unknown key");
    }
  }

 private:
  std::string name_;
  const json* node_ = nullptr;
  std::set<std::string> known_;
};

void check_factors(const std::string& where, const std::vector<Factors>& fs) {
  for (const auto& f : fs) {
    if (f.r1 < 1 || f.r2 < 1 || f.r2 > f.r1) {
      throw ConfigError(where + ": (r1,r2)=(" + std::to_string(f.r1) + "," + std::to_string(f.r2) +
                        ") violates 1 <= r2 <= r1");
    }
  }
}

json factors_json(const std::vector<Factors>& fs) {
  json a = json::array();
  for (const auto& f : fs) a.push_back({f.r1, f.r2});
  return a;
}

}  // namespace

std::size_t RunConfig::iters_per_epoch() const {
  return (data.count + train.batch_size - 1) / train.batch_size;
}

void RunConfig::validate() const {
  if (conv.k.empty() || conv.factors.empty() || conv.channels.empty() || conv.sizes.empty() || conv.seeds.empty()) {
    throw ConfigError("conv: grid lists must be non-empty");
  }
  for (int k : conv.k) {
    if (k < 0) throw ConfigError("conv.k: must be >= 0");
  }
  check_factors("conv.factors", conv.factors);
  for (const auto& c : conv.channels) {
    if (c.c_in < 1 || c.c_out < 1) throw ConfigError("conv.channels: counts must be >= 1");
  }
  for (auto s : conv.sizes) {
    if (s < 1) throw ConfigError("conv.sizes: must be >= 1");
  }
  if (conv.batch < 1) throw ConfigError("conv.batch: must be >= 1");

  if (vfr.r1_min < 1 || vfr.r1_max < vfr.r1_min) throw ConfigError("vfr: need 1 <= r1_min <= r1_max");
  if (vfr.r2.empty()) throw ConfigError("vfr.r2: must be non-empty");
  for (int r2 : vfr.r2) {
    if (r2 < 1) throw ConfigError("vfr.r2: entries must be >= 1");
  }
  if (vfr.k < 0) throw ConfigError("vfr.k: must be >= 0");

  if (bench.k.empty() || bench.factors.empty() || bench.channels.empty() || bench.sizes.empty()) {
    throw ConfigError("bench: grid lists must be non-empty");
  }
  for (int k : bench.k) {
    if (k < 0) throw ConfigError("bench.k: must be >= 0");
  }
  check_factors("bench.factors", bench.factors);
  if (bench.batch < 1) throw ConfigError("bench.batch: must be >= 1");
  if (bench.repeats < 5) throw ConfigError("bench.repeats: must be >= 5");

  if (data.size < 16 || data.size % 4 != 0) throw ConfigError("data.size: must be >= 16 and divisible by 4");
  if (data.count < 1 || data.val_count < 1) throw ConfigError("data: count and val_count must be >= 1");
  if (data.num_classes != 4) throw ConfigError("data.num_classes: the synthetic generator has exactly 4 classes");

  if (eval.scales.empty()) throw ConfigError("eval.scales: must be non-empty");
  for (double s : eval.scales) {
    if (!(s > 0.0)) throw ConfigError("eval.scales: entries must be > 0");
  }

  check_factors("model.body", model.body);
  check_factors("tfa.factors", model.head.steps);
  try {
    model.validate();
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (epochs < 1) throw ConfigError("train.epochs: must be >= 1");
  if (train.max_iter < epochs * iters_per_epoch()) {
    throw ConfigError("train.max_iter: " + std::to_string(train.max_iter) + " is shorter than " +
                      std::to_string(epochs) + " epochs of " + std::to_string(iters_per_epoch()) + " iterations");
  }
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: top level must be an object");
  static const std::set<std::string> sections = {"conv", "vfr", "bench", "tfa", "model", "train", "data", "eval"};
  for (const auto& [key, value] : root.items()) {
    if (!sections.count(key)) throw ConfigError(key + ": unknown section");
  }

  RunConfig cfg;
  {
    Section s(root, "conv");
    s.get("k", cfg.conv.k);
    s.factors("factors", cfg.conv.factors);
    std::vector<std::vector<std::size_t>> ch;
    if (s.get("channels", ch)) {
      cfg.conv.channels.clear();
      for (const auto& p : ch) {
        if (p.size() != 2) throw ConfigError("conv.channels: each entry must be [c_in, c_out]");
        cfg.conv.channels.push_back({p[0], p[1]});
      }
    }
    s.get("sizes", cfg.conv.sizes);
    s.get("seeds", cfg.conv.seeds);
    s.get("batch", cfg.conv.batch);
    s.finish();
  }
  {
    Section s(root, "vfr");
    s.get("r1_min", cfg.vfr.r1_min);
    s.get("r1_max", cfg.vfr.r1_max);
    s.get("r2", cfg.vfr.r2);
    s.get("k", cfg.vfr.k);
    s.finish();
  }
  {
    Section s(root, "bench");
    s.get("k", cfg.bench.k);
    s.factors("factors", cfg.bench.factors);
    s.get("channels", cfg.bench.channels);
    s.get("sizes", cfg.bench.sizes);
    s.get("batch", cfg.bench.batch);
    s.get("repeats", cfg.bench.repeats);
    s.finish();
  }
  {
    Section s(root, "tfa");
    s.factors("factors", cfg.model.head.steps);
    s.get("include_identity", cfg.model.head.include_identity);
    s.get("branch_channels", cfg.model.head.branch_channels);
    s.get("kernel_half_extent", cfg.model.head.kernel_half_extent);
    s.finish();
  }
  {
    Section s(root, "model");
    s.get("width", cfg.model.width);
    s.factors("body", cfg.model.body);
    s.get("use_tfa", cfg.model.use_tfa);
    s.finish();
  }
  {
    Section s(root, "train");
    s.get("base_lr", cfg.train.base_lr);
    s.get("power", cfg.train.power);
    s.get("momentum", cfg.train.momentum);
    s.get("weight_decay", cfg.train.weight_decay);
    cfg.max_iter_given = s.get("max_iter", cfg.train.max_iter);
    s.get("batch_size", cfg.train.batch_size);
    s.get("seed", cfg.train.seed);
    s.get("ignore_index", cfg.train.ignore_index);
    s.get("epochs", cfg.epochs);
    s.finish();
  }
  {
    Section s(root, "data");
    s.get("seed", cfg.data.seed);
    s.get("count", cfg.data.count);
    s.get("val_count", cfg.data.val_count);
    s.get("size", cfg.data.size);
    s.get("num_classes", cfg.data.num_classes);
    s.finish();
  }
  {
    Section s(root, "eval");
    s.get("scales", cfg.eval.scales);
    s.get("flip", cfg.eval.flip);
    s.finish();
  }
  cfg.model.num_classes = cfg.data.num_classes;
  if (cfg.train.batch_size == 0) throw ConfigError("train.batch_size: must be >= 1");
  if (!cfg.max_iter_given) cfg.train.max_iter = cfg.epochs * cfg.iters_per_epoch();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& cfg) {
  json j;
  json ch = json::array();
  for (const auto& c : cfg.conv.channels) ch.push_back({c.c_in, c.c_out});
  j["conv"] = {{"k", cfg.conv.k},         {"factors", factors_json(cfg.conv.factors)},
               {"channels", ch},          {"sizes", cfg.conv.sizes},
               {"seeds", cfg.conv.seeds}, {"batch", cfg.conv.batch}};
  j["vfr"] = {{"r1_min", cfg.vfr.r1_min}, {"r1_max", cfg.vfr.r1_max}, {"r2", cfg.vfr.r2}, {"k", cfg.vfr.k}};
  j["bench"] = {{"k", cfg.bench.k},         {"factors", factors_json(cfg.bench.factors)},
                {"channels", cfg.bench.channels}, {"sizes", cfg.bench.sizes},
                {"batch", cfg.bench.batch}, {"repeats", cfg.bench.repeats}};
  j["tfa"] = {{"factors", factors_json(cfg.model.head.steps)},
              {"include_identity", cfg.model.head.include_identity},
              {"branch_channels", cfg.model.head.branch_channels},
              {"kernel_half_extent", cfg.model.head.kernel_half_extent}};
  j["model"] = {{"width", cfg.model.width}, {"body", factors_json(cfg.model.body)}, {"use_tfa", cfg.model.use_tfa}};
  j["train"] = {{"base_lr", cfg.train.base_lr},
                {"power", cfg.train.power},
                {"momentum", cfg.train.momentum},
                {"weight_decay", cfg.train.weight_decay},
                {"max_iter", cfg.train.max_iter},
                {"batch_size", cfg.train.batch_size},
                {"seed", cfg.train.seed},
                {"ignore_index", cfg.train.ignore_index},
                {"epochs", cfg.epochs}};
  j["data"] = {{"seed", cfg.data.seed},
               {"count", cfg.data.count},
               {"val_count", cfg.data.val_count},
               {"size", cfg.data.size},
               {"num_classes", cfg.data.num_classes}};
  j["eval"] = {{"scales", cfg.eval.scales}, {"flip", cfg.eval.flip}};
  return j.dump(2);
}

std::string run_config_help() {
  RunConfig d;
  d.train.max_iter = d.epochs * d.iters_per_epoch();
  return "Config file (JSON, every key optional, unknown keys rejected). Defaults:\n" + dump_run_config(d) +
         "\ntrain.max_iter defaults to epochs * ceil(data.count / train.batch_size).\n";
}

}  // namespace tkcn
