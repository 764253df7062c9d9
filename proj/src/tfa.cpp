#include "tkcn/tfa.hpp"

#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "tkcn/conv_engine.hpp"
#include "tkcn/tensor_io.hpp"

namespace tkcn {

TfaConfig TfaConfig::small_factors() { return {{{6, 3}, {10, 7}, {20, 15}}, 0, 1, true}; }
TfaConfig TfaConfig::large_factors() { return {{{10, 7}, {20, 15}, {30, 25}}, 0, 1, true}; }

void TfaConfig::validate() const {
  if (steps.empty()) throw std::invalid_argument("TfaConfig: steps must be nonempty");
  for (const auto& f : steps) {
    if (f.r1 < 1 || f.r2 < 1 || f.r2 > f.r1) {
      throw std::invalid_argument("TfaConfig: step (" + std::to_string(f.r1) + "," +
                                  std::to_string(f.r2) + ") violates 1 <= r2 <= r1");
    }
  }
  if (kernel_half_extent < 0) throw std::invalid_argument("TfaConfig: kernel_half_extent < 0");
}

std::size_t TfaModule::branch_channels() const {
  if (config.branch_channels != 0) return config.branch_channels;
  return std::max<std::size_t>(1, input_channels / 4);
}

std::size_t TfaModule::output_channels() const {
  return (config.include_identity ? input_channels : 0) + branches.size() * branch_channels();
}

TfaModule tfa_build(Rng& rng, std::size_t input_channels, const TfaConfig& config) {
  config.validate();
  if (input_channels < 1) throw std::invalid_argument("tfa_build: input_channels must be >= 1");
  TfaModule m{config, input_channels, {}};
  const std::size_t width = m.branch_channels();
  std::size_t c_in = input_channels;
  for (const auto& f : config.steps) {
    ConvSpec spec{config.kernel_half_extent, f.r1, f.r2, c_in, width, Padding::Same};
    m.branches.push_back({spec, he_init(rng, spec), BatchNormState::identity(width)});
    c_in = width;
  }
  return m;
}

namespace {

TfaResult forward_impl(const Tensor4& x, const TfaModule& module, Mode mode, TfaModule* mutable_module) {
  if (x.c() != module.input_channels) {
    throw std::invalid_argument("tfa_forward: input has " + std::to_string(x.c()) +
                                " channels, module expects " + std::to_string(module.input_channels));
  }
  TfaResult r;
  std::vector<Tensor4> parts;
  if (module.config.include_identity) parts.push_back(x);
  const Tensor4* prev = &x;
  // step_outputs must not reallocate while prev points into it.
  r.cache.step_outputs.reserve(module.branches.size());
  for (std::size_t s = 0; s < module.branches.size(); ++s) {
    const TfaBranch& branch = module.branches[s];
    r.cache.step_inputs.push_back(*prev);
    const Tensor4 z = box_conv_forward(*prev, branch.weights.kernel, nullptr,
                                       BoxConvGeometry::from_spec(branch.spec));
    BatchNormCache bn_cache;
    const Tensor4 normed = mutable_module != nullptr
                               ? batchnorm_forward(z, mutable_module->branches[s].bn, mode, &bn_cache)
                               : batchnorm_forward(z, branch.bn, &bn_cache);
    r.cache.bn.push_back(std::move(bn_cache));
    r.cache.step_outputs.push_back(relu(normed));
    parts.push_back(r.cache.step_outputs.back());
    prev = &r.cache.step_outputs.back();
  }
  r.y = concat_channels(parts);
  return r;
}

}  // namespace

TfaResult tfa_forward(const Tensor4& x, TfaModule& module, Mode mode) {
  return forward_impl(x, module, mode, &module);
}

TfaResult tfa_forward(const Tensor4& x, const TfaModule& module) {
  return forward_impl(x, module, Mode::Eval, nullptr);
}

TfaGrads tfa_backward(const TfaCache& cache, const TfaModule& module, const Tensor4& d_y) {
  const std::size_t steps = module.branches.size();
  if (cache.step_outputs.size() != steps || steps == 0) {
    throw std::invalid_argument("tfa_backward: cache does not match module");
  }
  const Tensor4& x = cache.step_inputs.front();
  const Shape expected{x.n(), module.output_channels(), x.h(), x.w()};
  if (d_y.shape() != expected) {
    throw std::invalid_argument("tfa_backward: gradient shape " + to_string(d_y.shape()) +
                                " does not match output " + to_string(expected));
  }
  const std::size_t width = module.branch_channels();
  const std::size_t offset = module.config.include_identity ? module.input_channels : 0;

  TfaGrads grads;
  grads.branches.resize(steps);
  // Gradient flowing into o_i from later steps; starts with o_n's own slice.
  Tensor4 d_o = slice_channels(d_y, offset + (steps - 1) * width, width);
  for (std::size_t s = steps; s-- > 0;) {
    const TfaBranch& branch = module.branches[s];
    const Tensor4 d_norm = relu_backward(cache.step_outputs[s], d_o);
    BatchNormGrads bn = batchnorm_backward(cache.bn[s], branch.bn, d_norm);
    ConvGrads conv = box_conv_backward(cache.step_inputs[s], branch.weights.kernel,
                                       BoxConvGeometry::from_spec(branch.spec), bn.d_input, true);
    grads.branches[s] = {std::move(conv.d_kernel), std::move(bn.d_gamma), std::move(bn.d_beta)};
    if (s > 0) {
      d_o = axpby(1.0, conv.d_input, 1.0, slice_channels(d_y, offset + (s - 1) * width, width));
    } else {
      d_o = std::move(conv.d_input);
    }
  }
  if (module.config.include_identity) {
    grads.d_input = axpby(1.0, d_o, 1.0, slice_channels(d_y, 0, module.input_channels));
  } else {
    grads.d_input = std::move(d_o);
  }
  return grads;
}

namespace {

std::string tensor_name(const std::string& stem, std::size_t i, const char* what) {
  return stem + "_branch" + std::to_string(i) + "_" + what + ".tkt";
}

}  // namespace

void tfa_save(const TfaModule& module, const std::filesystem::path& dir, const std::string& stem) {
  nlohmann::json j;
  j["input_channels"] = module.input_channels;
  j["branch_channels"] = module.config.branch_channels;
  j["kernel_half_extent"] = module.config.kernel_half_extent;
  j["include_identity"] = module.config.include_identity;
  j["steps"] = nlohmann::json::array();
  j["branches"] = nlohmann::json::array();
  for (std::size_t i = 0; i < module.branches.size(); ++i) {
    const auto& b = module.branches[i];
    j["steps"].push_back({b.spec.r1, b.spec.r2});
    nlohmann::json files;
    const std::pair<const char*, const Tensor4*> tensors[] = {
        {"kernel", &b.weights.kernel}, {"gamma", &b.bn.gamma}, {"beta", &b.bn.beta},
        {"running_mean", &b.bn.running_mean}, {"running_var", &b.bn.running_var}};
    for (const auto& [what, t] : tensors) {
      const std::string name = tensor_name(stem, i, what);
      write_tensor(dir / name, *t);
      files[what] = name;
    }
    j["branches"].push_back(files);
  }
  std::ofstream(dir / (stem + ".json")) << j.dump(2) << "\n";
}

TfaModule tfa_load(const std::filesystem::path& dir, const std::string& stem) {
  std::ifstream f(dir / (stem + ".json"));
  if (!f) throw std::runtime_error("tfa_load: missing manifest " + (dir / (stem + ".json")).string());
  const nlohmann::json j = nlohmann::json::parse(f);
  TfaConfig config;
  for (const auto& s : j.at("steps")) config.steps.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
  config.branch_channels = j.at("branch_channels").get<std::size_t>();
  config.kernel_half_extent = j.at("kernel_half_extent").get<int>();
  config.include_identity = j.at("include_identity").get<bool>();
  Rng unused(0);
  TfaModule m = tfa_build(unused, j.at("input_channels").get<std::size_t>(), config);
  for (std::size_t i = 0; i < m.branches.size(); ++i) {
    const auto& files = j.at("branches").at(i);
    auto& b = m.branches[i];
    b.weights.kernel = read_tensor(dir / files.at("kernel").get<std::string>());
    b.bn.gamma = read_tensor(dir / files.at("gamma").get<std::string>());
    b.bn.beta = read_tensor(dir / files.at("beta").get<std::string>());
    b.bn.running_mean = read_tensor(dir / files.at("running_mean").get<std::string>());
    b.bn.running_var = read_tensor(dir / files.at("running_var").get<std::string>());
    b.weights.check(b.spec);
  }
  return m;
}

}  // namespace tkcn
