#include "tkcn/miniseg.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "tkcn/resize.hpp"
#include "tkcn/tensor_io.hpp"

namespace tkcn {

void MiniSegConfig::validate() const {
  if (width < 1) throw std::invalid_argument("MiniSegConfig: width must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("MiniSegConfig: need at least 2 classes");
  for (const auto& f : body) {
    if (f.r1 < 1 || f.r2 < 1 || f.r2 > f.r1) {
      throw std::invalid_argument("MiniSegConfig: body factors (" + std::to_string(f.r1) + "," +
                                  std::to_string(f.r2) + ") violate 1 <= r2 <= r1");
    }
  }
  if (use_tfa) head.validate();
}

namespace {

const BoxConvGeometry kClassifierGeometry{0, 1, 1, 1, {}};

ConvBnLayer make_layer(Rng& rng, const ConvSpec& spec, const BoxConvGeometry& geometry) {
  return {geometry, he_init(rng, spec).kernel, BatchNormState::identity(spec.c_out)};
}

Tensor4 layer_forward(const ConvBnLayer& layer, Tensor4 x, Mode mode, BatchNormState* running,
                      LayerCache* cache) {
  ConvColumns columns;
  const Tensor4 z = box_conv_forward(x, layer.kernel, nullptr, layer.geometry, cache != nullptr ? &columns : nullptr);
  BatchNormCache bn_cache;
  const Tensor4 normed = running != nullptr ? batchnorm_forward(z, *running, mode, &bn_cache)
                                            : batchnorm_forward(z, layer.bn, &bn_cache);
  Tensor4 out = relu(normed);
  if (cache != nullptr) *cache = {std::move(x), std::move(columns), std::move(bn_cache), out};
  return out;
}

MiniSegResult forward_impl(const MiniSegModel& model, const Tensor4& x, Mode mode, MiniSegModel* mutable_model) {
  if (x.c() != 3) throw std::invalid_argument("miniseg: expected 3 input channels, got " + std::to_string(x.c()));
  if (x.h() % 4 != 0 || x.w() % 4 != 0 || x.h() == 0 || x.w() == 0) {
    throw std::invalid_argument("miniseg: input " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                                " is not divisible by 4");
  }
  MiniSegResult r;
  r.cache.in_h = x.h();
  r.cache.in_w = x.w();
  r.cache.stem.resize(model.stem.size());
  r.cache.body.resize(model.body.size());
  Tensor4 h = x;
  for (std::size_t i = 0; i < model.stem.size(); ++i) {
    BatchNormState* running = mutable_model != nullptr ? &mutable_model->stem[i].bn : nullptr;
    h = layer_forward(model.stem[i], std::move(h), mode, running, &r.cache.stem[i]);
  }
  for (std::size_t i = 0; i < model.body.size(); ++i) {
    BatchNormState* running = mutable_model != nullptr ? &mutable_model->body[i].bn : nullptr;
    h = layer_forward(model.body[i], std::move(h), mode, running, &r.cache.body[i]);
  }
  if (model.config.use_tfa) {
    TfaResult head = mutable_model != nullptr ? tfa_forward(h, mutable_model->head, mode)
                                              : tfa_forward(h, model.head);
    h = std::move(head.y);
    r.cache.head = std::move(head.cache);
  }
  r.cache.classifier_input = h;
  const Tensor4 low = box_conv_forward(h, model.classifier_kernel, &model.classifier_bias, kClassifierGeometry);
  r.logits = bilinear_resize(low, x.h(), x.w());
  return r;
}

}  // namespace

MiniSegModel miniseg_build(Rng& rng, const MiniSegConfig& config) {
  config.validate();
  MiniSegModel m;
  m.config = config;
  const std::size_t widths[3] = {config.width, 2 * config.width, 4 * config.width};
  std::size_t c_in = 3;
  for (int i = 0; i < 3; ++i) {
    const ConvSpec spec{1, 1, 1, c_in, widths[i], Padding::Same};
    m.stem.push_back(make_layer(rng, spec, BoxConvGeometry{1, 1, 1, i == 0 ? 1 : 2, {1, 1, 1, 1}}));
    c_in = widths[i];
  }
  for (const auto& f : config.body) {
    const ConvSpec spec{1, f.r1, f.r2, c_in, c_in, Padding::Same};
    m.body.push_back(make_layer(rng, spec, BoxConvGeometry::from_spec(spec)));
  }
  std::size_t head_channels = c_in;
  if (config.use_tfa) {
    m.head = tfa_build(rng, c_in, config.head);
    head_channels = m.head.output_channels();
  }
  const ConvSpec cls{0, 1, 1, head_channels, config.num_classes, Padding::Same};
  KernelWeights w = he_init(rng, cls);
  m.classifier_kernel = std::move(w.kernel);
  m.classifier_bias = std::move(w.bias);
  return m;
}

MiniSegResult miniseg_forward(MiniSegModel& model, const Tensor4& x, Mode mode) {
  return forward_impl(model, x, mode, &model);
}

MiniSegResult miniseg_forward(const MiniSegModel& model, const Tensor4& x) {
  return forward_impl(model, x, Mode::Eval, nullptr);
}

ParamGroup miniseg_params(MiniSegModel& model) {
  ParamGroup g;
  auto add_layers = [&](std::vector<ConvBnLayer>& layers, const std::string& stem) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = stem + std::to_string(i);
      g.add(p + ".kernel", layers[i].kernel, true);
      g.add(p + ".gamma", layers[i].bn.gamma, false);
      g.add(p + ".beta", layers[i].bn.beta, false);
    }
  };
  add_layers(model.stem, "stem");
  add_layers(model.body, "body");
  if (model.config.use_tfa) {
    for (std::size_t i = 0; i < model.head.branches.size(); ++i) {
      const std::string p = "head" + std::to_string(i);
      g.add(p + ".kernel", model.head.branches[i].weights.kernel, true);
      g.add(p + ".gamma", model.head.branches[i].bn.gamma, false);
      g.add(p + ".beta", model.head.branches[i].bn.beta, false);
    }
  }
  g.add("classifier.kernel", model.classifier_kernel, true);
  g.add("classifier.bias", model.classifier_bias, false);
  return g;
}

Tensor4 miniseg_backward(const MiniSegModel& model, const MiniSegCache& cache, const Tensor4& d_logits,
                         ParamGroup& params, bool need_input) {
  const std::size_t expected = 3 * (model.stem.size() + model.body.size()) +
                               (model.config.use_tfa ? 3 * model.head.branches.size() : 0) + 2;
  if (params.size() != expected) throw std::invalid_argument("miniseg_backward: parameter group does not match model");
  const Tensor4& feat = cache.classifier_input;
  if (d_logits.shape() != Shape{feat.n(), model.config.num_classes, cache.in_h, cache.in_w}) {
    throw std::invalid_argument("miniseg_backward: gradient shape " + to_string(d_logits.shape()) +
                                " does not match logits");
  }
  auto& ps = params.params();
  std::size_t slot = ps.size();
  auto set = [&](std::size_t index, Tensor4 grad) {
    if (grad.shape() != ps[index].value->shape()) throw std::logic_error("miniseg_backward: gradient shape");
    ps[index].grad = std::move(grad);
  };

  const Tensor4 d_low = bilinear_resize_backward(d_logits, feat.h(), feat.w());
  ConvGrads cls = box_conv_backward(feat, model.classifier_kernel, kClassifierGeometry, d_low, true);
  set(--slot, std::move(cls.d_bias));
  set(--slot, std::move(cls.d_kernel));
  Tensor4 d = std::move(cls.d_input);

  if (model.config.use_tfa) {
    TfaGrads head = tfa_backward(cache.head, model.head, d);
    for (std::size_t i = head.branches.size(); i-- > 0;) {
      set(--slot, std::move(head.branches[i].d_beta));
      set(--slot, std::move(head.branches[i].d_gamma));
      set(--slot, std::move(head.branches[i].d_kernel));
    }
    d = std::move(head.d_input);
  }

  auto back_layers = [&](const std::vector<ConvBnLayer>& layers, const std::vector<LayerCache>& caches,
                         bool input_needed_at_front) {
    for (std::size_t i = layers.size(); i-- > 0;) {
      const Tensor4 d_norm = relu_backward(caches[i].output, d);
      BatchNormGrads bn = batchnorm_backward(caches[i].bn, layers[i].bn, d_norm);
      const bool need = i > 0 || input_needed_at_front;
      ConvGrads conv = box_conv_backward(caches[i].input, layers[i].kernel, layers[i].geometry, bn.d_input, need,
                                         &caches[i].columns);
      set(--slot, std::move(bn.d_beta));
      set(--slot, std::move(bn.d_gamma));
      set(--slot, std::move(conv.d_kernel));
      d = std::move(conv.d_input);
    }
  };
  back_layers(model.body, cache.body, true);
  back_layers(model.stem, cache.stem, need_input);
  return need_input ? d : Tensor4();
}

LabelMap argmax_labels(const Tensor4& scores) {
  LabelMap out(scores.n(), scores.h(), scores.w());
  const std::size_t hw = scores.h() * scores.w();
  for (std::size_t n = 0; n < scores.n(); ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      std::size_t best = 0;
      double best_v = scores[(n * scores.c()) * hw + i];
      for (std::size_t c = 1; c < scores.c(); ++c) {
        const double v = scores[(n * scores.c() + c) * hw + i];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out.data[n * hw + i] = static_cast<std::int32_t>(best);
    }
  }
  return out;
}

LabelMap eval_multiscale(const MiniSegModel& model, const Tensor4& image, const std::vector<double>& scales,
                         bool flip) {
  if (scales.empty()) throw std::invalid_argument("eval_multiscale: empty scale list");
  const std::size_t h = image.h();
  const std::size_t w = image.w();
  Tensor4 acc(Shape{image.n(), model.config.num_classes, h, w});
  std::size_t passes = 0;
  auto side = [](std::size_t s, double scale) {
    if (!(scale > 0.0)) throw std::invalid_argument("eval_multiscale: scales must be > 0");
    const long v = std::lround(static_cast<double>(s) * scale / 4.0) * 4;
    return static_cast<std::size_t>(std::max(4L, v));
  };
  for (double scale : scales) {
    const Tensor4 scaled_image = bilinear_resize(image, side(h, scale), side(w, scale));
    const Tensor4 probs = softmax_channels(miniseg_forward(model, scaled_image).logits);
    acc = axpby(1.0, acc, 1.0, bilinear_resize(probs, h, w));
    ++passes;
    if (flip) {
      const Tensor4 mirrored = softmax_channels(miniseg_forward(model, mirror_horizontal(scaled_image)).logits);
      acc = axpby(1.0, acc, 1.0, bilinear_resize(mirror_horizontal(mirrored), h, w));
      ++passes;
    }
  }
  return argmax_labels(scaled(acc, 1.0 / static_cast<double>(passes)));
}

void miniseg_save(const MiniSegModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  const auto& c = model.config;
  j["width"] = c.width;
  j["num_classes"] = c.num_classes;
  j["use_tfa"] = c.use_tfa;
  j["body"] = nlohmann::json::array();
  for (const auto& f : c.body) j["body"].push_back({f.r1, f.r2});
  nlohmann::json files = nlohmann::json::object();
  auto save_layers = [&](const std::vector<ConvBnLayer>& layers, const std::string& stem) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = stem + std::to_string(i);
      const std::pair<const char*, const Tensor4*> tensors[] = {
          {"kernel", &layers[i].kernel}, {"gamma", &layers[i].bn.gamma}, {"beta", &layers[i].bn.beta},
          {"running_mean", &layers[i].bn.running_mean}, {"running_var", &layers[i].bn.running_var}};
      for (const auto& [what, t] : tensors) {
        const std::string name = p + "_" + what + ".tkt";
        write_tensor(dir / name, *t);
        files[p][what] = name;
      }
    }
  };
  save_layers(model.stem, "stem");
  save_layers(model.body, "body");
  write_tensor(dir / "classifier_kernel.tkt", model.classifier_kernel);
  write_tensor(dir / "classifier_bias.tkt", model.classifier_bias);
  files["classifier"] = {{"kernel", "classifier_kernel.tkt"}, {"bias", "classifier_bias.tkt"}};
  if (c.use_tfa) {
    tfa_save(model.head, dir, "head");
    files["head"] = "head.json";
  }
  j["files"] = files;
  std::ofstream f(dir / "model.json");
  if (!f) throw std::runtime_error("miniseg_save: cannot write " + (dir / "model.json").string());
  f << j.dump(2) << "\n";
}

MiniSegModel miniseg_load(const std::filesystem::path& dir) {
  std::ifstream f(dir / "model.json");
  if (!f) throw std::runtime_error("miniseg_load: missing " + (dir / "model.json").string());
  const nlohmann::json j = nlohmann::json::parse(f);
  MiniSegConfig c;
  c.width = j.at("width").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.use_tfa = j.at("use_tfa").get<bool>();
  c.body.clear();
  for (const auto& b : j.at("body")) c.body.push_back({b.at(0).get<int>(), b.at(1).get<int>()});
  if (c.use_tfa) c.head = tfa_load(dir, "head").config;
  Rng unused(0);
  MiniSegModel m = miniseg_build(unused, c);
  const auto& files = j.at("files");
  auto load_layers = [&](std::vector<ConvBnLayer>& layers, const std::string& stem) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& e = files.at(stem + std::to_string(i));
      auto load = [&](const char* what, Tensor4& t) {
        Tensor4 v = read_tensor(dir / e.at(what).get<std::string>());
        if (v.shape() != t.shape()) throw std::runtime_error("miniseg_load: shape mismatch in " + stem);
        t = std::move(v);
      };
      load("kernel", layers[i].kernel);
      load("gamma", layers[i].bn.gamma);
      load("beta", layers[i].bn.beta);
      load("running_mean", layers[i].bn.running_mean);
      load("running_var", layers[i].bn.running_var);
    }
  };
  load_layers(m.stem, "stem");
  load_layers(m.body, "body");
  m.classifier_kernel = read_tensor(dir / files.at("classifier").at("kernel").get<std::string>());
  m.classifier_bias = read_tensor(dir / files.at("classifier").at("bias").get<std::string>());
  if (c.use_tfa) m.head = tfa_load(dir, "head");
  return m;
}

}  // namespace tkcn
