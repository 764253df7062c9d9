#include "tkcn/gradsuite.hpp"

#include <stdexcept>

#include "tkcn/kconv.hpp"
#include "tkcn/miniseg.hpp"
#include "tkcn/resize.hpp"
#include "tkcn/tfa.hpp"

namespace tkcn {

namespace {

// Relative steps. Linear maps have no truncation error, so a large step only
// shrinks roundoff; smooth nonlinear pipelines balance the two near 1e-5.
GradCheckOptions step(double h, GradCheckOptions o = {}) {
  o.step = h;
  return o;
}
// Same, for pipelines containing ReLU: a stencil whose one-sided slopes
// disagree by more than a tenth of the tolerance is shrunk.
GradCheckOptions kinked(double h, double tol, GradCheckOptions o = {}) {
  o.step = h;
  o.kink_refinements = 6;
  o.kink_tolerance = tol / 10.0;
  return o;
}
constexpr double kLinearStep = 1e-2;
constexpr double kLossStep = 1e-4;
constexpr double kNetworkStep = 1e-5;
// Eval-mode networks are piecewise linear: start wide, let kinks shrink it.
constexpr double kPiecewiseLinearStep = 1e-3;

Tensor4 random_normal(Rng& rng, Shape s, double sd = 1.0) {
  Tensor4 t(s);
  for (auto& v : t.data()) v = rng.normal(0.0, sd);
  return t;
}

Tensor4 random_uniform(Rng& rng, Shape s, double lo, double hi) {
  Tensor4 t(s);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

void randomize_bn(Rng& rng, BatchNormState& bn) {
  const Shape s = bn.gamma.shape();
  bn.gamma = random_uniform(rng, s, 0.5, 1.5);
  bn.beta = random_normal(rng, s, 0.1);
  bn.running_mean = random_normal(rng, s, 0.1);
  bn.running_var = random_uniform(rng, s, 0.5, 1.5);
}

GradEntry entry(const std::string& target, std::string what, GradCheckResult r, double tol) {
  return {target, std::move(what), r, tol};
}

std::vector<GradEntry> kconv_suite(std::uint64_t seed) {
  const std::vector<std::pair<int, int>> factors = {{1, 1}, {2, 1}, {2, 2}, {3, 2}, {4, 3}, {6, 5}, {10, 7}};
  std::vector<GradEntry> out;
  Rng rng = Rng(seed).split(11);
  for (int k = 0; k <= 2; ++k) {
    for (auto [r1, r2] : factors) {
      const ConvSpec spec{k, r1, r2, 2, 2, Padding::Same};
      const Tensor4 a = random_normal(rng, Shape{1, 2, 5, 5});
      const auto side = static_cast<std::size_t>(spec.side());
      KernelWeights w{random_normal(rng, Shape{2, 2, side, side}),
                      random_normal(rng, Shape{1, 2, 1, 1})};
      const Tensor4 weight = random_normal(rng, Shape{1, 2, 5, 5});
      const ConvGrads g = kconv_backward(a, w, spec, weight);
      const std::string name = spec.describe();
      out.push_back(entry("kconv", name + " d_input",
                          grad_check([&](const Tensor4& p) { return dot(weight, kconv_forward_factored(p, w, spec)); },
                                     a, g.d_input, step(kLinearStep)),
                          1e-5));
      out.push_back(entry("kconv", name + " d_kernel",
                          grad_check(
                              [&](const Tensor4& p) {
                                KernelWeights q{p, w.bias};
                                return dot(weight, kconv_forward_factored(a, q, spec));
                              },
                              w.kernel, g.d_kernel, step(kLinearStep)),
                          1e-5));
      out.push_back(entry("kconv", name + " d_bias",
                          grad_check(
                              [&](const Tensor4& p) {
                                KernelWeights q{w.kernel, p};
                                return dot(weight, kconv_forward_factored(a, q, spec));
                              },
                              w.bias, g.d_bias, step(kLinearStep)),
                          1e-5));
    }
  }
  return out;
}

std::vector<GradEntry> loss_suite(std::uint64_t seed) {
  Rng rng = Rng(seed).split(12);
  const Tensor4 logits = random_normal(rng, Shape{2, 4, 5, 5}, 2.0);
  LabelMap labels(2, 5, 5);
  for (auto& v : labels.data) v = rng.uniform() < 0.15 ? kDefaultIgnoreIndex : static_cast<std::int32_t>(rng.below(4));
  const LossResult r = cross_entropy_masked(logits, labels, kDefaultIgnoreIndex);
  return {entry("loss", "masked cross-entropy d_logits",
                grad_check([&](const Tensor4& p) { return cross_entropy_masked(p, labels, kDefaultIgnoreIndex).loss; },
                           logits, r.d_logits, step(kLossStep)),
                1e-6)};
}

std::vector<GradEntry> resize_suite(std::uint64_t seed) {
  Rng rng = Rng(seed).split(13);
  std::vector<GradEntry> out;
  const std::pair<Shape, std::pair<std::size_t, std::size_t>> cases[] = {
      {Shape{1, 2, 4, 4}, {8, 8}}, {Shape{1, 2, 8, 8}, {3, 5}}, {Shape{2, 1, 5, 3}, {7, 4}}};
  for (const auto& [in, size] : cases) {
    const auto [oh, ow] = size;
    const Tensor4 x = random_normal(rng, in);
    const Tensor4 weight = random_normal(rng, Shape{in.n, in.c, oh, ow});
    const Tensor4 analytic = bilinear_resize_backward(weight, in.h, in.w);
    out.push_back(entry("resize", to_string(in) + " -> " + std::to_string(oh) + "x" + std::to_string(ow),
                        grad_check([&](const Tensor4& p) { return dot(weight, bilinear_resize(p, oh, ow)); }, x,
                                   analytic, step(kLinearStep)),
                        1e-8));
  }
  return out;
}

std::vector<GradEntry> tfa_suite(std::uint64_t seed) {
  Rng rng = Rng(seed).split(14);
  TfaConfig cfg{{{2, 1}, {3, 2}}, 2, 1, true};
  TfaModule module = tfa_build(rng, 8, cfg);
  for (auto& b : module.branches) randomize_bn(rng, b.bn);
  const Tensor4 x = random_normal(rng, Shape{2, 8, 6, 6});
  const Tensor4 weight = random_normal(rng, Shape{2, module.output_channels(), 6, 6});
  std::vector<GradEntry> out;

  for (Mode mode : {Mode::Train, Mode::Eval}) {
    const bool train = mode == Mode::Train;
    const double tol = train ? 1e-4 : 1e-5;
    const std::string tag = train ? "train-mode BN " : "eval-mode BN ";
    auto forward = [&](const Tensor4& input, const TfaModule& m) {
      if (!train) return tfa_forward(input, m);
      TfaModule scratch = m;  // train mode updates running statistics
      return tfa_forward(input, scratch, Mode::Train);
    };
    const TfaResult base = forward(x, module);
    const TfaGrads g = tfa_backward(base.cache, module, weight);
    out.push_back(entry("tfa", tag + "d_input",
                        grad_check([&](const Tensor4& p) { return dot(weight, forward(p, module).y); }, x, g.d_input, kinked(train ? kNetworkStep : kPiecewiseLinearStep, tol)),
                        tol));
    for (std::size_t i = 0; i < module.branches.size(); ++i) {
      const std::string b = tag + "branch " + std::to_string(i) + " ";
      auto param_check = [&](auto select, const Tensor4& analytic, const char* what) {
        const Tensor4& value = select(module.branches[i]);
        out.push_back(entry("tfa", b + what,
                            grad_check(
                                [&](const Tensor4& p) {
                                  TfaModule m = module;
                                  select(m.branches[i]) = p;
                                  return dot(weight, forward(x, m).y);
                                },
                                value, analytic, kinked(train ? kNetworkStep : kPiecewiseLinearStep, tol)),
                            tol));
      };
      param_check([](auto& br) -> auto& { return br.weights.kernel; }, g.branches[i].d_kernel, "d_kernel");
      param_check([](auto& br) -> auto& { return br.bn.gamma; }, g.branches[i].d_gamma, "d_gamma");
      param_check([](auto& br) -> auto& { return br.bn.beta; }, g.branches[i].d_beta, "d_beta");
    }
  }
  return out;
}

std::vector<GradEntry> model_suite(std::uint64_t seed) {
  Rng rng = Rng(seed).split(15);
  MiniSegConfig cfg;
  cfg.width = 8;
  MiniSegModel model = miniseg_build(rng, cfg);
  for (auto& l : model.stem) randomize_bn(rng, l.bn);
  for (auto& l : model.body) randomize_bn(rng, l.bn);
  for (auto& b : model.head.branches) randomize_bn(rng, b.bn);
  model.classifier_bias = random_normal(rng, model.classifier_bias.shape(), 0.1);

  const Tensor4 x = random_uniform(rng, Shape{2, 3, 16, 16}, 0.0, 1.0);
  const Tensor4 weight = random_normal(rng, Shape{2, cfg.num_classes, 16, 16});
  const MiniSegResult base = miniseg_forward(static_cast<const MiniSegModel&>(model), x);
  ParamGroup params = miniseg_params(model);
  const Tensor4 d_input = miniseg_backward(model, base.cache, weight, params, true);

  std::vector<GradEntry> out;
  out.push_back(entry("model", "eval-mode BN d_input",
                      grad_check(
                          [&](const Tensor4& p) {
                            return dot(weight, miniseg_forward(static_cast<const MiniSegModel&>(model), p).logits);
                          },
                          x, d_input, kinked(kPiecewiseLinearStep, 1e-4)),
                      1e-4));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param& param = params.params()[i];
    GradCheckOptions opts;
    opts.max_coords = 64;
    opts.seed = seed + i;
    out.push_back(entry("model", "eval-mode BN " + param.name,
                        grad_check(
                            [&](const Tensor4& p) {
                              MiniSegModel m = model;
                              ParamGroup pg = miniseg_params(m);
                              *pg.params()[i].value = p;
                              return dot(weight, miniseg_forward(static_cast<const MiniSegModel&>(m), x).logits);
                            },
                            *param.value, param.grad, kinked(kPiecewiseLinearStep, 1e-4, opts)),
                        1e-4));
  }
  return out;
}

}  // namespace

const std::vector<std::string>& gradcheck_targets() {
  static const std::vector<std::string> t = {"kconv", "tfa", "loss", "resize", "model"};
  return t;
}

std::vector<GradEntry> run_gradcheck(const std::string& target, std::uint64_t seed) {
  if (target == "kconv") return kconv_suite(seed);
  if (target == "tfa") return tfa_suite(seed);
  if (target == "loss") return loss_suite(seed);
  if (target == "resize") return resize_suite(seed);
  if (target == "model") return model_suite(seed);
  throw std::invalid_argument("unknown gradcheck target '" + target + "' (expected kconv, tfa, loss, resize, model)");
}

}  // namespace tkcn
