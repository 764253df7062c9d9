#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tkcn/rng.hpp"
#include "tkcn/sample.hpp"
#include "tkcn/tensor.hpp"

namespace tkcn {

struct TrainConfig {
  double base_lr = 0.001;
  double power = 0.9;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  std::size_t max_iter = 1000;
  std::size_t batch_size = 8;
  std::uint64_t seed = 7;
  int ignore_index = kDefaultIgnoreIndex;

  void validate() const;
};

/// base_lr * (1 - iter / max_iter)^power.
double poly_lr(std::size_t iter, const TrainConfig& cfg);

struct LossResult {
  double loss = 0.0;
  Tensor4 d_logits;
  std::size_t counted = 0;  // non-ignored pixels
};

/// Mean over non-ignored pixels of -log softmax(logits)[label].
LossResult cross_entropy_masked(const Tensor4& logits, const LabelMap& labels, int ignore_index);

Tensor4 softmax_channels(const Tensor4& logits);

struct Param {
  std::string name;
  Tensor4* value = nullptr;
  Tensor4 grad;
  Tensor4 velocity;
  bool decay = true;  // weight decay applies to convolution kernels only
};

class ParamGroup {
 public:
  void add(std::string name, Tensor4& value, bool decay);
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  Param& at(const std::string& name);
  void zero_grad();
  std::size_t size() const { return params_.size(); }

 private:
  std::vector<Param> params_;
};

/// v <- momentum v + (g + wd w); w <- w - lr v.
void sgd_step(ParamGroup& params, double lr, const TrainConfig& cfg);

struct GradCheckOptions {
  double step = 1e-6;              // h = step * max(1, |x_i|)
  std::size_t max_coords = 0;      // 0 checks every coordinate
  std::uint64_t seed = 1;          // coordinate subsample
  // ReLU networks are only piecewise smooth. When the one-sided slopes
  // (f(x+h) - f(x)) / h and (f(x) - f(x-h)) / h differ by more than
  // kink_tolerance relative, the stencil straddles a kink; h shrinks 10x and
  // the coordinate is retried, at most kink_refinements times. Across the
  // tried steps, the central or one-sided quotient with the smallest error
  // estimate is reported.
  std::size_t kink_refinements = 0;
  double kink_tolerance = 1e-3;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  std::size_t refined = 0;  // coordinates that needed a smaller step
};

/// Central differences of f at x against an analytic gradient. Relative error
/// is |a - n| / max(|a|, |n|, 1e-12).
GradCheckResult grad_check(const std::function<double(const Tensor4&)>& f, const Tensor4& x,
                           const Tensor4& analytic, const GradCheckOptions& opts = {});

}  // namespace tkcn
