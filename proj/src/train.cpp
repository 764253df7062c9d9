#include "tkcn/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace tkcn {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw std::invalid_argument("TrainConfig: base_lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
  if (!(power > 0.0)) throw std::invalid_argument("TrainConfig: power must be > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  if (max_iter == 0) throw std::invalid_argument("TrainConfig: max_iter must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
}

double poly_lr(std::size_t iter, const TrainConfig& cfg) {
  if (iter > cfg.max_iter) {
    throw std::invalid_argument("poly_lr: iter " + std::to_string(iter) + " exceeds max_iter " +
                                std::to_string(cfg.max_iter));
  }
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(cfg.max_iter);
  return cfg.base_lr * std::pow(frac, cfg.power);
}

Tensor4 softmax_channels(const Tensor4& logits) {
  Tensor4 out(logits.shape());
  const std::size_t hw = logits.h() * logits.w();
  const std::size_t classes = logits.c();
  for (std::size_t n = 0; n < logits.n(); ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      double mx = -INFINITY;
      for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, logits[(n * classes + c) * hw + i]);
      double z = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        const double e = std::exp(logits[(n * classes + c) * hw + i] - mx);
        out[(n * classes + c) * hw + i] = e;
        z += e;
      }
      for (std::size_t c = 0; c < classes; ++c) out[(n * classes + c) * hw + i] /= z;
    }
  }
  return out;
}

LossResult cross_entropy_masked(const Tensor4& logits, const LabelMap& labels, int ignore_index) {
  if (labels.n != logits.n() || labels.h != logits.h() || labels.w != logits.w()) {
    throw std::invalid_argument("cross_entropy_masked: labels (" + std::to_string(labels.n) + "," +
                                std::to_string(labels.h) + "," + std::to_string(labels.w) +
                                ") do not match logits " + to_string(logits.shape()));
  }
  const std::size_t classes = logits.c();
  const std::size_t hw = logits.h() * logits.w();
  LossResult r;
  r.d_logits = Tensor4(logits.shape());
  for (std::size_t n = 0; n < labels.n; ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      const int label = labels.data[n * hw + i];
      if (label == ignore_index) continue;
      if (label < 0 || static_cast<std::size_t>(label) >= classes) {
        throw std::invalid_argument("cross_entropy_masked: label " + std::to_string(label) +
                                    " out of range at (n=" + std::to_string(n) +
                                    ", y=" + std::to_string(i / logits.w()) +
                                    ", x=" + std::to_string(i % logits.w()) + ")");
      }
      ++r.counted;
    }
  }
  if (r.counted == 0) return r;

  const double inv = 1.0 / static_cast<double>(r.counted);
  for (std::size_t n = 0; n < labels.n; ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      const int label = labels.data[n * hw + i];
      if (label == ignore_index) continue;
      double mx = -INFINITY;
      for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, logits[(n * classes + c) * hw + i]);
      double z = 0.0;
      for (std::size_t c = 0; c < classes; ++c) z += std::exp(logits[(n * classes + c) * hw + i] - mx);
      const double log_z = std::log(z) + mx;
      r.loss += log_z - logits[(n * classes + static_cast<std::size_t>(label)) * hw + i];
      for (std::size_t c = 0; c < classes; ++c) {
        const std::size_t idx = (n * classes + c) * hw + i;
        const double p = std::exp(logits[idx] - log_z);
        r.d_logits[idx] = (p - (c == static_cast<std::size_t>(label) ? 1.0 : 0.0)) * inv;
      }
    }
  }
  r.loss *= inv;
  return r;
}

void ParamGroup::add(std::string name, Tensor4& value, bool decay) {
  params_.push_back({std::move(name), &value, Tensor4(value.shape()), Tensor4(value.shape()), decay});
}

Param& ParamGroup::at(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("ParamGroup: no parameter named " + name);
}

void ParamGroup::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

void sgd_step(ParamGroup& params, double lr, const TrainConfig& cfg) {
  for (auto& p : params.params()) {
    Tensor4& w = *p.value;
    const double wd = p.decay ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      p.velocity[i] = cfg.momentum * p.velocity[i] + (p.grad[i] + wd * w[i]);
      w[i] -= lr * p.velocity[i];
    }
  }
}

GradCheckResult grad_check(const std::function<double(const Tensor4&)>& f, const Tensor4& x,
                           const Tensor4& analytic, const GradCheckOptions& opts) {
  if (analytic.shape() != x.shape()) throw std::invalid_argument("grad_check: gradient shape mismatch");
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (opts.max_coords != 0 && opts.max_coords < coords.size()) {
    Rng rng(opts.seed);
    // Partial Fisher-Yates: the first max_coords entries become the sample.
    for (std::size_t i = 0; i < opts.max_coords; ++i) {
      std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    }
    coords.resize(opts.max_coords);
  }
  GradCheckResult r;
  Tensor4 probe = x;
  const double f0 = opts.kink_refinements > 0 ? f(x) : 0.0;
  for (std::size_t idx : coords) {
    const double orig = x[idx];
    double h = opts.step * std::max(1.0, std::abs(orig));
    double numeric = 0.0;
    double best = std::numeric_limits<double>::infinity();
    double prev_ahead = 0.0;
    double prev_behind = 0.0;
    for (std::size_t attempt = 0;; ++attempt) {
      probe[idx] = orig + h;
      const double fp = f(probe);
      probe[idx] = orig - h;
      const double fm = f(probe);
      probe[idx] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw std::runtime_error("grad_check: f is not finite near coordinate " + std::to_string(idx));
      }
      const double central = (fp - fm) / (2.0 * h);
      if (opts.kink_refinements == 0) {
        numeric = central;
        break;
      }
      // Each candidate gets an error estimate: for the central quotient the
      // gap between one-sided slopes (a kink inside the stencil), for a
      // one-sided quotient its drift since the previous step. Both add the
      // roundoff floor, which matters once f is quantized at tiny h. The
      // candidate with the smallest estimate wins.
      const double ahead = (fp - f0) / h;
      const double behind = (f0 - fm) / h;
      const double roundoff =
          4.0 * std::numeric_limits<double>::epsilon() * std::max({std::abs(f0), std::abs(fp), std::abs(fm)}) / h;
      auto consider = [&](double value, double estimate) {
        if (estimate < best) {
          best = estimate;
          numeric = value;
        }
      };
      const double gap = std::abs(ahead - behind);
      consider(central, gap + roundoff);
      if (attempt > 0) {
        consider(ahead, std::abs(ahead - prev_ahead) + 2.0 * roundoff);
        consider(behind, std::abs(behind - prev_behind) + 2.0 * roundoff);
      }
      prev_ahead = ahead;
      prev_behind = behind;
      if (gap <= opts.kink_tolerance * std::max({std::abs(ahead), std::abs(behind), 1e-12}) ||
          attempt == opts.kink_refinements) {
        break;
      }
      if (attempt == 0) ++r.refined;
      h /= 10.0;
    }
    const double a = analytic[idx];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
    const double err = std::abs(a - numeric) / denom;
    if (err > r.max_rel_error || r.checked == 0) {
      r.max_rel_error = err;
      r.worst_index = idx;
      r.analytic = a;
      r.numeric = numeric;
    }
    ++r.checked;
  }
  return r;
}

}  // namespace tkcn
