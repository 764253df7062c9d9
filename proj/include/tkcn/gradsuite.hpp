#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tkcn/train.hpp"

namespace tkcn {

struct GradEntry {
  std::string target;
  std::string what;  // e.g. "k=1 r1=4 r2=3 d_input"
  GradCheckResult result;
  double tolerance = 0.0;
  bool pass() const { return result.max_rel_error < tolerance; }
};

/// kconv, tfa, loss, resize, model.
const std::vector<std::string>& gradcheck_targets();

/// Finite-difference suite for one target at its pinned tolerance:
///   kconv 1e-5 (whole operator grid), loss 1e-6, resize 1e-8,
///   tfa 1e-4 (train-mode BN; eval-mode entries 1e-5), model 1e-4 (eval-mode BN).
/// Each check differentiates f = sum(W * output) for a fixed random W, with a
/// relative step of 1e-2 for linear operators and 1e-4 for the loss. Checks
/// through ReLU start at 1e-5 (train-mode BN) or 1e-3 (eval-mode BN, piecewise
/// linear) and refine around kinks as described on GradCheckOptions.
/// Throws std::invalid_argument for an unknown target.
std::vector<GradEntry> run_gradcheck(const std::string& target, std::uint64_t seed);

}  // namespace tkcn
