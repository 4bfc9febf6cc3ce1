#pragma once

#include <string>
#include <vector>

namespace mafaseg {

struct GradCheckResult {
  std::string op;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradCheckOptions {
  int seeds = 20;
  double h = 1e-5;
  /// Parameters sampled per seed in the end-to-end checks.
  int sampled_params = 50;
  bool end_to_end = true;
  /// Scales every analytic gradient by 1.01 (negative control).
  bool perturb = false;
};

/// Central finite-difference checks in double precision of every
/// differentiable op (per-op tolerance 1e-4) and of the full training loss
/// L = L_S + L_C through the network (tolerance 1e-3). Relative error per
/// element is |a - n| / max(|a|, |n|, 1e-6).
std::vector<GradCheckResult> run_gradient_checks(const GradCheckOptions& opts = {});

/// `op,max_rel_err,pass` lines with a header.
std::string format_gradcheck(const std::vector<GradCheckResult>& results);

}  // namespace mafaseg
