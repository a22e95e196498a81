#pragma once

// Central finite-difference checks of the analytic gradients produced by the
// tape, for every differentiable objective in the library.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "protofuse/autodiff.hpp"

namespace protofuse {

struct GradCheckResult {
  std::string name;
  double max_relative_error = 0.0;
  long n_checked = 0;
  bool passed = false;
};

using ScalarFn = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

// Relative error per input is |a - n|_2 / max(|a|_2, |n|_2), falling back to
// the absolute error when both norms are below 1e-8.
GradCheckResult check_gradient(const std::string& name, const ScalarFn& f, const std::vector<Matrix>& inputs,
                               double tolerance = 1e-4, double step = 1e-5);

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed = 7, double tolerance = 1e-4);

}  // namespace protofuse
