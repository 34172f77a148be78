#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "equirl/autodiff.hpp"

namespace equirl {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares backprop gradients of `loss` against central finite differences
/// over every scalar of every parameter. Relative error is
/// |a - n| / max(|a| + |n|, floor).
GradCheckResult gradient_check(const std::function<Var(Tape&)>& loss, std::span<Parameter* const> params,
                               double eps = 1e-5, double floor = 1e-3);

struct PrimitiveCheck {
  std::string name;
  GradCheckResult result;
};

/// Finite-difference check of every tape primitive on random inputs.
std::vector<PrimitiveCheck> check_primitives(std::uint64_t seed);

}  // namespace equirl
