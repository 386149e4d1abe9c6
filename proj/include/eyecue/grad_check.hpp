#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "eyecue/tensor.hpp"

namespace eyecue {

/// Evaluates the loss at `params`; when `grads` is non-null it must also add
/// the analytic gradient into it.
using LossFunction = std::function<double(const ParamStore<double>& params, ParamStore<double>* grads)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;  // "name[flat index]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic gradients with central differences on a uniformly
/// sampled subset of parameter elements (at least one). The numeric estimate
/// extrapolates central differences at `step` and `step / 2`, so its
/// truncation error is O(step^4). Relative error is
/// |a - n| / max(|a|, |n|, 1e-8). Throws NumericError naming the parameter
/// if any analytic gradient is non-finite.
GradCheckResult grad_check(ParamStore<double>& params, const LossFunction& loss, double sample_fraction,
                           double step = 1e-3, std::uint64_t seed = 0);

}  // namespace eyecue
