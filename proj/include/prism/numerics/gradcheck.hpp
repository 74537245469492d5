#pragma once

#include <functional>
#include <string>
#include <vector>

#include "prism/numerics/layers.hpp"

namespace prism::num {

struct ParameterGradError {
  std::string name;
  double relative_error = 0.0;
  double max_abs_analytic = 0.0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::vector<ParameterGradError> per_parameter;
};

/// Compares reverse-mode gradients against central differences
/// (f(theta + eps) - f(theta - eps)) / (2 eps) for every entry of every parameter.
///
/// Each parameter tensor's error is max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|, 1e-4);
/// the result is the maximum over parameter tensors. `loss` must rebuild the graph from
/// the current parameter values on each call. Throws NumericError on a non-finite loss.
GradCheckResult grad_check(const ParameterList<double>& params, const std::function<Var<double>()>& loss,
                           double eps);

inline GradCheckResult grad_check(const ParamModule<double>& module, const std::function<Var<double>()>& loss,
                                  double eps) {
  return grad_check(module.parameters(), loss, eps);
}

}  // namespace prism::num
