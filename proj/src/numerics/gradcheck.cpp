#include "prism/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace prism::num {

namespace {

// Tensors whose gradient is structurally zero only carry finite-difference noise.
constexpr double kScaleFloor = 1e-4;

double evaluate(const std::function<Var<double>()>& loss) {
  NoGradGuard guard;
  const double v = loss().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
  return v;
}

}  // namespace

GradCheckResult grad_check(const ParameterList<double>& params, const std::function<Var<double>()>& loss,
                           double eps) {
  if (!(eps > 0)) throw ConfigError("grad_check: eps must be positive");

  for (const auto& p : params) const_cast<Var<double>&>(p.var).grad().fill(0.0);
  Var<double> root = loss();
  if (!std::isfinite(root.item())) throw NumericError("grad_check: loss is not finite");
  backward(root);

  GradCheckResult result;
  for (const auto& p : params) {
    Var<double> var = p.var;
    Tensor<double> analytic = var.grad();
    if (analytic.size() != var.size()) analytic = Tensor<double>(var.shape());
    double max_diff = 0, max_a = 0, max_n = 0;
    for (std::size_t i = 0; i < var.size(); ++i) {
      const double saved = var.mutable_value()[i];
      var.mutable_value()[i] = saved + eps;
      const double plus = evaluate(loss);
      var.mutable_value()[i] = saved - eps;
      const double minus = evaluate(loss);
      var.mutable_value()[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      max_diff = std::max(max_diff, std::abs(analytic[i] - numeric));
      max_a = std::max(max_a, std::abs(analytic[i]));
      max_n = std::max(max_n, std::abs(numeric));
    }
    const double err = max_diff / std::max({max_a, max_n, kScaleFloor});
    result.per_parameter.push_back({p.name, err, max_a});
    result.max_relative_error = std::max(result.max_relative_error, err);
  }
  return result;
}

}  // namespace prism::num
