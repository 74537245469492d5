#include "prism/numerics/adam.hpp"

#include <cmath>

namespace prism::num {

template <class Real>
Adam<Real>::Adam(ParameterList<Real> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.learning_rate > 0) || !(options_.epsilon > 0) || options_.beta1 < 0 || options_.beta1 >= 1 ||
      options_.beta2 < 0 || options_.beta2 >= 1) {
    throw ConfigError("invalid Adam hyperparameters");
  }
  for (const auto& p : params_) {
    first_.emplace_back(p.var.shape());
    second_.emplace_back(p.var.shape());
  }
}

template <class Real>
void Adam<Real>::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(options_.beta1, t);
  const double correction2 = 1.0 - std::pow(options_.beta2, t);
  const double b1 = options_.beta1, b2 = options_.beta2;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var<Real>& var = params_[i].var;
    Tensor<Real>& value = var.mutable_value();
    const Tensor<Real>& grad = var.grad();
    Tensor<Real>& m = first_[i];
    Tensor<Real>& v = second_[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad[k];
      const double mk = b1 * m[k] + (1.0 - b1) * g;
      const double vk = b2 * v[k] + (1.0 - b2) * g * g;
      m[k] = static_cast<Real>(mk);
      v[k] = static_cast<Real>(vk);
      const double update = options_.learning_rate * (mk / correction1) / (std::sqrt(vk / correction2) + options_.epsilon);
      value[k] = static_cast<Real>(value[k] - update);
    }
  }
}

template <class Real>
void Adam<Real>::zero_grad() {
  for (auto& p : params_) p.var.grad().fill(Real{0});
}

template class Adam<float>;
template class Adam<double>;

}  // namespace prism::num
