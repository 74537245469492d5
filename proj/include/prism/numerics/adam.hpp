#pragma once

#include <cstdint>

#include "prism/numerics/layers.hpp"

namespace prism::num {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected adaptive-moment optimizer over a fixed parameter list.
template <class Real>
class Adam {
 public:
  Adam(ParameterList<Real> params, AdamOptions options);

  void step();
  void zero_grad();

  std::uint64_t step_count() const noexcept { return steps_; }
  const AdamOptions& options() const noexcept { return options_; }
  const Tensor<Real>& first_moment(std::size_t i) const { return first_[i]; }
  const Tensor<Real>& second_moment(std::size_t i) const { return second_[i]; }

 private:
  ParameterList<Real> params_;
  AdamOptions options_;
  std::vector<Tensor<Real>> first_;
  std::vector<Tensor<Real>> second_;
  std::uint64_t steps_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace prism::num
