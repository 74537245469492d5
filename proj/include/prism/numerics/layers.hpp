#pragma once

#include <random>
#include <string>
#include <vector>

#include "prism/numerics/ops.hpp"

namespace prism::num {

template <class Real>
struct NamedParameter {
  std::string name;
  Var<Real> var;
};

template <class Real>
using ParameterList = std::vector<NamedParameter<Real>>;

/// Anything owning trainable parameters. Parameters are shared handles, so a module
/// must not be copied; snapshots go through state().
template <class Real>
class ParamModule {
 public:
  ParamModule() = default;
  ParamModule(const ParamModule&) = delete;
  ParamModule& operator=(const ParamModule&) = delete;
  ParamModule(ParamModule&&) noexcept = default;
  ParamModule& operator=(ParamModule&&) noexcept = default;
  virtual ~ParamModule() = default;

  virtual void collect_parameters(const std::string& prefix, ParameterList<Real>& out) const = 0;

  ParameterList<Real> parameters() const {
    ParameterList<Real> out;
    collect_parameters("", out);
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.var.grad().fill(Real{0});
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.var.size();
    return n;
  }
};

template <class Real>
using StateDict = std::vector<std::pair<std::string, Tensor<Real>>>;

template <class Real>
StateDict<Real> state(const ParamModule<Real>& module);

/// Copies values into the module's parameters; names and shapes must match exactly.
template <class Real>
void load_state(ParamModule<Real>& module, const StateDict<Real>& values);

enum class Init { uniform_fan_in, zeros };

/// y = x W + b with W stored [in x out].
template <class Real>
class Linear : public ParamModule<Real> {
 public:
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng, Init init = Init::uniform_fan_in,
         Real init_scale = Real{1});

  Var<Real> forward(const Var<Real>& x) const { return linear(x, weight_, bias_); }

  std::size_t in_dim() const { return weight_.rows(); }
  std::size_t out_dim() const { return weight_.cols(); }
  const Var<Real>& weight() const { return weight_; }
  const Var<Real>& bias() const { return bias_; }
  Var<Real>& weight() { return weight_; }
  Var<Real>& bias() { return bias_; }

  void collect_parameters(const std::string& prefix, ParameterList<Real>& out) const override;

 private:
  Var<Real> weight_;
  Var<Real> bias_;
};

/// Two-layer perceptron: in -> hidden (ReLU) -> out.
template <class Real>
class Mlp : public ParamModule<Real> {
 public:
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng, Real output_scale = Real{1});

  Var<Real> forward(const Var<Real>& x) const { return second_.forward(relu(first_.forward(x))); }

  Linear<Real>& first() { return first_; }
  Linear<Real>& second() { return second_; }

  void collect_parameters(const std::string& prefix, ParameterList<Real>& out) const override;

 private:
  Linear<Real> first_;
  Linear<Real> second_;
};

template <class Real>
class LayerNorm : public ParamModule<Real> {
 public:
  explicit LayerNorm(std::size_t dim, Real eps = Real(1e-5));

  Var<Real> forward(const Var<Real>& x) const { return layer_norm(x, gamma_, beta_, eps_); }

  void collect_parameters(const std::string& prefix, ParameterList<Real>& out) const override;

 private:
  Var<Real> gamma_;
  Var<Real> beta_;
  Real eps_;
};

/// Normal(0, stddev) table; row `zero_row` (when >= 0) is left at exactly zero.
template <class Real>
Tensor<Real> normal_table(std::size_t rows, std::size_t cols, Real stddev, std::mt19937_64& rng,
                          std::int64_t zero_row = -1);

}  // namespace prism::num
