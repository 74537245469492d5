#include "prism/numerics/layers.hpp"

#include <cmath>

#include "prism/numerics/rng.hpp"

namespace prism::num {

double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <class Real>
StateDict<Real> state(const ParamModule<Real>& module) {
  StateDict<Real> out;
  for (const auto& p : module.parameters()) out.emplace_back(p.name, p.var.value());
  return out;
}

template <class Real>
void load_state(ParamModule<Real>& module, const StateDict<Real>& values) {
  auto params = module.parameters();
  if (params.size() != values.size()) {
    throw ConfigError("state has " + std::to_string(values.size()) + " tensors, module expects " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != values[i].first) {
      throw ConfigError("state tensor '" + values[i].first + "' where '" + params[i].name + "' expected");
    }
    if (params[i].var.shape() != values[i].second.shape()) {
      throw ConfigError("state tensor '" + values[i].first + "' has shape " +
                        shape_string(values[i].second.shape()) + ", module expects " +
                        shape_string(params[i].var.shape()));
    }
    params[i].var.mutable_value() = values[i].second;
  }
}

template <class Real>
Tensor<Real> normal_table(std::size_t rows, std::size_t cols, Real stddev, std::mt19937_64& rng,
                          std::int64_t zero_row) {
  Tensor<Real> t({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const Real v = static_cast<Real>(standard_normal(rng)) * stddev;
      t.at(r, c) = static_cast<std::int64_t>(r) == zero_row ? Real{0} : v;
    }
  }
  return t;
}

template <class Real>
Linear<Real>::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng, Init init, Real init_scale) {
  if (in == 0 || out == 0) throw ConfigError("linear layer dimensions must be positive");
  Tensor<Real> w({in, out});
  Tensor<Real> b({out});
  if (init == Init::uniform_fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : w.values()) v = static_cast<Real>((2.0 * uniform01(rng) - 1.0) * bound) * init_scale;
    for (auto& v : b.values()) v = static_cast<Real>((2.0 * uniform01(rng) - 1.0) * bound) * init_scale;
  }
  weight_ = Var<Real>::parameter(std::move(w));
  bias_ = Var<Real>::parameter(std::move(b));
}

template <class Real>
void Linear<Real>::collect_parameters(const std::string& prefix, ParameterList<Real>& out) const {
  out.push_back({prefix + "weight", weight_});
  out.push_back({prefix + "bias", bias_});
}

template <class Real>
Mlp<Real>::Mlp(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng, Real output_scale)
    : first_(in, hidden, rng), second_(hidden, out, rng, Init::uniform_fan_in, output_scale) {}

template <class Real>
void Mlp<Real>::collect_parameters(const std::string& prefix, ParameterList<Real>& out) const {
  first_.collect_parameters(prefix + "fc1.", out);
  second_.collect_parameters(prefix + "fc2.", out);
}

template <class Real>
LayerNorm<Real>::LayerNorm(std::size_t dim, Real eps)
    : gamma_(Var<Real>::parameter(Tensor<Real>({dim}, Real{1}))),
      beta_(Var<Real>::parameter(Tensor<Real>({dim}))),
      eps_(eps) {}

template <class Real>
void LayerNorm<Real>::collect_parameters(const std::string& prefix, ParameterList<Real>& out) const {
  out.push_back({prefix + "gamma", gamma_});
  out.push_back({prefix + "beta", beta_});
}

template StateDict<float> state(const ParamModule<float>&);
template StateDict<double> state(const ParamModule<double>&);
template void load_state(ParamModule<float>&, const StateDict<float>&);
template void load_state(ParamModule<double>&, const StateDict<double>&);
template Tensor<float> normal_table(std::size_t, std::size_t, float, std::mt19937_64&, std::int64_t);
template Tensor<double> normal_table(std::size_t, std::size_t, double, std::mt19937_64&, std::int64_t);
template class Linear<float>;
template class Linear<double>;
template class Mlp<float>;
template class Mlp<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;

}  // namespace prism::num
