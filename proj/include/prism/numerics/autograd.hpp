#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "prism/numerics/tensor.hpp"

namespace prism::num {

/// One vertex of the reverse-mode graph. Leaves (parameters and constants) have no
/// backward function; a parameter's grad buffer persists across backward calls until
/// zero_grad, interior grads are recreated on every backward call.
template <class Real>
struct Node {
  Tensor<Real> value;
  Tensor<Real> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  bool is_leaf() const noexcept { return !backward; }
};

template <class Real>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<Real>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<Real> value);
  static Var parameter(Tensor<Real> value);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<Real>& value() const { return node_->value; }
  Tensor<Real>& mutable_value() { return node_->value; }
  Tensor<Real>& grad() { return node_->grad; }
  const Tensor<Real>& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  Real item() const { return node_->value[0]; }

  Node<Real>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<Real>>& shared() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<Real>> node_;
};

/// Creates an op result. The node keeps its parents and backward function only when
/// recording is enabled and at least one parent requires a gradient.
template <class Real>
Var<Real> make_result(Tensor<Real> value, std::vector<Var<Real>> parents,
                      std::function<void(Node<Real>&)> backward);

/// Runs reverse accumulation from a single-element root.
template <class Real>
void backward(const Var<Real>& root);

/// Adds `delta` into the node's grad buffer, allocating it on first use.
template <class Real>
void accumulate_grad(Node<Real>& node, const Tensor<Real>& delta);

bool grad_recording_enabled() noexcept;

/// Disables graph construction in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

extern template class Var<float>;
extern template class Var<double>;

}  // namespace prism::num
