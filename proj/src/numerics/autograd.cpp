#include "prism/numerics/autograd.hpp"

#include <cmath>
#include <unordered_set>

namespace prism::num {

namespace {
thread_local bool g_recording = true;
}  // namespace

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <class Real>
bool Tensor<Real>::all_finite() const {
  for (Real v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template class Tensor<float>;
template class Tensor<double>;

bool grad_recording_enabled() noexcept { return g_recording; }

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

template <class Real>
Var<Real> Var<Real>::constant(Tensor<Real> value) {
  auto node = std::make_shared<Node<Real>>();
  node->value = std::move(value);
  return Var(std::move(node));
}

template <class Real>
Var<Real> Var<Real>::parameter(Tensor<Real> value) {
  auto node = std::make_shared<Node<Real>>();
  node->grad = Tensor<Real>(value.shape());
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

template <class Real>
Var<Real> make_result(Tensor<Real> value, std::vector<Var<Real>> parents,
                      std::function<void(Node<Real>&)> backward_fn) {
  auto node = std::make_shared<Node<Real>>();
  node->value = std::move(value);
  if (!g_recording) return Var<Real>(std::move(node));
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return Var<Real>(std::move(node));
  node->requires_grad = true;
  node->parents.reserve(parents.size());
  for (auto& p : parents) node->parents.push_back(p.shared());
  node->backward = std::move(backward_fn);
  return Var<Real>(std::move(node));
}

template <class Real>
void accumulate_grad(Node<Real>& node, const Tensor<Real>& delta) {
  if (!node.requires_grad) return;
  if (node.grad.size() != node.value.size()) node.grad = Tensor<Real>(node.value.shape());
  Real* g = node.grad.data();
  const Real* d = delta.data();
  const std::size_t n = delta.size();
  for (std::size_t i = 0; i < n; ++i) g[i] += d[i];
}

template <class Real>
void backward(const Var<Real>& root) {
  if (!root.defined()) throw ConfigError("backward on an undefined variable");
  if (root.size() != 1) {
    throw ConfigError("backward root must hold a single value, got " + shape_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> visited;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Real>* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<Real>* node : order) {
    if (!node->is_leaf() || node->grad.size() != node->value.size()) {
      node->grad = Tensor<Real>(node->value.shape());
    }
  }
  root.node()->grad[0] += Real{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* node = *it;
    if (!node->is_leaf()) node->backward(*node);
  }
}

template class Var<float>;
template class Var<double>;

template Var<float> make_result(Tensor<float>, std::vector<Var<float>>, std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, std::vector<Var<double>>,
                                 std::function<void(Node<double>&)>);
template void backward(const Var<float>&);
template void backward(const Var<double>&);
template void accumulate_grad(Node<float>&, const Tensor<float>&);
template void accumulate_grad(Node<double>&, const Tensor<double>&);

}  // namespace prism::num
