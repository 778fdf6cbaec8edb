#include "uq/numerics/tensor.hpp"

#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "uq/common/error.hpp"

namespace uq::num {

namespace {
thread_local bool g_grad_enabled = true;

#if defined(__GLIBC__)
// Activation and gradient buffers of a few MB are freed and reallocated on
// every training step. Keeping them on the heap instead of fresh mmap
// regions avoids page-faulting the same memory in again each time.
[[maybe_unused]] const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 512 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value.assign(shape_numel(shape), T(0));
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->value.size(), T(0));
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    fail(ErrorCode::kDimension, "shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                                    " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->value.size(), T(0));
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (on && node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), T(0));
  if (!on) node_->grad.clear();
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) fail(ErrorCode::kDimension, "item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
void BasicTensor<T>::backward() {
  if (numel() != 1) fail(ErrorCode::kDimension, "backward() needs a single-element tensor, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
  for (Node* n : order) {
    if (!n->parents.empty()) {
      n->parents.clear();
      n->backward = nullptr;
    }
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return from(shape(), node_->value, false);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace uq::num
