#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace uq::num {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major tensor with an optional reverse-mode gradient.
///
/// Copies alias the same storage (like a shared handle); use detach() for
/// an independent value copy. Operations in ops.hpp record a backward
/// closure on their result when any input requires a gradient and grad
/// mode is on.
template <typename T>
class BasicTensor {
 public:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // sized like value only when requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
  };

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  std::span<T> grad() { return node_->grad; }
  std::span<const T> grad() const { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);

  T item() const;
  void zero_grad();

  /// Seeds d(this)/d(this) = 1 and propagates to every leaf. Only valid on
  /// single-element tensors. The recorded graph is released afterwards.
  void backward();

  BasicTensor detach() const;

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Converts between precisions; the result is a fresh leaf.
template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& t, bool requires_grad) {
  std::vector<To> v(t.data().begin(), t.data().end());
  return BasicTensor<To>::from(t.shape(), std::move(v), requires_grad);
}

}  // namespace uq::num
