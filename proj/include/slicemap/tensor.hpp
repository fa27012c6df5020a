#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a graph node. Operations on tensors that
// require gradients record their inputs and a backward closure; grad() walks
// the recorded graph from a scalar loss in reverse topological order. Leaf
// tensors created with requires_grad=true act as trainable parameters.
//
// Elementwise binary ops broadcast when one operand's shape is a suffix of
// the other's (or when one operand holds a single element).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace slicemap {

using Shape = std::vector<std::size_t>;

// Tensor storage. Fixed 64-byte alignment keeps vectorised kernels on the
// same code path for every allocation, so results are reproducible.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Adds this node's contribution to each input gradient. Entries of
  // input_grads are null for inputs that do not require gradients.
  std::function<void(std::span<const T> grad, std::span<Buffer<T>* const> input_grads)> backward;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor adopt(Shape shape, Buffer<T> data, bool requires_grad = false);
  static Tensor scalar(T value) { return full({}, value); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::span<const T> data() const { return node_->value; }
  // Writable view for leaves (parameter updates, test perturbations).
  std::span<T> mutable_data() { return node_->value; }
  T item() const;
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  const Node<T>* id() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  // Fresh leaf holding a copy of the values.
  Tensor detach(bool requires_grad = false) const;

  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Reverse-mode gradients of a single-element `loss` with respect to `params`.
// Throws ShapeError for a non-scalar loss and Error("unreachable parameter")
// when a parameter does not feed into the loss.
template <typename T>
std::vector<Tensor<T>> grad(const Tensor<T>& loss, std::span<const Tensor<T>> params);

template <typename T>
std::vector<Tensor<T>> grad(const Tensor<T>& loss, std::initializer_list<Tensor<T>> params) {
  return grad(loss, std::span<const Tensor<T>>(params.begin(), params.size()));
}

// --- primitives -----------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> softplus(const Tensor<T>& x);
template <typename T> Tensor<T> lgamma(const Tensor<T>& x);

// Sum of all elements, accumulated in double; result has shape {}.
template <typename T> Tensor<T> sum(const Tensor<T>& x);
// [N, ...] -> [N]: sums every trailing axis.
template <typename T> Tensor<T> row_sum(const Tensor<T>& x);

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Cross-correlation. input [N,C,H,W] or [C,H,W]; kernels [F,C,kH,kW];
// bias [F] or undefined. Output keeps the input's rank.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

// --- conveniences composed from primitives ----------------------------------

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T> Tensor<T> operator+(const Tensor<T>& a, T b) { return add(a, Tensor<T>::scalar(b)); }
template <typename T> Tensor<T> operator+(T a, const Tensor<T>& b) { return add(Tensor<T>::scalar(a), b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, T b) { return sub(a, Tensor<T>::scalar(b)); }
template <typename T> Tensor<T> operator-(T a, const Tensor<T>& b) { return sub(Tensor<T>::scalar(a), b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, T b) { return mul(a, Tensor<T>::scalar(b)); }
template <typename T> Tensor<T> operator*(T a, const Tensor<T>& b) { return mul(Tensor<T>::scalar(a), b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, T b) { return div(a, Tensor<T>::scalar(b)); }
template <typename T> Tensor<T> operator/(T a, const Tensor<T>& b) { return div(Tensor<T>::scalar(a), b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a) { return mul(a, Tensor<T>::scalar(T(-1))); }

template <typename T> Tensor<T> square(const Tensor<T>& x) { return mul(x, x); }

template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> parts, std::size_t axis) {
  return concat(std::span<const Tensor<T>>(parts.begin(), parts.size()), axis);
}

}  // namespace slicemap
