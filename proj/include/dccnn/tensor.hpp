#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dccnn/errors.hpp"

namespace dccnn::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  // Accumulated gradient; only used on leaves that require grad.
  std::vector<T> grad;
  bool requires_grad = false;
};

/// Shared handle to a dense row-major array. Copies alias the same storage,
/// the way parameters are shared between the model, the graph and the
/// optimizer. Use clone() for an independent copy.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    if (element_count(shape) != values.size()) {
      throw ShapeError("tensor: shape " + ad::to_string(shape) + " needs " +
                       std::to_string(element_count(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = element_count(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  T item() const {
    if (size() != 1) throw ShapeError("item: tensor is not a scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Accumulated gradient, zero-filled and shaped like data() on first use.
  std::span<T> grad() {
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), T{0});
    return node_->grad;
  }
  std::span<const T> grad() const { return const_cast<Tensor*>(this)->grad(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), T{0}); }

  Tensor clone() const {
    Tensor out(node_->shape, node_->value, node_->requires_grad);
    out.node_->grad = node_->grad;
    return out;
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  bool same(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
void require_shape(const Tensor<T>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(what) + ": expected shape " + to_string(expected) +
                     ", got " + to_string(t.shape()));
  }
}

}  // namespace dccnn::ad
