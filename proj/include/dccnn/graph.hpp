#pragma once

#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dccnn/errors.hpp"
#include "dccnn/tensor.hpp"

namespace dccnn::ad {

/// Backward rule of one recorded operation. `grad_in[k]` is empty when input
/// k does not require a gradient; otherwise it must be accumulated into (+=).
template <class T>
using BackwardFn =
    std::function<void(std::span<const T> grad_out, std::span<const std::span<T>> grad_in)>;

/// Tape of executed operations. Operations are appended as they run, so the
/// record is already in topological order and backward() is a single reverse
/// sweep. A graph with recording disabled is used for inference: operations
/// still compute, but nothing is kept.
///
/// Gradients of one backward sweep are first collected per node in
/// graph-owned buffers and only then added to the leaves' accumulated
/// gradients, so a repeated backward() adds exactly the same amount again.
template <class T>
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return ops_.size(); }

  /// Creates the output tensor of an operation and records it when any input
  /// requires a gradient.
  Tensor<T> record(Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs,
                   BackwardFn<T> backward) {
    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
    Tensor<T> out(std::move(shape), std::move(value), recording_ && needs_grad);
    if (recording_ && needs_grad) {
      Op op;
      op.out = out.node();
      for (const auto& in : inputs) op.in.push_back(in.node());
      op.backward = std::move(backward);
      produced_.insert(op.out.get());
      ops_.push_back(std::move(op));
    }
    return out;
  }

  /// Reverse sweep from a scalar loss. Leaves that require a gradient get the
  /// sweep's gradient added to their accumulated grad(); leaves the loss does
  /// not depend on are left untouched.
  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ShapeError("backward: loss must be a scalar tensor");
    }
    pass_.clear();
    if (!loss.requires_grad()) return;
    pass_[loss.node().get()] = std::vector<T>{T{1}};

    std::vector<std::span<T>> grad_in;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      auto found = pass_.find(it->out.get());
      if (found == pass_.end()) continue;
      // Copy out: inserting input buffers below may rehash the map.
      const std::vector<T> grad_out = std::move(found->second);
      found->second.clear();
      grad_in.clear();
      for (const auto& in : it->in) {
        if (!in->requires_grad) {
          grad_in.emplace_back();
          continue;
        }
        auto& buf = pass_[in.get()];
        if (buf.size() != in->value.size()) buf.assign(in->value.size(), T{0});
        grad_in.emplace_back(buf);
      }
      it->backward(grad_out, grad_in);
      // Intermediate gradients are kept for inspection by grad_of().
      found = pass_.find(it->out.get());
      found->second = grad_out;
    }

    for (auto& [node, buf] : pass_) {
      if (produced_.contains(node)) continue;
      auto* leaf = const_cast<Node<T>*>(node);
      if (!leaf->requires_grad) continue;
      if (leaf->grad.size() != leaf->value.size()) leaf->grad.assign(leaf->value.size(), T{0});
      for (std::size_t i = 0; i < buf.size(); ++i) leaf->grad[i] += buf[i];
    }
  }

  /// Gradient of the last backward() loss w.r.t. any node; empty if the loss
  /// does not depend on it.
  std::span<const T> grad_of(const Tensor<T>& t) const {
    auto it = pass_.find(t.node().get());
    if (it == pass_.end()) return {};
    return it->second;
  }

 private:
  struct Op {
    std::shared_ptr<Node<T>> out;
    std::vector<std::shared_ptr<Node<T>>> in;
    BackwardFn<T> backward;
  };

  bool recording_;
  std::vector<Op> ops_;
  std::unordered_set<const Node<T>*> produced_;
  std::unordered_map<const Node<T>*, std::vector<T>> pass_;
};

}  // namespace dccnn::ad
