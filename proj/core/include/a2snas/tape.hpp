#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "a2snas/error.hpp"
#include "a2snas/tensor.hpp"

namespace a2snas {

/// Reverse-mode autodiff record. Nodes are appended in execution order, so
/// every node's inputs precede it; backward visits nodes once, in reverse.
/// A tape serves a single forward/backward pass and is not thread-safe.
template <class T>
class Tape {
 public:
  /// Accumulates into the input gradients given the output gradient.
  using Backward = std::function<void(Tape&, std::span<const T>)>;

  /// Registers a named leaf whose gradient backward() will report.
  Tensor<T> leaf(const Tensor<T>& value, const std::string& name) {
    if (leaf_index_.count(name)) throw TapeError("leaf '" + name + "' registered twice");
    check_open();
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{value.shape(), {}, nullptr, name});
    leaf_index_[name] = id;
    return value.with_node(id);
  }

  /// Records `out` as produced from `inputs`. If no input needs a gradient the
  /// value is returned untracked and nothing is recorded.
  Tensor<T> record(const Tensor<T>& out, std::vector<int> inputs, Backward fn) {
    check_open();
    bool any = false;
    for (int id : inputs) any = any || requires_grad(id);
    if (!any) return out.detached();
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{out.shape(), std::move(inputs), std::move(fn), {}});
    return out.with_node(id);
  }

  bool requires_grad(int node) const { return node >= 0 && node < static_cast<int>(nodes_.size()); }

  /// Gradient buffer of a node, allocated to zeros on first use.
  std::vector<T>& grad(int node) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(node)].shape.numel()), T(0));
    return g;
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Gradients of a scalar loss w.r.t. every registered leaf. Leaves the loss
  /// does not reach get zeros. The tape can be consumed only once.
  std::map<std::string, Tensor<T>> backward(const Tensor<T>& loss) {
    check_open();
    if (loss.numel() != 1) throw TapeError("backward needs a scalar loss, got shape " + loss.shape().str());
    consumed_ = true;
    grads_.assign(nodes_.size(), {});
    if (requires_grad(loss.node())) {
      grad(loss.node())[0] = T(1);
      for (int id = loss.node(); id >= 0; --id) {
        auto& node = nodes_[static_cast<std::size_t>(id)];
        auto& g = grads_[static_cast<std::size_t>(id)];
        if (!node.backward || g.empty()) continue;
        node.backward(*this, std::span<const T>(g));
        node.backward = nullptr;
        std::vector<T>().swap(g);
      }
    }
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, id] : leaf_index_) {
      auto& g = grads_[static_cast<std::size_t>(id)];
      const Shape& s = nodes_[static_cast<std::size_t>(id)].shape;
      out.emplace(name, g.empty() ? Tensor<T>::zeros(s) : Tensor<T>(s, std::move(g)));
    }
    nodes_.clear();
    grads_.clear();
    return out;
  }

 private:
  struct Node {
    Shape shape;
    std::vector<int> inputs;
    Backward backward;
    std::string name;
  };

  void check_open() const {
    if (consumed_) throw TapeError("tape already consumed by backward()");
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  std::map<std::string, int> leaf_index_;
  bool consumed_ = false;
};

}  // namespace a2snas
