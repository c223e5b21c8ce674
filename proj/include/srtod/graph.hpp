#pragma once

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "srtod/tensor.hpp"

namespace srtod {

/// Reverse-mode autodiff tape. Ops evaluate eagerly on add(); backward()
/// walks the tape in reverse creation order. One Graph per forward pass;
/// parameters are registered as aliased leaves so a parameter used twice
/// (e.g. a shared MLP or a shared conv tower) accumulates into one grad.
template <typename T>
class Graph {
 public:
  using BackFn = std::function<void(Graph&, int self)>;

  struct Node {
    Tensor<T> value;               // owned value (empty if aliased)
    const Tensor<T>* external = nullptr;  // aliased leaf storage
    Tensor<T> grad;
    bool grad_alloc = false;
    bool requires_grad = false;
    std::vector<int> parents;
    BackFn backward;
  };

  int leaf(Tensor<T> value, bool requires_grad = false) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }

  /// Leaf aliasing external storage; `key` dedupes repeated registration.
  /// The storage must outlive the graph.
  int leaf_ref(const Tensor<T>* storage, bool requires_grad) {
    auto it = leaf_cache_.find(storage);
    if (it != leaf_cache_.end()) return it->second;
    Node n;
    n.external = storage;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    int id = int(nodes_.size()) - 1;
    leaf_cache_.emplace(storage, id);
    return id;
  }

  int add(Tensor<T> value, std::vector<int> parents, BackFn backward) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = std::move(backward);
    for (int p : n.parents)
      if (nodes_[size_t(p)].requires_grad) n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }

  const Tensor<T>& val(int id) const {
    const Node& n = nodes_[size_t(id)];
    return n.external ? *n.external : n.value;
  }

  bool wants_grad(int id) const { return nodes_[size_t(id)].requires_grad; }

  /// Gradient accumulator for a node, allocated (zeroed) on first use.
  Tensor<T>& grad(int id) {
    Node& n = nodes_[size_t(id)];
    if (!n.grad_alloc) {
      n.grad = Tensor<T>(val(id).shape);
      n.grad_alloc = true;
    }
    return n.grad;
  }

  bool has_grad(int id) const { return nodes_[size_t(id)].grad_alloc; }

  /// Accumulate `g` into the node's grad if it participates in backprop.
  void accum_grad(int id, const Tensor<T>& g) {
    if (!wants_grad(id)) return;
    Tensor<T>& dst = grad(id);
    const size_t n = dst.data.size();
    for (size_t i = 0; i < n; ++i) dst.data[i] += g.data[i];
  }

  /// Backprop from a scalar node.
  void backward(int root) {
    if (val(root).numel() != 1)
      throw ShapeError("backward: root must be scalar");
    grad(root).data[0] = T(1);
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[size_t(i)];
      if (!n.grad_alloc || !n.requires_grad || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// Grad of a leaf after backward(); zeros if untouched.
  Tensor<T> grad_of(int id) {
    if (!has_grad(id)) return Tensor<T>(val(id).shape);
    return nodes_[size_t(id)].grad;
  }

  /// Node id of a registered aliased leaf, or -1.
  int find_leaf(const void* storage) const {
    auto it = leaf_cache_.find(storage);
    return it == leaf_cache_.end() ? -1 : it->second;
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> leaf_cache_;
};

/// Lightweight handle pairing a node id with its graph.
template <typename T>
struct Var {
  Graph<T>* g = nullptr;
  int id = -1;

  const Tensor<T>& val() const { return g->val(id); }
  const std::vector<int>& shape() const { return g->val(id).shape; }
};

}  // namespace srtod
