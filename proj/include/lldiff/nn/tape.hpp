#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "lldiff/core/image_planes.hpp"

namespace lldiff::nn {

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so
/// walking them backwards is a valid topological order. With recording off
/// the tape only evaluates; no closures are kept.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const ImagePlanes<T>&)>;

  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(ImagePlanes<T> value) { return push(std::move(value), false, nullptr); }
  Var variable(ImagePlanes<T> value) { return push(std::move(value), record_, nullptr); }

  Var push(ImagePlanes<T> value, bool requires_grad, Backward backward) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = record_ && requires_grad;
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  const ImagePlanes<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool has_grad(Var v) const { return nodes_.at(v.id).has_grad; }

  /// Gradient buffer of v, zero-initialized on first access.
  ImagePlanes<T>& grad(Var v) {
    Node& node = nodes_.at(v.id);
    if (!node.has_grad) {
      node.grad = ImagePlanes<T>(node.value.shape());
      node.has_grad = true;
    }
    return node.grad;
  }

  /// Seeds d(root)/d(root) = 1 for a single-element root and propagates.
  void backward(Var root) {
    require(record_, ErrorCode::invalid_argument, "backward on a non-recording tape");
    require(value(root).size() == 1, ErrorCode::shape_mismatch, "backward root must be a scalar");
    grad(root)[0] = T(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.requires_grad || !node.has_grad || !node.backward) continue;
      node.backward(*this, node.grad);
    }
  }

 private:
  struct Node {
    ImagePlanes<T> value;
    ImagePlanes<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace lldiff::nn
