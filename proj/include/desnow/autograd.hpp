#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "desnow/tensor.hpp"

namespace desnow::ag {

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily by grad_buffer()
  bool requires_grad = false;
  // Propagates this node's gradient into its parents.
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor(value.shape());
    return grad;
  }
};

class Graph;

// Handle to a value on a Graph. Copies share the underlying node.
class Var {
 public:
  Var() = default;
  Var(std::shared_ptr<Node> node, Graph* graph)
      : node_(std::move(node)), graph_(graph) {}

  explicit operator bool() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  // Empty tensor if no gradient reached this node.
  const Tensor& grad() const { return node_->grad; }
  Graph* graph() const { return graph_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
  Graph* graph_ = nullptr;
};

// Records operations in creation order and replays them backwards. A graph
// built with record=false keeps no tape, so intermediates are released as soon
// as their Vars go out of scope (inference mode).
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Creates the result node of an op. The backward closure is kept only when
  // recording and at least one parent needs a gradient.
  Var make(Tensor value, std::initializer_list<const Var*> parents,
           std::function<void(Node&)> backward);
  Var make(Tensor value, const std::vector<Var>& parents,
           std::function<void(Node&)> backward);

  // Seeds d(root)/d(root) = 1 for a single-element root and runs the tape.
  void backward(const Var& root);

 private:
  Var finish(Tensor value, bool needs_grad,
             std::function<void(Node&)> backward);

  bool record_;
  std::vector<std::shared_ptr<Node>> tape_;
};

}  // namespace desnow::ag
