#include "desnow/autograd.hpp"

#include "desnow/error.hpp"

namespace desnow::ag {

Var Graph::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node), this);
}

Var Graph::variable(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = record_;
  if (record_) tape_.push_back(node);
  return Var(std::move(node), this);
}

Var Graph::make(Tensor value, std::initializer_list<const Var*> parents,
                std::function<void(Node&)> backward) {
  bool needs = false;
  for (const Var* p : parents) needs = needs || (p && p->requires_grad());
  return finish(std::move(value), needs, std::move(backward));
}

Var Graph::make(Tensor value, const std::vector<Var>& parents,
                std::function<void(Node&)> backward) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || p.requires_grad();
  return finish(std::move(value), needs, std::move(backward));
}

Var Graph::finish(Tensor value, bool needs_grad,
                  std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (record_ && needs_grad) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    tape_.push_back(node);
  }
  return Var(std::move(node), this);
}

void Graph::backward(const Var& root) {
  if (!record_) throw InvalidState("backward() on a non-recording graph");
  require(root.value().size() == 1, "backward() needs a scalar root");
  if (!root.requires_grad()) return;
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    Node& node = **it;
    if (node.backward && !node.grad.empty()) node.backward(node);
  }
}

}  // namespace desnow::ag
