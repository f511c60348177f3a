#include "tsgan/tensor.hpp"

#include <unordered_set>

namespace tsgan {

namespace detail {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

}  // namespace detail

Tensor Tensor::make_op(const Shape& s, Array value,
                       std::vector<std::shared_ptr<detail::TensorNode>> parents,
                       std::function<void(detail::TensorNode&)> backprop) {
  bool track = detail::grad_enabled();
  if (track) {
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    track = any;
  }
  Tensor t = from_array(s, std::move(value), track);
  if (track) {
    auto node = t.node_;
    node->parents = std::move(parents);
    detail::TensorNode* self = node.get();
    node->backprop = [self, fn = std::move(backprop)]() { fn(*self); };
  }
  return t;
}

void Tensor::backward() const {
  TSGAN_CHECK(node_ != nullptr, Data, "backward: undefined tensor");
  TSGAN_CHECK(node_->value.size() == 1, Data, "backward: root must be scalar");

  // Iterative post-order topological sort over the parent DAG.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      detail::TensorNode* p = n->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad = Array::Ones(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backprop && n->grad.size() != 0) n->backprop();
  }
}

}  // namespace tsgan
