#include "ide/autodiff.hpp"

#include <unordered_set>

namespace ide::ad {

void backward(const Var& loss) {
  check(loss.valid(), "backward: empty loss");
  check(loss.rows() == 1 && loss.cols() == 1, "backward: loss must be a scalar");
  check_runtime(std::isfinite(loss.value()(0, 0)),
                "backward: non-finite loss value in forward pass");

  // Iterative post-order DFS for the topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad = Matrix::Zero(n->val.rows(), n->val.cols());
  loss.node()->grad(0, 0) = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
  }
}

}  // namespace ide::ad
