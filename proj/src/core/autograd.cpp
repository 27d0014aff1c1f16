#include "blalm/core/autograd.hpp"

#include <unordered_set>
#include <utility>

namespace blalm {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename Scalar>
void backward(const Var<Scalar>& root, const Tensor<Scalar>* seed) {
    if (!root.defined()) {
        throw ContractViolation("backward on undefined Var");
    }
    if (!root.requires_grad()) {
        return;
    }
    using NodeT = Node<Scalar>;

    // Iterative post-order DFS; recurrent graphs are far too deep for recursion.
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> visited;
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodeT* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    auto& root_grad = root.node()->grad_buffer();
    if (seed != nullptr) {
        root_grad.require_same_shape(*seed, "backward seed");
        root_grad += *seed;
    } else {
        root_grad.fill(Scalar{1});
    }

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* node = *it;
        if (!node->has_grad()) {
            continue;
        }
        if (node->backward_fn) {
            node->backward_fn(*node);
        }
        if (node->param != nullptr) {
            node->param->grad += node->grad;
        }
    }
}

template void backward<float>(const Var<float>&, const Tensor<float>*);
template void backward<double>(const Var<double>&, const Tensor<double>*);

}  // namespace blalm
