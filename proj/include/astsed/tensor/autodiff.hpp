#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "astsed/tensor/ndarray.hpp"

namespace astsed {

/// One vertex of the reverse-mode graph. `backward` reads this node's
/// cotangent from `grad` and accumulates into the parents' grad buffers.
template <typename T>
struct Node {
    NdArray<T> value;
    NdArray<T> grad;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    bool requires_grad = false;
    std::uint32_t visits = 0;

    NdArray<T>& grad_buffer() {
        if (grad.empty()) grad = NdArray<T>(value.shape());
        return grad;
    }

    // Parent i's gradient buffer, or nullptr when that parent is a constant.
    NdArray<T>* parent_grad(std::size_t i) {
        Node& p = *parents[i];
        return p.requires_grad ? &p.grad_buffer() : nullptr;
    }

    const NdArray<T>& parent_value(std::size_t i) const { return parents[i]->value; }
};

/// Handle to a graph node. Copies share the node.
template <typename T = double>
class Var {
 public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Var constant(NdArray<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        return Var(std::move(n));
    }

    /// A leaf that receives a gradient on backward().
    static Var parameter(NdArray<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = true;
        return Var(std::move(n));
    }

    bool valid() const noexcept { return static_cast<bool>(node_); }
    const NdArray<T>& value() const { return node_->value; }
    const NdArray<T>& grad() const { return node_->grad; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& shared() const { return node_; }
    T item() const { return node_->value[0]; }

 private:
    std::shared_ptr<Node<T>> node_;
};

/// Builds an interior node. When no input needs a gradient the result is a
/// constant and the inputs are not retained.
template <typename T, typename Backward>
Var<T> make_var(NdArray<T> value, std::initializer_list<Var<T>> inputs, Backward&& fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
        n->requires_grad = true;
        n->parents.reserve(inputs.size());
        for (const auto& in : inputs) n->parents.push_back(in.shared());
        n->backward = std::forward<Backward>(fn);
    }
    return Var<T>(std::move(n));
}

/// Nodes reachable from root through gradient-carrying edges, parents first.
template <typename T>
std::vector<Node<T>*> topological_order(const Var<T>& root) {
    std::vector<Node<T>*> order;
    if (!root.requires_grad()) return order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

/// Reverse accumulation from a scalar root. Returns the number of nodes
/// whose backward rule ran (each reachable node exactly once).
template <typename T>
std::size_t backward(const Var<T>& root) {
    if (root.value().size() != 1) {
        throw DimensionError("backward() needs a scalar root, got shape " +
                             shape_str(root.shape()));
    }
    auto order = topological_order(root);
    if (order.empty()) return 0;
    root.node()->grad_buffer()[0] += T{1};
    std::size_t visited = 0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        ++n->visits;
        ++visited;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    return visited;
}

}  // namespace astsed
