#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "moregan/core/tensor.hpp"

namespace moregan {

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    /// Gradient buffer, zero-initialized on first use.
    Tensor<T>& grad_buffer() {
        if (grad.empty()) grad = Tensor<T>(value.shape(), T(0));
        return grad;
    }
    void zero_grad() { grad = Tensor<T>(); }
};

/// Handle to a node of the recorded computation graph.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool defined() const { return static_cast<bool>(node_); }

    /// Gradient accumulated by the last backward pass; zeros if none reached this node.
    Tensor<T> grad() const {
        return node_->grad.empty() ? Tensor<T>(node_->value.shape(), T(0)) : node_->grad;
    }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->zero_grad(); }

    T item() const { return node_->value[0]; }

    const std::shared_ptr<Node<T>>& node() const { return node_; }
    bool same_node(const Var& other) const { return node_ == other.node_; }

    /// Build a non-leaf result. The closure receives the result node and must
    /// accumulate into the parents that require gradients.
    static Var make(Tensor<T> value, std::vector<Var> parents, std::function<void(Node<T>&)> backward) {
        Var out(std::move(value));
        if (!grad_enabled()) return out;
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (!any) return out;
        out.node_->requires_grad = true;
        out.node_->parents.reserve(parents.size());
        for (auto& p : parents) out.node_->parents.push_back(p.node_);
        out.node_->backward = std::move(backward);
        return out;
    }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Leaf copy of `v` that blocks gradient flow.
template <typename T>
Var<T> detach(const Var<T>& v) {
    return Var<T>(v.value(), false);
}

/// Reverse-mode sweep from a scalar root; gradients accumulate into leaves.
template <typename T>
void backward(const Var<T>& root) {
    if (root.value().size() != 1) throw InvalidArgument("backward: root must be a scalar");
    if (!root.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
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

    root.node()->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
        if (!node->parents.empty()) {
            // interior buffers are no longer needed once propagated
            node->grad = Tensor<T>();
        }
    }
}

}  // namespace moregan
