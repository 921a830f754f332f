#pragma once

#include "hdn/nn/tensor.hpp"

#include <memory>
#include <unordered_set>

namespace hdn::nn {

namespace detail {
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Tensor<T>&)> backward_fn;

    void accumulate(const Tensor<T>& g) {
        if (grad.empty()) {
            grad = g;
        } else {
            grad += g;
        }
    }

    Tensor<T>& grad_buffer() {
        if (grad.empty()) grad = Tensor<T>(value.shape());
        return grad;
    }
};

// Handle to a value in the computation graph. Copies share the node.
template <class T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

    void zero_grad() {
        if (node_) node_->grad = Tensor<T>();
    }

    // Reverse-mode sweep from a scalar root.
    void backward() const {
        if (node_->value.size() != 1) throw std::logic_error("backward() requires a scalar root");
        std::vector<Node<T>*> order;
        std::unordered_set<Node<T>*> seen;
        std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                Node<T>* p = n->parents[idx++].get();
                if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        node_->accumulate(Tensor<T>(node_->value.shape(), T(1)));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node<T>* n = *it;
            if (n->backward_fn && !n->grad.empty()) n->backward_fn(n->grad);
        }
        // Free intermediate gradients; leaves keep theirs.
        for (Node<T>* n : order) {
            if (n->backward_fn) n->grad = Tensor<T>();
        }
    }

private:
    std::shared_ptr<Node<T>> node_;
};

template <class T>
Var<T> parameter(Tensor<T> value) {
    return Var<T>(std::move(value), true);
}

template <class T>
Var<T> constant(Tensor<T> value) {
    return Var<T>(std::move(value), false);
}

// Builds the result node of an op. The backward closure receives the output gradient
// and is responsible for accumulating into the parents that require it.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(const Tensor<T>&)> backward) {
    Var<T> out(std::move(value), false);
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    for (auto& in : inputs) node.parents.push_back(in.node());
    node.backward_fn = std::move(backward);
    return out;
}

}  // namespace hdn::nn
