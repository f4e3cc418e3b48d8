/**
 * @file autograd.hpp
 * @brief Reverse-mode automatic differentiation over NCHW tensors.
 *
 * A Var is a shared handle to a graph node. Operations build the graph as
 * they run; backward() walks it once in reverse topological order and
 * accumulates gradients into every node that requires them. Leaves keep
 * their gradient across calls until zero_grad().
 */
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "skf/tensor.hpp"

namespace skf {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    /// Allocates a zero gradient on first use and returns it.
    Tensor<T>& grad_buffer() {
        if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
        return grad;
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Var constant(Tensor<T> value);
    static Var leaf(Tensor<T> value, bool requires_grad = true);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->value.shape(); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    /// Gradient, or an all-zero tensor if none has been accumulated.
    Tensor<T> grad() const;
    void zero_grad() { node_->grad = Tensor<T>(); }
    /// Scalar value of a one-element tensor.
    T item() const { return node_->value[0]; }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Creates the result node of an operation. The backward closure is kept
/// only when some input requires a gradient.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward);

/// Seeds the root gradient with ones and propagates to every reachable node.
template <typename T>
void backward(const Var<T>& root);

}  // namespace skf
