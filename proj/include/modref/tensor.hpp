// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Ops build new nodes
// that remember their parents and a backward closure; `backward()` on a
// scalar walks the graph once in reverse topological order.
//
// Gradient convention: leaf gradients accumulate across backward calls
// until the caller runs `zero_grad()`. Intermediate gradients are reset at
// the start of each backward pass, so calling `backward()` twice on the same
// graph without zeroing doubles every leaf gradient.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace modref {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& dims);
std::string shape_string(const Shape& dims);

namespace detail {

template <typename T>
struct Node {
    Shape dims;
    std::vector<T> data;
    std::vector<T> grad;  // empty unless requires_grad
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad, accumulates into parents' grads.
    std::function<void(Node&)> backward;
};

}  // namespace detail

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor();
    Tensor(Shape dims, std::vector<T> data, bool requires_grad = false);

    static Tensor zeros(Shape dims, bool requires_grad = false);
    static Tensor full(Shape dims, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    const Shape& dims() const { return node_->dims; }
    std::size_t ndim() const { return node_->dims.size(); }
    std::size_t size() const { return node_->data.size(); }
    bool empty() const { return node_->data.empty(); }
    /// Product of all but the last dim (1 for scalars).
    std::size_t rows() const;
    /// Last dim (1 for scalars).
    std::size_t cols() const;

    std::span<const T> data() const { return node_->data; }
    /// Direct write access. Only for leaves (parameters, optimizer updates).
    std::span<T> mutable_data();
    T item() const;
    T at(std::size_t row, std::size_t col) const { return node_->data[row * cols() + col]; }

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->is_leaf; }
    /// Empty span when the tensor does not track gradients.
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->grad; }
    void zero_grad();

    /// Reverse pass from this scalar with seed 1.
    void backward() const;

    /// Same values, new leaf without history.
    Tensor detach() const;
    Tensor clone(bool requires_grad) const;

    /// Identity of the underlying node (two handles can share one).
    const void* id() const { return node_.get(); }

    // Graph-building hooks for op implementations.
    using NodePtr = std::shared_ptr<detail::Node<T>>;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}
    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

template <typename T>
Tensor<T> make_result(Shape dims, std::vector<T> data, std::vector<Tensor<T>> parents,
                      std::function<void(detail::Node<T>&)> backward);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace modref
