// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#include "modref/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "modref/errors.hpp"

namespace modref {

std::size_t shape_size(const Shape& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor() : node_(std::make_shared<detail::Node<T>>()) {
    node_->dims = {0};
}

template <typename T>
Tensor<T>::Tensor(Shape dims, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<detail::Node<T>>()) {
    if (shape_size(dims) != data.size())
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_string(dims));
    node_->dims = std::move(dims);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->grad.assign(node_->data.size(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape dims, bool requires_grad) {
    return full(std::move(dims), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape dims, T value, bool requires_grad) {
    const auto n = shape_size(dims);
    return Tensor(std::move(dims), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::rows() const {
    const auto& d = node_->dims;
    if (d.size() <= 1) return d.empty() ? 1 : (d[0] == 0 ? 0 : 1);
    return shape_size(Shape(d.begin(), d.end() - 1));
}

template <typename T>
std::size_t Tensor<T>::cols() const {
    return node_->dims.empty() ? 1 : node_->dims.back();
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
    if (!node_->is_leaf) throw ParameterError("in-place write to a non-leaf tensor");
    return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
    if (node_->data.size() != 1)
        throw DimensionError("item() on tensor of shape " + shape_string(node_->dims));
    return node_->data[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
void Tensor<T>::backward() const {
    if (node_->data.size() != 1)
        throw DimensionError("backward() needs a scalar, got " + shape_string(node_->dims));
    if (!node_->requires_grad) throw ParameterError("backward() on a tensor without gradient");

    // Iterative post-order DFS: parents land before children.
    std::vector<detail::Node<T>*> order;
    std::unordered_set<const detail::Node<T>*> seen;
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            auto* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* node : order)
        if (!node->is_leaf) std::fill(node->grad.begin(), node->grad.end(), T(0));
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward(**it);
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(node_->dims, node_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone(bool requires_grad) const {
    return Tensor(node_->dims, node_->data, requires_grad);
}

template <typename T>
Tensor<T> make_result(Shape dims, std::vector<T> data, std::vector<Tensor<T>> parents,
                      std::function<void(detail::Node<T>&)> backward) {
    auto node = std::make_shared<detail::Node<T>>();
    node->dims = std::move(dims);
    node->data = std::move(data);
    node->is_leaf = false;
    const bool tracked = std::any_of(parents.begin(), parents.end(),
                                     [](const Tensor<T>& p) { return p.requires_grad(); });
    if (tracked) {
        node->requires_grad = true;
        node->grad.assign(node->data.size(), T(0));
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward = std::move(backward);
    }
    return Tensor<T>(std::move(node));
}

template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> make_result(Shape, std::vector<float>, std::vector<Tensor<float>>,
                                   std::function<void(detail::Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, std::vector<Tensor<double>>,
                                    std::function<void(detail::Node<double>&)>);

}  // namespace modref
