#include "ccplab/numcore/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace ccplab::nc {

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
    if (shape.numel() != values.size()) {
        throw ShapeError("tensor shape " + shape.str() + " does not match " +
                         std::to_string(values.size()) + " values");
    }
    node_ = std::make_shared<Node<T>>();
    node_->shape = shape;
    node_->value.assign(values.begin(), values.end());
    node_->requires_grad = requires_grad;
}

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return Tensor(shape, std::vector<T>(shape.numel(), T(0)), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    return Tensor(shape, std::vector<T>(shape.numel(), value), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor({1, 1}, {value}, requires_grad);
}

template <class T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
    return node_->value[0];
}

template <class T>
void Tensor<T>::backward() const {
    if (numel() != 1) throw ShapeError("backward() requires a scalar, got " + shape().str());
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order of the graph.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node<T>* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn();
    }
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
    auto n = std::make_shared<Node<T>>();
    n->shape = node_->shape;
    n->value = node_->value;
    return from_node(std::move(n));
}

template <class T>
void Tensor<T>::validate(const std::string& what) const {
    for (std::size_t i = 0; i < node_->value.size(); ++i) {
        if (!std::isfinite(node_->value[i])) {
            throw NonFiniteError(what + ": non-finite value at flat index " + std::to_string(i));
        }
    }
    for (std::size_t i = 0; i < node_->grad.size(); ++i) {
        if (!std::isfinite(node_->grad[i])) {
            throw NonFiniteError(what + ": non-finite gradient at flat index " + std::to_string(i));
        }
    }
}

namespace {
thread_local bool no_grad_active = false;
}

NoGradGuard::NoGradGuard() : previous_(no_grad_active) { no_grad_active = true; }
NoGradGuard::~NoGradGuard() { no_grad_active = previous_; }
bool NoGradGuard::active() { return no_grad_active; }

template <class T>
std::shared_ptr<Node<T>> make_result(Shape shape, Buffer<T> value,
                                     const std::vector<std::shared_ptr<Node<T>>>& parents) {
    auto out = std::make_shared<Node<T>>();
    out->shape = shape;
    out->value = std::move(value);
    if (no_grad_active) return out;
    for (const auto& p : parents) {
        if (p->requires_grad) {
            out->requires_grad = true;
            break;
        }
    }
    if (out->requires_grad) out->parents = parents;
    return out;
}

template <class T>
std::shared_ptr<Node<T>> make_result(Shape shape, Buffer<T> value,
                                     std::initializer_list<std::shared_ptr<Node<T>>> parents) {
    return make_result<T>(shape, std::move(value), std::vector<std::shared_ptr<Node<T>>>(parents));
}

template class Tensor<float>;
template class Tensor<double>;
template std::shared_ptr<Node<float>> make_result(Shape, Buffer<float>,
                                                  const std::vector<std::shared_ptr<Node<float>>>&);
template std::shared_ptr<Node<double>> make_result(Shape, Buffer<double>,
                                                   const std::vector<std::shared_ptr<Node<double>>>&);
template std::shared_ptr<Node<float>> make_result(Shape, Buffer<float>,
                                                  std::initializer_list<std::shared_ptr<Node<float>>>);
template std::shared_ptr<Node<double>> make_result(Shape, Buffer<double>,
                                                   std::initializer_list<std::shared_ptr<Node<double>>>);

}  // namespace ccplab::nc
