#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccplab::nc {

// Tensor storage starts on a 64-byte boundary. Vectorized reductions peel up
// to the first aligned element, so without this the rounding of a sum would
// depend on where the heap happened to place the buffer.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

// Every tensor in the engine is a row-major matrix; vectors are 1xN, scalars 1x1.
struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t numel() const { return rows * cols; }
    bool operator==(const Shape&) const = default;
    std::string str() const { return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]"; }
};

class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

template <class T>
struct Node {
    Shape shape;
    Buffer<T> value;
    Buffer<T> grad;  // empty until a backward pass reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

template <class T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rows() const { return node_->shape.rows; }
    std::size_t cols() const { return node_->shape.cols; }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> values() const { return node_->value; }
    std::span<T> mutable_values() { return node_->value; }
    T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
    T item() const;

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    // Empty when no backward pass has reached this tensor.
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    // Reverse-mode sweep from this scalar; gradients accumulate into leaves.
    void backward() const;

    // Same values, cut from the graph.
    Tensor detach() const;

    // Throws NonFiniteError if any value (or gradient, when present) is NaN/Inf.
    void validate(const std::string& what = "tensor") const;

    const std::shared_ptr<Node<T>>& node() const { return node_; }
    static Tensor from_node(std::shared_ptr<Node<T>> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

   private:
    std::shared_ptr<Node<T>> node_;
};

// While alive, operations on this thread record no graph (inference mode).
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
    static bool active();

   private:
    bool previous_;
};

// Builds the output node of an operation. Parents that do not require
// gradients are dropped so constant subgraphs are freed eagerly.
template <class T>
std::shared_ptr<Node<T>> make_result(Shape shape, Buffer<T> value,
                                     std::initializer_list<std::shared_ptr<Node<T>>> parents);

template <class T>
std::shared_ptr<Node<T>> make_result(Shape shape, Buffer<T> value,
                                     const std::vector<std::shared_ptr<Node<T>>>& parents);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace ccplab::nc
