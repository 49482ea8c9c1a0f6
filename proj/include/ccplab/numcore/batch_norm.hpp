#pragma once

#include <cstddef>
#include <vector>

#include "ccplab/numcore/tensor.hpp"

namespace ccplab::nc {

enum class BnMode { train, eval };

// Learnable affine parameters plus the running statistics used in eval mode.
// Both batch and running variance use the biased (divide-by-B) estimator.
template <class T>
struct BatchNormState {
    Tensor<T> gamma;  // [1 x F], requires grad
    Tensor<T> beta;   // [1 x F], requires grad
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T momentum = T(0.1);
    T epsilon = T(1e-5);

    BatchNormState() = default;
    explicit BatchNormState(std::size_t features, T momentum = T(0.1), T epsilon = T(1e-5));

    std::size_t features() const { return running_mean.size(); }
    // Throws if the invariants (matching feature dims, var >= 0) are broken.
    void check() const;
};

// Train mode normalizes by batch statistics and folds them into the running
// statistics: running <- (1 - momentum) * running + momentum * batch.
// Eval mode normalizes by the running statistics and never touches them.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state, BnMode mode);

extern template struct BatchNormState<float>;
extern template struct BatchNormState<double>;

}  // namespace ccplab::nc
