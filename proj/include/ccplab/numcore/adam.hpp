#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ccplab/numcore/tensor.hpp"

namespace ccplab::nc {

template <class T>
struct AdamState {
    std::uint64_t step_count = 0;
    std::vector<std::vector<T>> first_moment;   // one block per parameter tensor
    std::vector<std::vector<T>> second_moment;
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);
    T learning_rate = T(1e-3);
    std::uint64_t warmup_steps = 0;  // linear ramp length; 0 disables the ramp

    // Learning rate applied by update number `step` (1-based).
    T scheduled_lr(std::uint64_t step) const;
};

// Bias-corrected Adam on raw arrays. `block` indexes the moment buffers, which
// are sized lazily on first use. Does not advance step_count.
template <class T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamState<T>& state, std::size_t block, T lr);

// One optimizer step over every parameter; a tensor without an accumulated
// gradient is treated as having a zero gradient.
template <class T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state);

}  // namespace ccplab::nc
