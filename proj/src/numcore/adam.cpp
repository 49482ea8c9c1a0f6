#include "ccplab/numcore/adam.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ccplab::nc {

template <class T>
T AdamState<T>::scheduled_lr(std::uint64_t step) const {
    if (warmup_steps == 0 || step >= warmup_steps) return learning_rate;
    return learning_rate * T(step) / T(warmup_steps);
}

template <class T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamState<T>& state, std::size_t block, T lr) {
    if (grad.size() != param.size()) {
        throw ShapeError("adam: gradient size " + std::to_string(grad.size()) + " != parameter size " +
                         std::to_string(param.size()));
    }
    if (state.first_moment.size() <= block) {
        state.first_moment.resize(block + 1);
        state.second_moment.resize(block + 1);
    }
    auto& m = state.first_moment[block];
    auto& v = state.second_moment[block];
    if (m.empty()) {
        m.assign(param.size(), T(0));
        v.assign(param.size(), T(0));
    }
    if (m.size() != param.size()) throw ShapeError("adam: moment buffer size mismatch for block " + std::to_string(block));

    const auto t = T(state.step_count + 1);
    const T correction1 = T(1) - std::pow(state.beta1, t);
    const T correction2 = T(1) - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = state.beta1 * m[i] + (T(1) - state.beta1) * grad[i];
        v[i] = state.beta2 * v[i] + (T(1) - state.beta2) * grad[i] * grad[i];
        const T m_hat = m[i] / correction1;
        const T v_hat = v[i] / correction2;
        param[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
}

template <class T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
    if (!state.first_moment.empty() && state.first_moment.size() != params.size()) {
        throw ShapeError("adam: state tracks " + std::to_string(state.first_moment.size()) + " blocks, got " +
                         std::to_string(params.size()));
    }
    const T lr = state.scheduled_lr(state.step_count + 1);
    std::vector<T> zeros;
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto& p = params[b];
        std::span<const T> g = p.grad();
        if (g.empty()) {
            zeros.assign(p.numel(), T(0));
            g = zeros;
        }
        adam_update<T>(p.mutable_values(), g, state, b, lr);
    }
    ++state.step_count;
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_update(std::span<float>, std::span<const float>, AdamState<float>&, std::size_t, float);
template void adam_update(std::span<double>, std::span<const double>, AdamState<double>&, std::size_t, double);
template void adam_step(std::span<Tensor<float>>, AdamState<float>&);
template void adam_step(std::span<Tensor<double>>, AdamState<double>&);

}  // namespace ccplab::nc
