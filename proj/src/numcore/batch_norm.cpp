#include "ccplab/numcore/batch_norm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ccplab::nc {

template <class T>
BatchNormState<T>::BatchNormState(std::size_t features, T momentum_, T epsilon_)
    : gamma(Tensor<T>::full({1, features}, T(1), true)),
      beta(Tensor<T>::zeros({1, features}, true)),
      running_mean(features, T(0)),
      running_var(features, T(1)),
      momentum(momentum_),
      epsilon(epsilon_) {
    check();
}

template <class T>
void BatchNormState<T>::check() const {
    const std::size_t f = running_mean.size();
    if (running_var.size() != f || gamma.cols() != f || beta.cols() != f || gamma.rows() != 1 || beta.rows() != 1) {
        throw ShapeError("batch norm state: inconsistent feature dimensions");
    }
    if (!(momentum > T(0) && momentum < T(1))) throw std::invalid_argument("batch norm momentum must lie in (0,1)");
    if (!(epsilon > T(0))) throw std::invalid_argument("batch norm epsilon must be positive");
    for (std::size_t i = 0; i < f; ++i) {
        if (running_var[i] < T(0)) throw std::invalid_argument("batch norm running_var is negative at " + std::to_string(i));
    }
}

template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state, BnMode mode) {
    const std::size_t rows = x.rows(), cols = x.cols();
    if (cols != state.features()) {
        throw ShapeError("batch_norm: input has " + std::to_string(cols) + " features, state has " +
                         std::to_string(state.features()));
    }
    if (rows < 1) throw ShapeError("batch_norm: empty batch");
    if (mode == BnMode::train && rows < 2) {
        throw ShapeError("batch_norm: train mode needs at least 2 rows, got " + std::to_string(rows));
    }

    std::vector<T> mu(cols), inv_std(cols);
    if (mode == BnMode::train) {
        std::vector<T> var(cols, T(0));
        for (std::size_t c = 0; c < cols; ++c) {
            T m = 0;
            for (std::size_t r = 0; r < rows; ++r) m += x.values()[r * cols + c];
            mu[c] = m / T(rows);
            T v = 0;
            for (std::size_t r = 0; r < rows; ++r) {
                const T d = x.values()[r * cols + c] - mu[c];
                v += d * d;
            }
            var[c] = v / T(rows);
            inv_std[c] = T(1) / std::sqrt(var[c] + state.epsilon);
        }
        for (std::size_t c = 0; c < cols; ++c) {
            state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mu[c];
            state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] + state.momentum * var[c];
        }
    } else {
        for (std::size_t c = 0; c < cols; ++c) {
            mu[c] = state.running_mean[c];
            inv_std[c] = T(1) / std::sqrt(state.running_var[c] + state.epsilon);
        }
    }

    Buffer<T> xhat(x.numel()), val(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            xhat[i] = (x.values()[i] - mu[c]) * inv_std[c];
            val[i] = state.gamma.values()[c] * xhat[i] + state.beta.values()[c];
        }
    }

    auto out = make_result<T>(x.shape(), std::move(val), {x.node(), state.gamma.node(), state.beta.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* px = x.node().get();
        Node<T>* pg = state.gamma.node().get();
        Node<T>* pb = state.beta.node().get();
        const bool batch_stats = mode == BnMode::train;
        out->backward_fn = [o, px, pg, pb, rows, cols, batch_stats, xhat = std::move(xhat),
                            inv_std = std::move(inv_std)] {
            std::vector<T> sum_d(cols, T(0)), sum_dx(cols, T(0));
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    sum_d[c] += o->grad[i];
                    sum_dx[c] += o->grad[i] * xhat[i];
                }
            }
            if (pg->requires_grad) {
                pg->ensure_grad();
                for (std::size_t c = 0; c < cols; ++c) pg->grad[c] += sum_dx[c];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t c = 0; c < cols; ++c) pb->grad[c] += sum_d[c];
            }
            if (!px->requires_grad) return;
            px->ensure_grad();
            const T n = T(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    const T g = pg->value[c];
                    if (batch_stats) {
                        px->grad[i] += g * inv_std[c] * (o->grad[i] - sum_d[c] / n - xhat[i] * sum_dx[c] / n);
                    } else {
                        px->grad[i] += g * inv_std[c] * o->grad[i];
                    }
                }
            }
        };
    }
    return Tensor<T>::from_node(out);
}

template struct BatchNormState<float>;
template struct BatchNormState<double>;
template Tensor<float> batch_norm(const Tensor<float>&, BatchNormState<float>&, BnMode);
template Tensor<double> batch_norm(const Tensor<double>&, BatchNormState<double>&, BnMode);

}  // namespace ccplab::nc
