#pragma once

#include <functional>
#include <random>
#include <vector>

#include "ccplab/numcore/batch_norm.hpp"
#include "ccplab/numcore/gradcheck.hpp"
#include "ccplab/numcore/ops.hpp"
#include "support/random_tensors.hpp"

namespace ccplab::test_support {

// Each differentiable primitive on a small random shape, contracted to a
// scalar and compared against central differences.
struct OpCase {
    const char* name;
    std::function<double(Rng&)> run;  // returns max relative error
};

inline double max_gradient_error(const std::function<nc::Tensor<double>()>& loss, std::vector<nc::Tensor<double>>& params) {
    nc::GradCheckOptions opt;
    return nc::finite_diff_check(loss, params, opt).max_rel_error;
}

inline std::size_t random_dim(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline std::vector<OpCase> op_cases() {
    return {
        {"matmul", [](Rng& rng) {
             const auto m = random_dim(rng, 1, 4), k = random_dim(rng, 1, 4), n = random_dim(rng, 1, 4);
             std::vector<nc::Tensor<double>> p{random_tensor(rng, m, k), random_tensor(rng, k, n)};
             auto w = random_tensor(rng, m, n, false);
             return max_gradient_error([&] { return nc::sum(nc::mul(nc::matmul(p[0], p[1]), w)); }, p);
         }},
        {"matmul_nt", [](Rng& rng) {
             const auto m = random_dim(rng, 1, 4), k = random_dim(rng, 1, 4), n = random_dim(rng, 1, 4);
             std::vector<nc::Tensor<double>> p{random_tensor(rng, m, k), random_tensor(rng, n, k)};
             auto w = random_tensor(rng, m, n, false);
             return max_gradient_error([&] { return nc::sum(nc::mul(nc::matmul_nt(p[0], p[1]), w)); }, p);
         }},
        {"affine", [](Rng& rng) {
             const auto b = random_dim(rng, 1, 4), i = random_dim(rng, 1, 4), o = random_dim(rng, 1, 4);
             std::vector<nc::Tensor<double>> p{random_tensor(rng, b, i), random_tensor(rng, i, o), random_tensor(rng, 1, o)};
             auto w = random_tensor(rng, b, o, false);
             return max_gradient_error([&] { return nc::sum(nc::mul(nc::affine(p[0], p[1], p[2]), w)); }, p);
         }},
        {"gelu", [](Rng& rng) {
             std::vector<nc::Tensor<double>> p{random_tensor(rng, random_dim(rng, 1, 4), random_dim(rng, 1, 4), true, 2.0)};
             auto w = random_tensor(rng, p[0].rows(), p[0].cols(), false);
             return max_gradient_error([&] { return nc::sum(nc::mul(nc::gelu(p[0]), w)); }, p);
         }},
        {"layer_norm", [](Rng& rng) {
             const auto r = random_dim(rng, 1, 4), c = random_dim(rng, 2, 5);
             std::vector<nc::Tensor<double>> p{random_tensor(rng, r, c), random_tensor(rng, 1, c), random_tensor(rng, 1, c)};
             auto w = random_tensor(rng, r, c, false);
             return max_gradient_error([&] { return nc::sum(nc::mul(nc::layer_norm(p[0], p[1], p[2], 1e-5), w)); }, p);
         }},
        {"gather_concat", [](Rng& rng) {
             std::vector<nc::Tensor<double>> p{random_tensor(rng, 4, 3), random_tensor(rng, 2, 3), random_tensor(rng, 6, 2)};
             std::vector<std::size_t> idx{3, 0, 3, 1, 5};
             auto w = random_tensor(rng, 5, 5, false);
             return max_gradient_error([&] {
                 auto rows = nc::gather_rows(nc::concat_rows(p[0], p[1]), idx);
                 return nc::sum(nc::mul(nc::concat_cols(rows, nc::gather_rows(p[2], idx)), w));
             }, p);
         }},
        {"attention", [](Rng& rng) {
             const std::size_t batch = random_dim(rng, 1, 3), len = random_dim(rng, 1, 4), heads = random_dim(rng, 1, 2);
             const std::size_t d = heads * random_dim(rng, 1, 3);
             std::vector<std::size_t> lens(batch);
             for (auto& l : lens) l = random_dim(rng, 1, len);
             std::vector<nc::Tensor<double>> p{random_tensor(rng, batch * len, d), random_tensor(rng, batch * len, d),
                                           random_tensor(rng, batch * len, d)};
             auto w = random_tensor(rng, batch * len, d, false);
             return max_gradient_error([&] { return nc::sum(nc::mul(nc::multi_head_attention(p[0], p[1], p[2], lens, len, heads), w)); }, p);
         }},
        {"batch_norm_train", [](Rng& rng) {
             const auto r = random_dim(rng, 2, 5), c = random_dim(rng, 1, 4);
             nc::BatchNormState<double> st(c);
             std::vector<nc::Tensor<double>> p{random_tensor(rng, r, c), st.gamma, st.beta};
             for (auto& v : p[1].mutable_values()) v = 1.0 + 0.3 * v + 0.5;
             auto w = random_tensor(rng, r, c, false);
             return max_gradient_error([&] { return nc::sum(nc::mul(nc::batch_norm(p[0], st, nc::BnMode::train), w)); }, p);
         }},
        {"batch_norm_eval", [](Rng& rng) {
             const auto r = random_dim(rng, 1, 5), c = random_dim(rng, 1, 4);
             nc::BatchNormState<double> st(c);
             for (auto& v : st.running_mean) v = std::normal_distribution<double>()(rng);
             for (auto& v : st.running_var) v = 0.5 + std::uniform_real_distribution<double>()(rng);
             std::vector<nc::Tensor<double>> p{random_tensor(rng, r, c), st.gamma, st.beta};
             auto w = random_tensor(rng, r, c, false);
             return max_gradient_error([&] { return nc::sum(nc::mul(nc::batch_norm(p[0], st, nc::BnMode::eval), w)); }, p);
         }},
        {"l2_normalize", [](Rng& rng) {
             std::vector<nc::Tensor<double>> p{random_tensor(rng, random_dim(rng, 1, 4), random_dim(rng, 1, 5))};
             auto w = random_tensor(rng, p[0].rows(), p[0].cols(), false);
             return max_gradient_error([&] { return nc::sum(nc::mul(nc::l2_normalize(p[0]), w)); }, p);
         }},
        {"cosine_matrix", [](Rng& rng) {
             const auto k = random_dim(rng, 1, 4);
             std::vector<nc::Tensor<double>> p{random_tensor(rng, random_dim(rng, 1, 4), k), random_tensor(rng, random_dim(rng, 1, 4), k)};
             auto w = random_tensor(rng, p[0].rows(), p[1].rows(), false);
             return max_gradient_error([&] { return nc::sum(nc::mul(nc::cosine_matrix(p[0], p[1]), w)); }, p);
         }},
        {"logsumexp_masked", [](Rng& rng) {
             const auto r = random_dim(rng, 1, 4), c = random_dim(rng, 2, 5);
             std::vector<std::uint8_t> keep(r * c);
             for (std::size_t i = 0; i < r; ++i)
                 for (std::size_t j = 0; j < c; ++j) keep[i * c + j] = (j == 0 || rng() % 3 != 0) ? 1 : 0;
             std::vector<nc::Tensor<double>> p{random_tensor(rng, r, c, true, 3.0)};
             auto w = random_tensor(rng, r, 1, false);
             return max_gradient_error([&] { return nc::sum(nc::mul(nc::logsumexp_rows(p[0], keep), w)); }, p);
         }},
        {"softmax_xent", [](Rng& rng) {
             const auto r = random_dim(rng, 1, 4), c = random_dim(rng, 2, 6);
             std::vector<std::size_t> t(r);
             for (auto& x : t) x = random_dim(rng, 0, c - 1);
             std::vector<nc::Tensor<double>> p{random_tensor(rng, r, c, true, 2.0)};
             return max_gradient_error([&] { return nc::softmax_cross_entropy(p[0], t); }, p);
         }},
        {"gather_elements_sub_mean", [](Rng& rng) {
             std::vector<nc::Tensor<double>> p{random_tensor(rng, 3, 4), random_tensor(rng, 3, 4)};
             std::vector<std::pair<std::size_t, std::size_t>> idx{{0, 1}, {2, 3}, {1, 0}, {0, 1}};
             return max_gradient_error([&] { return nc::mean(nc::gather_elements(nc::sub(nc::scale(p[0], 1.7), p[1]), idx)); }, p);
         }},
    };
}

}  // namespace ccplab::test_support
