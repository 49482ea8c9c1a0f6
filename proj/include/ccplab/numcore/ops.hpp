#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "ccplab/numcore/tensor.hpp"

// Differentiable primitives. All inputs are row-major matrices; every op
// returns a fresh tensor wired into the graph when any input requires grad.
namespace ccplab::nc {

template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);     // a * b
template <class T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);  // a * b^T

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& a, T factor);
// x[B x F] + bias[1 x F] broadcast over rows.
template <class T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
// x * w + b, the affine map used by every linear layer.
template <class T> Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// Exact (erf-based) GELU.
template <class T> Tensor<T> gelu(const Tensor<T>& x);

// Row-wise layer normalization with learnable gamma/beta of shape [1 x F].
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

// Gathers rows of `table` by index (embedding lookup, [CLS] extraction).
template <class T> Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> index);

template <class T> Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b);

// Masked multi-head scaled dot-product attention over a padded batch.
// q, k, v are [B*L x D]; row b*L + t holds token t of sequence b; keys at
// t >= lengths[b] are masked out.
template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::span<const std::size_t> lengths, std::size_t seq_len,
                               std::size_t num_heads);

// Each row divided by its Euclidean norm. A zero row throws, naming its index.
template <class T> Tensor<T> l2_normalize(const Tensor<T>& x);

// Row-wise cosine similarity matrix between the rows of a and b.
template <class T> Tensor<T> cosine_matrix(const Tensor<T>& a, const Tensor<T>& b);

// Row-wise log-sum-exp -> [rows x 1]. When `keep` is non-empty, only entries
// with keep[r*cols + c] != 0 take part; every row must keep at least one.
template <class T>
Tensor<T> logsumexp_rows(const Tensor<T>& x, std::span<const std::uint8_t> keep = {});

// Picks x(r, c) for each (r, c) -> [k x 1].
template <class T>
Tensor<T> gather_elements(const Tensor<T>& x, std::span<const std::pair<std::size_t, std::size_t>> index);

template <class T> Tensor<T> sum(const Tensor<T>& x);
template <class T> Tensor<T> mean(const Tensor<T>& x);

// Mean cross-entropy of softmax(logits) against integer targets, one per row.
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> targets);

}  // namespace ccplab::nc
