#include "ccplab/numcore/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace ccplab::nc {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <class T>
ConstMatMap<T> view(const Node<T>& n) {
    return ConstMatMap<T>(n.value.data(), Eigen::Index(n.shape.rows), Eigen::Index(n.shape.cols));
}

template <class T>
MatMap<T> grad_view(Node<T>& n) {
    n.ensure_grad();
    return MatMap<T>(n.grad.data(), Eigen::Index(n.shape.rows), Eigen::Index(n.shape.cols));
}

template <class T>
ConstMatMap<T> out_grad(const Node<T>& n) {
    return ConstMatMap<T>(n.grad.data(), Eigen::Index(n.shape.rows), Eigen::Index(n.shape.cols));
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

template <class T>
Tensor<T> wrap(std::shared_ptr<Node<T>> n) {
    return Tensor<T>::from_node(std::move(n));
}

}  // namespace

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.cols() == b.rows(), "matmul: " + a.shape().str() + " * " + b.shape().str());
    const std::size_t m = a.rows(), n = b.cols();
    Buffer<T> val(m * n);
    MatMap<T>(val.data(), Eigen::Index(m), Eigen::Index(n)).noalias() = view(*a.node()) * view(*b.node());
    auto out = make_result<T>({m, n}, std::move(val), {a.node(), b.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* pa = a.node().get();
        Node<T>* pb = b.node().get();
        out->backward_fn = [o, pa, pb] {
            auto g = out_grad(*o);
            if (pa->requires_grad) grad_view(*pa).noalias() += g * view(*pb).transpose();
            if (pb->requires_grad) grad_view(*pb).noalias() += view(*pa).transpose() * g;
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.cols() == b.cols(), "matmul_nt: " + a.shape().str() + " * " + b.shape().str() + "^T");
    const std::size_t m = a.rows(), n = b.rows();
    Buffer<T> val(m * n);
    MatMap<T>(val.data(), Eigen::Index(m), Eigen::Index(n)).noalias() =
        view(*a.node()) * view(*b.node()).transpose();
    auto out = make_result<T>({m, n}, std::move(val), {a.node(), b.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* pa = a.node().get();
        Node<T>* pb = b.node().get();
        out->backward_fn = [o, pa, pb] {
            auto g = out_grad(*o);
            if (pa->requires_grad) grad_view(*pa).noalias() += g * view(*pb);
            if (pb->requires_grad) grad_view(*pb).noalias() += g.transpose() * view(*pa);
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "add: " + a.shape().str() + " vs " + b.shape().str());
    Buffer<T> val(a.numel());
    for (std::size_t i = 0; i < val.size(); ++i) val[i] = a.values()[i] + b.values()[i];
    auto out = make_result<T>(a.shape(), std::move(val), {a.node(), b.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* pa = a.node().get();
        Node<T>* pb = b.node().get();
        out->backward_fn = [o, pa, pb] {
            for (Node<T>* p : {pa, pb}) {
                if (!p->requires_grad) continue;
                p->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) p->grad[i] += o->grad[i];
            }
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "sub: " + a.shape().str() + " vs " + b.shape().str());
    Buffer<T> val(a.numel());
    for (std::size_t i = 0; i < val.size(); ++i) val[i] = a.values()[i] - b.values()[i];
    auto out = make_result<T>(a.shape(), std::move(val), {a.node(), b.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* pa = a.node().get();
        Node<T>* pb = b.node().get();
        out->backward_fn = [o, pa, pb] {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += o->grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) pb->grad[i] -= o->grad[i];
            }
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "mul: " + a.shape().str() + " vs " + b.shape().str());
    Buffer<T> val(a.numel());
    for (std::size_t i = 0; i < val.size(); ++i) val[i] = a.values()[i] * b.values()[i];
    auto out = make_result<T>(a.shape(), std::move(val), {a.node(), b.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* pa = a.node().get();
        Node<T>* pb = b.node().get();
        out->backward_fn = [o, pa, pb] {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += o->grad[i] * pb->value[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) pb->grad[i] += o->grad[i] * pa->value[i];
            }
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    Buffer<T> val(a.numel());
    for (std::size_t i = 0; i < val.size(); ++i) val[i] = a.values()[i] * factor;
    auto out = make_result<T>(a.shape(), std::move(val), {a.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* pa = a.node().get();
        out->backward_fn = [o, pa, factor] {
            pa->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += o->grad[i] * factor;
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    require(bias.rows() == 1 && bias.cols() == x.cols(),
            "add_bias: " + x.shape().str() + " + " + bias.shape().str());
    const std::size_t rows = x.rows(), cols = x.cols();
    Buffer<T> val(x.values().begin(), x.values().end());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) val[r * cols + c] += bias.values()[c];
    auto out = make_result<T>(x.shape(), std::move(val), {x.node(), bias.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* px = x.node().get();
        Node<T>* pb = bias.node().get();
        out->backward_fn = [o, px, pb, rows, cols] {
            if (px->requires_grad) {
                px->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) px->grad[i] += o->grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) pb->grad[c] += o->grad[r * cols + c];
            }
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add_bias(matmul(x, w), b);
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    Buffer<T> val(x.numel());
    for (std::size_t i = 0; i < val.size(); ++i) {
        const T v = x.values()[i];
        val[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
    }
    auto out = make_result<T>(x.shape(), std::move(val), {x.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* px = x.node().get();
        out->backward_fn = [o, px, inv_sqrt2] {
            const T inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
            px->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i) {
                const T v = px->value[i];
                const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
                const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
                px->grad[i] += o->grad[i] * (cdf + v * pdf);
            }
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    const std::size_t rows = x.rows(), cols = x.cols();
    require(gamma.rows() == 1 && gamma.cols() == cols && beta.shape() == gamma.shape(),
            "layer_norm: gamma/beta must be [1x" + std::to_string(cols) + "]");
    Buffer<T> xhat(x.numel()), inv_std(rows), val(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = x.values().data() + r * cols;
        T m = 0;
        for (std::size_t c = 0; c < cols; ++c) m += row[c];
        m /= T(cols);
        T var = 0;
        for (std::size_t c = 0; c < cols; ++c) var += (row[c] - m) * (row[c] - m);
        var /= T(cols);
        inv_std[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            xhat[i] = (row[c] - m) * inv_std[r];
            val[i] = gamma.values()[c] * xhat[i] + beta.values()[c];
        }
    }
    auto out = make_result<T>(x.shape(), std::move(val), {x.node(), gamma.node(), beta.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* px = x.node().get();
        Node<T>* pg = gamma.node().get();
        Node<T>* pb = beta.node().get();
        out->backward_fn = [o, px, pg, pb, rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            if (px->requires_grad) px->ensure_grad();
            std::vector<T> dxhat(cols);
            for (std::size_t r = 0; r < rows; ++r) {
                T mean_d = 0, mean_dx = 0;
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    const T g = o->grad[i];
                    if (pg->requires_grad) pg->grad[c] += g * xhat[i];
                    if (pb->requires_grad) pb->grad[c] += g;
                    dxhat[c] = g * pg->value[c];
                    mean_d += dxhat[c];
                    mean_dx += dxhat[c] * xhat[i];
                }
                if (!px->requires_grad) continue;
                mean_d /= T(cols);
                mean_dx /= T(cols);
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    px->grad[i] += inv_std[r] * (dxhat[c] - mean_d - xhat[i] * mean_dx);
                }
            }
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> index) {
    const std::size_t cols = table.cols();
    Buffer<T> val(index.size() * cols);
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] >= table.rows()) {
            throw std::out_of_range("gather_rows: index " + std::to_string(index[r]) + " >= " +
                                    std::to_string(table.rows()));
        }
        std::copy_n(table.values().data() + index[r] * cols, cols, val.data() + r * cols);
    }
    auto out = make_result<T>({index.size(), cols}, std::move(val), {table.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* pt = table.node().get();
        out->backward_fn = [o, pt, cols, idx = std::vector<std::size_t>(index.begin(), index.end())] {
            pt->ensure_grad();
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t c = 0; c < cols; ++c) pt->grad[idx[r] * cols + c] += o->grad[r * cols + c];
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.cols() == b.cols(), "concat_rows: " + a.shape().str() + " / " + b.shape().str());
    Buffer<T> val(a.values().begin(), a.values().end());
    val.insert(val.end(), b.values().begin(), b.values().end());
    const std::size_t na = a.numel();
    auto out = make_result<T>({a.rows() + b.rows(), a.cols()}, std::move(val), {a.node(), b.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* pa = a.node().get();
        Node<T>* pb = b.node().get();
        out->backward_fn = [o, pa, pb, na] {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < na; ++i) pa->grad[i] += o->grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < pb->grad.size(); ++i) pb->grad[i] += o->grad[na + i];
            }
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.rows() == b.rows(), "concat_cols: " + a.shape().str() + " | " + b.shape().str());
    const std::size_t rows = a.rows(), ca = a.cols(), cb = b.cols(), cols = ca + cb;
    Buffer<T> val(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.values().data() + r * ca, ca, val.data() + r * cols);
        std::copy_n(b.values().data() + r * cb, cb, val.data() + r * cols + ca);
    }
    auto out = make_result<T>({rows, cols}, std::move(val), {a.node(), b.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* pa = a.node().get();
        Node<T>* pb = b.node().get();
        out->backward_fn = [o, pa, pb, rows, ca, cb, cols] {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < ca; ++c) pa->grad[r * ca + c] += o->grad[r * cols + c];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cb; ++c) pb->grad[r * cb + c] += o->grad[r * cols + ca + c];
            }
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::span<const std::size_t> lengths, std::size_t seq_len,
                               std::size_t num_heads) {
    const std::size_t batch = lengths.size();
    const std::size_t dim = q.cols();
    require(q.shape() == k.shape() && q.shape() == v.shape(), "attention: q/k/v shapes differ");
    require(q.rows() == batch * seq_len, "attention: expected " + std::to_string(batch * seq_len) + " rows");
    require(num_heads > 0 && dim % num_heads == 0, "attention: dim not divisible by heads");
    for (std::size_t len : lengths) require(len >= 1 && len <= seq_len, "attention: bad sequence length");
    const std::size_t head_dim = dim / num_heads;
    const T inv_scale = T(1) / std::sqrt(T(head_dim));
    const auto L = Eigen::Index(seq_len), hd = Eigen::Index(head_dim);
    const Eigen::OuterStride<> stride{Eigen::Index(dim)};

    // Attention probabilities, one L x L block per (sequence, head).
    Buffer<T> probs(batch * num_heads * seq_len * seq_len, T(0));
    Buffer<T> val(q.numel(), T(0));
    for (std::size_t b = 0; b < batch; ++b) {
        const auto len = Eigen::Index(lengths[b]);
        for (std::size_t h = 0; h < num_heads; ++h) {
            const std::size_t off = b * seq_len * dim + h * head_dim;
            ConstStridedMap<T> qh(q.values().data() + off, L, hd, stride);
            ConstStridedMap<T> kh(k.values().data() + off, len, hd, stride);
            ConstStridedMap<T> vh(v.values().data() + off, len, hd, stride);
            MatMap<T> p(probs.data() + (b * num_heads + h) * seq_len * seq_len, L, L);
            p.leftCols(len).noalias() = (qh * kh.transpose()) * inv_scale;
            for (Eigen::Index r = 0; r < L; ++r) {
                auto row = p.row(r).head(len);
                const T mx = row.maxCoeff();
                row = (row.array() - mx).exp();
                row /= row.sum();
            }
            StridedMap<T> oh(val.data() + off, L, hd, stride);
            oh.noalias() = p.leftCols(len) * vh;
        }
    }
    auto out = make_result<T>(q.shape(), std::move(val), {q.node(), k.node(), v.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* pq = q.node().get();
        Node<T>* pk = k.node().get();
        Node<T>* pv = v.node().get();
        out->backward_fn = [=, probs = std::move(probs),
                            lens = std::vector<std::size_t>(lengths.begin(), lengths.end())] {
            for (Node<T>* p : {pq, pk, pv})
                if (p->requires_grad) p->ensure_grad();
            RowMat<T> dp(L, L), ds(L, L);
            for (std::size_t b = 0; b < batch; ++b) {
                const auto len = Eigen::Index(lens[b]);
                for (std::size_t h = 0; h < num_heads; ++h) {
                    const std::size_t off = b * seq_len * dim + h * head_dim;
                    ConstStridedMap<T> qh(pq->value.data() + off, L, hd, stride);
                    ConstStridedMap<T> kh(pk->value.data() + off, len, hd, stride);
                    ConstStridedMap<T> vh(pv->value.data() + off, len, hd, stride);
                    ConstStridedMap<T> go(o->grad.data() + off, L, hd, stride);
                    ConstMatMap<T> p(probs.data() + (b * num_heads + h) * seq_len * seq_len, L, L);
                    auto pl = p.leftCols(len);
                    if (pv->requires_grad) {
                        StridedMap<T>(pv->grad.data() + off, len, hd, stride).noalias() += pl.transpose() * go;
                    }
                    auto dpl = dp.leftCols(len);
                    dpl.noalias() = go * vh.transpose();
                    auto dsl = ds.leftCols(len);
                    for (Eigen::Index r = 0; r < L; ++r) {
                        const T dot = pl.row(r).dot(dpl.row(r));
                        dsl.row(r) = pl.row(r).array() * (dpl.row(r).array() - dot);
                    }
                    dsl *= inv_scale;
                    if (pq->requires_grad) {
                        StridedMap<T>(pq->grad.data() + off, L, hd, stride).noalias() += dsl * kh;
                    }
                    if (pk->requires_grad) {
                        StridedMap<T>(pk->grad.data() + off, len, hd, stride).noalias() += dsl.transpose() * qh;
                    }
                }
            }
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> l2_normalize(const Tensor<T>& x) {
    const std::size_t rows = x.rows(), cols = x.cols();
    Buffer<T> val(x.numel()), inv_norm(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = x.values().data() + r * cols;
        T sq = 0;
        for (std::size_t c = 0; c < cols; ++c) sq += row[c] * row[c];
        if (!(sq > T(0))) throw std::domain_error("l2_normalize: row " + std::to_string(r) + " has zero norm");
        inv_norm[r] = T(1) / std::sqrt(sq);
        for (std::size_t c = 0; c < cols; ++c) val[r * cols + c] = row[c] * inv_norm[r];
    }
    auto out = make_result<T>(x.shape(), std::move(val), {x.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* px = x.node().get();
        out->backward_fn = [o, px, rows, cols, inv_norm = std::move(inv_norm)] {
            px->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = o->value.data() + r * cols;
                const T* g = o->grad.data() + r * cols;
                T dot = 0;
                for (std::size_t c = 0; c < cols; ++c) dot += y[c] * g[c];
                for (std::size_t c = 0; c < cols; ++c) px->grad[r * cols + c] += (g[c] - y[c] * dot) * inv_norm[r];
            }
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> cosine_matrix(const Tensor<T>& a, const Tensor<T>& b) {
    return matmul_nt(l2_normalize(a), l2_normalize(b));
}

template <class T>
Tensor<T> logsumexp_rows(const Tensor<T>& x, std::span<const std::uint8_t> keep) {
    const std::size_t rows = x.rows(), cols = x.cols();
    require(keep.empty() || keep.size() == x.numel(), "logsumexp_rows: keep mask size mismatch");
    auto kept = [&keep, cols](std::size_t r, std::size_t c) { return keep.empty() || keep[r * cols + c] != 0; };
    Buffer<T> val(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = x.values().data() + r * cols;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t c = 0; c < cols; ++c) {
            if (!kept(r, c)) continue;
            if (std::isnan(row[c])) throw NonFiniteError("logsumexp_rows: row " + std::to_string(r) + " holds NaN");
            mx = std::max(mx, row[c]);
        }
        if (mx == -std::numeric_limits<T>::infinity()) {
            throw std::domain_error("logsumexp_rows: row " + std::to_string(r) + " has no candidates");
        }
        T s = 0;
        for (std::size_t c = 0; c < cols; ++c)
            if (kept(r, c)) s += std::exp(row[c] - mx);
        val[r] = mx + std::log(s);
    }
    auto out = make_result<T>({rows, 1}, std::move(val), {x.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* px = x.node().get();
        out->backward_fn = [o, px, rows, cols, mask = std::vector<std::uint8_t>(keep.begin(), keep.end())] {
            px->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const T g = o->grad[r];
                const T lse = o->value[r];
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    if (!mask.empty() && mask[i] == 0) continue;
                    px->grad[i] += g * std::exp(px->value[i] - lse);
                }
            }
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> gather_elements(const Tensor<T>& x, std::span<const std::pair<std::size_t, std::size_t>> index) {
    const std::size_t cols = x.cols();
    Buffer<T> val(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        const auto [r, c] = index[i];
        if (r >= x.rows() || c >= cols) throw std::out_of_range("gather_elements: index out of range");
        val[i] = x.values()[r * cols + c];
    }
    auto out = make_result<T>({index.size(), 1}, std::move(val), {x.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* px = x.node().get();
        out->backward_fn = [o, px, cols, idx = std::vector<std::pair<std::size_t, std::size_t>>(index.begin(), index.end())] {
            px->ensure_grad();
            for (std::size_t i = 0; i < idx.size(); ++i) px->grad[idx[i].first * cols + idx[i].second] += o->grad[i];
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = 0;
    for (T v : x.values()) s += v;
    auto out = make_result<T>({1, 1}, {s}, {x.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* px = x.node().get();
        out->backward_fn = [o, px] {
            px->ensure_grad();
            for (T& g : px->grad) g += o->grad[0];
        };
    }
    return wrap(out);
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    require(x.numel() > 0, "mean of empty tensor");
    return scale(sum(x), T(1) / T(x.numel()));
}

template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> targets) {
    const std::size_t rows = logits.rows(), cols = logits.cols();
    require(targets.size() == rows && rows > 0, "softmax_cross_entropy: need one target per row");
    Buffer<T> probs(logits.numel());
    T total = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] >= cols) throw std::out_of_range("softmax_cross_entropy: target out of range");
        const T* row = logits.values().data() + r * cols;
        const T mx = *std::max_element(row, row + cols);
        T s = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            probs[r * cols + c] = std::exp(row[c] - mx);
            s += probs[r * cols + c];
        }
        for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] /= s;
        total += mx + std::log(s) - row[targets[r]];
    }
    auto out = make_result<T>({1, 1}, {total / T(rows)}, {logits.node()});
    if (out->requires_grad) {
        Node<T>* o = out.get();
        Node<T>* pl = logits.node().get();
        out->backward_fn = [o, pl, rows, cols, probs = std::move(probs),
                            tg = std::vector<std::size_t>(targets.begin(), targets.end())] {
            pl->ensure_grad();
            const T g = o->grad[0] / T(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) pl->grad[r * cols + c] += g * probs[r * cols + c];
                pl->grad[r * cols + tg[r]] -= g;
            }
        };
    }
    return wrap(out);
}

#define CCPLAB_INSTANTIATE_OPS(T)                                                                        \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> scale(const Tensor<T>&, T);                                                       \
    template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                     \
    template Tensor<T> affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                     \
    template Tensor<T> gelu(const Tensor<T>&);                                                           \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);              \
    template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                      \
    template Tensor<T> concat_rows(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> concat_cols(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                            std::span<const std::size_t>, std::size_t, std::size_t);     \
    template Tensor<T> l2_normalize(const Tensor<T>&);                                                   \
    template Tensor<T> cosine_matrix(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> logsumexp_rows(const Tensor<T>&, std::span<const std::uint8_t>);                  \
    template Tensor<T> gather_elements(const Tensor<T>&,                                                 \
                                       std::span<const std::pair<std::size_t, std::size_t>>);            \
    template Tensor<T> sum(const Tensor<T>&);                                                            \
    template Tensor<T> mean(const Tensor<T>&);                                                           \
    template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const std::size_t>);

CCPLAB_INSTANTIATE_OPS(float)
CCPLAB_INSTANTIATE_OPS(double)

}  // namespace ccplab::nc
