#include "ccplab/encoder/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "ccplab/numcore/ops.hpp"

namespace ccplab::encoder {

void EncoderConfig::validate() const {
    if (vocab_size == 0 || model_dim == 0 || num_layers == 0 || num_heads == 0 || feedforward_dim == 0) {
        throw std::invalid_argument("encoder config: sizes must be positive");
    }
    if (model_dim % num_heads != 0) throw std::invalid_argument("encoder config: model_dim must be divisible by num_heads");
    if (max_seq_len < 2) throw std::invalid_argument("encoder config: max_seq_len must leave room for [CLS] and a token");
    if (dropout_rate != 0.0) throw std::invalid_argument("encoder config: dropout is not supported (dropout_rate must be 0)");
    if (!(mlm_mask_prob > 0.0 && mlm_mask_prob < 1.0)) throw std::invalid_argument("encoder config: mlm_mask_prob must lie in (0,1)");
}

namespace {

template <class T>
nc::Tensor<T> normal_param(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    std::normal_distribution<double> gauss(0.0, stddev);
    std::vector<T> v(rows * cols);
    for (auto& x : v) x = static_cast<T>(gauss(rng));
    return nc::Tensor<T>({rows, cols}, std::move(v), true);
}

template <class T>
nc::Tensor<T> linear_weight(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    return normal_param<T>(rng, fan_in, fan_out, 1.0 / std::sqrt(double(fan_in)));
}

template <class T>
nc::Tensor<T> zeros(std::size_t cols) {
    return nc::Tensor<T>::zeros({1, cols}, true);
}

template <class T>
nc::Tensor<T> ones(std::size_t cols) {
    return nc::Tensor<T>::full({1, cols}, T(1), true);
}

}  // namespace

template <class T>
Encoder<T>::Encoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const std::size_t d = config_.model_dim, f = config_.feedforward_dim;
    const double embed_std = 1.0 / std::sqrt(double(d));
    token_embedding_ = normal_param<T>(rng, config_.vocab_size + kNumReserved, d, embed_std);
    position_embedding_ = normal_param<T>(rng, config_.max_seq_len, d, embed_std);
    for (std::size_t l = 0; l < config_.num_layers; ++l) {
        Layer layer;
        layer.ln1_gamma = ones<T>(d);
        layer.ln1_beta = zeros<T>(d);
        layer.wq = linear_weight<T>(rng, d, d);
        layer.bq = zeros<T>(d);
        layer.wk = linear_weight<T>(rng, d, d);
        layer.bk = zeros<T>(d);
        layer.wv = linear_weight<T>(rng, d, d);
        layer.bv = zeros<T>(d);
        layer.wo = linear_weight<T>(rng, d, d);
        layer.bo = zeros<T>(d);
        layer.ln2_gamma = ones<T>(d);
        layer.ln2_beta = zeros<T>(d);
        layer.w1 = linear_weight<T>(rng, d, f);
        layer.b1 = zeros<T>(f);
        layer.w2 = linear_weight<T>(rng, f, d);
        layer.b2 = zeros<T>(d);
        layers_.push_back(std::move(layer));
    }
    final_gamma_ = ones<T>(d);
    final_beta_ = zeros<T>(d);
    mlm_weight_ = linear_weight<T>(rng, d, config_.vocab_size);
    mlm_bias_ = zeros<T>(config_.vocab_size);
}

template <class T>
std::vector<std::vector<std::size_t>> Encoder<T>::to_model_ids(std::span<const std::vector<TokenId>> batch) const {
    if (batch.empty()) throw std::invalid_argument("encode: empty batch");
    std::vector<std::vector<std::size_t>> ids;
    ids.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& seq = batch[b];
        if (seq.size() + 1 > config_.max_seq_len) {
            throw std::invalid_argument("encode: sequence " + std::to_string(b) + " has " + std::to_string(seq.size()) +
                                        " tokens, limit is " + std::to_string(config_.max_seq_len - 1));
        }
        std::vector<std::size_t> row{kClsId};
        for (TokenId t : seq) {
            if (t >= config_.vocab_size) {
                throw std::invalid_argument("encode: unknown token id " + std::to_string(t) + " in sequence " +
                                            std::to_string(b));
            }
            row.push_back(std::size_t(t) + kNumReserved);
        }
        ids.push_back(std::move(row));
    }
    return ids;
}

template <class T>
typename Encoder<T>::Hidden Encoder<T>::forward(std::span<const std::vector<std::size_t>> ids, bool cls_only) const {
    const std::size_t batch = ids.size();
    std::size_t seq_len = 0;
    for (const auto& row : ids) seq_len = std::max(seq_len, row.size());

    std::vector<std::size_t> flat(batch * seq_len, kPadId), positions(batch * seq_len), lengths(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        lengths[b] = ids[b].size();
        for (std::size_t t = 0; t < seq_len; ++t) {
            if (t < ids[b].size()) flat[b * seq_len + t] = ids[b][t];
            positions[b * seq_len + t] = t;
        }
    }

    auto x = nc::add(nc::gather_rows(token_embedding_, std::span<const std::size_t>(flat)),
                     nc::gather_rows(position_embedding_, std::span<const std::size_t>(positions)));
    const T ln_eps = T(1e-5);
    for (const auto& layer : layers_) {
        auto a = nc::layer_norm(x, layer.ln1_gamma, layer.ln1_beta, ln_eps);
        auto q = nc::affine(a, layer.wq, layer.bq);
        auto k = nc::affine(a, layer.wk, layer.bk);
        auto v = nc::affine(a, layer.wv, layer.bv);
        auto att = nc::multi_head_attention(q, k, v, std::span<const std::size_t>(lengths), seq_len, config_.num_heads);
        x = nc::add(x, nc::affine(att, layer.wo, layer.bo));
        auto h = nc::layer_norm(x, layer.ln2_gamma, layer.ln2_beta, ln_eps);
        x = nc::add(x, nc::affine(nc::gelu(nc::affine(h, layer.w1, layer.b1)), layer.w2, layer.b2));
    }
    if (cls_only) {
        std::vector<std::size_t> cls_rows(batch);
        for (std::size_t b = 0; b < batch; ++b) cls_rows[b] = b * seq_len;
        x = nc::gather_rows(x, std::span<const std::size_t>(cls_rows));
    }
    return {nc::layer_norm(x, final_gamma_, final_beta_, ln_eps), seq_len};
}

template <class T>
nc::Tensor<T> Encoder<T>::encode(std::span<const std::vector<TokenId>> batch) const {
    const auto ids = to_model_ids(batch);
    return forward(ids, true).states;
}

template <class T>
typename Encoder<T>::MlmResult Encoder<T>::mlm_loss(std::span<const std::vector<TokenId>> batch, double mask_prob,
                                                    Rng& rng) const {
    if (!(mask_prob > 0.0 && mask_prob < 1.0)) throw std::invalid_argument("mlm_loss: mask_prob must lie in (0,1)");
    auto ids = to_model_ids(batch);
    std::size_t tokens = 0;
    for (const auto& row : ids) tokens += row.size() - 1;
    if (tokens == 0) throw std::invalid_argument("mlm_loss: no maskable token");

    std::bernoulli_distribution coin(mask_prob);
    std::vector<std::pair<std::size_t, std::size_t>> masked;  // (row, position)
    for (int attempt = 0; attempt < 2 && masked.empty(); ++attempt) {
        for (std::size_t b = 0; b < ids.size(); ++b)
            for (std::size_t t = 1; t < ids[b].size(); ++t)
                if (coin(rng)) masked.emplace_back(b, t);
    }
    if (masked.empty()) {
        std::size_t pick = std::uniform_int_distribution<std::size_t>(0, tokens - 1)(rng);
        for (std::size_t b = 0; b < ids.size(); ++b) {
            if (pick < ids[b].size() - 1) {
                masked.emplace_back(b, pick + 1);
                break;
            }
            pick -= ids[b].size() - 1;
        }
    }

    std::vector<std::size_t> targets;
    targets.reserve(masked.size());
    for (const auto& [b, t] : masked) {
        targets.push_back(ids[b][t] - kNumReserved);
        ids[b][t] = kMaskId;
    }
    const Hidden hidden = forward(ids, false);
    std::vector<std::size_t> rows;
    rows.reserve(masked.size());
    for (const auto& [b, t] : masked) rows.push_back(b * hidden.seq_len + t);
    auto logits = nc::affine(nc::gather_rows(hidden.states, std::span<const std::size_t>(rows)), mlm_weight_, mlm_bias_);
    return {nc::softmax_cross_entropy(logits, std::span<const std::size_t>(targets)), masked.size(), tokens};
}

template <class T>
std::vector<NamedParam<T>> Encoder<T>::parameters() const {
    std::vector<NamedParam<T>> out{{"encoder.token_embedding", token_embedding_},
                                   {"encoder.position_embedding", position_embedding_}};
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& L = layers_[l];
        const std::string p = "encoder.layer" + std::to_string(l) + ".";
        out.insert(out.end(), {{p + "ln1_gamma", L.ln1_gamma}, {p + "ln1_beta", L.ln1_beta}, {p + "wq", L.wq},
                               {p + "bq", L.bq}, {p + "wk", L.wk}, {p + "bk", L.bk}, {p + "wv", L.wv}, {p + "bv", L.bv},
                               {p + "wo", L.wo}, {p + "bo", L.bo}, {p + "ln2_gamma", L.ln2_gamma},
                               {p + "ln2_beta", L.ln2_beta}, {p + "w1", L.w1}, {p + "b1", L.b1}, {p + "w2", L.w2},
                               {p + "b2", L.b2}});
    }
    out.insert(out.end(), {{"encoder.final_gamma", final_gamma_},
                           {"encoder.final_beta", final_beta_},
                           {"mlm.weight", mlm_weight_},
                           {"mlm.bias", mlm_bias_}});
    return out;
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace ccplab::encoder
