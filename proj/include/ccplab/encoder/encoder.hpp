#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ccplab/corpus/corpus.hpp"
#include "ccplab/numcore/tensor.hpp"

namespace ccplab::encoder {

using corpus::TokenId;
using Rng = std::mt19937_64;

struct EncoderConfig {
    std::size_t vocab_size = 512;  // corpus tokens; three reserved ids are added on top
    std::size_t model_dim = 64;
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t max_seq_len = 33;  // including [CLS]
    std::size_t feedforward_dim = 128;
    double dropout_rate = 0.0;
    double mlm_mask_prob = 0.15;

    void validate() const;
};

// Reserved input ids; corpus token t enters the embedding table at t + kNumReserved.
inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kClsId = 1;
inline constexpr std::size_t kMaskId = 2;
inline constexpr std::size_t kNumReserved = 3;

template <class T>
struct NamedParam {
    std::string name;
    nc::Tensor<T> tensor;
};

// Pre-LN transformer over [CLS] + tokens with learned absolute positions.
// The sentence embedding is the final-layer-normed [CLS] state.
template <class T>
class Encoder {
   public:
    Encoder(const EncoderConfig& config, std::uint64_t seed);

    const EncoderConfig& config() const { return config_; }

    // [B x model_dim] sentence embeddings.
    nc::Tensor<T> encode(std::span<const std::vector<TokenId>> batch) const;

    // Mean cross-entropy over masked positions. Each non-[CLS] token is masked
    // independently with probability mask_prob; if nothing gets masked the
    // draw is repeated once, then one uniformly chosen token is forced.
    struct MlmResult {
        nc::Tensor<T> loss;
        std::size_t masked = 0;
        std::size_t tokens = 0;
    };
    MlmResult mlm_loss(std::span<const std::vector<TokenId>> batch, double mask_prob, Rng& rng) const;

    // Encoder weights followed by the MLM head; order is stable.
    std::vector<NamedParam<T>> parameters() const;

   private:
    struct Layer {
        nc::Tensor<T> ln1_gamma, ln1_beta;
        nc::Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
        nc::Tensor<T> ln2_gamma, ln2_beta;
        nc::Tensor<T> w1, b1, w2, b2;
    };

    struct Hidden {
        nc::Tensor<T> states;  // [B*L x D], final layer norm applied
        std::size_t seq_len = 0;
    };

    // `ids` are embedding-table ids with [CLS] already at position 0.
    Hidden forward(std::span<const std::vector<std::size_t>> ids, bool cls_only) const;
    std::vector<std::vector<std::size_t>> to_model_ids(std::span<const std::vector<TokenId>> batch) const;

    EncoderConfig config_;
    nc::Tensor<T> token_embedding_;
    nc::Tensor<T> position_embedding_;
    std::vector<Layer> layers_;
    nc::Tensor<T> final_gamma_, final_beta_;
    nc::Tensor<T> mlm_weight_, mlm_bias_;
};

extern template class Encoder<float>;
extern template class Encoder<double>;

}  // namespace ccplab::encoder
