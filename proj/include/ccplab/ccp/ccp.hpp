#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ccplab/encoder/encoder.hpp"
#include "ccplab/numcore/adam.hpp"
#include "ccplab/numcore/batch_norm.hpp"
#include "ccplab/numcore/tensor.hpp"

namespace ccplab::ccp {

using encoder::NamedParam;

// ---------------------------------------------------------------------------
// Projection head: affine -> batch norm -> activation -> affine. Used only
// while training; sentence embeddings come from the encoder.

enum class HeadActivation { gelu, identity };

struct HeadConfig {
    std::size_t input_dim = 64;
    std::size_t hidden_dim = 64;
    std::size_t output_dim = 32;
    HeadActivation activation = HeadActivation::gelu;
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;
};

template <class T>
class ProjectionHead {
   public:
    ProjectionHead(const HeadConfig& config, std::uint64_t seed);

    // Train mode updates the single shared set of running statistics.
    nc::Tensor<T> project(const nc::Tensor<T>& h, nc::BnMode mode);

    const HeadConfig& config() const { return config_; }
    nc::BatchNormState<T>& bn() { return bn_; }
    const nc::BatchNormState<T>& bn() const { return bn_; }
    nc::Tensor<T>& w1() { return w1_; }
    nc::Tensor<T>& b1() { return b1_; }
    nc::Tensor<T>& w2() { return w2_; }
    nc::Tensor<T>& b2() { return b2_; }

    std::vector<NamedParam<T>> parameters() const;

   private:
    HeadConfig config_;
    nc::Tensor<T> w1_, b1_;
    nc::BatchNormState<T> bn_;
    nc::Tensor<T> w2_, b2_;
};

// ---------------------------------------------------------------------------
// Asymmetric batch normalization.

enum class BnPairing {
    asymmetric,       // one branch in train mode, the other in eval mode, alternating
    symmetric_train,  // both branches use batch statistics
    symmetric_eval,   // both branches use running statistics
};

template <class T>
struct PairProjection {
    nc::Tensor<T> z_center;
    nc::Tensor<T> z_context;
    int next_flag = 0;
};

// flag 0: centers use train mode, contexts eval mode; flag 1 swaps the roles.
// The eval-mode branch is evaluated first, so within a step it reads the
// running statistics as they stood before the train-mode branch updates them.
// Returns the flipped flag for the next step.
template <class T>
PairProjection<T> asymmetric_forward(const nc::Tensor<T>& h_center, const nc::Tensor<T>& h_context,
                                     ProjectionHead<T>& head, int flag, BnPairing pairing = BnPairing::asymmetric);

// ---------------------------------------------------------------------------
// Language-specific FIFO memory bank.

enum class BankMode { language_specific, shared, off };

template <class T>
class MemoryBank {
   public:
    MemoryBank(BankMode mode, std::size_t capacity, std::size_t dim);

    // Appends every row (unit norm within 1e-6) to its language's ring,
    // evicting the oldest entries beyond capacity.
    void push(const nc::Tensor<T>& rows, std::span<const std::string> langs);
    void push(const nc::Tensor<T>& rows, const std::string& lang);

    // Current contents for `lang`, oldest first, as a constant [count x dim] tensor.
    nc::Tensor<T> negatives(const std::string& lang) const;
    std::size_t count(const std::string& lang) const;

    BankMode mode() const { return mode_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t dim() const { return dim_; }

    struct Ring {
        std::vector<T> data;  // capacity x dim
        std::size_t cursor = 0;
        std::size_t count = 0;
    };
    const std::map<std::string, Ring>& rings() const { return rings_; }
    void restore_ring(const std::string& key, Ring ring);

   private:
    std::string key(const std::string& lang) const;

    BankMode mode_;
    std::size_t capacity_;
    std::size_t dim_;
    std::map<std::string, Ring> rings_;
};

// ---------------------------------------------------------------------------
// Contrastive context prediction loss.

// 2N x 2N symmetric 0/1 matrix over rows ordered [centers; contexts].
class PositiveMask {
   public:
    explicit PositiveMask(std::size_t size);
    // Row i pairs with row N + i, both directions.
    static PositiveMask paired(std::size_t num_pairs);

    void set(std::size_t a, std::size_t b);
    bool operator()(std::size_t a, std::size_t b) const { return m_[a * n_ + b] != 0; }
    std::size_t size() const { return n_; }
    std::vector<std::pair<std::size_t, std::size_t>> positives() const;
    // Symmetric with an empty diagonal.
    bool valid() const;

   private:
    std::size_t n_;
    std::vector<std::uint8_t> m_;
};

template <class T>
struct CcpLossResult {
    nc::Tensor<T> loss;                 // mean over positive entries
    std::size_t num_positives = 0;
    std::size_t candidates_per_anchor = 0;  // 2N - 1 + bank rows
};

// For every positive (c, i):
//   -log exp(s(c,i)/tau) / sum_{k != c} exp(s(c,k)/tau)
// with k ranging over the 2N batch rows and the bank rows. s is the dot
// product, which is the cosine when rows are unit-normalized
// (require_unit_rows checks this within 1e-6). Bank rows are constants.
template <class T>
CcpLossResult<T> ccp_loss(const nc::Tensor<T>& z, const PositiveMask& mask, const nc::Tensor<T>& bank, double temperature,
                          bool require_unit_rows = true);

// InfoNCE bound on mutual information in nats: max(0, log K - loss).
double mi_lower_bound(double mean_per_positive_loss, std::size_t candidates);

// ---------------------------------------------------------------------------
// Training loop.

struct CcpConfig {
    double temperature = 0.1;
    std::size_t window = 2;
    std::size_t pairs_per_batch = 32;
    std::size_t bank_capacity = 128;
    BankMode bank_mode = BankMode::language_specific;
    bool l2_normalize = true;
    BnPairing bn_pairing = BnPairing::asymmetric;

    void validate() const;
};

struct OptimConfig {
    double learning_rate = 1e-3;
    std::uint64_t warmup_steps = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainerConfig {
    encoder::EncoderConfig encoder;
    HeadConfig head;  // input_dim is taken from encoder.model_dim
    CcpConfig ccp;
    OptimConfig optim;
    bool mlm_enabled = false;
    double mlm_batch_probability = 0.5;
    std::uint64_t seed = 1;
};

struct StepStats {
    std::uint64_t step = 0;          // 1-based index of this step
    std::string lang;
    bool mlm = false;
    int flag_before = 0;
    double loss = 0.0;               // mean per-positive CCP loss, or MLM loss
    std::size_t candidates = 0;
    double mi_bound = 0.0;
};

class TrainingDiverged : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

template <class T>
class Trainer {
   public:
    Trainer(const TrainerConfig& config, const corpus::Corpus& corpus);

    // Samples the next monolingual batch (languages round-robin) and trains on it.
    StepStats step();
    // One update on a prepared batch: encode both columns, project through the
    // asymmetric pair, contrast against in-batch rows and the language's bank,
    // Adam step, push both columns to the bank, flip the mode flag.
    StepStats train_step(const corpus::PairBatch& batch);

    const TrainerConfig& config() const { return config_; }
    encoder::Encoder<T>& encoder() { return encoder_; }
    const encoder::Encoder<T>& encoder() const { return encoder_; }
    ProjectionHead<T>& head() { return head_; }
    MemoryBank<T>& bank() { return bank_; }
    const MemoryBank<T>& bank() const { return bank_; }
    nc::AdamState<T>& optimizer() { return adam_; }
    int flag() const { return flag_; }
    void set_flag(int f) { flag_ = f; }
    std::uint64_t steps_done() const { return adam_.step_count; }
    encoder::Rng& rng() { return rng_; }
    std::size_t next_language() const { return next_lang_; }
    void set_next_language(std::size_t i) { next_lang_ = i; }
    const corpus::PairSampler& sampler() const { return sampler_; }

    // Encoder parameters, then head parameters (w1, b1, gamma, beta, w2, b2).
    std::vector<NamedParam<T>> parameters() const;

    // [CLS] embeddings of arbitrary sentences, batched, without a graph.
    std::vector<std::vector<double>> embed(std::span<const std::vector<corpus::TokenId>> sentences,
                                           std::size_t batch_size = 256) const;

   private:
    TrainerConfig config_;
    corpus::PairSampler sampler_;
    encoder::Encoder<T> encoder_;
    ProjectionHead<T> head_;
    MemoryBank<T> bank_;
    nc::AdamState<T> adam_;
    std::vector<nc::Tensor<T>> param_tensors_;
    encoder::Rng rng_;
    int flag_ = 0;
    std::size_t next_lang_ = 0;
};

extern template class ProjectionHead<float>;
extern template class ProjectionHead<double>;
extern template class MemoryBank<float>;
extern template class MemoryBank<double>;
extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace ccplab::ccp
