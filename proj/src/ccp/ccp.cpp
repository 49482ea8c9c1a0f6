#include "ccplab/ccp/ccp.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ccplab/numcore/adam.hpp"
#include "ccplab/numcore/ops.hpp"

namespace ccplab::ccp {

namespace {

encoder::Rng derived_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return encoder::Rng(seq);
}

template <class T>
nc::Tensor<T> linear_weight(encoder::Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(double(fan_in)));
    std::vector<T> v(fan_in * fan_out);
    for (auto& x : v) x = static_cast<T>(gauss(rng));
    return nc::Tensor<T>({fan_in, fan_out}, std::move(v), true);
}

constexpr double kUnitTolerance = 1e-6;

template <class T>
void check_unit_rows(std::span<const T> values, std::size_t rows, std::size_t cols, const char* what) {
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += double(values[r * cols + c]) * double(values[r * cols + c]);
        const double dev = std::abs(std::sqrt(s) - 1.0);
        if (!(dev <= kUnitTolerance)) {
            std::ostringstream os;
            os << what << ": row " << r << " has norm " << std::sqrt(s) << ", expected 1";
            throw std::invalid_argument(os.str());
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------

template <class T>
ProjectionHead<T>::ProjectionHead(const HeadConfig& config, std::uint64_t seed) : config_(config) {
    if (config_.input_dim == 0 || config_.hidden_dim == 0 || config_.output_dim == 0)
        throw std::invalid_argument("projection head: dimensions must be positive");
    encoder::Rng rng(seed);
    w1_ = linear_weight<T>(rng, config_.input_dim, config_.hidden_dim);
    b1_ = nc::Tensor<T>::zeros({1, config_.hidden_dim}, true);
    bn_ = nc::BatchNormState<T>(config_.hidden_dim, T(config_.bn_momentum), T(config_.bn_epsilon));
    w2_ = linear_weight<T>(rng, config_.hidden_dim, config_.output_dim);
    b2_ = nc::Tensor<T>::zeros({1, config_.output_dim}, true);
}

template <class T>
nc::Tensor<T> ProjectionHead<T>::project(const nc::Tensor<T>& h, nc::BnMode mode) {
    auto x = nc::batch_norm(nc::affine(h, w1_, b1_), bn_, mode);
    if (config_.activation == HeadActivation::gelu) x = nc::gelu(x);
    return nc::affine(x, w2_, b2_);
}

template <class T>
std::vector<NamedParam<T>> ProjectionHead<T>::parameters() const {
    return {{"head.w1", w1_}, {"head.b1", b1_}, {"head.bn_gamma", bn_.gamma},
            {"head.bn_beta", bn_.beta}, {"head.w2", w2_}, {"head.b2", b2_}};
}

template <class T>
PairProjection<T> asymmetric_forward(const nc::Tensor<T>& h_center, const nc::Tensor<T>& h_context,
                                     ProjectionHead<T>& head, int flag, BnPairing pairing) {
    if (h_center.rows() != h_context.rows())
        throw nc::ShapeError("asymmetric_forward: batch sizes differ (" + h_center.shape().str() + " vs " +
                             h_context.shape().str() + ")");
    if (flag != 0 && flag != 1) throw std::invalid_argument("asymmetric_forward: flag must be 0 or 1");
    PairProjection<T> out;
    out.next_flag = 1 - flag;
    switch (pairing) {
        case BnPairing::asymmetric:
            if (flag == 0) {
                out.z_context = head.project(h_context, nc::BnMode::eval);
                out.z_center = head.project(h_center, nc::BnMode::train);
            } else {
                out.z_center = head.project(h_center, nc::BnMode::eval);
                out.z_context = head.project(h_context, nc::BnMode::train);
            }
            break;
        case BnPairing::symmetric_train:
            out.z_center = head.project(h_center, nc::BnMode::train);
            out.z_context = head.project(h_context, nc::BnMode::train);
            break;
        case BnPairing::symmetric_eval:
            out.z_center = head.project(h_center, nc::BnMode::eval);
            out.z_context = head.project(h_context, nc::BnMode::eval);
            break;
    }
    return out;
}

// ---------------------------------------------------------------------------

template <class T>
MemoryBank<T>::MemoryBank(BankMode mode, std::size_t capacity, std::size_t dim)
    : mode_(mode), capacity_(capacity), dim_(dim) {
    if (dim_ == 0) throw std::invalid_argument("memory bank: dim must be positive");
}

template <class T>
std::string MemoryBank<T>::key(const std::string& lang) const {
    return mode_ == BankMode::shared ? std::string("*") : lang;
}

template <class T>
void MemoryBank<T>::push(const nc::Tensor<T>& rows, std::span<const std::string> langs) {
    if (rows.cols() != dim_)
        throw nc::ShapeError("memory bank: rows of width " + std::to_string(rows.cols()) + ", bank dim " +
                             std::to_string(dim_));
    if (langs.size() != rows.rows()) throw std::invalid_argument("memory bank: one language per row required");
    check_unit_rows<T>(rows.values(), rows.rows(), dim_, "memory bank push");
    if (mode_ == BankMode::off || capacity_ == 0) return;
    const auto v = rows.values();
    for (std::size_t r = 0; r < rows.rows(); ++r) {
        Ring& ring = rings_[key(langs[r])];
        if (ring.data.empty()) ring.data.assign(capacity_ * dim_, T(0));
        std::copy(v.begin() + r * dim_, v.begin() + (r + 1) * dim_, ring.data.begin() + ring.cursor * dim_);
        ring.cursor = (ring.cursor + 1) % capacity_;
        ring.count = std::min(ring.count + 1, capacity_);
    }
}

template <class T>
void MemoryBank<T>::push(const nc::Tensor<T>& rows, const std::string& lang) {
    std::vector<std::string> langs(rows.rows(), lang);
    push(rows, std::span<const std::string>(langs));
}

template <class T>
std::size_t MemoryBank<T>::count(const std::string& lang) const {
    if (mode_ == BankMode::off) return 0;
    auto it = rings_.find(key(lang));
    return it == rings_.end() ? 0 : it->second.count;
}

template <class T>
nc::Tensor<T> MemoryBank<T>::negatives(const std::string& lang) const {
    const std::size_t n = count(lang);
    std::vector<T> out(n * dim_);
    if (n > 0) {
        const Ring& ring = rings_.at(key(lang));
        // oldest entry sits at the cursor once the ring is full
        const std::size_t start = ring.count < capacity_ ? 0 : ring.cursor;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t slot = (start + i) % capacity_;
            std::copy(ring.data.begin() + slot * dim_, ring.data.begin() + (slot + 1) * dim_, out.begin() + i * dim_);
        }
    }
    return nc::Tensor<T>({n, dim_}, std::move(out));
}

template <class T>
void MemoryBank<T>::restore_ring(const std::string& key, Ring ring) {
    if (ring.data.size() != capacity_ * dim_ || ring.count > capacity_ || (capacity_ > 0 && ring.cursor >= capacity_))
        throw std::invalid_argument("memory bank: inconsistent ring for '" + key + "'");
    rings_[key] = std::move(ring);
}

// ---------------------------------------------------------------------------

PositiveMask::PositiveMask(std::size_t size) : n_(size), m_(size * size, 0) {}

PositiveMask PositiveMask::paired(std::size_t num_pairs) {
    PositiveMask m(2 * num_pairs);
    for (std::size_t i = 0; i < num_pairs; ++i) m.set(i, num_pairs + i);
    return m;
}

void PositiveMask::set(std::size_t a, std::size_t b) {
    if (a >= n_ || b >= n_) throw std::out_of_range("positive mask: index out of range");
    if (a == b) throw std::invalid_argument("positive mask: a row cannot be its own positive");
    m_[a * n_ + b] = 1;
    m_[b * n_ + a] = 1;
}

std::vector<std::pair<std::size_t, std::size_t>> PositiveMask::positives() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t a = 0; a < n_; ++a)
        for (std::size_t b = 0; b < n_; ++b)
            if (m_[a * n_ + b]) out.emplace_back(a, b);
    return out;
}

bool PositiveMask::valid() const {
    for (std::size_t a = 0; a < n_; ++a) {
        if (m_[a * n_ + a]) return false;
        for (std::size_t b = a + 1; b < n_; ++b)
            if (m_[a * n_ + b] != m_[b * n_ + a]) return false;
    }
    return true;
}

template <class T>
CcpLossResult<T> ccp_loss(const nc::Tensor<T>& z, const PositiveMask& mask, const nc::Tensor<T>& bank, double temperature,
                          bool require_unit_rows) {
    if (!(temperature > 0.0)) throw std::invalid_argument("ccp_loss: temperature must be positive");
    const std::size_t rows = z.rows();
    if (mask.size() != rows)
        throw nc::ShapeError("ccp_loss: mask is " + std::to_string(mask.size()) + " wide, batch has " +
                             std::to_string(rows) + " rows");
    if (!mask.valid()) throw std::invalid_argument("ccp_loss: mask must be symmetric with an empty diagonal");
    const bool has_bank = bank.defined() && bank.rows() > 0;
    if (bank.defined() && bank.cols() != z.cols())
        throw nc::ShapeError("ccp_loss: bank " + bank.shape().str() + " vs batch " + z.shape().str());
    if (require_unit_rows) {
        check_unit_rows<T>(z.values(), rows, z.cols(), "ccp_loss");
        if (has_bank) check_unit_rows<T>(bank.values(), bank.rows(), bank.cols(), "ccp_loss bank");
    }
    const auto positives = mask.positives();
    if (positives.empty()) throw std::invalid_argument("ccp_loss: mask has no positive pair");

    const auto candidates = has_bank ? nc::concat_rows(z, bank.detach()) : z;
    const std::size_t cols = candidates.rows();
    auto logits = nc::scale(nc::matmul_nt(z, candidates), T(1.0 / temperature));

    std::vector<std::uint8_t> keep(rows * cols, 1);
    for (std::size_t r = 0; r < rows; ++r) keep[r * cols + r] = 0;
    auto lse = nc::logsumexp_rows(logits, std::span<const std::uint8_t>(keep));

    std::vector<std::size_t> anchors;
    anchors.reserve(positives.size());
    for (const auto& p : positives) anchors.push_back(p.first);
    auto terms = nc::sub(nc::gather_rows(lse, std::span<const std::size_t>(anchors)),
                         nc::gather_elements(logits, std::span<const std::pair<std::size_t, std::size_t>>(positives)));
    return {nc::mean(terms), positives.size(), cols - 1};
}

double mi_lower_bound(double mean_per_positive_loss, std::size_t candidates) {
    if (candidates < 1) throw std::invalid_argument("mi_lower_bound: need at least one candidate");
    return std::max(0.0, std::log(double(candidates)) - mean_per_positive_loss);
}

// ---------------------------------------------------------------------------

void CcpConfig::validate() const {
    if (!(temperature > 0.0)) throw std::invalid_argument("ccp config: temperature must be positive");
    if (pairs_per_batch < 1) throw std::invalid_argument("ccp config: pairs_per_batch must be at least 1");
    if (window < 1) throw std::invalid_argument("ccp config: window must be at least 1");
}

template <class T>
Trainer<T>::Trainer(const TrainerConfig& config, const corpus::Corpus& corpus)
    : config_(config),
      sampler_(corpus),
      encoder_(config.encoder, derived_rng(config.seed, 1)()),
      head_(
          [&] {
              HeadConfig h = config.head;
              h.input_dim = config.encoder.model_dim;
              return h;
          }(),
          derived_rng(config.seed, 2)()),
      bank_(config.ccp.bank_mode, config.ccp.bank_capacity, config.head.output_dim),
      rng_(derived_rng(config.seed, 3)) {
    config_.head.input_dim = config_.encoder.model_dim;
    config_.ccp.validate();
    if (!(config_.mlm_batch_probability >= 0.0 && config_.mlm_batch_probability <= 1.0))
        throw std::invalid_argument("trainer config: mlm_batch_probability must lie in [0,1]");
    if (sampler_.languages().empty()) throw std::invalid_argument("trainer: corpus is empty");
    if (config_.ccp.bn_pairing != BnPairing::symmetric_eval && config_.ccp.pairs_per_batch < 2)
        throw std::invalid_argument("trainer: batch-statistics normalization needs pairs_per_batch >= 2");
    adam_.beta1 = T(config_.optim.beta1);
    adam_.beta2 = T(config_.optim.beta2);
    adam_.epsilon = T(config_.optim.epsilon);
    adam_.learning_rate = T(config_.optim.learning_rate);
    adam_.warmup_steps = config_.optim.warmup_steps;
    for (const auto& p : parameters()) param_tensors_.push_back(p.tensor);
}

template <class T>
std::vector<NamedParam<T>> Trainer<T>::parameters() const {
    auto out = encoder_.parameters();
    for (auto& p : head_.parameters()) out.push_back(std::move(p));
    return out;
}

template <class T>
StepStats Trainer<T>::step() {
    const auto& langs = sampler_.languages();
    const std::string lang = langs[next_lang_ % langs.size()];
    next_lang_ = (next_lang_ + 1) % langs.size();
    return train_step(sampler_.sample(lang, config_.ccp.pairs_per_batch, config_.ccp.window, rng_));
}

template <class T>
StepStats Trainer<T>::train_step(const corpus::PairBatch& batch) {
    const std::size_t n = batch.pairs.size();
    if (n == 0) throw std::invalid_argument("train_step: empty batch");
    StepStats stats;
    stats.step = adam_.step_count + 1;
    stats.lang = batch.lang;
    stats.flag_before = flag_;

    std::vector<std::vector<corpus::TokenId>> tokens;
    tokens.reserve(2 * n);
    for (const auto& p : batch.pairs) {
        const auto& s = sampler_.center(p);
        if (s.lang != batch.lang) throw std::invalid_argument("train_step: batch is not monolingual");
        tokens.push_back(s.tokens);
    }
    for (const auto& p : batch.pairs) tokens.push_back(sampler_.context(p).tokens);

    for (auto& p : param_tensors_) p.zero_grad();

    if (config_.mlm_enabled && std::bernoulli_distribution(config_.mlm_batch_probability)(rng_)) {
        stats.mlm = true;
        auto r = encoder_.mlm_loss(tokens, config_.encoder.mlm_mask_prob, rng_);
        stats.loss = double(r.loss.item());
        if (!std::isfinite(stats.loss)) {
            std::ostringstream os;
            os << "training diverged at step " << stats.step << " (language " << batch.lang
               << "): mlm loss = " << stats.loss << " over " << r.masked << " masked tokens";
            throw TrainingDiverged(os.str());
        }
        r.loss.backward();
        nc::adam_step(std::span<nc::Tensor<T>>(param_tensors_), adam_);
        return stats;
    }

    std::vector<std::size_t> first(n), second(n);
    for (std::size_t i = 0; i < n; ++i) {
        first[i] = i;
        second[i] = n + i;
    }
    const auto h = encoder_.encode(tokens);
    const auto h_center = nc::gather_rows(h, std::span<const std::size_t>(first));
    const auto h_context = nc::gather_rows(h, std::span<const std::size_t>(second));

    auto proj = asymmetric_forward(h_center, h_context, head_, flag_, config_.ccp.bn_pairing);
    auto z = nc::concat_rows(proj.z_center, proj.z_context);
    if (config_.ccp.l2_normalize) z = nc::l2_normalize(z);

    const auto negatives = bank_.negatives(batch.lang);
    auto result = ccp_loss(z, PositiveMask::paired(n), negatives, config_.ccp.temperature, config_.ccp.l2_normalize);
    stats.loss = double(result.loss.item());
    stats.candidates = result.candidates_per_anchor;
    if (!std::isfinite(stats.loss)) {
        double zmax = 0.0;
        for (T v : z.values()) zmax = std::max(zmax, std::abs(double(v)));
        std::ostringstream os;
        os << "training diverged at step " << stats.step << " (language " << batch.lang << "): ccp loss = " << stats.loss
           << ", positives = " << result.num_positives << ", candidates = " << result.candidates_per_anchor
           << ", bank negatives = " << negatives.rows() << ", max |z| = " << zmax;
        throw TrainingDiverged(os.str());
    }
    stats.mi_bound = mi_lower_bound(stats.loss, stats.candidates);

    result.loss.backward();
    nc::adam_step(std::span<nc::Tensor<T>>(param_tensors_), adam_);

    auto stored = z.detach();
    if (!config_.ccp.l2_normalize) {
        nc::NoGradGuard guard;
        stored = nc::l2_normalize(stored);
    }
    bank_.push(stored, batch.lang);
    flag_ = proj.next_flag;
    return stats;
}

template <class T>
std::vector<std::vector<double>> Trainer<T>::embed(std::span<const std::vector<corpus::TokenId>> sentences,
                                                   std::size_t batch_size) const {
    if (batch_size == 0) throw std::invalid_argument("embed: batch_size must be positive");
    nc::NoGradGuard guard;
    std::vector<std::vector<double>> out;
    out.reserve(sentences.size());
    for (std::size_t start = 0; start < sentences.size(); start += batch_size) {
        const auto chunk = sentences.subspan(start, std::min(batch_size, sentences.size() - start));
        const auto e = encoder_.encode(chunk);
        for (std::size_t r = 0; r < e.rows(); ++r) {
            std::vector<double> row(e.cols());
            for (std::size_t c = 0; c < e.cols(); ++c) row[c] = double(e.at(r, c));
            out.push_back(std::move(row));
        }
    }
    return out;
}

#define CCPLAB_INSTANTIATE_CCP(T)                                                                                       \
    template class ProjectionHead<T>;                                                                                   \
    template class MemoryBank<T>;                                                                                       \
    template class Trainer<T>;                                                                                          \
    template PairProjection<T> asymmetric_forward(const nc::Tensor<T>&, const nc::Tensor<T>&, ProjectionHead<T>&, int, \
                                                  BnPairing);                                                           \
    template CcpLossResult<T> ccp_loss(const nc::Tensor<T>&, const PositiveMask&, const nc::Tensor<T>&, double, bool);

CCPLAB_INSTANTIATE_CCP(float)
CCPLAB_INSTANTIATE_CCP(double)

}  // namespace ccplab::ccp
