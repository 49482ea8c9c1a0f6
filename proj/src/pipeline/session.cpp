#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "ccplab/pipeline/pipeline.hpp"

namespace ccplab::pipeline {

namespace {

template <class T>
Block to_block(std::string name, std::size_t rows, std::size_t cols, std::span<const T> values) {
    Block b{std::move(name), rows, cols, {}};
    b.data.assign(values.begin(), values.end());
    return b;
}

template <class T>
void from_block(const Block& b, std::span<T> out, std::size_t rows, std::size_t cols) {
    if (b.rows != rows || b.cols != cols)
        throw CheckpointError(fmt::format("checkpoint block '{}' is {}x{}, expected {}x{}", b.name, b.rows, b.cols, rows, cols));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(b.data[i]);
}

template <class T>
std::vector<T> block_vector(const Block& b) {
    return std::vector<T>(b.data.begin(), b.data.end());
}

template <class T>
void capture(const ccp::Trainer<T>& cref, Checkpoint& c) {
    auto& t = const_cast<ccp::Trainer<T>&>(cref);
    for (const auto& p : t.parameters())
        c.blocks.push_back(to_block<T>("param/" + p.name, p.tensor.rows(), p.tensor.cols(), p.tensor.values()));
    const auto& bn = t.head().bn();
    c.blocks.push_back(to_block<T>("bn/running_mean", 1, bn.running_mean.size(), bn.running_mean));
    c.blocks.push_back(to_block<T>("bn/running_var", 1, bn.running_var.size(), bn.running_var));
    const auto& adam = t.optimizer();
    for (std::size_t i = 0; i < adam.first_moment.size(); ++i) {
        c.blocks.push_back(to_block<T>(fmt::format("adam/m/{}", i), 1, adam.first_moment[i].size(), adam.first_moment[i]));
        c.blocks.push_back(to_block<T>(fmt::format("adam/v/{}", i), 1, adam.second_moment[i].size(), adam.second_moment[i]));
    }
    const std::size_t dim = t.bank().dim();
    for (const auto& [key, ring] : t.bank().rings()) {
        c.blocks.push_back(to_block<T>("bank/" + key, dim ? ring.data.size() / dim : 0, dim, ring.data));
        const std::vector<double> meta{double(ring.cursor), double(ring.count)};
        c.blocks.push_back(to_block<double>("bank_meta/" + key, 1, 2, meta));
    }
    c.step = t.steps_done();
    c.flag = t.flag();
    c.next_language = t.next_language();
    std::ostringstream rng;
    rng << t.rng();
    c.rng_state = rng.str();
}

template <class T>
void apply(ccp::Trainer<T>& t, const Checkpoint& c) {
    for (const auto& p : t.parameters()) {
        auto tensor = p.tensor;
        from_block<T>(c.at("param/" + p.name), tensor.mutable_values(), tensor.rows(), tensor.cols());
    }
    auto& bn = t.head().bn();
    from_block<T>(c.at("bn/running_mean"), std::span<T>(bn.running_mean), 1, bn.running_mean.size());
    from_block<T>(c.at("bn/running_var"), std::span<T>(bn.running_var), 1, bn.running_var.size());

    auto& adam = t.optimizer();
    adam.first_moment.clear();
    adam.second_moment.clear();
    for (std::size_t i = 0;; ++i) {
        const Block* m = c.find(fmt::format("adam/m/{}", i));
        if (!m) break;
        adam.first_moment.push_back(block_vector<T>(*m));
        adam.second_moment.push_back(block_vector<T>(c.at(fmt::format("adam/v/{}", i))));
    }
    adam.step_count = c.step;

    for (const auto& b : c.blocks) {
        if (b.name.rfind("bank/", 0) != 0) continue;
        const std::string key = b.name.substr(5);
        const Block& meta = c.at("bank_meta/" + key);
        if (meta.data.size() != 2) throw CheckpointError("bank_meta/" + key + " must hold cursor and count");
        typename ccp::MemoryBank<T>::Ring ring;
        ring.data = block_vector<T>(b);
        ring.cursor = std::size_t(meta.data[0]);
        ring.count = std::size_t(meta.data[1]);
        try {
            t.bank().restore_ring(key, std::move(ring));
        } catch (const std::invalid_argument& e) {
            throw CheckpointError(e.what());
        }
    }

    t.set_flag(c.flag);
    t.set_next_language(std::size_t(c.next_language));
    std::istringstream rng(c.rng_state);
    rng >> t.rng();
    if (!rng) throw CheckpointError("checkpoint rng state is unreadable");
}

}  // namespace

Session::Session(const RunConfig& config, corpus::Corpus train)
    : config_(config), corpus_(std::make_unique<corpus::Corpus>(std::move(train))) {
    config_.validate();
    const auto tc = config_.trainer_config();
    if (config_.train.precision == Precision::f64)
        trainer_ = std::make_unique<ccp::Trainer<double>>(tc, *corpus_);
    else
        trainer_ = std::make_unique<ccp::Trainer<float>>(tc, *corpus_);
}

ccp::StepStats Session::step() {
    auto stats = std::visit([](auto& t) { return t->step(); }, trainer_);
    if (!stats.mlm) {
        recent_.push_back(stats.loss);
        if (recent_.size() > kLossWindow) recent_.pop_front();
    }
    return stats;
}

std::uint64_t Session::steps_done() const {
    return std::visit([](const auto& t) { return t->steps_done(); }, trainer_);
}

double Session::recent_loss() const {
    if (recent_.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::accumulate(recent_.begin(), recent_.end(), 0.0) / double(recent_.size());
}

std::vector<std::vector<double>> Session::embed(std::span<const std::vector<corpus::TokenId>> sentences) const {
    return std::visit([&](const auto& t) { return t->embed(sentences); }, trainer_);
}

Checkpoint Session::checkpoint() const {
    Checkpoint c;
    c.config_hash = training_hash(config_);
    c.precision = config_.train.precision;
    RunConfig stored = config_;
    stored.out.clear();  // where a run lives does not change what it trained
    c.config_text = render_config(stored);
    std::visit([&](const auto& t) { capture(*t, c); }, trainer_);
    c.blocks.push_back(to_block<double>("train/recent_loss", 1, recent_.size(),
                                        std::vector<double>(recent_.begin(), recent_.end())));
    return c;
}

void Session::restore(const Checkpoint& c) {
    const auto expected = training_hash(config_);
    if (c.config_hash != expected)
        throw CheckpointError(fmt::format(
            "checkpoint was written under a different training configuration (hash {:016x}, this run {:016x}); "
            "refusing to resume",
            c.config_hash, expected));
    if (c.precision != config_.train.precision) throw CheckpointError("checkpoint precision differs from train.precision");
    // start from a fresh trainer so nothing from the current state survives
    const auto tc = config_.trainer_config();
    if (config_.train.precision == Precision::f64) {
        auto t = std::make_unique<ccp::Trainer<double>>(tc, *corpus_);
        apply(*t, c);
        trainer_ = std::move(t);
    } else {
        auto t = std::make_unique<ccp::Trainer<float>>(tc, *corpus_);
        apply(*t, c);
        trainer_ = std::move(t);
    }
    const Block& window = c.at("train/recent_loss");
    recent_.assign(window.data.begin(), window.data.end());
}

TrainingSummary run_training(Session& session, std::uint64_t until_step, const TrainHooks& hooks) {
    TrainingSummary s;
    const auto& cfg = session.config().train;
    while (session.steps_done() < until_step) {
        ccp::StepStats st;
        try {
            st = session.step();
        } catch (const ccp::TrainingDiverged& e) {
            s.diverged = true;
            s.divergence = e.what();
            break;
        } catch (const nc::NonFiniteError& e) {
            s.diverged = true;
            s.divergence = e.what();
            break;
        }
        if (hooks.on_step) hooks.on_step(st);
        if (st.step % cfg.log_every == 0 || st.step == until_step)
            s.log.push_back({st.step, st.lang, st.mlm, st.loss, st.mi_bound, st.candidates});
        if (cfg.checkpoint_every && st.step % cfg.checkpoint_every == 0 && hooks.on_checkpoint) hooks.on_checkpoint(session);
    }
    s.steps_done = session.steps_done();
    s.final_loss = session.recent_loss();
    return s;
}

}  // namespace ccplab::pipeline
