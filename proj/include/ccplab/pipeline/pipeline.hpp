#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ccplab/calibration/calibration.hpp"
#include "ccplab/ccp/ccp.hpp"
#include "ccplab/corpus/corpus.hpp"
#include "ccplab/evaluation/evaluation.hpp"
#include "ccplab/pipeline/checkpoint.hpp"
#include "ccplab/pipeline/config.hpp"

namespace ccplab::pipeline {

inline constexpr const char* kVersion = "0.3.0";
inline constexpr std::size_t kLossWindow = 100;  // final loss = mean of the last CCP steps

// A trainer of either precision over a corpus it owns.
class Session {
   public:
    Session(const RunConfig& config, corpus::Corpus train);
    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    const RunConfig& config() const { return config_; }
    const corpus::Corpus& corpus() const { return *corpus_; }

    ccp::StepStats step();
    std::uint64_t steps_done() const;
    // Mean loss of the most recent CCP steps (NaN before the first one).
    double recent_loss() const;

    std::vector<std::vector<double>> embed(std::span<const std::vector<corpus::TokenId>> sentences) const;

    // Complete trainer state: parameters, BN running statistics, Adam moments,
    // bank rings, ABN flag, language cursor, RNG state and the loss window.
    Checkpoint checkpoint() const;
    // Refuses a checkpoint whose training hash or precision differs.
    void restore(const Checkpoint& c);

   private:
    using Float = std::unique_ptr<ccp::Trainer<float>>;
    using Double = std::unique_ptr<ccp::Trainer<double>>;

    RunConfig config_;
    std::unique_ptr<corpus::Corpus> corpus_;
    std::variant<Float, Double> trainer_;
    std::deque<double> recent_;
};

struct LogRow {
    std::uint64_t step = 0;
    std::string lang;
    bool mlm = false;
    double loss = 0.0;
    double mi_bound = 0.0;
    std::size_t candidates = 0;
};

struct TrainingSummary {
    std::uint64_t steps_done = 0;
    double final_loss = 0.0;
    bool diverged = false;
    std::string divergence;
    std::vector<LogRow> log;  // every log_every-th step and the last one
};

struct TrainHooks {
    std::function<void(const ccp::StepStats&)> on_step;
    std::function<void(const Session&)> on_checkpoint;  // every checkpoint_every steps
};

// Steps until `until_step` updates have been made. Divergence stops the run
// and is reported in the summary.
TrainingSummary run_training(Session& session, std::uint64_t until_step, const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------
// Embeddings

struct EmbeddingSet {
    std::map<std::string, evaluation::Matrix> rows;
    std::map<std::string, std::vector<evaluation::EmbeddingMeta>> meta;
};

EmbeddingSet embed_corpus(const Session& session, const corpus::Corpus& corpus);

// One <lang>.tsv (lang, doc_id, pos, values) and one <lang>.ccpe per language.
void write_embedding_set(const EmbeddingSet& set, const std::filesystem::path& dir);
// Reads every *.tsv in `dir`.
EmbeddingSet read_embedding_set(const std::filesystem::path& dir);

// The trailing `heldout_docs` distinct documents of every language, in row order.
std::map<std::string, std::vector<std::string>> heldout_documents(const EmbeddingSet& set, std::size_t heldout_docs);

// Row pairs (row in a, row in b) aligned by the index, ascending in a's row.
// `keep_heldout` selects held-out pairs (true) or training pairs (false).
std::vector<std::pair<std::size_t, std::size_t>> aligned_rows(const EmbeddingSet& set, const corpus::ParallelIndex& index,
                                                              const std::string& a, const std::string& b,
                                                              std::size_t heldout_docs, bool keep_heldout);

// ---------------------------------------------------------------------------
// Calibration

struct FitResult {
    calibration::CalibrationParams params;
    std::vector<std::string> warnings;
};

// Statistics from training rows only; one rotation per ordered language
// pair. unsupervised: identity-init refinement; seeded: the first seed_pairs
// training alignments; oracle: Procrustes on every training alignment.
FitResult fit_calibration(const EmbeddingSet& set, const corpus::ParallelIndex& index, const RunConfig& config);
FitResult fit_calibration(const EmbeddingSet& set, const corpus::ParallelIndex& index, const RunConfig& config,
                          CalibrationMethod method);

// ---------------------------------------------------------------------------
// Evaluation on held-out aligned pairs

struct PairEvaluation {
    evaluation::RetrievalReport raw;
    evaluation::RetrievalReport shifted;     // shift/scale only
    evaluation::RetrievalReport calibrated;  // shift/scale then rotate
    evaluation::IsomorphismReport iso_raw;
    evaluation::IsomorphismReport iso_shifted;
};

std::vector<PairEvaluation> evaluate_heldout(const EmbeddingSet& set, const corpus::ParallelIndex& index,
                                             const calibration::CalibrationParams& params, const RunConfig& config);

std::string evaluation_json(const std::vector<PairEvaluation>& evals, const std::vector<std::string>& warnings = {});

// ---------------------------------------------------------------------------
// Whole pipeline in memory

struct PipelineResult {
    TrainingSummary training;
    std::vector<PairEvaluation> unsupervised;  // calibrated with the configured method
    std::vector<PairEvaluation> oracle;        // calibrated with ground-truth Procrustes
    std::vector<std::string> warnings;
};

// gen corpus -> split -> train config.train.steps -> embed -> calibrate -> evaluate.
// A diverged run skips evaluation.
PipelineResult run_pipeline(const RunConfig& config, const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------
// Ablation grids

struct AblationCell {
    std::string grid;
    std::string label;
    std::vector<std::string> overrides;  // section.key=value
    std::uint64_t seed = 1;
};

struct AblationResult {
    AblationCell cell;
    std::uint64_t steps = 0;
    double final_loss = 0.0;
    bool diverged = false;
    double top1_raw = 0.0;
    double top1_shifted = 0.0;
    double top1_avg = 0.0;  // shift/scale + configured rotation
    double top1_oracle = 0.0;
    std::string note;
};

// table5: the six bank/L2/BN rows x tau {0.001, 0.01, 0.1, 1.0};
// table6: window {2, 3, 5} x batch {8, 16, 32, 64};
// bank: language_specific, shared, off. Each cell once per seed.
std::vector<AblationCell> ablation_grid(const std::string& name, std::span<const std::uint64_t> seeds);

AblationResult run_cell(const RunConfig& base, const AblationCell& cell);

// Cells run on `threads` workers; results keep the order of `cells`.
std::vector<AblationResult> run_ablation(const RunConfig& base, const std::vector<AblationCell>& cells,
                                         std::size_t threads = 1,
                                         const std::function<void(const AblationResult&)>& on_done = {});

std::vector<std::string> ablation_header();
std::vector<std::string> ablation_row(const AblationResult& r);

// ---------------------------------------------------------------------------
// Run directories

// config.toml and run_info.json (tool version, seed, training hash).
void write_run_files(const RunConfig& config, const std::filesystem::path& dir);

// Shortest round-trip text for a double; "nan" and "inf" spelled out.
std::string format_number(double v);

}  // namespace ccplab::pipeline
