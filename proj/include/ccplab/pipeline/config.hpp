#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccplab/ccp/ccp.hpp"
#include "ccplab/corpus/corpus.hpp"
#include "ccplab/encoder/encoder.hpp"

namespace ccplab::pipeline {

enum class Precision { f32, f64 };
enum class CalibrationMethod { unsupervised, seeded, oracle };

struct TrainSettings {
    std::uint64_t steps = 6000;
    Precision precision = Precision::f32;
    bool mlm = false;
    double mlm_probability = 0.5;
    std::uint64_t log_every = 10;         // rows in train_log.csv
    std::uint64_t checkpoint_every = 0;   // 0: only the final checkpoint
};

struct CalibrationSettings {
    CalibrationMethod method = CalibrationMethod::unsupervised;
    std::size_t k = 10;
    std::size_t iterations = 10;
    std::size_t seed_pairs = 0;     // seeded method: size of the seed dictionary
    std::size_t max_rows = 4000;    // per language, for dictionary induction
    double eps = 1e-8;
};

struct EvalSettings {
    std::vector<std::size_t> ks{1, 5, 10};
    std::size_t heldout_docs = 25;  // trailing documents of every language
};

struct RunConfig {
    std::uint64_t seed = 1;  // training seed; the corpus has its own
    std::string out = "runs/default";
    corpus::SyntheticSpec corpus;
    encoder::EncoderConfig encoder;
    ccp::HeadConfig head;
    ccp::CcpConfig ccp;
    ccp::OptimConfig optim;
    TrainSettings train;
    CalibrationSettings calibration;
    EvalSettings eval;

    void validate() const;
    ccp::TrainerConfig trainer_config() const;
};

class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Flat TOML subset: `[section]` headers, `key = value` or `section.key = value`,
// `#` comments. Values are numbers, true/false, "strings" and [arrays].
// Unknown keys and malformed lines raise ConfigError naming the line.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

// `section.key=value` with the same value syntax (bare strings allowed).
void apply_override(RunConfig& config, const std::string& assignment);

// Every key, one section at a time, in a fixed order. parse(render(c)) == c.
std::string render_config(const RunConfig& config);

// FNV-1a over the rendered keys that shape training (corpus, model, optimiser,
// seed, precision, held-out split). Steps, logging, calibration and
// evaluation settings are excluded so a run can be extended or re-evaluated.
std::uint64_t training_hash(const RunConfig& config);

std::string to_string(Precision p);
std::string to_string(CalibrationMethod m);
std::string to_string(ccp::BankMode m);
std::string to_string(ccp::BnPairing m);

}  // namespace ccplab::pipeline
