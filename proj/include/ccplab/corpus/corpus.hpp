#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ccplab::corpus {

using TokenId = std::uint32_t;
using Rng = std::mt19937_64;

struct Sentence {
    std::vector<TokenId> tokens;
    std::string lang;
    std::vector<double> latent;  // ground truth; synthetic corpora only

    bool operator==(const Sentence&) const = default;
};

struct Document {
    std::string doc_id;
    std::string lang;
    std::vector<Sentence> sentences;

    bool operator==(const Document&) const = default;
};

using Corpus = std::vector<Document>;

// One aligned sentence pair between two languages.
struct Alignment {
    std::string lang_a;
    std::string doc;
    std::size_t pos = 0;
    std::string lang_b;
    std::string doc2;
    std::size_t pos2 = 0;

    bool operator==(const Alignment&) const = default;
};

using ParallelIndex = std::vector<Alignment>;

struct LanguageTransform {
    Eigen::MatrixXd rotation;  // orthogonal latent_dim x latent_dim
    Eigen::VectorXd offset;
};

// Parameters of the synthetic multilingual generator. Every language renders
// the same latent random walk per parallel document; only the per-language
// transform and the rendering noise differ.
struct SyntheticSpec {
    std::vector<std::string> languages{"en", "fr"};
    std::size_t latent_dim = 16;
    double walk_correlation = 0.8;  // rho in [0, 1)
    std::size_t docs_per_language = 200;
    std::size_t sentences_per_doc = 8;
    std::size_t vocab_size = 16;    // value buckets, shared by every position
    double noise_std = 0.05;
    // Angle scale of each language's rotation away from the identity; 0 keeps
    // Q_L = I, large values approach a uniformly random rotation.
    double rotation_scale = 0.1;
    double offset_scale = 0.5;      // std of each entry of b_L
    double quant_range = 3.0;       // coordinates are clipped to [-range, range] before binning
    std::uint64_t seed = 1;

    void validate(bool need_parallel_index = true) const;
};

struct SyntheticCorpus {
    Corpus documents;
    ParallelIndex index;
    std::map<std::string, LanguageTransform> transforms;
};

// Deterministic in spec.seed. Documents are ordered language-major, and the
// d-th document of every language shares one latent sequence.
SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec);

// Per-language transforms as drawn by the generator (exposed for oracles).
std::map<std::string, LanguageTransform> make_transforms(const SyntheticSpec& spec);

// Renders one transformed latent vector into tokens: position j holds the
// bucket of coordinate j, buckets evenly spaced over [-range, range].
std::vector<TokenId> quantize(const Eigen::VectorXd& transformed, const SyntheticSpec& spec);

class ParseError : public std::runtime_error {
   public:
    ParseError(std::size_t line, const std::string& msg)
        : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
    std::size_t line() const { return line_; }

   private:
    std::size_t line_;
};

struct LoadResult {
    Corpus documents;
    std::size_t skipped_empty = 0;
};

// JSON Lines, one document per line:
// {"doc_id": str, "lang": str, "sentences": [[int,...],...], "latents": [[float,...],...]?}
LoadResult load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

ParallelIndex load_parallel_index(const std::filesystem::path& path);
void save_parallel_index(const ParallelIndex& index, const std::filesystem::path& path);

// Positions p != c with |p - c| <= radius, clipped to the document, ascending.
std::vector<std::size_t> context_set(std::size_t doc_length, std::size_t center, std::size_t radius);
std::vector<std::size_t> context_set(const Document& doc, std::size_t center, std::size_t radius);

struct PairRef {
    std::size_t doc = 0;  // index into the corpus
    std::size_t center = 0;
    std::size_t context = 0;
};

struct PairBatch {
    std::string lang;
    std::vector<PairRef> pairs;
};

// Samples monolingual (center, context) pairs. A center is uniform over every
// sentence of every eligible (>= 2 sentence) document of the language, which
// weights documents by their number of eligible centers.
class PairSampler {
   public:
    explicit PairSampler(const Corpus& corpus);

    const std::vector<std::string>& languages() const { return languages_; }
    std::size_t eligible_centers(const std::string& lang) const;

    PairBatch sample(const std::string& lang, std::size_t num_pairs, std::size_t radius, Rng& rng) const;

    const Corpus& corpus() const { return *corpus_; }
    const Sentence& center(const PairRef& p) const { return (*corpus_)[p.doc].sentences[p.center]; }
    const Sentence& context(const PairRef& p) const { return (*corpus_)[p.doc].sentences[p.context]; }

   private:
    const Corpus* corpus_;
    std::vector<std::string> languages_;  // first-appearance order
    std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> centers_;
};

// Free-function form over a whole corpus; throws when the language has no
// eligible documents.
PairBatch sample_pair_batch(const Corpus& corpus, const std::string& lang, std::size_t num_pairs,
                            std::size_t radius, Rng& rng);

// Splits off the trailing `heldout_docs` documents of every language.
struct CorpusSplit {
    Corpus train;
    Corpus heldout;
};
CorpusSplit split_heldout(const Corpus& corpus, std::size_t heldout_docs);

}  // namespace ccplab::corpus
